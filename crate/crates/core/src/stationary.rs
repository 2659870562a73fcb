//! Stationary density of the autoregressive chain via its transfer operator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CdfTable, GridFunction};
use crate::models::NoiseModel;

/// Largest probability mass allowed to leave the grid in one application.
pub const LEAK_LIMIT: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct StationaryDensity {
    pub psi: GridFunction,
    /// L1 norm of the last fixed-point update.
    pub residual: f64,
    pub iterations: usize,
    /// Dobrushin coefficient for the sup-norm of `f`.
    pub rho: f64,
    /// Total mass of the grid-level minorizing measure.
    pub minorization_mass: f64,
    cdf: CdfTable,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SolverReport {
    pub residual: f64,
    pub iterations: usize,
    pub rho: f64,
    pub minorization_mass: f64,
}

impl StationaryDensity {
    /// Wraps a known density (no solve); `rho` and minorization are left at 0.
    pub fn from_density(psi: GridFunction) -> Result<Self> {
        let cdf = CdfTable::new(&psi)?;
        Ok(StationaryDensity { psi, residual: 0.0, iterations: 0, rho: 0.0, minorization_mass: 0.0, cdf })
    }

    pub fn cdf(&self) -> &CdfTable {
        &self.cdf
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.psi.eval_or_zero(x)
    }

    pub fn report(&self) -> SolverReport {
        SolverReport {
            residual: self.residual,
            iterations: self.iterations,
            rho: self.rho,
            minorization_mass: self.minorization_mass,
        }
    }
}

/// Cubic Lagrange weights for taps at offsets -1, 0, 1, 2 and fraction `t` in [0, 1).
#[inline]
fn cubic_weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// `(T psi)(x) = \int p(x - f(y)) psi(y) dy`, renormalized after checking the leak.
pub fn transfer_apply(psi: &GridFunction, f: &GridFunction, noise: &NoiseModel) -> Result<GridFunction> {
    psi.grid.ensure_same(&f.grid)?;
    psi.grid.ensure_same(&noise.density.grid)?;
    let grid = psi.grid;
    let n = grid.len;
    let h = grid.h;
    let mass_in = psi.integral();

    // p padded by two zeros on each side
    let mut padded = vec![0.0; n + 4];
    padded[2..n + 2].copy_from_slice(&noise.density.values);

    let w = grid.weights();
    let mut out = vec![0.0; n];
    for j in 0..n {
        let c = w[j] * psi.values[j];
        if c <= 1e-20 * mass_in {
            continue;
        }
        // p(x_i - a) sits at fractional index i - a/h of the density grid
        let s = -f.values[j] / h;
        let k = s.floor();
        let taps = cubic_weights(s - k);
        let k = k as i64;
        // padded index of the first tap is i + k + 1
        let lo = (-(k + 1)).max(0) as usize;
        let hi = ((n as i64 + 3) - (k + 4) + 1).min(n as i64);
        if hi <= lo as i64 {
            continue;
        }
        let hi = hi as usize;
        let base = (lo as i64 + k + 1) as usize;
        let src = &padded[base..base + (hi - lo) + 3];
        let (c0, c1, c2, c3) = (c * taps[0], c * taps[1], c * taps[2], c * taps[3]);
        for (q, o) in out[lo..hi].iter_mut().enumerate() {
            *o += c0 * src[q] + c1 * src[q + 1] + c2 * src[q + 2] + c3 * src[q + 3];
        }
    }
    for v in &mut out {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let result = GridFunction::new(grid, out)?;
    let mass_out = result.integral();
    let leaked = mass_in - mass_out;
    if leaked > LEAK_LIMIT * mass_in {
        return Err(Error::Truncation { leaked: leaked / mass_in, limit: LEAK_LIMIT });
    }
    Ok(result.scale(mass_in / mass_out))
}

/// Power iteration from the noise density until the L1 update is below `tol`.
pub fn solve_stationary(f: &GridFunction, noise: &NoiseModel, tol: f64, max_iter: usize) -> Result<StationaryDensity> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive (got {tol})")));
    }
    let rho = dobrushin_rho(noise, f.sup_abs());
    let start = &noise.density;
    let mut psi = start.scale(1.0 / start.integral());
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        let next = transfer_apply(&psi, f, noise)?;
        residual = next.l1_distance(&psi)?;
        psi = next;
        iterations += 1;
        if residual <= tol {
            let minorization_mass = minorization_mass(f, noise);
            let cdf = CdfTable::new(&psi)?;
            return Ok(StationaryDensity { psi, residual, iterations, rho, minorization_mass, cdf });
        }
    }
    Err(Error::Convergence { iterations, residual })
}

/// L1 distance between `p` and `p(. - u)` by quadrature on the noise grid.
pub fn shift_l1(noise: &NoiseModel, u: f64) -> f64 {
    let grid = noise.density.grid;
    let u = u.abs();
    let width = grid.x_max() - grid.x_min;
    if u >= width {
        // the two copies no longer overlap inside the truncated domain
        return 2.0;
    }
    // integrate over the union of both supports
    let len = grid.len + (u / grid.h).ceil() as usize;
    let terms: Vec<f64> = (0..len)
        .map(|i| {
            let x = grid.x_min + i as f64 * grid.h;
            let w = if i == 0 || i == len - 1 { 0.5 * grid.h } else { grid.h };
            w * (noise.pdf(x) - noise.pdf(x - u)).abs()
        })
        .collect();
    crate::stats::pairwise_sum(&terms)
}

/// `sup_{0 <= u <= umax} \int |p(x) - p(x - u)| dx`, scanning shifts.
pub fn sup_shift_l1(noise: &NoiseModel, umax: f64) -> f64 {
    if !(umax > 0.0) {
        return 0.0;
    }
    const SCAN: usize = 64;
    (1..=SCAN)
        .map(|s| shift_l1(noise, umax * s as f64 / SCAN as f64))
        .fold(0.0, f64::max)
}

/// `(1/2) sup_{|u| <= 2M} \int |p(x) - p(x - u)| dx`.
pub fn dobrushin_rho(noise: &NoiseModel, m: f64) -> f64 {
    0.5 * sup_shift_l1(noise, 2.0 * m)
}

/// Total mass of `x -> inf_{a in range f} p(x - a)`.
pub fn minorization_mass(f: &GridFunction, noise: &NoiseModel) -> f64 {
    let (lo, hi) = f
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    minorizing_density(noise, lo, hi).integral()
}

fn minorizing_density(noise: &NoiseModel, lo: f64, hi: f64) -> GridFunction {
    const PROBES: usize = 33;
    GridFunction::from_fn(noise.density.grid, |x| {
        (0..PROBES)
            .map(|s| noise.pdf(x - (lo + (hi - lo) * s as f64 / (PROBES - 1) as f64)))
            .fold(f64::INFINITY, f64::min)
    })
}

/// Smallest ratio `\int_B psi / mu(B)` over grid cells `B` where `mu(B) > floor`.
pub fn minorization_ratio(sd: &StationaryDensity, f: &GridFunction, noise: &NoiseModel, floor: f64) -> f64 {
    let (lo, hi) = f
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mu = minorizing_density(noise, lo, hi);
    let h = sd.psi.grid.h;
    let mut worst = f64::INFINITY;
    for i in 0..sd.psi.grid.len - 1 {
        let m = 0.5 * h * (mu.values[i] + mu.values[i + 1]);
        if m > floor {
            let p = 0.5 * h * (sd.psi.values[i] + sd.psi.values[i + 1]);
            worst = worst.min(p / m);
        }
    }
    worst
}

/// `\int (sqrt psi_f - sqrt psi_f0)^2`.
pub fn hellinger_sq(psi_f: &GridFunction, psi_f0: &GridFunction) -> Result<f64> {
    Ok(psi_f.zip_with(psi_f0, |a, b| {
        let d = a.max(0.0).sqrt() - b.max(0.0).sqrt();
        d * d
    })?
    .integral())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma61Report {
    pub lhs: f64,
    pub rhs: f64,
    pub rho: f64,
    pub holds: bool,
}

/// Compares the stationary Hellinger term with its shift bound; `m` bounds `|f|` and `|f0|`.
pub fn lemma61_check(
    f: &GridFunction,
    f0: &GridFunction,
    noise: &NoiseModel,
    m: f64,
    tol: f64,
) -> Result<Lemma61Report> {
    let rho = dobrushin_rho(noise, m);
    if rho >= 1.0 {
        return Err(Error::ContractionViolated(rho));
    }
    let sf = solve_stationary(f, noise, tol, 10_000)?;
    let sf0 = solve_stationary(f0, noise, tol, 10_000)?;
    lemma61_from_solutions(&sf, &sf0, f, f0, noise, rho)
}

pub fn lemma61_from_solutions(
    sf: &StationaryDensity,
    sf0: &StationaryDensity,
    f: &GridFunction,
    f0: &GridFunction,
    noise: &NoiseModel,
    rho: f64,
) -> Result<Lemma61Report> {
    if rho >= 1.0 {
        return Err(Error::ContractionViolated(rho));
    }
    let lhs = hellinger_sq(&sf.psi, &sf0.psi)?;
    let dist = f.sub(f0)?.sup_abs();
    let rhs = sup_shift_l1(noise, dist) / (1.0 - rho);
    // quadrature allowance
    let holds = lhs <= rhs + 1e-9;
    Ok(Lemma61Report { lhs, rhs, rho, holds })
}

/// I.i.d. inverse-CDF draws from `psi`.
pub fn sample_stationary<R: Rng + ?Sized>(sd: &StationaryDensity, count: usize, rng: &mut R) -> Vec<f64> {
    (0..count).map(|_| sd.cdf.quantile(rng.random::<f64>())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::rng::Streams;
    use crate::stats::{median, std_normal_cdf};

    fn gauss() -> NoiseModel {
        NoiseModel::gaussian(1.0, Grid::default()).unwrap()
    }

    fn normal_density(grid: Grid, mean: f64, var: f64) -> GridFunction {
        GridFunction::from_fn(grid, |x| {
            (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
        })
    }

    #[test]
    fn transfer_of_spike_under_zero_map_is_noise() {
        let noise = gauss();
        let grid = noise.grid();
        let spike = normal_density(grid, 0.0, 1e-4);
        let out = transfer_apply(&spike, &GridFunction::zeros(grid), &noise).unwrap();
        assert!(out.l1_distance(&noise.density).unwrap() < 1e-3);
    }

    #[test]
    fn transfer_preserves_ar1_stationary_law() {
        let noise = gauss();
        let grid = noise.grid();
        let f = GridFunction::from_fn(grid, |x| 0.5 * x);
        let psi = normal_density(grid, 0.0, 4.0 / 3.0);
        let out = transfer_apply(&psi, &f, &noise).unwrap();
        assert!(out.l1_distance(&psi).unwrap() < 1e-8);
    }

    #[test]
    fn constant_maps_give_shifted_noise() {
        let noise = gauss();
        let grid = noise.grid();
        let sd = solve_stationary(&GridFunction::zeros(grid), &noise, 1e-12, 100).unwrap();
        assert!(sd.psi.l1_distance(&noise.density).unwrap() < 1e-6);
        for &theta in &[0.3, -0.123_456, 0.5] {
            let sd = solve_stationary(&GridFunction::constant(grid, theta), &noise, 1e-12, 100).unwrap();
            let want = normal_density(grid, theta, 1.0);
            assert!(sd.psi.l1_distance(&want).unwrap() < 1e-6);
            let again = transfer_apply(&sd.psi, &GridFunction::constant(grid, theta), &noise).unwrap();
            assert!(again.l1_distance(&sd.psi).unwrap() <= 2e-12);
        }
    }

    #[test]
    fn rho_reference_values() {
        let noise = gauss();
        let want = 2.0 * std_normal_cdf(0.5) - 1.0;
        assert!((dobrushin_rho(&noise, 0.5) - want).abs() < 1e-6);
        assert!((want - 0.3829).abs() < 1e-4);
        assert_eq!(dobrushin_rho(&noise, 0.0), 0.0);
        let big = dobrushin_rho(&noise, 10.0);
        assert!(big > 0.999_999 && big <= 1.0 + 1e-9);
    }

    #[test]
    fn shift_bound_examples() {
        let noise = gauss();
        let grid = noise.grid();
        let zero = GridFunction::zeros(grid);
        let r = lemma61_check(&zero, &zero, &noise, 0.5, 1e-12).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.rhs, 0.0);
        assert!(r.holds);

        let c = GridFunction::constant(grid, 0.1);
        let r = lemma61_check(&c, &zero, &noise, 0.5, 1e-12).unwrap();
        let rho = 2.0 * std_normal_cdf(0.5) - 1.0;
        let rhs = 2.0 * (2.0 * std_normal_cdf(0.05) - 1.0) / (1.0 - rho);
        assert!((r.rhs - rhs).abs() < 1e-6);
        assert!(r.holds && r.lhs < r.rhs);

        let bump = GridFunction::from_fn(grid, |x| 0.05 * crate::models::bump_profile(x));
        let r = lemma61_check(&bump, &zero, &noise, 0.5, 1e-12).unwrap();
        assert!(r.holds && r.lhs < r.rhs && r.lhs > 0.0);

        assert!(matches!(
            lemma61_check(&zero, &zero, &noise, 1e3, 1e-12),
            Err(Error::ContractionViolated(_))
        ));
    }

    #[test]
    fn sampling_is_reproducible_and_centred() {
        let grid = Grid::default();
        let sd = StationaryDensity::from_density(normal_density(grid, 0.0, 1.0)).unwrap();
        let s = Streams::new(3);
        let a = sample_stationary(&sd, 100_000, &mut s.rng("x", &[]));
        let b = sample_stationary(&sd, 100_000, &mut s.rng("x", &[]));
        assert_eq!(a, b);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 0.02);
        assert!(median(&a).abs() < 0.02);
    }

    #[test]
    fn minorization_holds_cellwise() {
        let noise = gauss();
        let grid = noise.grid();
        let f = GridFunction::from_fn(grid, |x| 0.5 * x.sin());
        let sd = solve_stationary(&f, &noise, 1e-10, 200).unwrap();
        assert!(sd.minorization_mass > 0.0 && sd.minorization_mass < 1.0);
        assert!(minorization_ratio(&sd, &f, &noise, 1e-12) >= 1.0 - 1e-6);
    }

    #[test]
    fn nonconvergence_is_reported() {
        let noise = gauss();
        let f = GridFunction::from_fn(noise.grid(), |x| 0.5 * x.sin());
        match solve_stationary(&f, &noise, 1e-14, 2) {
            Err(Error::Convergence { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 1e-14);
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }
}
