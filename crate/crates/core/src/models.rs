//! Function classes, neighborhoods, rates and noise models.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CdfTable, Grid, GridFunction};

/// Slack on grid-level Hölder checks.
pub const HOLDER_SLACK: f64 = 1.05;

/// Tolerance for the quadrature invariants of a noise model.
pub const NOISE_QUAD_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionClassSpec {
    /// Sup-norm bound.
    pub m: f64,
    pub beta: f64,
    /// Hölder constant.
    pub l: f64,
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub grid: Grid,
}

impl Default for FunctionClassSpec {
    fn default() -> Self {
        FunctionClassSpec { m: 0.5, beta: 3.0, l: 2.0, a: -1.0, b: 1.0, grid: Grid::default() }
    }
}

impl FunctionClassSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.l > 0.0 && self.beta > 0.0 && self.a < self.b) {
            return Err(Error::InvalidArgument(format!(
                "function class needs M > 0, L > 0, beta > 0, A < B (got {self:?})"
            )));
        }
        if self.a < self.grid.x_min || self.b > self.grid.x_max() {
            return Err(Error::InvalidArgument("[A, B] must lie inside the grid".into()));
        }
        Ok(())
    }

    /// Number of derivatives controlled in sup norm: largest integer strictly below beta.
    pub fn smoothness_order(&self) -> usize {
        (self.beta.ceil() - 1.0).max(0.0) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub c: f64,
    pub c_prime: f64,
    pub n: usize,
}

impl RateConstants {
    pub fn new(n: usize) -> Self {
        RateConstants { c: 1.0, c_prime: 1.0, n }
    }
}

/// `(gamma_n, gamma'_n)` with natural logarithms.
pub fn rates(rc: &RateConstants, spec: &FunctionClassSpec) -> Result<(f64, f64)> {
    if rc.n < 2 {
        return Err(Error::InvalidArgument(format!("rates need n >= 2 (got {})", rc.n)));
    }
    let n = rc.n as f64;
    let base = n.ln() / n;
    let denom = 2.0 * spec.beta + 1.0;
    Ok((
        rc.c * base.powf(spec.beta / denom),
        rc.c_prime * base.powf((spec.beta - 1.0) / denom),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    pub sup_norm: f64,
    /// sup |f^{(r)}| for r = 1..=order
    pub derivative_sups: Vec<f64>,
    /// Largest Hölder quotient of the highest controlled derivative.
    pub holder_quotient: f64,
    pub violations: Vec<String>,
}

impl MembershipReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_membership(f: &GridFunction, spec: &FunctionClassSpec) -> Result<MembershipReport> {
    f.grid
        .ensure_same(&spec.grid)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let order = spec.smoothness_order();
    let alpha = spec.beta - order as f64;
    let mut violations = Vec::new();

    let sup_norm = f.sup_abs();
    let sup_bound = spec.m.min(spec.l);
    if sup_norm > sup_bound * HOLDER_SLACK {
        violations.push(format!("sup|f| = {sup_norm:.6} exceeds min(M, L) = {sup_bound}"));
    }

    let mut d = f.clone();
    let mut derivative_sups = Vec::with_capacity(order);
    for r in 1..=order {
        d = d.derivative();
        // one-sided end differences are less accurate; skip the r outermost points
        let s = interior_sup(&d.values, r);
        if s > spec.l * HOLDER_SLACK {
            violations.push(format!("sup|f^({r})| = {s:.6} exceeds L = {}", spec.l));
        }
        derivative_sups.push(s);
    }

    let holder_quotient = holder_quotient(&d, alpha, order);
    if holder_quotient > spec.l * HOLDER_SLACK {
        violations.push(format!(
            "Hölder quotient of order {alpha:.3} is {holder_quotient:.6} > L = {}",
            spec.l
        ));
    }

    Ok(MembershipReport { sup_norm, derivative_sups, holder_quotient, violations })
}

fn interior_sup(v: &[f64], skip: usize) -> f64 {
    if v.len() <= 2 * skip {
        return 0.0;
    }
    v[skip..v.len() - skip].iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn holder_quotient(d: &GridFunction, alpha: f64, skip: usize) -> f64 {
    let v = &d.values;
    let n = v.len();
    if n <= 2 * skip + 1 {
        return 0.0;
    }
    let h = d.grid.h;
    let (lo, hi) = (skip, n - skip);
    if alpha >= 1.0 - 1e-12 {
        // Lipschitz: adjacent chords attain the sup
        return v[lo..hi].windows(2).fold(0.0f64, |m, w| m.max((w[1] - w[0]).abs())) / h;
    }
    let mut best = 0.0f64;
    for i in lo..hi {
        for j in i + 1..hi {
            let q = (v[j] - v[i]).abs() / (((j - i) as f64) * h).powf(alpha);
            best = best.max(q);
        }
    }
    best
}

/// `f = f0 + g` with `g` supported in `[A, B]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbedFunction {
    pub f0: GridFunction,
    pub g: GridFunction,
    pub gamma_n: f64,
    pub gamma_prime_n: f64,
    pub a: f64,
    pub b: f64,
}

impl PerturbedFunction {
    pub fn new(f0: GridFunction, g: GridFunction, gamma_n: f64, gamma_prime_n: f64, a: f64, b: f64) -> Result<Self> {
        f0.grid.ensure_same(&g.grid)?;
        Ok(PerturbedFunction { f0, g, gamma_n, gamma_prime_n, a, b })
    }

    /// `g = 0` perturbation.
    pub fn unperturbed(f0: GridFunction, spec: &FunctionClassSpec) -> Self {
        let g = GridFunction::zeros(f0.grid);
        PerturbedFunction { f0, g, gamma_n: 0.0, gamma_prime_n: 0.0, a: spec.a, b: spec.b }
    }

    pub fn f(&self) -> GridFunction {
        self.f0.add(&self.g).expect("same grid by construction")
    }

    pub fn g_is_zero(&self) -> bool {
        self.g.values.iter().all(|&v| v == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodReport {
    pub support_leak: f64,
    pub sup_g: f64,
    pub sup_g_prime: f64,
    pub violations: Vec<String>,
}

impl NeighborhoodReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_neighborhood(pf: &PerturbedFunction, rc: &RateConstants, spec: &FunctionClassSpec) -> Result<NeighborhoodReport> {
    let (gamma, gamma_p) = rates(rc, spec)?;
    let grid = pf.g.grid;
    let support_leak = (0..grid.len)
        .filter(|&i| {
            let x = grid.x(i);
            x < spec.a || x > spec.b
        })
        .fold(0.0f64, |m, i| m.max(pf.g.values[i].abs()));
    let sup_g = pf.g.sup_abs();
    let sup_g_prime = pf.g.derivative().sup_abs();
    let mut violations = Vec::new();
    if support_leak > 1e-12 {
        violations.push(format!("g = {support_leak:.3e} outside [A, B]"));
    }
    if sup_g > gamma * (1.0 + 1e-9) {
        violations.push(format!("sup|g| = {sup_g:.6} > gamma_n = {gamma:.6}"));
    }
    if sup_g_prime > gamma_p * HOLDER_SLACK {
        violations.push(format!("sup|g'| = {sup_g_prime:.6} > gamma'_n = {gamma_p:.6}"));
    }
    Ok(NeighborhoodReport { support_leak, sup_g, sup_g_prime, violations })
}

/// Smooth compactly supported bump `(1 - u^2)^4` on `|u| < 1` (three continuous derivatives).
pub fn bump_profile(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let w = 1.0 - u * u;
        w * w * w * w
    }
}

/// sup |d/du (1 - u^2)^4| = 8 u (1 - u^2)^3 at u = 1/sqrt(7).
pub fn bump_profile_max_slope() -> f64 {
    let u = 1.0 / 7f64.sqrt();
    8.0 * u * (1.0 - u * u).powi(3)
}

/// Bump centred at `center` with half-width `half_width` and peak `height`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: f64,
    pub half_width: f64,
    pub height: f64,
}

impl Bump {
    pub fn eval(&self, x: f64) -> f64 {
        self.height * bump_profile((x - self.center) / self.half_width)
    }

    pub fn on_grid(&self, grid: Grid) -> GridFunction {
        GridFunction::from_fn(grid, |x| self.eval(x))
    }

    /// Largest bump on `[a, b]` using `fraction` of both budgets.
    pub fn budget(a: f64, b: f64, gamma: f64, gamma_prime: f64, fraction: f64) -> Bump {
        let half_width = 0.5 * (b - a);
        let height = fraction * gamma.min(gamma_prime * half_width / bump_profile_max_slope());
        Bump { center: 0.5 * (a + b), half_width, height }
    }
}

/// Rescales `g` so `sup|g| <= fraction*gamma` and `sup|g'| <= fraction*gamma'`, with one of them tight.
pub fn scale_to_budget(g: &GridFunction, gamma: f64, gamma_prime: f64, fraction: f64) -> GridFunction {
    let s0 = g.sup_abs();
    let s1 = g.max_chord_slope().max(g.derivative().sup_abs());
    if s0 == 0.0 {
        return g.clone();
    }
    let mut k = fraction * gamma / s0;
    if s1 > 0.0 {
        k = k.min(fraction * gamma_prime / s1);
    }
    g.scale(k)
}

/// Random neighborhood pair: `f0 = amp sin(freq x + phase)` and a sum of
/// one to three bumps inside `[A, B]`, scaled into the budget.
pub fn random_neighborhood<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &FunctionClassSpec,
    rc: &RateConstants,
) -> Result<PerturbedFunction> {
    let (gamma, gamma_p) = rates(rc, spec)?;
    let amp_max = (spec.m - gamma).max(0.0) * 0.9;
    let amp = rng.random_range(0.0..=amp_max.max(1e-12));
    let freq = rng.random_range(0.2..1.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let f0 = GridFunction::from_fn(spec.grid, |x| amp * (freq * x + phase).sin());

    let nb = rng.random_range(1..=3);
    let width = spec.b - spec.a;
    let bumps: Vec<Bump> = (0..nb)
        .map(|_| {
            let hw = width * rng.random_range(0.1..0.5);
            let c = rng.random_range(spec.a + hw..=spec.b - hw);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            Bump { center: c, half_width: hw, height: sign * rng.random_range(0.3..1.0) }
        })
        .collect();
    let raw = GridFunction::from_fn(spec.grid, |x| bumps.iter().map(|b| b.eval(x)).sum());
    let fraction = rng.random_range(0.2..=1.0);
    let g = scale_to_budget(&raw, gamma, gamma_p, fraction);
    PerturbedFunction::new(f0, g, gamma, gamma_p, spec.a, spec.b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum NoiseFamily {
    Gaussian { sigma: f64 },
    Logistic { scale: f64 },
    /// Tabulated density (here: scaled Student-t); score is not invertible.
    StudentT { nu: f64, scale: f64 },
}

/// Error density with log-density derivatives tabulated on the grid.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    pub family: NoiseFamily,
    pub density: GridFunction,
    pub score: GridFunction,
    pub curvature: GridFunction,
    /// sup |l'''|
    pub third_deriv_bound: f64,
    pub fisher_info: f64,
    cdf: CdfTable,
}

impl NoiseModel {
    pub fn gaussian(sigma: f64, grid: Grid) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be positive (got {sigma})")));
        }
        Self::build(NoiseFamily::Gaussian { sigma }, grid)
    }

    pub fn logistic(scale: f64, grid: Grid) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be positive (got {scale})")));
        }
        Self::build(NoiseFamily::Logistic { scale }, grid)
    }

    pub fn student_t(nu: f64, scale: f64, grid: Grid) -> Result<Self> {
        if !(nu > 2.0 && scale > 0.0) {
            return Err(Error::InvalidArgument(format!("student-t needs nu > 2, scale > 0 (got {nu}, {scale})")));
        }
        Self::build(NoiseFamily::StudentT { nu, scale }, grid)
    }

    pub fn from_family(family: NoiseFamily, grid: Grid) -> Result<Self> {
        match family {
            NoiseFamily::Gaussian { sigma } => Self::gaussian(sigma, grid),
            NoiseFamily::Logistic { scale } => Self::logistic(scale, grid),
            NoiseFamily::StudentT { nu, scale } => Self::student_t(nu, scale, grid),
        }
    }

    fn build(family: NoiseFamily, grid: Grid) -> Result<Self> {
        let density = GridFunction::from_fn(grid, |x| family_pdf(&family, x));
        let score = GridFunction::from_fn(grid, |x| family_score(&family, x));
        let curvature = GridFunction::from_fn(grid, |x| family_curvature(&family, x));
        let third_deriv_bound = match family {
            NoiseFamily::Gaussian { .. } => 0.0,
            NoiseFamily::Logistic { scale } => 1.0 / (3.0 * 3f64.sqrt() * scale.powi(3)),
            NoiseFamily::StudentT { .. } => {
                // sup over the grid of |l'''| from the analytic form
                (0..grid.len).fold(0.0f64, |m, i| m.max(student_third(&family, grid.x(i)).abs()))
            }
        };
        let fisher_info = density
            .zip_with(&score, |p, s| p * s * s)
            .expect("same grid")
            .integral();
        let cdf = CdfTable::new(&density)?;
        let model = NoiseModel { family, density, score, curvature, third_deriv_bound, fisher_info, cdf };
        model.validate()?;
        Ok(model)
    }

    /// Checks the quadrature invariants.
    pub fn validate(&self) -> Result<()> {
        if self.density.values.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("density must be positive on the grid".into()));
        }
        let mass = self.density.integral();
        if (mass - 1.0).abs() > NOISE_QUAD_TOL {
            return Err(Error::InvalidArgument(format!(
                "density integrates to {mass:.9} on the grid; widen the domain"
            )));
        }
        let centred = self.density.zip_with(&self.score, |p, s| p * s)?.integral();
        if centred.abs() > NOISE_QUAD_TOL {
            return Err(Error::InvalidArgument(format!("score is not centred: {centred:.3e}")));
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        self.density.grid
    }

    pub fn pdf(&self, x: f64) -> f64 {
        family_pdf(&self.family, x)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match self.family {
            NoiseFamily::Gaussian { sigma } => {
                let z = x / sigma;
                -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            NoiseFamily::Logistic { scale } => {
                let z = (x / scale).abs();
                -z - 2.0 * (-z).exp().ln_1p() - scale.ln()
            }
            NoiseFamily::StudentT { nu, scale } => {
                let z = x / scale;
                student_log_norm(nu) - scale.ln() - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()
            }
        }
    }

    pub fn score_at(&self, x: f64) -> f64 {
        family_score(&self.family, x)
    }

    pub fn curvature_at(&self, x: f64) -> f64 {
        family_curvature(&self.family, x)
    }

    pub fn variance(&self) -> f64 {
        match self.family {
            NoiseFamily::Gaussian { sigma } => sigma * sigma,
            NoiseFamily::Logistic { scale } => scale * scale * std::f64::consts::PI.powi(2) / 3.0,
            NoiseFamily::StudentT { nu, scale } => scale * scale * nu / (nu - 2.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            NoiseFamily::Gaussian { sigma } => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                sigma * z
            }
            NoiseFamily::Logistic { scale } => {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                scale * (u / (1.0 - u)).ln()
            }
            NoiseFamily::StudentT { .. } => self.cdf.quantile(rng.random::<f64>()),
        }
    }

    pub fn cdf_table(&self) -> &CdfTable {
        &self.cdf
    }

    /// Whether `l'` is strictly monotone, so `eps` is a function of `l'(eps)`.
    pub fn score_invertible(&self) -> bool {
        !matches!(self.family, NoiseFamily::StudentT { .. })
    }

    /// `eps` with `l'(eps) = v` for invertible scores.
    pub fn invert_score(&self, v: f64) -> Option<f64> {
        match self.family {
            NoiseFamily::Gaussian { sigma } => Some(-sigma * sigma * v),
            NoiseFamily::Logistic { scale } => {
                // l'(x) = -tanh(x / 2s) / s
                let t = (-scale * v).clamp(-1.0 + 1e-16, 1.0 - 1e-16);
                Some(2.0 * scale * t.atanh())
            }
            NoiseFamily::StudentT { .. } => None,
        }
    }

    /// Same family rescaled by `a`: density `p(x / a) / a`.
    pub fn rescaled(&self, a: f64) -> Result<Self> {
        let family = match self.family {
            NoiseFamily::Gaussian { sigma } => NoiseFamily::Gaussian { sigma: sigma * a },
            NoiseFamily::Logistic { scale } => NoiseFamily::Logistic { scale: scale * a },
            NoiseFamily::StudentT { nu, scale } => NoiseFamily::StudentT { nu, scale: scale * a },
        };
        Self::from_family(family, self.grid())
    }
}

/// Rescales the template so its Fisher information equals `target_i`.
pub fn match_fisher(template: &NoiseModel, target_i: f64) -> Result<NoiseModel> {
    if !(target_i > 0.0) {
        return Err(Error::InvalidArgument(format!("target Fisher information must be positive (got {target_i})")));
    }
    if !(template.fisher_info > 0.0 && template.fisher_info.is_finite()) {
        return Err(Error::InvalidArgument("template Fisher information must be finite and positive".into()));
    }
    if (template.fisher_info - target_i).abs() <= NOISE_QUAD_TOL {
        return Ok(template.clone());
    }
    // information scales like 1 / a^2
    let mut a = (template.fisher_info / target_i).sqrt();
    let mut model = template.rescaled(a)?;
    // one correction step absorbs the quadrature truncation
    for _ in 0..3 {
        if (model.fisher_info - target_i).abs() <= NOISE_QUAD_TOL {
            break;
        }
        a *= (model.fisher_info / target_i).sqrt();
        model = template.rescaled(a)?;
    }
    Ok(model)
}

fn student_log_norm(nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln()
}

fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

fn family_pdf(f: &NoiseFamily, x: f64) -> f64 {
    match *f {
        NoiseFamily::Gaussian { sigma } => {
            let z = x / sigma;
            (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        }
        NoiseFamily::Logistic { scale } => {
            let e = (-(x / scale).abs()).exp();
            e / (scale * (1.0 + e) * (1.0 + e))
        }
        NoiseFamily::StudentT { nu, scale } => {
            let z = x / scale;
            (student_log_norm(nu) - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()).exp() / scale
        }
    }
}

fn family_score(f: &NoiseFamily, x: f64) -> f64 {
    match *f {
        NoiseFamily::Gaussian { sigma } => -x / (sigma * sigma),
        NoiseFamily::Logistic { scale } => -(x / (2.0 * scale)).tanh() / scale,
        NoiseFamily::StudentT { nu, scale } => {
            let z = x / scale;
            -(nu + 1.0) * z / (nu + z * z) / scale
        }
    }
}

fn family_curvature(f: &NoiseFamily, x: f64) -> f64 {
    match *f {
        NoiseFamily::Gaussian { sigma } => -1.0 / (sigma * sigma),
        NoiseFamily::Logistic { scale } => {
            let c = (x / (2.0 * scale)).cosh();
            -0.5 / (scale * scale * c * c)
        }
        NoiseFamily::StudentT { nu, scale } => {
            let z = x / scale;
            let d = nu + z * z;
            -(nu + 1.0) * (nu - z * z) / (d * d) / (scale * scale)
        }
    }
}

fn student_third(f: &NoiseFamily, x: f64) -> f64 {
    match *f {
        NoiseFamily::StudentT { nu, scale } => {
            let z = x / scale;
            let d = nu + z * z;
            // d/dz of -(nu+1)(nu - z^2)/d^2
            (nu + 1.0) * 2.0 * z * (3.0 * nu - z * z) / (d * d * d) / scale.powi(3)
        }
        _ => 0.0,
    }
}

/// Third derivative of the log-density.
pub fn third_derivative(noise: &NoiseModel, x: f64) -> f64 {
    match noise.family {
        NoiseFamily::Gaussian { .. } => 0.0,
        NoiseFamily::Logistic { scale } => {
            let u = x / (2.0 * scale);
            let c = u.cosh();
            0.5 * u.tanh() / (scale.powi(3) * c * c)
        }
        NoiseFamily::StudentT { .. } => student_third(&noise.family, x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;

    fn spec() -> FunctionClassSpec {
        FunctionClassSpec { m: 1.0, beta: 3.0, l: 2.0, ..Default::default() }
    }

    #[test]
    fn rates_reference_value() {
        let s = spec();
        let (g, gp) = rates(&RateConstants::new(1000), &s).unwrap();
        let base = 1000f64.ln() / 1000.0;
        assert!((g - base.powf(3.0 / 7.0)).abs() < 1e-15);
        assert!((g - 0.1186).abs() < 5e-5);
        assert!((gp - base.powf(2.0 / 7.0)).abs() < 1e-15);
        assert!(rates(&RateConstants::new(1), &s).is_err());
        let zero = RateConstants { c: 0.0, c_prime: 0.0, n: 50 };
        assert_eq!(rates(&zero, &s).unwrap(), (0.0, 0.0));
        let (g4096, _) = rates(&RateConstants::new(4096), &s).unwrap();
        let (g1024, _) = rates(&RateConstants::new(1024), &s).unwrap();
        assert!(g4096 < g1024);
    }

    #[test]
    fn smoothness_order_is_strictly_below_beta() {
        let mut s = spec();
        assert_eq!(s.smoothness_order(), 2);
        s.beta = 2.7;
        assert_eq!(s.smoothness_order(), 2);
        s.beta = 0.5;
        assert_eq!(s.smoothness_order(), 0);
    }

    #[test]
    fn membership_examples() {
        let s = spec();
        assert!(check_membership(&GridFunction::zeros(s.grid), &s).unwrap().ok());
        let big = GridFunction::constant(s.grid, 2.0 * s.m);
        let r = check_membership(&big, &s).unwrap();
        assert!(!r.ok());
        assert!(r.violations[0].contains("sup|f|"));
        let sine = GridFunction::from_fn(s.grid, |x| 0.5 * x.sin());
        let r = check_membership(&sine, &s).unwrap();
        assert!(r.ok(), "{:?}", r.violations);
        // brute-force oracle: |f| <= .5, |f'| <= .5, |f''| <= .5, Lip(f'') <= .5
        assert!((r.derivative_sups[0] - 0.5).abs() < 1e-3);
        assert!((r.holder_quotient - 0.5).abs() < 1e-2);
    }

    #[test]
    fn membership_rejects_other_grid() {
        let s = spec();
        let f = GridFunction::zeros(Grid::new(-1.0, 1.0, 0.5).unwrap());
        assert!(matches!(check_membership(&f, &s), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn neighborhood_examples() {
        let s = spec();
        let rc = RateConstants::new(1000);
        let (g, gp) = rates(&rc, &s).unwrap();
        let f0 = GridFunction::zeros(s.grid);
        let zero = PerturbedFunction::unperturbed(f0.clone(), &s);
        assert!(check_neighborhood(&zero, &rc, &s).unwrap().ok());

        let fit = Bump::budget(s.a, s.b, g, gp, 1.0);
        let pf = PerturbedFunction::new(f0.clone(), fit.on_grid(s.grid), g, gp, s.a, s.b).unwrap();
        assert!(check_neighborhood(&pf, &rc, &s).unwrap().ok());

        let tall = Bump { height: 2.0 * g, ..fit };
        let pf = PerturbedFunction::new(f0, tall.on_grid(s.grid), g, gp, s.a, s.b).unwrap();
        assert!(!check_neighborhood(&pf, &rc, &s).unwrap().ok());
    }

    #[test]
    fn bump_slope_constant() {
        let brute = (0..200_000)
            .map(|i| {
                let u = -1.0 + 2.0 * i as f64 / 200_000.0;
                let d = 1e-6;
                ((bump_profile(u + d) - bump_profile(u - d)) / (2.0 * d)).abs()
            })
            .fold(0.0, f64::max);
        assert!((brute - bump_profile_max_slope()).abs() < 1e-6);
    }

    #[test]
    fn gaussian_noise_invariants() {
        let grid = Grid::default();
        let n1 = NoiseModel::gaussian(1.0, grid).unwrap();
        assert!((n1.fisher_info - 1.0).abs() < 1e-6);
        assert!(n1.density.zip_with(&n1.score, |p, s| p * s).unwrap().integral().abs() < 1e-12);
        let wide = Grid::new(-20.0, 20.0, 1.0 / 256.0).unwrap();
        let n2 = NoiseModel::gaussian(2.0, wide).unwrap();
        assert!((n2.fisher_info - 0.25).abs() < 1e-6);
        assert!(NoiseModel::gaussian(0.0, grid).is_err());
        assert!(NoiseModel::gaussian(-1.0, grid).is_err());
    }

    #[test]
    fn match_fisher_examples() {
        let grid = Grid::default();
        let g1 = NoiseModel::gaussian(1.0, grid).unwrap();
        let same = match_fisher(&g1, 1.0).unwrap();
        assert_eq!(same.family, g1.family);
        let quad = match_fisher(&g1, 4.0).unwrap();
        match quad.family {
            NoiseFamily::Gaussian { sigma } => assert!((sigma - 0.5).abs() < 1e-6),
            _ => panic!("family changed"),
        }
        assert!((quad.fisher_info - 4.0).abs() < 1e-6);
        assert!((quad.density.integral() - 1.0).abs() < 1e-6);

        // quadrature oracle for the logistic score integral at unit scale: 1/3
        let logi = NoiseModel::logistic(1.0, Grid::new(-40.0, 40.0, 1.0 / 256.0).unwrap()).unwrap();
        let oracle: f64 = {
            let h = 1e-3;
            (-40_000..=40_000)
                .map(|i| {
                    let x = i as f64 * h;
                    let e = (-x.abs()).exp();
                    let p = e / ((1.0 + e) * (1.0 + e));
                    let s = (x / 2.0).tanh();
                    s * s * p * h
                })
                .sum()
        };
        assert!((logi.fisher_info - oracle).abs() < 1e-6);
        let m = match_fisher(&logi, 1.0).unwrap();
        match m.family {
            NoiseFamily::Logistic { scale } => assert!((scale - (oracle).sqrt()).abs() < 1e-6),
            _ => panic!(),
        }
        assert!((m.fisher_info - 1.0).abs() < 1e-6);
        assert!(match_fisher(&g1, 0.0).is_err());
    }

    #[test]
    fn score_inversion_round_trips() {
        let grid = Grid::default();
        for noise in [NoiseModel::gaussian(0.7, grid).unwrap(), NoiseModel::logistic(0.6, grid).unwrap()] {
            for &x in &[-3.0, -0.2, 0.0, 1.5] {
                let v = noise.score_at(x);
                assert!((noise.invert_score(v).unwrap() - x).abs() < 1e-9);
            }
        }
        let t = NoiseModel::student_t(5.0, 1.0, Grid::new(-60.0, 60.0, 1.0 / 64.0).unwrap()).unwrap();
        assert!(!t.score_invertible());
        assert!(t.invert_score(0.1).is_none());
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let grid = Grid::default();
        let models = [
            NoiseModel::gaussian(1.3, grid).unwrap(),
            NoiseModel::logistic(0.5, grid).unwrap(),
            NoiseModel::student_t(6.0, 1.0, Grid::new(-60.0, 60.0, 1.0 / 64.0).unwrap()).unwrap(),
        ];
        let d = 1e-4;
        for m in &models {
            for &x in &[-2.0, -0.3, 0.4, 1.7] {
                let fd1 = (m.ln_pdf(x + d) - m.ln_pdf(x - d)) / (2.0 * d);
                assert!((fd1 - m.score_at(x)).abs() < 1e-6);
                let fd2 = (m.score_at(x + d) - m.score_at(x - d)) / (2.0 * d);
                assert!((fd2 - m.curvature_at(x)).abs() < 1e-6);
                let fd3 = (m.curvature_at(x + d) - m.curvature_at(x - d)) / (2.0 * d);
                assert!((fd3 - third_derivative(m, x)).abs() < 1e-6);
                assert!(third_derivative(m, x).abs() <= m.third_deriv_bound + 1e-12);
            }
            assert!((m.ln_pdf(0.9).exp() - m.pdf(0.9)).abs() < 1e-14);
        }
    }

    #[test]
    fn random_neighborhood_in_budget() {
        let s = spec();
        let rc = RateConstants::new(1000);
        let mut rng = Streams::new(5).rng("test", &[]);
        for _ in 0..10 {
            let pf = random_neighborhood(&mut rng, &s, &rc).unwrap();
            assert!(check_neighborhood(&pf, &rc, &s).unwrap().ok());
            assert!(pf.f().sup_abs() <= s.m);
        }
    }
}
