//! Observations from the autoregression and the two regression experiments.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::likelihood::BlockPartition;
use crate::models::NoiseModel;
use crate::rng::{names, Streams};
use crate::stationary::{sample_stationary, StationaryDensity};

/// `X_0..X_n` and innovations `eps_1..eps_n` (`eps[0]` is unused and zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArTrajectory {
    pub x: Vec<f64>,
    pub eps: Vec<f64>,
}

impl ArTrajectory {
    pub fn n(&self) -> usize {
        self.x.len().saturating_sub(1)
    }

    /// Builds `X_i = f(X_{i-1}) + eps_i` from `X_0` and the innovations.
    /// Stored innovations may differ from the inputs in the last bit.
    pub fn from_innovations(f: &GridFunction, x0: f64, eps: &[f64]) -> Self {
        let mut x = Vec::with_capacity(eps.len() + 1);
        x.push(x0);
        let mut e = Vec::with_capacity(eps.len() + 1);
        e.push(0.0);
        for &ei in eps {
            let fx = f.eval(*x.last().expect("nonempty"));
            let xi = fx + ei;
            x.push(xi);
            // stored so that the recursion holds exactly in floating point
            e.push(xi - fx);
        }
        ArTrajectory { x, eps: e }
    }

    /// `max_i |X_i - f(X_{i-1}) - eps_i|`.
    pub fn reconstruction_error(&self, f: &GridFunction) -> f64 {
        (1..self.x.len())
            .map(|i| ((self.x[i] - f.eval(self.x[i - 1])) - self.eps[i]).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows = (1..self.x.len()).map(|i| (i, self.x[i - 1], self.x[i], self.eps[i]));
        write_rows(w, "x_prev", rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomDesignSample {
    pub xi: Vec<f64>,
    pub y: Vec<f64>,
    pub eta: Vec<f64>,
}

impl RandomDesignSample {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows = (0..self.xi.len()).map(|i| (i + 1, self.xi[i], self.y[i], self.eta[i]));
        write_rows(w, "xi", rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedDesignSample {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub eta: Vec<f64>,
}

impl FixedDesignSample {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows = (0..self.t.len()).map(|i| (i + 1, self.t[i], self.y[i], self.eta[i]));
        write_rows(w, "t", rows)
    }
}

fn write_rows<W: Write, I: Iterator<Item = (usize, f64, f64, f64)>>(w: W, design: &str, rows: I) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["index", design, "y", "innovation"])?;
    for (i, a, b, c) in rows {
        wr.write_record([i.to_string(), format!("{a:.17e}"), format!("{b:.17e}"), format!("{c:.17e}")])?;
    }
    wr.flush()?;
    Ok(())
}

/// Stationary AR path: `X_0 ~ psi`, then the recursion with i.i.d. innovations.
pub fn simulate_ar(f: &GridFunction, noise: &NoiseModel, sd: &StationaryDensity, n: usize, streams: &Streams) -> ArTrajectory {
    let mut r0 = streams.rng(names::AR_INITIAL, &[]);
    let x0 = sample_stationary(sd, 1, &mut r0)[0];
    let mut r = streams.rng(names::AR_INNOVATIONS, &[]);
    let eps: Vec<f64> = (0..n).map(|_| noise.sample(&mut r)).collect();
    ArTrajectory::from_innovations(f, x0, &eps)
}

/// `Y_i = f(xi_i) + eta_i` with `xi_i ~ psi_f0` and `eta_i ~ q` independent.
pub fn simulate_random_design(
    f: &GridFunction,
    noise_q: &NoiseModel,
    sd0: &StationaryDensity,
    n: usize,
    streams: &Streams,
) -> RandomDesignSample {
    let xi = sample_stationary(sd0, n, &mut streams.rng(names::DESIGN, &[]));
    let mut r = streams.rng(names::REGRESSION_NOISE, &[]);
    let eta: Vec<f64> = (0..n).map(|_| noise_q.sample(&mut r)).collect();
    let y = xi.iter().zip(&eta).map(|(&x, &e)| f.eval(x) + e).collect();
    RandomDesignSample { xi, y, eta }
}

/// `Y_{n,i} = f(t_{n,i}) + eta_i` on given design points.
pub fn simulate_fixed_design(f: &GridFunction, noise_q: &NoiseModel, t: &[f64], streams: &Streams) -> FixedDesignSample {
    let mut r = streams.rng(names::REGRESSION_NOISE, &[]);
    let eta: Vec<f64> = t.iter().map(|_| noise_q.sample(&mut r)).collect();
    let y = t.iter().zip(&eta).map(|(&x, &e)| f.eval(x) + e).collect();
    FixedDesignSample { t: t.to_vec(), y, eta }
}

/// Quantiles of `psi_f0` at `(i - 1/2) / n`.
pub fn design_points(sd0: &StationaryDensity, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("design needs n >= 1".into()));
    }
    Ok((1..=n).map(|i| sd0.cdf().quantile((i as f64 - 0.5) / n as f64)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rearrangement {
    /// Design points in observation order.
    pub t: Vec<f64>,
    /// `max_l max_i m_l |CDF(t) - (i - 1/2)/m_l|`.
    pub constant: f64,
}

/// Distributes the design points over the blocks so that each block is
/// close to its own `(i - 1/2)/m_l` quantile grid.
///
/// All per-block targets are merged and sorted; the r-th smallest point goes
/// to the r-th smallest target.
pub fn rearrange_blocks(t: &[f64], sd0: &StationaryDensity, partition: &BlockPartition) -> Result<Rearrangement> {
    if t.len() != partition.n {
        return Err(Error::Rearrangement(format!(
            "{} design points for a partition of {} indices",
            t.len(),
            partition.n
        )));
    }
    let mut targets: Vec<(f64, usize, usize)> = Vec::with_capacity(t.len());
    for l in 1..=partition.k {
        let m = partition.size(l);
        for i in 1..=m {
            targets.push(((i as f64 - 0.5) / m as f64, l, i));
        }
    }
    targets.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut sorted = t.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));

    let mut out = vec![f64::NAN; t.len()];
    let mut constant = 0.0f64;
    for (r, &(p, l, i)) in targets.iter().enumerate() {
        let pos = partition.start(l) + i - 2; // 0-based observation index
        out[pos] = sorted[r];
        let m = partition.size(l) as f64;
        constant = constant.max(m * (sd0.cdf().cdf(sorted[r]) - p).abs());
    }
    if out.iter().any(|v| v.is_nan()) {
        return Err(Error::Rearrangement("unassigned design position".into()));
    }
    Ok(Rearrangement { t: out, constant })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::stats::{correlation, ks_distance, std_normal_cdf};

    fn gauss() -> NoiseModel {
        NoiseModel::gaussian(1.0, Grid::default()).unwrap()
    }

    fn std_normal_sd() -> StationaryDensity {
        StationaryDensity::from_density(gauss().density.clone()).unwrap()
    }

    #[test]
    fn zero_map_gives_innovations() {
        let noise = gauss();
        let f = GridFunction::zeros(noise.grid());
        let tr = simulate_ar(&f, &noise, &std_normal_sd(), 50, &Streams::new(1));
        for i in 1..=50 {
            assert_eq!(tr.x[i], tr.eps[i] + 0.0);
        }
        assert_eq!(tr.reconstruction_error(&f), 0.0);
    }

    #[test]
    fn constant_map_shifts_innovations() {
        let noise = gauss();
        let f = GridFunction::constant(noise.grid(), 0.4);
        let tr = simulate_ar(&f, &noise, &std_normal_sd(), 20_000, &Streams::new(2));
        let shifted: Vec<f64> = tr.x[1..].iter().map(|x| x - 0.4).collect();
        assert!(ks_distance(&shifted, std_normal_cdf) < 0.015);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let noise = gauss();
        let f = GridFunction::from_fn(noise.grid(), |x| 0.5 * x.sin());
        let a = simulate_ar(&f, &noise, &std_normal_sd(), 100, &Streams::new(9));
        let b = simulate_ar(&f, &noise, &std_normal_sd(), 100, &Streams::new(9));
        assert_eq!(a, b);
        assert_eq!(a.reconstruction_error(&f), 0.0);
    }

    #[test]
    fn random_design_examples() {
        let noise = gauss();
        let f0 = GridFunction::zeros(noise.grid());
        let s = simulate_random_design(&f0, &noise, &std_normal_sd(), 20_000, &Streams::new(4));
        let resid: Vec<f64> = s.y.iter().zip(&s.xi).map(|(y, x)| y - f0.eval(*x)).collect();
        assert!(ks_distance(&resid, std_normal_cdf) < 0.015);
        assert!(correlation(&s.xi, &s.y).abs() < 3.0 / (20_000f64).sqrt());
        let empty = simulate_random_design(&f0, &noise, &std_normal_sd(), 0, &Streams::new(4));
        assert!(empty.xi.is_empty() && empty.y.is_empty());
    }

    #[test]
    fn design_point_examples() {
        let sd = std_normal_sd();
        assert!(design_points(&sd, 0).is_err());
        assert!(design_points(&sd, 1).unwrap()[0].abs() < 1e-9);
        let t2 = design_points(&sd, 2).unwrap();
        assert!((t2[0] + 0.674_489_750_196_081_7).abs() < 1e-5);
        assert!((t2[1] - 0.674_489_750_196_081_7).abs() < 1e-5);
        let t3 = design_points(&sd, 3).unwrap();
        assert!((sd.cdf().cdf(t3[1]) - 0.5).abs() < 1e-12);
        let t = design_points(&sd, 257).unwrap();
        assert!(t.windows(2).all(|w| w[0] <= w[1]));
        for (i, &ti) in t.iter().enumerate() {
            assert!((sd.cdf().cdf(ti) - (i as f64 + 0.5) / 257.0).abs() < 1e-8);
        }
    }

    #[test]
    fn rearrangement_on_uniform_design() {
        let grid = Grid::new(-1.0, 2.0, 1.0 / 256.0).unwrap();
        let uni = GridFunction::from_fn(grid, |x| if (0.0..=1.0).contains(&x) { 1.0 } else { 0.0 });
        let sd = StationaryDensity::from_density(uni).unwrap();
        let t = [0.125, 0.375, 0.625, 0.875];
        let p = BlockPartition { n: 4, k: 2, bounds: vec![0, 2, 4] };
        let r = rearrange_blocks(&t, &sd, &p).unwrap();
        let mut b1 = [r.t[0], r.t[1]];
        let mut b2 = [r.t[2], r.t[3]];
        b1.sort_by(f64::total_cmp);
        b2.sort_by(f64::total_cmp);
        // the uniform CDF is linear on the grid up to the kinks at 0 and 1
        assert!((b1[0] - 0.125).abs() < 1e-2 && (b1[1] - 0.625).abs() < 1e-2);
        assert!((b2[0] - 0.375).abs() < 1e-2 && (b2[1] - 0.875).abs() < 1e-2);
        let single = BlockPartition { n: 4, k: 1, bounds: vec![0, 4] };
        let r1 = rearrange_blocks(&t, &sd, &single).unwrap();
        assert_eq!(r1.t, t.to_vec());
    }
}
