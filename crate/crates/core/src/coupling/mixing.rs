//! Uniform mixing of the stationary AR chain over a finite cell partition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::models::NoiseModel;
use crate::stationary::{transfer_apply, StationaryDensity};
use crate::stats::linear_fit;

/// Cell edges with equal stationary mass; outer edges are infinite.
pub fn quantile_cells(sd: &StationaryDensity, cells: usize) -> Result<Vec<f64>> {
    if cells < 2 {
        return Err(Error::InvalidArgument("need at least two cells".into()));
    }
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend((1..cells).map(|i| sd.cdf().quantile(i as f64 / cells as f64)));
    edges.push(f64::INFINITY);
    Ok(edges)
}

fn cell_masses(psi: &GridFunction, edges: &[f64]) -> Vec<f64> {
    let grid = psi.grid;
    edges
        .windows(2)
        .map(|w| psi.integral_between(w[0].max(grid.x_min), w[1].min(grid.x_max())))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingEstimate {
    pub lag: usize,
    /// `max_B sup_A |P(A) - P(A | B)|` over unions of cells `A`.
    pub phi: f64,
    /// `max_{A, B} |P(A) - P(A | B)|` over single cells.
    pub pair_max: f64,
}

/// `phi(k)` for `k = 1..=max_lag` by pushing each conditioned cell density
/// through the transfer operator.
pub fn phi_mixing_chain(
    f: &GridFunction,
    noise: &NoiseModel,
    sd: &StationaryDensity,
    edges: &[f64],
    max_lag: usize,
) -> Result<Vec<MixingEstimate>> {
    let psi = &sd.psi;
    let grid = psi.grid;
    let base = cell_masses(psi, edges);
    let mut out: Vec<MixingEstimate> = (1..=max_lag).map(|lag| MixingEstimate { lag, phi: 0.0, pair_max: 0.0 }).collect();
    for (b, w) in edges.windows(2).enumerate() {
        if !(base[b] > 0.0) {
            continue;
        }
        let mut cond = GridFunction::from_fn(grid, |x| if x >= w[0] && x < w[1] { psi.eval(x) } else { 0.0 });
        let mass = cond.integral();
        if !(mass > 0.0) {
            continue;
        }
        cond = cond.scale(1.0 / mass);
        for est in out.iter_mut() {
            cond = transfer_apply(&cond, f, noise)?;
            let after = cell_masses(&cond, edges);
            let diffs: Vec<f64> = base.iter().zip(&after).map(|(p, q)| p - q).collect();
            let union: f64 = diffs.iter().map(|d| d.max(0.0)).sum();
            let pair = diffs.iter().map(|d| d.abs()).fold(0.0, f64::max);
            est.phi = est.phi.max(union);
            est.pair_max = est.pair_max.max(pair);
        }
    }
    Ok(out)
}

/// Plug-in `phi(lag)` from a long path, over the same cells.
pub fn phi_mixing_simulated(x: &[f64], lag: usize, edges: &[f64]) -> Result<f64> {
    if lag == 0 || x.len() <= lag {
        return Err(Error::InvalidArgument(format!("path of length {} too short for lag {lag}", x.len())));
    }
    let cells = edges.len() - 1;
    let cell = |v: f64| edges.partition_point(|&e| e <= v).clamp(1, cells) - 1;
    let pairs = x.len() - lag;
    let mut joint = vec![vec![0u64; cells]; cells];
    let mut later = vec![0u64; cells];
    for i in 0..pairs {
        let (b, a) = (cell(x[i]), cell(x[i + lag]));
        joint[b][a] += 1;
        later[a] += 1;
    }
    let mut phi = 0.0f64;
    for row in &joint {
        let nb: u64 = row.iter().sum();
        if nb == 0 {
            continue;
        }
        let u: f64 = row
            .iter()
            .zip(&later)
            .map(|(&c, &a)| (a as f64 / pairs as f64 - c as f64 / nb as f64).max(0.0))
            .sum();
        phi = phi.max(u);
    }
    Ok(phi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricFit {
    /// `rho_hat` with `phi(k) ~ C rho_hat^k`.
    pub rho: f64,
    pub log_c: f64,
    pub r2: f64,
    pub points: usize,
}

/// Least-squares fit of `ln phi(k)` on `k` over estimates above `floor`.
pub fn geometric_decay_fit(est: &[MixingEstimate], floor: f64) -> Result<GeometricFit> {
    let pts: Vec<(f64, f64)> = est.iter().filter(|e| e.phi > floor).map(|e| (e.lag as f64, e.phi.ln())).collect();
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(format!("only {} lags above the floor {floor:e}", pts.len())));
    }
    let (k, l): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (a, b, r2) = linear_fit(&k, &l);
    Ok(GeometricFit { rho: b.exp(), log_c: a, r2, points: k.len() })
}
