//! Blockwise log-likelihood ratios, Taylor terms, event diagnostics and
//! Monte Carlo Hellinger estimates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::models::{third_derivative, NoiseModel};
use crate::stats::{mean_se, pairwise_sum, MeanSe};

/// Smallest density value accepted inside a logarithm.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Blocks `I_l = {i : (l-1) n / K < i <= l n / K}`, `l = 1..K`, `K = ceil(n^{1/6})`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub n: usize,
    pub k: usize,
    /// `bounds[l] = floor(l n / K)`; block `l` is `bounds[l-1]+1 ..= bounds[l]`.
    pub bounds: Vec<usize>,
}

/// Smallest `k` with `k^6 >= n`.
pub fn block_count(n: usize) -> usize {
    let mut k = (n as f64).powf(1.0 / 6.0).floor().max(1.0) as usize;
    while (k as u128).pow(6) < n as u128 {
        k += 1;
    }
    while k > 1 && ((k - 1) as u128).pow(6) >= n as u128 {
        k -= 1;
    }
    k
}

impl BlockPartition {
    pub fn new(n: usize) -> Self {
        Self::with_blocks(n, block_count(n.max(1)))
    }

    pub fn with_blocks(n: usize, k: usize) -> Self {
        let bounds = (0..=k).map(|l| l * n / k).collect();
        BlockPartition { n, k, bounds }
    }

    pub fn size(&self, l: usize) -> usize {
        self.bounds[l] - self.bounds[l - 1]
    }

    /// First index `i_l` of block `l` (1-based).
    pub fn start(&self, l: usize) -> usize {
        self.bounds[l - 1] + 1
    }

    pub fn range(&self, l: usize) -> std::ops::RangeInclusive<usize> {
        self.start(l)..=self.bounds[l]
    }

    pub fn sizes(&self) -> Vec<usize> {
        (1..=self.k).map(|l| self.size(l)).collect()
    }

    pub fn block_of(&self, i: usize) -> usize {
        self.bounds.partition_point(|&b| b < i)
    }
}

/// Full log-likelihood ratio with its block decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLr {
    pub block0: f64,
    pub blocks: Vec<f64>,
    pub total: f64,
}

impl LogLr {
    fn from_terms(block0: f64, terms: &[f64], partition: &BlockPartition) -> Self {
        let blocks: Vec<f64> = (1..=partition.k)
            .map(|l| pairwise_sum(&terms[partition.start(l) - 1..partition.bounds[l]]))
            .collect();
        let total = block0 + pairwise_sum(&blocks);
        LogLr { block0, blocks, total }
    }
}

fn ln_checked(noise: &NoiseModel, x: f64) -> Result<f64> {
    let p = noise.pdf(x);
    if !(p >= DENSITY_FLOOR) {
        return Err(Error::EvaluationRange { x, value: p });
    }
    Ok(noise.ln_pdf(x))
}

/// `log p(r - g) - log p(r)` term by term, where `r` is the residual under `f0`.
fn obs_terms(locators: &[f64], responses: &[f64], f: &GridFunction, f0: &GridFunction, noise: &NoiseModel) -> Result<Vec<f64>> {
    locators
        .iter()
        .zip(responses)
        .map(|(&x, &y)| {
            let a = f.eval(x);
            let b = f0.eval(x);
            if a == b {
                return Ok(0.0);
            }
            Ok(ln_checked(noise, y - a)? - ln_checked(noise, y - b)?)
        })
        .collect()
}

/// Log-likelihood ratio of `P_f` against `P_f0` for an AR path `X_0..X_n`.
pub fn loglr_ar(
    x: &[f64],
    f: &GridFunction,
    f0: &GridFunction,
    noise_p: &NoiseModel,
    psi_f: &GridFunction,
    psi_f0: &GridFunction,
    partition: &BlockPartition,
) -> Result<LogLr> {
    if x.len() != partition.n + 1 {
        return Err(Error::InvalidArgument(format!("path has {} points for n = {}", x.len(), partition.n)));
    }
    let block0 = if psi_f == psi_f0 {
        0.0
    } else {
        let a = psi_f.eval_or_zero(x[0]);
        let b = psi_f0.eval_or_zero(x[0]);
        for v in [a, b] {
            if !(v >= DENSITY_FLOOR) {
                return Err(Error::EvaluationRange { x: x[0], value: v });
            }
        }
        a.ln() - b.ln()
    };
    let terms = obs_terms(&x[..partition.n], &x[1..], f, f0, noise_p)?;
    Ok(LogLr::from_terms(block0, &terms, partition))
}

/// Log-likelihood ratio for regression data (random or fixed design).
pub fn loglr_regression(
    design: &[f64],
    y: &[f64],
    f: &GridFunction,
    f0: &GridFunction,
    noise_q: &NoiseModel,
    partition: &BlockPartition,
) -> Result<LogLr> {
    if design.len() != partition.n || y.len() != partition.n {
        return Err(Error::InvalidArgument("design/response length differs from n".into()));
    }
    let terms = obs_terms(design, y, f, f0, noise_q)?;
    Ok(LogLr::from_terms(0.0, &terms, partition))
}

/// Second-order expansion of a block log-likelihood ratio.
///
/// With residuals `r_i` under `f0`,
/// `log p(r - g) - log p(r) = -g l'(r) + g^2 l''(r) / 2 + remainder`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorTerms {
    pub t1: f64,
    pub t2: f64,
    pub exact: f64,
    pub remainder: f64,
    /// `sum |g|^3`
    pub cubic_mass: f64,
}

impl TaylorTerms {
    /// `(c_1 / 6) sum |g(x_i)|^3`.
    pub fn remainder_bound(&self, c1: f64) -> f64 {
        c1 / 6.0 * self.cubic_mass
    }
}

pub fn taylor_terms(locators: &[f64], residuals: &[f64], g: &GridFunction, noise: &NoiseModel) -> Result<TaylorTerms> {
    let mut t1 = Vec::with_capacity(locators.len());
    let mut t2 = Vec::with_capacity(locators.len());
    let mut exact = Vec::with_capacity(locators.len());
    let mut cubic = Vec::with_capacity(locators.len());
    for (&x, &r) in locators.iter().zip(residuals) {
        let gv = g.eval(x);
        if gv == 0.0 {
            continue;
        }
        t1.push(-gv * noise.score_at(r));
        t2.push(0.5 * gv * gv * noise.curvature_at(r));
        exact.push(ln_checked(noise, r - gv)? - ln_checked(noise, r)?);
        cubic.push(gv.abs().powi(3));
    }
    let (t1, t2, exact) = (pairwise_sum(&t1), pairwise_sum(&t2), pairwise_sum(&exact));
    Ok(TaylorTerms { t1, t2, exact, remainder: exact - t1 - t2, cubic_mass: pairwise_sum(&cubic) })
}

/// Score sum with scores above `threshold` in absolute value dropped.
pub fn truncated_t1(locators: &[f64], residuals: &[f64], g: &GridFunction, noise: &NoiseModel, threshold: f64) -> f64 {
    let terms: Vec<f64> = locators
        .iter()
        .zip(residuals)
        .map(|(&x, &r)| {
            let s = noise.score_at(r);
            if s.abs() <= threshold { -g.eval(x) * s } else { 0.0 }
        })
        .collect();
    pairwise_sum(&terms)
}

/// Largest `|l'''|` seen at the given residuals.
pub fn observed_third_derivative(residuals: &[f64], noise: &NoiseModel) -> f64 {
    residuals.iter().fold(0.0f64, |m, &r| m.max(third_derivative(noise, r).abs()))
}

/// `v_n = (log n)^{-1/2}`.
pub fn v_n(n: usize) -> f64 {
    (n as f64).ln().powf(-0.5)
}

/// `c gamma^{1/4} gamma'^{3/4} m^{1/4} log m`.
pub fn a1_threshold(c_event: f64, gamma: f64, gamma_prime: f64, m: usize) -> f64 {
    let m = m as f64;
    c_event * gamma.powf(0.25) * gamma_prime.powf(0.75) * m.powf(0.25) * m.ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockEvents {
    pub l: usize,
    pub m: usize,
    pub t1_gap: f64,
    pub a1_threshold: f64,
    pub a1: bool,
    pub t2_gap: f64,
    pub a2_threshold: f64,
    pub a2: bool,
    /// block log-LR of the first experiment is at most 1
    pub b: bool,
    /// block log-LR of the second experiment is at most 1
    pub c: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventDiagnostics {
    pub v_n: f64,
    pub c_event: f64,
    pub blocks: Vec<BlockEvents>,
}

impl EventDiagnostics {
    pub fn all_hold(&self) -> bool {
        self.blocks.iter().all(|b| b.a1 && b.a2 && b.b && b.c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventConstants {
    pub n: usize,
    pub gamma: f64,
    pub gamma_prime: f64,
    pub c_event: f64,
}

/// Event indicators per block from the Taylor terms and block log-LRs of two coupled experiments.
pub fn event_diagnostics(
    partition: &BlockPartition,
    first: &[(TaylorTerms, f64)],
    second: &[(TaylorTerms, f64)],
    constants: &EventConstants,
) -> Result<EventDiagnostics> {
    if first.len() != partition.k || second.len() != partition.k {
        return Err(Error::InvalidArgument("one Taylor record per block is required".into()));
    }
    let vn = v_n(constants.n);
    let a2_threshold = vn / (partition.k as f64).sqrt();
    let blocks = (1..=partition.k)
        .map(|l| {
            let (ta, la) = first[l - 1];
            let (tb, lb) = second[l - 1];
            let m = partition.size(l);
            let a1_threshold = a1_threshold(constants.c_event, constants.gamma, constants.gamma_prime, m);
            let t1_gap = (ta.t1 - tb.t1).abs();
            let t2_gap = (ta.t2 - tb.t2).abs();
            BlockEvents {
                l,
                m,
                t1_gap,
                a1_threshold,
                a1: t1_gap <= a1_threshold,
                t2_gap,
                a2_threshold,
                a2: t2_gap <= a2_threshold,
                b: la <= 1.0,
                c: lb <= 1.0,
            }
        })
        .collect();
    Ok(EventDiagnostics { v_n: vn, c_event: constants.c_event, blocks })
}

/// `(sqrt L1 - sqrt L2)^2` from log-likelihood ratios.
pub fn sqrt_gap_sq(ln_l1: f64, ln_l2: f64) -> f64 {
    let (a, b) = (0.5 * ln_l1, 0.5 * ln_l2);
    let m = a.max(b);
    let d = (-(a - b).abs()).exp_m1();
    let v = m.exp() * d;
    v * v
}

/// `|L1 - L2|` from log-likelihood ratios.
pub fn abs_gap(ln_l1: f64, ln_l2: f64) -> f64 {
    let m = ln_l1.max(ln_l2);
    -m.exp() * (-(ln_l1 - ln_l2).abs()).exp_m1()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HellingerEstimate {
    pub reps: usize,
    /// Mean of `(sqrt L1 - sqrt L2)^2`.
    pub h2: MeanSe,
    /// Mean of `|L1 - L2|`.
    pub l1: MeanSe,
}

impl HellingerEstimate {
    /// Standard error of `sqrt(h2)` by the delta method.
    pub fn sqrt_h2_se(&self) -> f64 {
        if self.h2.mean > 0.0 {
            self.h2.se / (2.0 * self.h2.mean.sqrt())
        } else {
            self.h2.se.sqrt()
        }
    }

    /// `(1/2) L1 <= H` with a three-standard-error allowance.
    pub fn total_variation_bound_holds(&self) -> bool {
        0.5 * self.l1.mean <= self.h2.mean.sqrt() + 3.0 * (0.5 * self.l1.se + self.sqrt_h2_se())
    }
}

/// Monte Carlo over `reps` coupled replications; `draw(r)` returns `(log L1, log L2)`.
pub fn hellinger_mc<F>(reps: usize, draw: F) -> Result<HellingerEstimate>
where
    F: Fn(usize) -> Result<(f64, f64)> + Sync,
{
    if reps < 2 {
        return Err(Error::InvalidArgument("hellinger_mc needs reps >= 2".into()));
    }
    let pairs: Vec<(f64, f64)> = (0..reps)
        .into_par_iter()
        .map(|r| draw(r).map_err(|e| e.in_replication("likelihood", r)))
        .collect::<Result<_>>()?;
    Ok(estimate_from_pairs(&pairs))
}

pub fn estimate_from_pairs(pairs: &[(f64, f64)]) -> HellingerEstimate {
    let h: Vec<f64> = pairs.iter().map(|&(a, b)| sqrt_gap_sq(a, b)).collect();
    let l: Vec<f64> = pairs.iter().map(|&(a, b)| abs_gap(a, b)).collect();
    HellingerEstimate { reps: pairs.len(), h2: mean_se(&h), l1: mean_se(&l) }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma31Report {
    pub lhs: MeanSe,
    pub block0: f64,
    /// Per block: the largest conditional mean over the conditioning draws and its s.e.
    pub block_max: Vec<MeanSe>,
    pub rhs: f64,
    pub rhs_se: f64,
    pub conditioning_draws: usize,
    pub holds: bool,
}

/// Compares the full-sample Hellinger estimate with the sum of worst-case
/// conditional block terms.
///
/// `block_draw(l, r, s)` returns `(log L1^{(l)}, log L2^{(l)})` for inner
/// replication `s` of block `l` given conditioning history `r`.
pub fn lemma31_check<F>(
    lhs: &HellingerEstimate,
    block0: f64,
    partition: &BlockPartition,
    conditioning_draws: usize,
    inner_reps: usize,
    block_draw: F,
) -> Result<Lemma31Report>
where
    F: Fn(usize, usize, usize) -> Result<(f64, f64)> + Sync,
{
    if inner_reps < 2 || conditioning_draws == 0 {
        return Err(Error::InvalidArgument("lemma31_check needs inner reps >= 2 and at least one draw".into()));
    }
    let mut block_max = Vec::with_capacity(partition.k);
    for l in 1..=partition.k {
        let means: Vec<MeanSe> = (0..conditioning_draws)
            .into_par_iter()
            .map(|r| {
                let vals: Vec<f64> = (0..inner_reps)
                    .map(|s| block_draw(l, r, s).map(|(a, b)| sqrt_gap_sq(a, b)))
                    .collect::<Result<_>>()
                    .map_err(|e| e.in_replication("likelihood", r))?;
                Ok(mean_se(&vals))
            })
            .collect::<Result<_>>()?;
        let best = means
            .into_iter()
            .fold(None::<MeanSe>, |acc, m| match acc {
                Some(a) if a.mean >= m.mean => Some(a),
                _ => Some(m),
            })
            .expect("at least one draw");
        block_max.push(best);
    }
    let rhs = block0 + block_max.iter().map(|m| m.mean).sum::<f64>();
    let rhs_se = block_max.iter().map(|m| m.se * m.se).sum::<f64>().sqrt();
    let holds = lhs.h2.mean - 3.0 * lhs.h2.se <= rhs + 3.0 * rhs_se;
    Ok(Lemma31Report { lhs: lhs.h2, block0, block_max, rhs, rhs_se, conditioning_draws, holds })
}

/// `\int (sqrt psi_f - sqrt psi_f0)^2`.
pub fn block0_hellinger(psi_f: &GridFunction, psi_f0: &GridFunction) -> Result<f64> {
    crate::stationary::hellinger_sq(psi_f, psi_f0)
}

/// `E g(X)^2` under `psi_f` and under `psi_f0`.
pub fn second_moment_readings(g: &GridFunction, psi_f: &GridFunction, psi_f0: &GridFunction) -> Result<(f64, f64)> {
    let g2 = g.map(|v| v * v);
    Ok((g2.zip_with(psi_f, |a, b| a * b)?.integral(), g2.zip_with(psi_f0, |a, b| a * b)?.integral()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::rng::Streams;
    use crate::stats::std_normal_cdf;
    use rand::Rng;

    fn gauss() -> NoiseModel {
        NoiseModel::gaussian(1.0, Grid::default()).unwrap()
    }

    #[test]
    fn partition_examples() {
        let p = BlockPartition::new(64);
        assert_eq!(p.k, 2);
        assert_eq!(p.range(1), 1..=32);
        assert_eq!(p.range(2), 33..=64);
        assert_eq!(BlockPartition::new(1000).k, 4);
        let one = BlockPartition::new(1);
        assert_eq!((one.k, one.range(1)), (1, 1..=1));
        assert_eq!(block_count(729), 3);
        assert_eq!(block_count(730), 4);
        assert_eq!(block_count(4096), 4);
        assert_eq!(block_count(4097), 5);
        assert_eq!(p.block_of(32), 1);
        assert_eq!(p.block_of(33), 2);
    }

    #[test]
    fn zero_perturbation_gives_zero() {
        let noise = gauss();
        let f0 = GridFunction::from_fn(noise.grid(), |x| 0.3 * x.sin());
        let x: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let p = BlockPartition::new(10);
        let lr = loglr_ar(&x, &f0, &f0, &noise, &noise.density, &noise.density, &p).unwrap();
        assert_eq!(lr.total, 0.0);
        let lr = loglr_regression(&x[1..], &x[..10], &f0, &f0, &noise, &p).unwrap();
        assert_eq!(lr.total, 0.0);
    }

    #[test]
    fn gaussian_single_step_matches_algebra() {
        let noise = gauss();
        let grid = noise.grid();
        let f0 = GridFunction::from_fn(grid, |x| 0.2 * x);
        let g = GridFunction::from_fn(grid, |x| 0.1 * (1.0 - x * x).max(0.0));
        let f = f0.add(&g).unwrap();
        let p = BlockPartition::new(1);
        let (x0, x1) = (0.3, -0.7);
        let lr = loglr_ar(&[x0, x1], &f, &f0, &noise, &noise.density, &noise.density, &p).unwrap();
        let gv = g.eval(x0);
        let want = gv * (x1 - f0.eval(x0)) - 0.5 * gv * gv;
        assert!((lr.total - want).abs() < 1e-14);
        let tt = taylor_terms(&[x0], &[x1 - f0.eval(x0)], &g, &noise).unwrap();
        assert!((tt.t1 + tt.t2 - want).abs() < 1e-14);
        assert!(tt.remainder.abs() < 1e-14);
    }

    #[test]
    fn block_identity_is_exact() {
        let noise = gauss();
        let grid = noise.grid();
        let f0 = GridFunction::zeros(grid);
        let f = GridFunction::from_fn(grid, |x| 0.1 * (-x * x).exp());
        let mut rng = Streams::new(8).rng("t", &[]);
        let x: Vec<f64> = (0..=300).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = BlockPartition::new(300);
        let lr = loglr_ar(&x, &f, &f0, &noise, &noise.density, &noise.density, &p).unwrap();
        assert_eq!(lr.total, lr.block0 + pairwise_sum(&lr.blocks));
    }

    #[test]
    fn logistic_remainder_within_cubic_bound() {
        let noise = NoiseModel::logistic(0.6, Grid::default()).unwrap();
        let g = GridFunction::from_fn(noise.grid(), |x| 0.2 * (-x * x).exp());
        let mut rng = Streams::new(2).rng("t", &[]);
        for _ in 0..50 {
            let locs: Vec<f64> = (0..100).map(|_| rng.random_range(-2.0..2.0)).collect();
            let res: Vec<f64> = (0..100).map(|_| noise.sample(&mut rng)).collect();
            let tt = taylor_terms(&locs, &res, &g, &noise).unwrap();
            assert!(tt.remainder.abs() <= tt.remainder_bound(noise.third_deriv_bound) + 1e-12);
            assert!(tt.remainder.abs() <= noise.third_deriv_bound / 6.0 * 0.2f64.powi(3) * 100.0);
        }
    }

    #[test]
    fn a1_threshold_direct_evaluation() {
        let t = a1_threshold(1.0, 0.1, 0.3, 1000);
        let want = 0.1f64.powf(0.25) * 0.3f64.powf(0.75) * 1000f64.powf(0.25) * 1000f64.ln();
        assert!((t - want).abs() < 1e-12);
        assert!((t - 8.8548).abs() < 1e-4);
    }

    #[test]
    fn zero_gaps_satisfy_events() {
        let p = BlockPartition::new(1000);
        let tt = TaylorTerms { t1: 0.0, t2: 0.0, exact: 0.0, remainder: 0.0, cubic_mass: 0.0 };
        let recs = vec![(tt, 0.0); p.k];
        let c = EventConstants { n: 1000, gamma: 0.1, gamma_prime: 0.3, c_event: 1.0 };
        assert!(event_diagnostics(&p, &recs, &recs, &c).unwrap().all_hold());
    }

    #[test]
    fn log_space_gaps_match_direct_forms() {
        for &(a, b) in &[(0.1, -0.3), (0.0, 0.0), (2.0, 1.5), (-5.0, 3.0)] {
            let d = (f64::exp(a / 2.0) - f64::exp(b / 2.0)).powi(2);
            assert!((sqrt_gap_sq(a, b) - d).abs() < 1e-12 * (1.0 + d));
            let l = (f64::exp(a) - f64::exp(b)).abs();
            assert!((abs_gap(a, b) - l).abs() < 1e-12 * (1.0 + l));
        }
    }

    #[test]
    fn hellinger_on_shifted_gaussian_observation() {
        let mu = 1.0;
        let s = Streams::new(11);
        let est = hellinger_mc(20_000, |r| {
            let x: f64 = s.rng("x", &[r as u64]).sample(rand_distr::StandardNormal);
            Ok((mu * x - 0.5 * mu * mu, 0.0))
        })
        .unwrap();
        let want = 2.0 * (1.0 - (-mu * mu / 8.0f64).exp());
        assert!((est.h2.mean - want).abs() < 3.0 * est.h2.se);
        assert!(est.total_variation_bound_holds());
        // total variation between N(mu,1) and N(0,1)
        let tv = 2.0 * std_normal_cdf(mu / 2.0) - 1.0;
        assert!((0.5 * est.l1.mean - tv).abs() < 3.0 * est.l1.se);
        assert!(hellinger_mc(1, |_| Ok((0.0, 0.0))).is_err());
    }

    #[test]
    fn lemma31_degenerate_cases() {
        let p = BlockPartition::new(1);
        let zero = estimate_from_pairs(&[(0.0, 0.0), (0.0, 0.0)]);
        let r = lemma31_check(&zero, 0.0, &p, 3, 4, |_, _, _| Ok((0.0, 0.0))).unwrap();
        assert_eq!((r.rhs, r.lhs.mean), (0.0, 0.0));
        assert!(r.holds);
    }

    #[test]
    fn eq26_readings_coincide_when_unperturbed() {
        let noise = gauss();
        let g = GridFunction::from_fn(noise.grid(), |x| 0.1 * (-x * x).exp());
        let (a, b) = second_moment_readings(&g, &noise.density, &noise.density).unwrap();
        assert_eq!(a, b);
    }
}
