//! Exponential moment bound for bounded centered variables and empirical
//! tail checks for centered block sums.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean_se, std_normal_cdf, wilson_interval};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum BoundedLaw {
    Discrete { values: Vec<f64>, probs: Vec<f64> },
    /// Uniform on `[-a, a]`.
    TruncatedUniform,
    /// `N(0, sigma^2)` conditioned on `|x| <= a`.
    TruncatedGaussian { sigma: f64 },
    /// Fixed draws, used as the Monte Carlo sample.
    Sample { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedVariableSpec {
    pub law: BoundedLaw,
    /// `|xi| <= a`.
    pub a: f64,
}

impl BoundedVariableSpec {
    pub fn two_point(a: f64) -> Self {
        BoundedVariableSpec { law: BoundedLaw::Discrete { values: vec![-a, a], probs: vec![0.5, 0.5] }, a }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.law, BoundedLaw::Discrete { .. })
    }

    /// Mean and `E xi^2`, where known in closed form.
    pub fn moments(&self) -> Option<(f64, f64)> {
        let a = self.a;
        match &self.law {
            BoundedLaw::Discrete { values, probs } => Some((
                values.iter().zip(probs).map(|(v, p)| v * p).sum(),
                values.iter().zip(probs).map(|(v, p)| v * v * p).sum(),
            )),
            BoundedLaw::TruncatedUniform => Some((0.0, a * a / 3.0)),
            BoundedLaw::TruncatedGaussian { sigma } => {
                let z = a / sigma;
                let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                let mass = 2.0 * std_normal_cdf(z) - 1.0;
                Some((0.0, sigma * sigma * (1.0 - 2.0 * z * phi / mass)))
            }
            BoundedLaw::Sample { .. } => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<f64> {
        let a = self.a;
        match &self.law {
            BoundedLaw::Discrete { values, probs } => (0..count)
                .map(|_| {
                    let mut u = rng.random::<f64>();
                    for (v, p) in values.iter().zip(probs) {
                        if u < *p {
                            return *v;
                        }
                        u -= p;
                    }
                    *values.last().expect("nonempty")
                })
                .collect(),
            BoundedLaw::TruncatedUniform => (0..count).map(|_| rng.random_range(-a..=a)).collect(),
            BoundedLaw::TruncatedGaussian { sigma } => (0..count)
                .map(|_| loop {
                    let z: f64 = rng.sample(StandardNormal);
                    if (sigma * z).abs() <= a {
                        break sigma * z;
                    }
                })
                .collect(),
            BoundedLaw::Sample { values } => values.iter().cycle().take(count).copied().collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0) {
            return Err(Error::InvalidArgument(format!("bound a = {} must be nonnegative", self.a)));
        }
        match &self.law {
            BoundedLaw::Discrete { values, probs } => {
                if values.len() != probs.len() || values.is_empty() {
                    return Err(Error::InvalidArgument("values and probs differ in length".into()));
                }
                if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 || probs.iter().any(|p| !(*p >= 0.0)) {
                    return Err(Error::InvalidArgument("probs must be a probability vector".into()));
                }
                if let Some(v) = values.iter().find(|v| v.abs() > self.a) {
                    return Err(Error::SpecViolation { value: v.abs(), bound: self.a });
                }
                let mean: f64 = values.iter().zip(probs).map(|(v, p)| v * p).sum();
                if mean.abs() > 1e-12 * (1.0 + self.a) {
                    return Err(Error::InvalidArgument(format!("law is not centered (mean {mean:e})")));
                }
            }
            BoundedLaw::TruncatedGaussian { sigma } if !(*sigma > 0.0) => {
                return Err(Error::InvalidArgument("sigma must be positive".into()));
            }
            BoundedLaw::Sample { values } if values.is_empty() => {
                return Err(Error::InvalidArgument("empty sample".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpRow {
    pub lambda: f64,
    /// `E exp(lambda xi)` (exact or Monte Carlo).
    pub lhs: f64,
    pub lhs_se: f64,
    /// `exp(c lambda^2 E xi^2)`.
    pub rhs: f64,
    pub exact: bool,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpInequalityReport {
    pub a: f64,
    pub c: f64,
    pub second_moment: f64,
    pub rows: Vec<ExpRow>,
}

impl ExpInequalityReport {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }
}

/// Checks `E exp(lambda xi) <= exp(c lambda^2 E xi^2)`, `c = e^a / 2`, for
/// each `|lambda| <= 1`: by enumeration for finite laws, else by Monte Carlo
/// with a 3 s.e. allowance.
pub fn exp_inequality_check<R: Rng + ?Sized>(
    spec: &BoundedVariableSpec,
    lambdas: &[f64],
    reps: usize,
    rng: &mut R,
) -> Result<ExpInequalityReport> {
    spec.validate()?;
    if let Some(l) = lambdas.iter().find(|l| !(l.abs() <= 1.0)) {
        return Err(Error::InvalidArgument(format!("lambda = {l} outside [-1, 1]")));
    }
    let c = spec.a.exp() / 2.0;
    if let BoundedLaw::Discrete { values, probs } = &spec.law {
        let ex2: f64 = values.iter().zip(probs).map(|(v, p)| v * v * p).sum();
        let rows = lambdas
            .iter()
            .map(|&lambda| {
                let lhs: f64 = values.iter().zip(probs).map(|(v, p)| p * (lambda * v).exp()).sum();
                let rhs = (c * lambda * lambda * ex2).exp();
                ExpRow { lambda, lhs, lhs_se: 0.0, rhs, exact: true, holds: lhs <= rhs * (1.0 + 1e-12) }
            })
            .collect();
        return Ok(ExpInequalityReport { a: spec.a, c, second_moment: ex2, rows });
    }
    let count = match &spec.law {
        BoundedLaw::Sample { values } => values.len(),
        _ => reps,
    };
    if count < 2 {
        return Err(Error::InvalidArgument("Monte Carlo check needs at least two draws".into()));
    }
    let xs = spec.sample(count, rng);
    if let Some(v) = xs.iter().find(|v| v.abs() > spec.a) {
        return Err(Error::SpecViolation { value: v.abs(), bound: spec.a });
    }
    let ex2 = match spec.moments() {
        Some((_, m2)) => m2,
        None => xs.iter().map(|x| x * x).sum::<f64>() / count as f64,
    };
    let rows = lambdas
        .iter()
        .map(|&lambda| {
            let e: Vec<f64> = xs.iter().map(|x| (lambda * x).exp()).collect();
            let ms = mean_se(&e);
            let rhs = (c * lambda * lambda * ex2).exp();
            ExpRow { lambda, lhs: ms.mean, lhs_se: ms.se, rhs, exact: false, holds: ms.mean <= rhs + 3.0 * ms.se }
        })
        .collect();
    Ok(ExpInequalityReport { a: spec.a, c, second_moment: ex2, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub cell: usize,
    pub threshold: f64,
    pub reps: usize,
    pub exceedances: usize,
    pub frequency: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub rows: Vec<TailRow>,
}

impl TailReport {
    pub fn max_frequency(&self) -> f64 {
        self.rows.iter().map(|r| r.frequency).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Frequency of `|sum - expected| > threshold` per cell. `sums[r][c]` is the
/// block sum of cell `c` in replication `r`.
pub fn mixing_tail_check(sums: &[Vec<f64>], expected: &[f64], thresholds: &[f64]) -> Result<TailReport> {
    const MIN_REPS: usize = 100;
    if sums.len() < MIN_REPS {
        return Err(Error::InvalidArgument(format!("{} replications, need at least {MIN_REPS}", sums.len())));
    }
    let cells = expected.len();
    if thresholds.len() != cells || sums.iter().any(|r| r.len() != cells) {
        return Err(Error::InvalidArgument("sums, expectations and thresholds disagree in size".into()));
    }
    let reps = sums.len();
    let rows = (0..cells)
        .map(|c| {
            let exceedances = sums.iter().filter(|r| (r[c] - expected[c]).abs() > thresholds[c]).count();
            let (wilson_lo, wilson_hi) = wilson_interval(exceedances, reps);
            TailRow {
                cell: c,
                threshold: thresholds[c],
                reps,
                exceedances,
                frequency: exceedances as f64 / reps as f64,
                wilson_lo,
                wilson_hi,
            }
        })
        .collect();
    Ok(TailReport { rows })
}
