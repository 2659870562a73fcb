//! Randomized two-point Skorokhod embedding.
//!
//! For a centered law `mu`, draw `(U, V)`, `U <= 0 <= V`, from the measure
//! proportional to `(v - u) mu(du) mu(dv)`; the first exit of a Brownian motion
//! from `[U, V]` then has law `mu`. The pair density splits into two product
//! pieces, `|u| mu(du) mu(dv)` and `v mu(du) mu(dv)`, so each draw is one
//! size-biased and one plain half-law sample.

use rand::Rng;
use rand_distr::StandardNormal;

use super::wiener::{BrownianPath, Scan};
use crate::error::{Error, Result};
use crate::models::{NoiseFamily, NoiseModel};
use crate::stats::std_normal_cdf;

/// Weighted atoms on one side of zero, sampled by inversion.
#[derive(Clone, Debug)]
struct HalfTable {
    idx: Vec<usize>,
    plain: Vec<f64>,
    biased: Vec<f64>,
}

impl HalfTable {
    fn new(atoms: &[f64], weights: &[f64], keep: impl Fn(f64) -> bool) -> Self {
        let idx: Vec<usize> = (0..atoms.len()).filter(|&i| keep(atoms[i]) && weights[i] > 0.0).collect();
        let cum = |f: &dyn Fn(usize) -> f64| {
            let mut s = 0.0;
            idx.iter().map(|&i| {
                s += f(i);
                s
            }).collect::<Vec<f64>>()
        };
        let plain = cum(&|i| weights[i]);
        let biased = cum(&|i| weights[i] * atoms[i].abs());
        HalfTable { idx, plain, biased }
    }

    fn mass(&self) -> f64 {
        self.plain.last().copied().unwrap_or(0.0)
    }

    fn first_moment(&self) -> f64 {
        self.biased.last().copied().unwrap_or(0.0)
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, biased: bool) -> usize {
        let cum = if biased { &self.biased } else { &self.plain };
        let u = rng.random::<f64>() * cum.last().expect("nonempty half");
        let j = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
        self.idx[j]
    }
}

/// Target law of the embedded score.
#[derive(Clone, Debug)]
pub enum ScoreLaw {
    PointMass,
    /// `N(0, sd^2)`.
    Gaussian { sd: f64 },
    /// Uniform on `[-half_width, half_width]`.
    Uniform { half_width: f64 },
    /// Finite law; `preimage[i]` is the noise value whose score is `atoms[i]`.
    Discrete {
        atoms: Vec<f64>,
        weights: Vec<f64>,
        preimage: Vec<f64>,
        neg: HalfTableHandle,
        pos: HalfTableHandle,
        zero: f64,
    },
}

/// Opaque sampling table for one half of a discrete law.
#[derive(Clone, Debug)]
pub struct HalfTableHandle(HalfTable);

/// Stopping band for one embedding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Barriers {
    pub lower: f64,
    pub upper: f64,
    pub lower_atom: Option<usize>,
    pub upper_atom: Option<usize>,
}

impl Barriers {
    pub fn degenerate(&self) -> bool {
        self.lower == 0.0 && self.upper == 0.0
    }

    pub fn value(&self, upper: bool) -> f64 {
        if upper {
            self.upper
        } else {
            self.lower
        }
    }
}

impl ScoreLaw {
    pub fn two_point(a: f64) -> Result<Self> {
        Self::discrete(vec![-a, a], vec![0.5, 0.5], vec![-a, a])
    }

    pub fn discrete(atoms: Vec<f64>, weights: Vec<f64>, preimage: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() || atoms.len() != preimage.len() || atoms.is_empty() {
            return Err(Error::InvalidArgument("atoms, weights and preimage must have equal nonzero length".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument("weights must be nonnegative and atoms finite".into()));
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mean: f64 = atoms.iter().zip(&weights).map(|(a, w)| a * w).sum();
        let spread: f64 = atoms.iter().map(|a| a.abs()).fold(0.0, f64::max);
        if mean.abs() > 1e-9 * spread.max(1e-300) {
            return Err(Error::InvalidArgument(format!("target law is not centered (mean {mean:.3e})")));
        }
        let neg = HalfTable::new(&atoms, &weights, |a| a < 0.0);
        let pos = HalfTable::new(&atoms, &weights, |a| a > 0.0);
        let zero = 1.0 - neg.mass() - pos.mass();
        Ok(ScoreLaw::Discrete {
            atoms,
            weights,
            preimage,
            neg: HalfTableHandle(neg),
            pos: HalfTableHandle(pos),
            zero: zero.max(0.0),
        })
    }

    /// Law of `l'(eps)` for `eps ~ noise`.
    pub fn for_noise(noise: &NoiseModel) -> Result<Self> {
        match noise.family {
            NoiseFamily::Gaussian { sigma } => Ok(ScoreLaw::Gaussian { sd: 1.0 / sigma }),
            // tanh(eps / 2s) is uniform on (-1, 1) when eps is logistic
            NoiseFamily::Logistic { scale } => Ok(ScoreLaw::Uniform { half_width: 1.0 / scale }),
            NoiseFamily::StudentT { .. } => {
                let grid = noise.grid();
                let w = grid.weights();
                let weights: Vec<f64> = noise.density.values.iter().zip(&w).map(|(p, w)| p * w).collect();
                let mut law = Self::discrete(noise.score.values.clone(), weights, grid.points());
                if law.is_err() {
                    // symmetric grids leave only rounding in the mean; remove it
                    let atoms = &noise.score.values;
                    let total: f64 = noise.density.values.iter().zip(&w).map(|(p, w)| p * w).sum();
                    let mean: f64 = atoms.iter().zip(noise.density.values.iter().zip(&w)).map(|(a, (p, w))| a * p * w).sum::<f64>() / total;
                    let centered: Vec<f64> = atoms.iter().map(|a| a - mean).collect();
                    let weights: Vec<f64> = noise.density.values.iter().zip(&w).map(|(p, w)| p * w).collect();
                    law = Self::discrete(centered, weights, grid.points());
                }
                law
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            ScoreLaw::PointMass => 0.0,
            ScoreLaw::Gaussian { sd } => sd * sd,
            ScoreLaw::Uniform { half_width } => half_width * half_width / 3.0,
            ScoreLaw::Discrete { atoms, weights, .. } => atoms.iter().zip(weights).map(|(a, w)| a * a * w).sum(),
        }
    }

    pub fn cdf(&self, v: f64) -> f64 {
        match self {
            ScoreLaw::PointMass => {
                if v >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ScoreLaw::Gaussian { sd } => std_normal_cdf(v / sd),
            ScoreLaw::Uniform { half_width } => ((v + half_width) / (2.0 * half_width)).clamp(0.0, 1.0),
            ScoreLaw::Discrete { atoms, weights, .. } => atoms.iter().zip(weights).filter(|(a, _)| **a <= v).map(|(_, w)| w).sum(),
        }
    }

    pub fn draw_barriers<R: Rng + ?Sized>(&self, rng: &mut R) -> Barriers {
        let plain = Barriers { lower: 0.0, upper: 0.0, lower_atom: None, upper_atom: None };
        match self {
            ScoreLaw::PointMass => plain,
            ScoreLaw::Gaussian { sd } => {
                let size_biased_lower = rng.random::<bool>();
                let rayleigh = sd * (-2.0 * (1.0 - rng.random::<f64>()).ln()).sqrt();
                let z: f64 = rng.sample(StandardNormal);
                let half = sd * z.abs();
                let (l, u) = if size_biased_lower { (rayleigh, half) } else { (half, rayleigh) };
                Barriers { lower: -l.max(f64::MIN_POSITIVE), upper: u.max(f64::MIN_POSITIVE), ..plain }
            }
            ScoreLaw::Uniform { half_width } => {
                let size_biased_lower = rng.random::<bool>();
                let biased = half_width * (1.0 - rng.random::<f64>()).sqrt();
                let flat = half_width * (1.0 - rng.random::<f64>());
                let (l, u) = if size_biased_lower { (biased, flat) } else { (flat, biased) };
                Barriers { lower: -l, upper: u, ..plain }
            }
            ScoreLaw::Discrete { atoms, neg, pos, zero, .. } => {
                let (neg, pos) = (&neg.0, &pos.0);
                if rng.random::<f64>() < *zero || neg.mass() == 0.0 || pos.mass() == 0.0 {
                    return plain;
                }
                // pieces |u| mu mu (U size-biased) and v mu mu (V size-biased)
                let wa = pos.mass() * neg.first_moment();
                let wb = neg.mass() * pos.first_moment();
                let size_biased_lower = rng.random::<f64>() * (wa + wb) < wa;
                let li = neg.draw(rng, size_biased_lower);
                let ui = pos.draw(rng, !size_biased_lower);
                Barriers { lower: atoms[li], upper: atoms[ui], lower_atom: Some(li), upper_atom: Some(ui) }
            }
        }
    }

    /// The noise value matching the embedded score.
    pub fn recover(&self, barriers: &Barriers, upper: bool, noise: &NoiseModel) -> Result<f64> {
        let atom = if barriers.degenerate() {
            None
        } else if upper {
            barriers.upper_atom
        } else {
            barriers.lower_atom
        };
        match (self, atom) {
            (ScoreLaw::Discrete { preimage, .. }, Some(i)) => Ok(preimage[i]),
            (ScoreLaw::Discrete { atoms, weights, preimage, .. }, None) => {
                // zero atom: most likely preimage of a zero score
                let i = (0..atoms.len())
                    .filter(|&i| atoms[i] == 0.0)
                    .max_by(|&a, &b| weights[a].total_cmp(&weights[b]))
                    .ok_or_else(|| Error::Configuration("zero score without a preimage".into()))?;
                Ok(preimage[i])
            }
            _ => noise.invert_score(barriers.value(upper)).ok_or_else(|| {
                Error::Configuration("score is not invertible and no conditional sampler is available".into())
            }),
        }
    }
}

/// Result of one embedding into a single path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stop {
    pub tau: f64,
    pub value: f64,
    pub upper: bool,
    pub barriers: Barriers,
}

/// Embeds one draw of `law` into `path` started at time `t0`, stopping no
/// later than `horizon`.
pub fn skorokhod_stop<R: Rng + ?Sized>(
    path: &mut BrownianPath,
    t0: f64,
    horizon: f64,
    law: &ScoreLaw,
    rng: &mut R,
) -> Result<Stop> {
    let barriers = law.draw_barriers(rng);
    if barriers.degenerate() {
        return Ok(Stop { tau: 0.0, value: 0.0, upper: false, barriers });
    }
    match path.first_exit(t0, horizon, barriers.lower, barriers.upper)? {
        Scan::Exit { time, upper } => Ok(Stop { tau: time - t0, value: barriers.value(upper), upper, barriers }),
        Scan::Horizon { .. } => Err(Error::HorizonExhausted(format!("path exhausted at t = {horizon}"))),
    }
}
