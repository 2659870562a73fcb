//! Maximal coupling of `xi` with an independent copy, given `eta`.
//!
//! Keep `xi` when `p_xi(xi) >= Delta p_{xi|eta}(xi | eta)` with `Delta`
//! uniform; otherwise redraw from the normalized excess
//! `(p_xi - p_{xi|eta}(. | eta))_+` by inversion. The result has law `p_xi`
//! whatever `eta` is, and differs from `xi` with probability `phi_eta`, the
//! total variation between marginal and conditional.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint cell masses `mass[x][y]` on a product of finite grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub mass: Vec<Vec<f64>>,
}

impl DiscreteJoint {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, mass: Vec<Vec<f64>>) -> Result<Self> {
        if mass.len() != xs.len() || mass.iter().any(|r| r.len() != ys.len()) {
            return Err(Error::InvalidArgument("joint table does not match its grids".into()));
        }
        if mass.iter().flatten().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidArgument("joint masses must be nonnegative".into()));
        }
        let total: f64 = mass.iter().flatten().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("joint masses sum to {total}")));
        }
        Ok(DiscreteJoint { xs, ys, mass })
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        self.mass.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn marginal_y(&self) -> Vec<f64> {
        (0..self.ys.len()).map(|c| self.mass.iter().map(|r| r[c]).sum()).collect()
    }

    /// `p_{xi|eta}(. | y)` for column `y`.
    pub fn conditional(&self, y: usize) -> Result<Vec<f64>> {
        let py: f64 = self.mass.iter().map(|r| r[y]).sum();
        if !(py > 0.0) {
            return Err(Error::DegenerateConditional(y));
        }
        Ok(self.mass.iter().map(|r| r[y] / py).collect())
    }

    /// `phi_y = sum_x (p_xi(x) - p_{xi|eta}(x|y))_+` per column.
    pub fn phi_by_column(&self) -> Result<Vec<f64>> {
        let px = self.marginal_x();
        (0..self.ys.len())
            .map(|y| Ok(self.conditional(y)?.iter().zip(&px).map(|(c, p)| (p - c).max(0.0)).sum()))
            .collect()
    }

    /// `phi = max_y phi_y`.
    pub fn phi(&self) -> Result<f64> {
        Ok(self.phi_by_column()?.into_iter().fold(0.0, f64::max))
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let mut u = rng.random::<f64>();
        for (x, row) in self.mass.iter().enumerate() {
            for (y, &p) in row.iter().enumerate() {
                if u < p {
                    return (x, y);
                }
                u -= p;
            }
        }
        // rounding: last cell with mass
        let x = self.mass.iter().rposition(|r| r.iter().any(|&p| p > 0.0)).expect("positive mass");
        let y = self.mass[x].iter().rposition(|&p| p > 0.0).expect("positive mass");
        (x, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BerbeeDraw {
    pub xi: usize,
    pub eta: usize,
    pub xi_tilde: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerbeeDiagnostics {
    pub phi_y: Vec<f64>,
    pub phi: f64,
    /// `sum_y p(y) phi_y`, the exact mismatch probability.
    pub expected_mismatch: f64,
    pub mismatch_rate: f64,
    pub mismatch_se: f64,
}

/// Per-column keep ratios and excess CDFs.
struct Tables {
    px: Vec<f64>,
    cond: Vec<Vec<f64>>,
    excess_cdf: Vec<Vec<f64>>,
}

fn tables(joint: &DiscreteJoint) -> Result<Tables> {
    let px = joint.marginal_x();
    let mut cond = Vec::new();
    let mut excess_cdf = Vec::new();
    for y in 0..joint.ys.len() {
        let c = joint.conditional(y)?;
        let mut s = 0.0;
        let cdf = px
            .iter()
            .zip(&c)
            .map(|(p, q)| {
                s += (p - q).max(0.0);
                s
            })
            .collect();
        cond.push(c);
        excess_cdf.push(cdf);
    }
    Ok(Tables { px, cond, excess_cdf })
}

pub fn berbee_couple<R: Rng + ?Sized>(joint: &DiscreteJoint, draws: usize, rng: &mut R) -> Result<(Vec<BerbeeDraw>, BerbeeDiagnostics)> {
    let t = tables(joint)?;
    let phi_y = joint.phi_by_column()?;
    let py = joint.marginal_y();
    let mut out = Vec::with_capacity(draws);
    for _ in 0..draws {
        let (xi, eta) = joint.draw(rng);
        let delta = rng.random::<f64>();
        let keep = t.px[xi] >= delta * t.cond[eta][xi];
        let xi_tilde = if keep {
            xi
        } else {
            let cdf = &t.excess_cdf[eta];
            let total = *cdf.last().expect("nonempty");
            let u = rng.random::<f64>() * total;
            cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
        };
        out.push(BerbeeDraw { xi, eta, xi_tilde });
    }
    let mism = out.iter().filter(|d| d.xi != d.xi_tilde).count() as f64 / draws.max(1) as f64;
    let diag = BerbeeDiagnostics {
        phi: phi_y.iter().cloned().fold(0.0, f64::max),
        expected_mismatch: phi_y.iter().zip(&py).map(|(f, p)| f * p).sum(),
        phi_y,
        mismatch_rate: mism,
        mismatch_se: (mism * (1.0 - mism) / draws.max(1) as f64).sqrt(),
    };
    Ok((out, diag))
}

/// 2x2 joint with `P(xi = eta = 0) = P(xi = eta = 1) = diag` and the rest split evenly.
pub fn two_by_two(diag: f64) -> Result<DiscreteJoint> {
    let off = 0.5 - diag;
    DiscreteJoint::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![vec![diag, off], vec![off, diag]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_key;
    use crate::stats::chi_square_independence;

    #[test]
    fn exact_phi_of_the_two_by_two() {
        let j = two_by_two(0.4).unwrap();
        assert!((j.phi().unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn independent_joint_is_never_moved() {
        let j = DiscreteJoint::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![vec![0.12, 0.28], vec![0.18, 0.42]]).unwrap();
        let (d, diag) = berbee_couple(&j, 5000, &mut rng_from_key(1)).unwrap();
        assert!(diag.phi < 1e-12);
        assert!(d.iter().all(|d| d.xi == d.xi_tilde));
    }

    #[test]
    fn coupled_copy_is_independent_with_the_right_law() {
        let j = two_by_two(0.4).unwrap();
        let n = 40_000;
        let (d, diag) = berbee_couple(&j, n, &mut rng_from_key(2)).unwrap();
        assert!(diag.mismatch_rate <= diag.phi + 3.0 * diag.mismatch_se);
        let mut table = vec![vec![0u64; 2]; 2];
        for x in &d {
            table[x.xi_tilde][x.eta] += 1;
        }
        assert!(chi_square_independence(&table).2 > 0.01);
        let ones = d.iter().filter(|x| x.xi_tilde == 1).count() as f64 / n as f64;
        assert!((ones - 0.5).abs() < 0.01);
    }

    #[test]
    fn zero_column_is_degenerate() {
        let j = DiscreteJoint::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![vec![0.5, 0.0], vec![0.5, 0.0]]).unwrap();
        assert!(matches!(j.conditional(1), Err(Error::DegenerateConditional(1))));
        assert!(berbee_couple(&j, 10, &mut rng_from_key(3)).is_err());
    }
}
