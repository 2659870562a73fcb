//! Embedding of score sequences into a dyadic family of Wiener processes.
//!
//! Step `i` locates its locator (the previous AR state, or the design point)
//! in a finest-level interval and runs the glued process made of the unused
//! stretches of the processes on the chain from that leaf to the root, each
//! capped at its horizon. Locators outside `[A, B]` use a separate exterior
//! process (node id 0) with no horizon.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::skorokhod::ScoreLaw;
use super::wiener::{Scan, WienerFamily};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::haar::{cell_of, DyadicIndex};
use crate::models::NoiseModel;
use crate::simulate::ArTrajectory;

pub const EXTERIOR: usize = 0;

/// Dyadic tree over `[A, B]` down to level `j_star`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub a: f64,
    pub b: f64,
    pub j_star: u32,
}

impl Tree {
    pub fn new(a: f64, b: f64, j_star: u32) -> Result<Self> {
        if !(a < b) || j_star > 20 {
            return Err(Error::InvalidArgument(format!("bad tree [{a}, {b}] with j* = {j_star}")));
        }
        Ok(Tree { a, b, j_star })
    }

    /// Number of ids, exterior included.
    pub fn len(&self) -> usize {
        1usize << (self.j_star + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Leaf id of `x`, or `EXTERIOR`.
    pub fn leaf(&self, x: f64) -> usize {
        match cell_of(x, self.a, self.b, self.j_star) {
            Some(k) => DyadicIndex { j: self.j_star, k }.id(),
            None => EXTERIOR,
        }
    }

    pub fn level(id: usize) -> u32 {
        usize::BITS - 1 - id.leading_zeros()
    }

    /// Ids from `leaf` up to the root.
    pub fn chain(&self, leaf: usize) -> impl Iterator<Item = usize> {
        let mut id = leaf;
        std::iter::from_fn(move || {
            if id == 0 {
                return None;
            }
            let cur = id;
            id = if cur == 1 || cur == EXTERIOR { 0 } else { cur / 2 };
            Some(cur)
        })
        .chain(std::iter::once(EXTERIOR).filter(move |_| leaf == EXTERIOR))
    }

    /// Whether `leaf` lies in the subtree of `node`.
    pub fn under(&self, leaf: usize, node: usize) -> bool {
        leaf != EXTERIOR && leaf >> (self.j_star - Self::level(node)) == node
    }
}

/// Time budgets `T` per node id; the root and exterior are unbounded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Horizons {
    pub tree: Tree,
    pub t: Vec<f64>,
    /// `S_{j,k}`; zero when unconstrained.
    pub s: Vec<f64>,
    /// Pilot estimates of the expected time spent by steps located in each node.
    pub expected: Vec<f64>,
    /// Nodes whose computed `T` was negative and clamped to 0.
    pub clamped: Vec<DyadicIndex>,
    pub c_h: f64,
    pub m: usize,
}

impl Horizons {
    pub fn unbounded(tree: Tree) -> Self {
        let n = tree.len();
        Horizons {
            tree,
            t: vec![f64::INFINITY; n],
            s: vec![0.0; n],
            expected: vec![0.0; n],
            clamped: Vec::new(),
            c_h: 0.0,
            m: 0,
        }
    }

    /// `S_{j,k} = E_{j,k} - c_h sqrt(m 2^{-j}) ln m`, `T_{j,k} = S_{j,k} - S(children)`,
    /// leaves `T = S`, root unbounded; negative `T` clamped to 0.
    pub fn from_expected(tree: Tree, expected: Vec<f64>, m: usize, c_h: f64) -> Result<Self> {
        if expected.len() != tree.len() {
            return Err(Error::InvalidArgument("expected-time table does not match the tree".into()));
        }
        let mf = m as f64;
        let mut s = vec![0.0; tree.len()];
        for id in 1..tree.len() {
            let j = Tree::level(id);
            s[id] = expected[id] - c_h * (mf * 2f64.powi(-(j as i32))).sqrt() * mf.ln();
        }
        let mut t = vec![f64::INFINITY; tree.len()];
        let mut clamped = Vec::new();
        for id in 2..tree.len() {
            let raw = if Tree::level(id) == tree.j_star { s[id] } else { s[id] - s[2 * id] - s[2 * id + 1] };
            if raw < 0.0 {
                clamped.push(DyadicIndex::from_id(id));
            }
            t[id] = raw.max(0.0);
        }
        Ok(Horizons { tree, t, s, expected, clamped, c_h, m })
    }

    /// Largest `|S_{j,k} - sum of raw T over the subtree|`, computed before clamping.
    pub fn telescoping_error(&self) -> f64 {
        let tree = self.tree;
        let raw = |id: usize| {
            if Tree::level(id) == tree.j_star {
                self.s[id]
            } else {
                self.s[id] - self.s[2 * id] - self.s[2 * id + 1]
            }
        };
        (2..tree.len())
            .map(|id| {
                let sub: f64 = (id..tree.len()).filter(|&u| tree.contains(id, u)).map(raw).sum();
                (sub - self.s[id]).abs()
            })
            .fold(0.0, f64::max)
    }
}

impl Tree {
    /// Whether node `u` lies in the subtree of node `id`.
    pub fn contains(&self, id: usize, u: usize) -> bool {
        let (ju, ji) = (Self::level(u), Self::level(id));
        u != EXTERIOR && ju >= ji && u >> (ju - ji) == id
    }
}

/// Consumption of `[start, end)` from process `node`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stretch {
    pub node: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub locator: f64,
    pub leaf: usize,
    pub stretches: Vec<Stretch>,
    pub tau: f64,
    /// Embedded score `W^{(i)}(tau^{(i)})`.
    pub value: f64,
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingLedger {
    pub tree: Tree,
    pub horizons_t: Vec<f64>,
    pub steps: Vec<StepRecord>,
    /// Final consumption per node id.
    pub consumed: Vec<f64>,
}

impl CouplingLedger {
    fn new(horizons: &Horizons) -> Self {
        CouplingLedger {
            tree: horizons.tree,
            horizons_t: horizons.t.clone(),
            steps: Vec::new(),
            consumed: vec![0.0; horizons.tree.len()],
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.value).collect()
    }

    pub fn noises(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.noise).collect()
    }

    pub fn taus(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.tau).collect()
    }

    /// `tau^{(i)}_{j,k}` for `i = 0..=m`, rows by step, columns by node id.
    pub fn tau_matrix(&self) -> Vec<Vec<f64>> {
        let mut row = vec![0.0; self.tree.len()];
        let mut out = vec![row.clone()];
        for s in &self.steps {
            for st in &s.stretches {
                row[st.node] = st.end;
            }
            out.push(row.clone());
        }
        out
    }

    /// Per node, the stretches are contiguous and ordered, within the
    /// horizon, and each step walks its own leaf-to-root chain.
    pub fn audit(&self) -> Result<()> {
        let mut at = vec![0.0; self.tree.len()];
        for (i, s) in self.steps.iter().enumerate() {
            let chain: Vec<usize> = self.tree.chain(s.leaf).collect();
            let mut total = 0.0;
            for (q, st) in s.stretches.iter().enumerate() {
                if !chain.contains(&st.node) {
                    return Err(Error::LedgerCorruption(format!("step {i} used process {} off its chain", st.node)));
                }
                if q > 0 && Tree::level(st.node) >= Tree::level(s.stretches[q - 1].node) && s.leaf != EXTERIOR {
                    return Err(Error::LedgerCorruption(format!("step {i} walked down the tree")));
                }
                if st.start != at[st.node] || st.end < st.start {
                    return Err(Error::LedgerCorruption(format!(
                        "step {i}: process {} stretch [{}, {}) does not continue at {}",
                        st.node, st.start, st.end, at[st.node]
                    )));
                }
                if st.end > self.horizons_t[st.node] {
                    return Err(Error::LedgerCorruption(format!("step {i}: process {} passed its horizon", st.node)));
                }
                at[st.node] = st.end;
                total += st.end - st.start;
            }
            if (total - s.tau).abs() > 1e-9 * (1.0 + s.tau) {
                return Err(Error::LedgerCorruption(format!("step {i}: stopping time {} != stretch total {total}", s.tau)));
            }
        }
        if at != self.consumed {
            return Err(Error::LedgerCorruption("final consumption does not match the stretches".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Runs one glued embedding for a step located at `locator`.
fn embed_step<R: Rng + ?Sized>(
    ledger: &mut CouplingLedger,
    wf: &mut WienerFamily,
    law: &ScoreLaw,
    noise: &NoiseModel,
    locator: f64,
    rng: &mut R,
) -> Result<()> {
    let tree = ledger.tree;
    let leaf = tree.leaf(locator);
    let barriers = law.draw_barriers(rng);
    let mut stretches = Vec::new();
    let mut value = 0.0;
    let mut upper = false;
    if !barriers.degenerate() {
        let mut rel = 0.0;
        let mut done = false;
        for node in tree.chain(leaf) {
            let start = ledger.consumed[node];
            let cap = ledger.horizons_t[node];
            if start >= cap {
                continue;
            }
            match wf.path(node).first_exit(start, cap, barriers.lower - rel, barriers.upper - rel)? {
                Scan::Exit { time, upper: up } => {
                    stretches.push(Stretch { node, start, end: time });
                    ledger.consumed[node] = time;
                    value = barriers.value(up);
                    upper = up;
                    done = true;
                    break;
                }
                Scan::Horizon { increment } => {
                    stretches.push(Stretch { node, start, end: cap });
                    ledger.consumed[node] = cap;
                    rel += increment;
                }
            }
        }
        if !done {
            return Err(Error::HorizonExhausted(format!("chain of process {leaf} ran out")));
        }
    }
    let noise_value = law.recover(&barriers, upper, noise)?;
    let tau = stretches.iter().map(|s| s.end - s.start).sum();
    ledger.steps.push(StepRecord { locator, leaf, stretches, tau, value, noise: noise_value });
    Ok(())
}

/// AR side: `X_i = f0(X_{i-1}) + eps_i` with `l_p'(eps_i)` embedded at `X_{i-1}`.
#[allow(clippy::too_many_arguments)]
pub fn embed_ar_side<R: Rng + ?Sized>(
    f0: &GridFunction,
    noise_p: &NoiseModel,
    law: &ScoreLaw,
    x0: f64,
    m: usize,
    wf: &mut WienerFamily,
    horizons: &Horizons,
    rng: &mut R,
) -> Result<(ArTrajectory, CouplingLedger)> {
    let mut ledger = CouplingLedger::new(horizons);
    let mut x = x0;
    let mut eps = Vec::with_capacity(m);
    for _ in 0..m {
        embed_step(&mut ledger, wf, law, noise_p, x, rng)?;
        let e = ledger.steps.last().expect("pushed").noise;
        eps.push(e);
        x = f0.eval(x) + e;
    }
    Ok((ArTrajectory::from_innovations(f0, x0, &eps), ledger))
}

/// Regression side: design points (random or fixed) locate the chain;
/// `y_i = f0(locator_i) + eta_i`. Returns `(y, eta, ledger)`.
pub fn embed_regression_side<R: Rng + ?Sized>(
    f0: &GridFunction,
    noise_q: &NoiseModel,
    law: &ScoreLaw,
    locators: &[f64],
    wf: &mut WienerFamily,
    horizons: &Horizons,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>, CouplingLedger)> {
    let mut ledger = CouplingLedger::new(horizons);
    for &x in locators {
        embed_step(&mut ledger, wf, law, noise_q, x, rng)?;
    }
    let eta = ledger.noises();
    let y = locators.iter().zip(&eta).map(|(&x, &e)| f0.eval(x) + e).collect();
    Ok((y, eta, ledger))
}

/// Expected time per node from unconstrained pilot ledgers: the mean over
/// ledgers of `sum_i tau^{(i)} 1{locator_i in I_{j,k}}`.
pub fn pilot_expectations(ledgers: &[CouplingLedger]) -> Result<Vec<f64>> {
    let tree = ledgers.first().ok_or_else(|| Error::InvalidArgument("no pilot ledgers".into()))?.tree;
    let mut e = vec![0.0; tree.len()];
    for l in ledgers {
        for s in &l.steps {
            if s.leaf != EXTERIOR {
                for node in tree.chain(s.leaf) {
                    e[node] += s.tau;
                }
            }
        }
    }
    let r = ledgers.len() as f64;
    e.iter_mut().for_each(|v| *v /= r);
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::rng::rng_from_key;
    use crate::stats::{ks_distance, mean_se, std_normal_cdf};

    fn setup() -> (GridFunction, NoiseModel, ScoreLaw) {
        let grid = Grid::default();
        let noise = NoiseModel::gaussian(1.0, grid).unwrap();
        let law = ScoreLaw::for_noise(&noise).unwrap();
        (GridFunction::from_fn(grid, |x| 0.4 * x.sin()), noise, law)
    }

    #[test]
    fn chains_and_subtrees() {
        let tree = Tree::new(-1.0, 1.0, 2).unwrap();
        assert_eq!(tree.leaf(-1.0), 4);
        assert_eq!(tree.leaf(0.9), 7);
        assert_eq!(tree.leaf(1.5), EXTERIOR);
        assert_eq!(tree.chain(6).collect::<Vec<_>>(), vec![6, 3, 1]);
        assert_eq!(tree.chain(EXTERIOR).collect::<Vec<_>>(), vec![EXTERIOR]);
        assert!(tree.under(6, 3) && tree.under(6, 1) && !tree.under(6, 2));
        assert!(tree.contains(1, 5) && !tree.contains(2, 3));
    }

    #[test]
    fn single_gaussian_step_inverts_the_score() {
        let (f0, noise, law) = setup();
        let tree = Tree::new(-1.0, 1.0, 3).unwrap();
        let h = Horizons::unbounded(tree);
        let mut wf = WienerFamily::new(1, 1e-3, 8).unwrap();
        let (traj, ledger) = embed_ar_side(&f0, &noise, &law, 0.2, 1, &mut wf, &h, &mut rng_from_key(2)).unwrap();
        assert_eq!(traj.eps[1], -ledger.steps[0].value);
        assert_eq!(ledger.steps[0].stretches.len(), 1);
        assert_eq!(ledger.steps[0].stretches[0].node, tree.leaf(0.2));
    }

    #[test]
    fn ledger_rules_hold_with_tight_horizons() {
        let (f0, noise, law) = setup();
        let tree = Tree::new(-1.0, 1.0, 3).unwrap();
        let mut t = vec![0.3; tree.len()];
        t[EXTERIOR] = f64::INFINITY;
        t[1] = f64::INFINITY;
        let h = Horizons { t, ..Horizons::unbounded(tree) };
        let mut wf = WienerFamily::new(3, 1e-3, 8).unwrap();
        let (traj, ledger) = embed_ar_side(&f0, &noise, &law, 0.0, 400, &mut wf, &h, &mut rng_from_key(4)).unwrap();
        ledger.audit().unwrap();
        assert!(traj.reconstruction_error(&f0) == 0.0);
        // the stored value is the glued path at the stopping time
        for s in ledger.steps.iter().take(50) {
            let inc: f64 = s.stretches.iter().map(|st| wf.path(st.node).value_at(st.end) - wf.path(st.node).value_at(st.start)).sum();
            assert!((inc - s.value).abs() < 1e-9);
        }
        // untouched nodes keep their previous consumption
        let tau = ledger.tau_matrix();
        for (i, s) in ledger.steps.iter().enumerate() {
            let chain: Vec<usize> = tree.chain(s.leaf).collect();
            for id in 0..tree.len() {
                if !chain.contains(&id) {
                    assert_eq!(tau[i + 1][id], tau[i][id]);
                }
            }
        }
    }

    #[test]
    fn audit_catches_tampering() {
        let (f0, noise, law) = setup();
        let h = Horizons::unbounded(Tree::new(-1.0, 1.0, 2).unwrap());
        let mut wf = WienerFamily::new(5, 1e-3, 8).unwrap();
        let (_, mut ledger) = embed_ar_side(&f0, &noise, &law, 0.0, 20, &mut wf, &h, &mut rng_from_key(6)).unwrap();
        ledger.steps[3].stretches[0].start += 0.01;
        assert!(matches!(ledger.audit(), Err(Error::LedgerCorruption(_))));
    }

    #[test]
    fn regression_noise_law_and_wald() {
        let (f0, noise, law) = setup();
        let tree = Tree::new(-1.0, 1.0, 4).unwrap();
        let h = Horizons::unbounded(tree);
        let mut wf = WienerFamily::new(7, 1e-3, 8).unwrap();
        let mut rng = rng_from_key(8);
        let xi: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.5..1.5)).collect();
        let (y, eta, ledger) = embed_regression_side(&f0, &noise, &law, &xi, &mut wf, &h, &mut rng).unwrap();
        assert!(ks_distance(&eta, std_normal_cdf) < 0.03);
        assert_eq!(y[5], f0.eval(xi[5]) + eta[5]);
        let ms = mean_se(&ledger.taus());
        assert!((ms.mean - 1.0).abs() < 3.0 * ms.se + 0.01);
    }

    #[test]
    fn horizons_telescope() {
        let tree = Tree::new(-1.0, 1.0, 3).unwrap();
        let e: Vec<f64> = (0..tree.len()).map(|id| if id == 0 { 0.0 } else { 100.0 * 2f64.powi(-(Tree::level(id) as i32)) }).collect();
        let h = Horizons::from_expected(tree, e, 100, 0.1).unwrap();
        assert!(h.telescoping_error() < 1e-9);
        assert!(h.t[1].is_infinite());
        // uniform occupation: S identical across k at fixed level
        assert_eq!(h.s[4], h.s[7]);
        for id in 2..8 {
            let raw = h.s[id] - h.s[2 * id] - h.s[2 * id + 1];
            assert_eq!(h.t[id], raw.max(0.0));
        }
        let h = Horizons::from_expected(tree, vec![0.0; tree.len()], 100, 1.0).unwrap();
        assert_eq!(h.clamped.len(), 8);
        assert!(h.t[8..].iter().all(|&t| t == 0.0));
    }
}
