//! Interval-localized score sums of two coupled sides and their gaps.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::embed::{CouplingLedger, Tree, EXTERIOR};
use super::wiener::WienerFamily;
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::haar::{haar_reconstruct, DyadicIndex, HaarExpansion};

/// Allowed gap between the direct and the path-ledger value of `Z_{j,k}`.
pub const CROSS_CHECK_TOL: f64 = 1e-8;

/// `Z_{j,k}` per node id, summed directly over the steps located in `I_{j,k}`.
pub fn direct_sums(ledger: &CouplingLedger) -> Vec<f64> {
    let tree = ledger.tree;
    let mut z = vec![0.0; tree.len()];
    for s in &ledger.steps {
        if s.leaf != EXTERIOR {
            for node in tree.chain(s.leaf) {
                z[node] += s.value;
            }
        }
    }
    z
}

/// `Z_{j,k}` read off the paths: stopped values of the processes inside
/// `I_{j,k}` plus the increments that steps located in `I_{j,k}` took from
/// coarser processes.
pub fn ledger_sums(ledger: &CouplingLedger, wf: &mut WienerFamily) -> Vec<f64> {
    let tree = ledger.tree;
    let mut stopped = vec![0.0; tree.len()];
    for (id, w) in stopped.iter_mut().enumerate().skip(1) {
        if ledger.consumed[id] > 0.0 {
            *w = wf.path(id).value_at(ledger.consumed[id]);
        }
    }
    let mut z = vec![0.0; tree.len()];
    // subtree totals of stopped values, finest level first
    for id in (1..tree.len()).rev() {
        z[id] += stopped[id];
        if id > 1 {
            let v = z[id];
            z[id / 2] += v;
        }
    }
    for s in &ledger.steps {
        if s.leaf == EXTERIOR {
            continue;
        }
        // overflow[j] = increments from processes coarser than level j
        let mut overflow = vec![0.0; tree.j_star as usize + 2];
        for st in &s.stretches {
            let inc = wf.path(st.node).value_at(st.end) - wf.path(st.node).value_at(st.start);
            let lvl = Tree::level(st.node) as usize;
            for o in overflow.iter_mut().skip(lvl + 1) {
                *o += inc;
            }
        }
        for node in tree.chain(s.leaf) {
            z[node] += overflow[Tree::level(node) as usize];
        }
    }
    z
}

/// Direct sums after checking them against the path ledger.
pub fn checked_sums(ledger: &CouplingLedger, wf: &mut WienerFamily) -> Result<Vec<f64>> {
    let direct = direct_sums(ledger);
    let via_paths = ledger_sums(ledger, wf);
    for (id, (d, p)) in direct.iter().zip(&via_paths).enumerate().skip(1) {
        if (d - p).abs() > CROSS_CHECK_TOL {
            return Err(Error::LedgerCorruption(format!(
                "Z at node {:?}: direct {d} vs path ledger {p}",
                DyadicIndex::from_id(id)
            )));
        }
    }
    Ok(direct)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellGap {
    pub j: u32,
    pub k: u64,
    pub z1: f64,
    pub z2: f64,
    pub gap: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockGap {
    pub block: usize,
    pub m: usize,
    pub s1: f64,
    pub s2: f64,
    pub gap: f64,
    /// Haar-decomposed upper bound on `gap`.
    pub decomposed: f64,
    pub r_n: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub m: usize,
    pub lambda: f64,
    pub c_lambda: f64,
    pub cells: Vec<CellGap>,
    pub blocks: Vec<BlockGap>,
}

/// `(m 2^{-j})^{1/4} ln m`.
pub fn cell_scale(m: usize, j: u32) -> f64 {
    let mf = m as f64;
    (mf * 2f64.powi(-(j as i32))).powf(0.25) * mf.ln()
}

/// `gamma^{1/4} gamma'^{3/4} m^{1/4} ln m + m^{-lambda}`.
pub fn r_n(gamma: f64, gamma_prime: f64, m: usize, lambda: f64) -> f64 {
    let mf = m as f64;
    gamma.powf(0.25) * gamma_prime.powf(0.75) * mf.powf(0.25) * mf.ln() + mf.powf(-lambda)
}

impl GapReport {
    pub fn cell_fraction_passing(&self) -> f64 {
        self.cells.iter().filter(|c| c.pass).count() as f64 / self.cells.len().max(1) as f64
    }

    /// CSV with columns `j,k,z1,z2,gap,threshold,pass`.
    pub fn write_cells_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["j", "k", "z1", "z2", "gap", "threshold", "pass"])?;
        for c in &self.cells {
            out.serialize((c.j, c.k, c.z1, c.z2, c.gap, c.threshold, c.pass))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_blocks_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for b in &self.blocks {
            out.serialize(b)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Per-node gaps between the two sides. `wf_y` is `None` when both sides
/// share `wf_x`.
pub fn z_statistics(
    ledger_x: &CouplingLedger,
    ledger_y: &CouplingLedger,
    wf_x: &mut WienerFamily,
    wf_y: Option<&mut WienerFamily>,
    lambda: f64,
    c_lambda: f64,
) -> Result<(GapReport, Vec<f64>, Vec<f64>)> {
    if ledger_x.tree != ledger_y.tree || ledger_x.steps.len() != ledger_y.steps.len() {
        return Err(Error::InvalidArgument("the two ledgers do not describe the same tree and sample size".into()));
    }
    let z1 = checked_sums(ledger_x, wf_x)?;
    let z2 = match wf_y {
        Some(w) => checked_sums(ledger_y, w)?,
        None => checked_sums(ledger_y, wf_x)?,
    };
    let m = ledger_x.steps.len();
    let cells = (1..ledger_x.tree.len())
        .map(|id| {
            let d = DyadicIndex::from_id(id);
            let gap = (z1[id] - z2[id]).abs();
            let threshold = c_lambda * cell_scale(m, d.j);
            CellGap { j: d.j, k: d.k, z1: z1[id], z2: z2[id], gap, threshold, pass: gap <= threshold }
        })
        .collect();
    Ok((GapReport { m, lambda, c_lambda, cells, blocks: Vec::new() }, z1, z2))
}

/// `S = sum_i g(locator_i) value_i`.
pub fn score_sum(ledger: &CouplingLedger, g: &GridFunction) -> f64 {
    ledger.steps.iter().map(|s| g.eval_or_zero(s.locator) * s.value).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongApproxGap {
    pub s1: f64,
    pub s2: f64,
    pub direct: f64,
    /// `|c_0| (B-A)^{-1/2} |dZ_{0,1}| + sum_{j <= J, k} |c_{j,k}| 2^{j/2} (B-A)^{-1/2} (|dZ_{j+1,2k-1}| + |dZ_{j+1,2k}|) + |dR|`
    pub decomposed: f64,
    /// Residual part `|sum r(x) l'_1 - sum r(y) l'_2|`, `r = g - P_J g`.
    pub residual: f64,
}

impl StrongApproxGap {
    pub fn consistent(&self) -> bool {
        self.direct <= self.decomposed + 1e-9 * (1.0 + self.decomposed)
    }
}

/// Gap of the block score sums, directly and through the Haar expansion of
/// `g` (levels `0..=J` with `J + 1 <= j*`).
pub fn strong_approx_gap(
    g: &GridFunction,
    expansion: &HaarExpansion,
    ledger_x: &CouplingLedger,
    ledger_y: &CouplingLedger,
    z1: &[f64],
    z2: &[f64],
) -> Result<StrongApproxGap> {
    let tree = ledger_x.tree;
    if expansion.j_star + 1 > tree.j_star || expansion.a != tree.a || expansion.b != tree.b {
        return Err(Error::InvalidArgument(format!(
            "expansion through level {} on [{}, {}] needs Z down to level {} of the same interval",
            expansion.j_star,
            expansion.a,
            expansion.b,
            expansion.j_star + 1
        )));
    }
    let s1 = score_sum(ledger_x, g);
    let s2 = score_sum(ledger_y, g);
    let norm = (tree.b - tree.a).powf(-0.5);
    let dz = |id: usize| (z1[id] - z2[id]).abs();
    let mut decomposed = expansion.c0.abs() * norm * dz(1);
    for (j, level) in expansion.coeffs.iter().enumerate() {
        let w = 2f64.powf(j as f64 / 2.0) * norm;
        for (k0, &c) in level.iter().enumerate() {
            let [l, r] = DyadicIndex { j: j as u32, k: k0 as u64 + 1 }.children();
            decomposed += c.abs() * w * (dz(l.id()) + dz(r.id()));
        }
    }
    let resid = |l: &CouplingLedger| -> f64 {
        l.steps
            .iter()
            .map(|s| (g.eval_or_zero(s.locator) - haar_reconstruct(expansion, s.locator)) * s.value)
            .sum()
    };
    let residual = (resid(ledger_x) - resid(ledger_y)).abs();
    decomposed += residual;
    Ok(StrongApproxGap { s1, s2, direct: (s1 - s2).abs(), decomposed, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::embed::{embed_ar_side, embed_regression_side, Horizons};
    use crate::coupling::ScoreLaw;
    use crate::grid::Grid;
    use crate::haar::haar_expand;
    use crate::models::NoiseModel;
    use crate::rng::rng_from_key;
    use rand::Rng;

    struct Pair {
        lx: CouplingLedger,
        ly: CouplingLedger,
        wf: WienerFamily,
    }

    fn coupled(m: usize, j_star: u32, t: f64, seed: u64) -> Pair {
        let grid = Grid::default();
        let noise = NoiseModel::gaussian(1.0, grid).unwrap();
        let law = ScoreLaw::for_noise(&noise).unwrap();
        let f0 = GridFunction::from_fn(grid, |x| 0.4 * x.sin());
        let tree = Tree::new(-1.0, 1.0, j_star).unwrap();
        let mut h = Horizons::unbounded(tree);
        for id in 2..tree.len() {
            h.t[id] = t;
        }
        let mut wf = WienerFamily::new(seed, 1e-3, 8).unwrap();
        let mut rng = rng_from_key(seed + 1);
        let (_, lx) = embed_ar_side(&f0, &noise, &law, 0.0, m, &mut wf, &h, &mut rng).unwrap();
        let xi: Vec<f64> = (0..m).map(|_| rng.random_range(-1.5..1.5)).collect();
        let (_, _, ly) = embed_regression_side(&f0, &noise, &law, &xi, &mut wf, &h, &mut rng).unwrap();
        Pair { lx, ly, wf }
    }

    #[test]
    fn path_ledger_matches_direct_sums() {
        let mut p = coupled(600, 3, 2.0, 10);
        let d = direct_sums(&p.lx);
        let l = ledger_sums(&p.lx, &mut p.wf);
        for id in 1..d.len() {
            assert!((d[id] - l[id]).abs() < 1e-10, "{id}: {} vs {}", d[id], l[id]);
        }
        // root holds every step located in [A, B]
        let inside: f64 = p.lx.steps.iter().filter(|s| s.leaf != EXTERIOR).map(|s| s.value).sum();
        assert!((d[1] - inside).abs() < 1e-12);
    }

    #[test]
    fn corrupted_value_is_detected() {
        let mut p = coupled(200, 2, 1.0, 20);
        let i = p.lx.steps.iter().position(|s| s.leaf != EXTERIOR).unwrap();
        p.lx.steps[i].value += 1e-6;
        assert!(matches!(checked_sums(&p.lx, &mut p.wf), Err(Error::LedgerCorruption(_))));
    }

    #[test]
    fn untouched_leaf_has_no_gap() {
        let mut p = coupled(50, 6, 0.0, 30);
        let (rep, _, _) = z_statistics(&p.lx, &p.ly, &mut p.wf, None, 2.0, 1.0).unwrap();
        let visited = |l: &CouplingLedger, id: usize| l.steps.iter().any(|s| l.tree.under(s.leaf, id));
        let quiet = rep.cells.iter().find(|c| {
            let id = DyadicIndex { j: c.j, k: c.k }.id();
            c.j == 6 && !visited(&p.lx, id) && !visited(&p.ly, id)
        });
        assert_eq!(quiet.expect("some quiet leaf").gap, 0.0);
    }

    #[test]
    fn strong_gap_zero_g_and_decomposition_bound() {
        let mut p = coupled(800, 4, 1.5, 40);
        let (_, z1, z2) = z_statistics(&p.lx, &p.ly, &mut p.wf, None, 2.0, 1.0).unwrap();
        let grid = Grid::default();
        let zero = GridFunction::zeros(grid);
        let e0 = haar_expand(&zero, -1.0, 1.0, 3).unwrap();
        let s = strong_approx_gap(&zero, &e0, &p.lx, &p.ly, &z1, &z2).unwrap();
        assert_eq!((s.s1, s.s2, s.direct), (0.0, 0.0, 0.0));
        let g = GridFunction::from_fn(grid, |x| 0.2 * crate::models::bump_profile(x));
        let e = haar_expand(&g, -1.0, 1.0, 3).unwrap();
        let s = strong_approx_gap(&g, &e, &p.lx, &p.ly, &z1, &z2).unwrap();
        assert!(s.consistent(), "{s:?}");
        assert!(strong_approx_gap(&g, &haar_expand(&g, -1.0, 1.0, 4).unwrap(), &p.lx, &p.ly, &z1, &z2).is_err());
    }

    #[test]
    fn single_atom_reduces_to_two_z_gaps() {
        let mut p = coupled(500, 3, 1.0, 50);
        let (_, z1, z2) = z_statistics(&p.lx, &p.ly, &mut p.wf, None, 2.0, 1.0).unwrap();
        let idx = DyadicIndex { j: 1, k: 2 };
        let grid = Grid::new(-2.0, 2.0, 1.0 / 512.0).unwrap();
        let mut e = haar_expand(&GridFunction::zeros(grid), -1.0, 1.0, 2).unwrap();
        e.coeffs[1][1] = 0.3;
        let g = GridFunction::from_fn(grid, |x| haar_reconstruct(&e, x));
        let s = strong_approx_gap(&g, &e, &p.lx, &p.ly, &z1, &z2).unwrap();
        let [l, r] = idx.children();
        let want = 0.3 * 2f64.sqrt() / 2f64.sqrt() * ((z1[l.id()] - z2[l.id()]).abs() + (z1[r.id()] - z2[r.id()]).abs());
        // the grid interpolant of a step function differs near the jumps
        assert!((s.decomposed - s.residual - want).abs() < 1e-9);
    }
}
