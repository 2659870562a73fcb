//! Truncated Haar expansions on `[A, B]` over the dyadic intervals
//! `I_{j,k} = (s_{j,k-1}, s_{j,k}]`, `s_{j,k} = A + k 2^{-j} (B - A)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;

/// Dyadic interval `I_{j,k}`, `1 <= k <= 2^j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicIndex {
    pub j: u32,
    pub k: u64,
}

impl DyadicIndex {
    pub fn new(j: u32, k: u64) -> Result<Self> {
        if k < 1 || k > 1u64 << j {
            return Err(Error::InvalidArgument(format!("k = {k} outside 1..=2^{j}")));
        }
        Ok(DyadicIndex { j, k })
    }

    /// Heap numbering: root is 1, children of `id` are `2 id` and `2 id + 1`.
    pub fn id(&self) -> usize {
        (1usize << self.j) + self.k as usize - 1
    }

    pub fn from_id(id: usize) -> Self {
        let j = usize::BITS - 1 - id.leading_zeros();
        DyadicIndex { j, k: (id - (1usize << j) + 1) as u64 }
    }

    pub fn parent(&self) -> Option<Self> {
        (self.j > 0).then(|| DyadicIndex { j: self.j - 1, k: self.k.div_ceil(2) })
    }

    pub fn children(&self) -> [Self; 2] {
        [
            DyadicIndex { j: self.j + 1, k: 2 * self.k - 1 },
            DyadicIndex { j: self.j + 1, k: 2 * self.k },
        ]
    }

    /// Whether `I_self` contains `I_other`.
    pub fn contains(&self, other: &DyadicIndex) -> bool {
        other.j >= self.j && other.k.div_ceil(1u64 << (other.j - self.j)) == self.k
    }

    /// `(s_{j,k-1}, s_{j,k})`.
    pub fn bounds(&self, a: f64, b: f64) -> (f64, f64) {
        let w = (b - a) / (1u64 << self.j) as f64;
        (a + (self.k - 1) as f64 * w, a + self.k as f64 * w)
    }
}

/// All nodes of levels `0..=j_max` in heap order.
pub fn tree_nodes(j_max: u32) -> impl Iterator<Item = DyadicIndex> {
    (1..(1usize << (j_max + 1))).map(DyadicIndex::from_id)
}

/// The `k` with `x ∈ I_{j,k}`; `A` itself belongs to the first interval.
pub fn cell_of(x: f64, a: f64, b: f64, j: u32) -> Option<u64> {
    if !(x >= a && x <= b) {
        return None;
    }
    let n = 1u64 << j;
    let u = (x - a) / (b - a) * n as f64;
    let k = u.ceil() as u64;
    Some(k.clamp(1, n))
}

/// `h_0` (`idx = None`) or `h_{j,k}` at `x`.
pub fn haar_eval(idx: Option<DyadicIndex>, x: f64, a: f64, b: f64) -> f64 {
    let norm = (b - a).powf(-0.5);
    match idx {
        None => {
            if cell_of(x, a, b, 0).is_some() {
                norm
            } else {
                0.0
            }
        }
        Some(d) => match cell_of(x, a, b, d.j + 1) {
            Some(c) if c == 2 * d.k - 1 => norm * 2f64.powf(d.j as f64 / 2.0),
            Some(c) if c == 2 * d.k => -norm * 2f64.powf(d.j as f64 / 2.0),
            _ => 0.0,
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HaarExpansion {
    pub a: f64,
    pub b: f64,
    pub j_star: u32,
    pub c0: f64,
    /// `coeffs[j][k-1] = c_{j,k}`
    pub coeffs: Vec<Vec<f64>>,
    /// Lipschitz constant of `g` used for the residual bound.
    pub g_lipschitz: f64,
    pub residual_sup_bound: f64,
}

impl HaarExpansion {
    pub fn coeff(&self, idx: DyadicIndex) -> f64 {
        self.coeffs[idx.j as usize][(idx.k - 1) as usize]
    }

    /// Drops levels above `j`.
    pub fn truncated(&self, j: u32) -> HaarExpansion {
        let j = j.min(self.j_star);
        HaarExpansion {
            a: self.a,
            b: self.b,
            j_star: j,
            c0: self.c0,
            coeffs: self.coeffs[..=j as usize].to_vec(),
            g_lipschitz: self.g_lipschitz,
            residual_sup_bound: (self.b - self.a) * 2f64.powi(-(j as i32) - 2) * self.g_lipschitz,
        }
    }

    pub fn zeroed(&self) -> HaarExpansion {
        let mut e = self.clone();
        e.c0 = 0.0;
        for l in &mut e.coeffs {
            l.iter_mut().for_each(|c| *c = 0.0);
        }
        e
    }

    /// `{A, B, j_star, c0, [[j, k, value], ...]}`
    pub fn to_json(&self) -> Result<String> {
        let coeffs: Vec<(u32, u64, f64)> = self
            .coeffs
            .iter()
            .enumerate()
            .flat_map(|(j, lv)| lv.iter().enumerate().map(move |(k, &c)| (j as u32, k as u64 + 1, c)))
            .collect();
        Ok(serde_json::to_string(&serde_json::json!({
            "A": self.a, "B": self.b, "j_star": self.j_star, "c0": self.c0, "coeffs": coeffs,
        }))?)
    }
}

/// Exact integrals of the interpolant of `g` over the level-`level` cells of `[a, b]`.
fn cell_integrals(g: &GridFunction, a: f64, b: f64, level: u32) -> Vec<f64> {
    let n = 1usize << level;
    let grid = g.grid;
    let h = grid.h;
    let last = grid.len - 1;
    let v = &g.values;
    // prefix[i] = integral from x_0 to x_i
    let mut prefix = Vec::with_capacity(grid.len);
    prefix.push(0.0);
    for i in 0..last {
        let p = prefix[i] + 0.5 * h * (v[i] + v[i + 1]);
        prefix.push(p);
    }
    let anti = |x: f64| {
        let p = grid.position(x).clamp(0.0, last as f64);
        let i = (p as usize).min(last - 1);
        let t = p - i as f64;
        prefix[i] + h * (v[i] * t + 0.5 * (v[i + 1] - v[i]) * t * t)
    };
    let pts: Vec<f64> = (0..=n).map(|i| anti(a + (b - a) * i as f64 / n as f64)).collect();
    pts.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Lipschitz constant of the interpolant over the cells meeting `[a, b]`.
pub fn lipschitz_on(g: &GridFunction, a: f64, b: f64) -> f64 {
    let grid = g.grid;
    let lo = grid.position(a).floor().max(0.0) as usize;
    let hi = (grid.position(b).ceil() as usize).min(grid.len - 1);
    g.values[lo..=hi]
        .windows(2)
        .fold(0.0f64, |m, w| m.max((w[1] - w[0]).abs()))
        / grid.h
}

/// Support leak tolerance for `haar_expand`.
pub const SUPPORT_TOL: f64 = 1e-12;

pub fn haar_expand(g: &GridFunction, a: f64, b: f64, j_star: u32) -> Result<HaarExpansion> {
    if !(a < b) {
        return Err(Error::InvalidArgument(format!("need A < B (got {a}, {b})")));
    }
    let grid = g.grid;
    let leak = (0..grid.len)
        .filter(|&i| {
            let x = grid.x(i);
            x < a || x > b
        })
        .fold(0.0f64, |m, i| m.max(g.values[i].abs()));
    if leak > SUPPORT_TOL {
        return Err(Error::SupportViolation { a, b, leak });
    }
    let norm = (b - a).powf(-0.5);
    let fine = cell_integrals(g, a, b, j_star + 1);
    // sums over level-j cells by pairing up from the finest level
    let mut sums = vec![fine];
    for _ in 0..=j_star {
        let prev = sums.last().expect("nonempty");
        let next: Vec<f64> = prev.chunks(2).map(|c| c[0] + c[1]).collect();
        sums.push(next);
    }
    sums.reverse(); // sums[j] = integrals over level-j cells, j = 0..=j_star+1
    let c0 = norm * sums[0][0];
    let coeffs = (0..=j_star as usize)
        .map(|j| {
            let s = norm * 2f64.powf(j as f64 / 2.0);
            sums[j + 1].chunks(2).map(|c| s * (c[0] - c[1])).collect()
        })
        .collect();
    let g_lipschitz = lipschitz_on(g, a, b);
    Ok(HaarExpansion {
        a,
        b,
        j_star,
        c0,
        coeffs,
        g_lipschitz,
        residual_sup_bound: (b - a) * 2f64.powi(-(j_star as i32) - 2) * g_lipschitz,
    })
}

/// Partial sum through level `j_star` at `x`.
pub fn haar_reconstruct(exp: &HaarExpansion, x: f64) -> f64 {
    let (a, b) = (exp.a, exp.b);
    if cell_of(x, a, b, 0).is_none() {
        return 0.0;
    }
    let norm = (b - a).powf(-0.5);
    let mut s = exp.c0 * norm;
    for (j, level) in exp.coeffs.iter().enumerate() {
        let c = cell_of(x, a, b, j as u32 + 1).expect("inside");
        let k = c.div_ceil(2);
        let sign = if c % 2 == 1 { 1.0 } else { -1.0 };
        s += sign * level[(k - 1) as usize] * norm * 2f64.powf(j as f64 / 2.0);
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    /// `None` for `c_0`.
    pub index: Option<DyadicIndex>,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub g_sup: f64,
    pub g_lipschitz: f64,
    pub checked: usize,
    pub violations: Vec<BoundViolation>,
}

/// `|c_{j,k}| <= min{(B-A)^{1/2} 2^{-j/2} ||g||, (B-A)^{3/2} 2^{-3j/2-2} ||g'||}`.
pub fn coefficient_bound(j: u32, a: f64, b: f64, g_sup: f64, g_lip: f64) -> f64 {
    let w = b - a;
    let jf = j as f64;
    (w.sqrt() * 2f64.powf(-jf / 2.0) * g_sup).min(w.powf(1.5) * 2f64.powf(-1.5 * jf - 2.0) * g_lip)
}

pub fn coefficient_bounds_check(exp: &HaarExpansion, g: &GridFunction) -> CoefficientReport {
    const SLACK: f64 = 1e-9;
    let (a, b) = (exp.a, exp.b);
    let g_sup = g.sup_abs();
    let g_lip = lipschitz_on(g, a, b);
    let mut violations = Vec::new();
    let b0 = (b - a).sqrt() * g_sup;
    if exp.c0.abs() > b0 * (1.0 + SLACK) + SLACK {
        violations.push(BoundViolation { index: None, value: exp.c0, bound: b0 });
    }
    let mut checked = 1;
    for (j, level) in exp.coeffs.iter().enumerate() {
        let bound = coefficient_bound(j as u32, a, b, g_sup, g_lip);
        for (k, &c) in level.iter().enumerate() {
            checked += 1;
            if c.abs() > bound * (1.0 + SLACK) + SLACK {
                violations.push(BoundViolation {
                    index: Some(DyadicIndex { j: j as u32, k: k as u64 + 1 }),
                    value: c,
                    bound,
                });
            }
        }
    }
    CoefficientReport { g_sup, g_lipschitz: g_lip, checked, violations }
}

/// Largest `|g(x) - partial sum(x)|` over the grid points in `[A, B]`.
pub fn max_residual(exp: &HaarExpansion, g: &GridFunction) -> f64 {
    let grid = g.grid;
    (0..grid.len)
        .filter(|&i| (exp.a..=exp.b).contains(&grid.x(i)))
        .map(|i| (g.values[i] - haar_reconstruct(exp, grid.x(i))).abs())
        .fold(0.0, f64::max)
}

/// Largest `|G - I|` entry of the Gram matrix of `{h_0} ∪ {h_{j,k} : j <= j_max}`,
/// by the midpoint rule on cells of level `j_max + 2` (exact for these step functions).
pub fn gram_deviation(a: f64, b: f64, j_max: u32) -> f64 {
    let level = j_max + 2;
    let cells = 1usize << level;
    let w = (b - a) / cells as f64;
    let funcs: Vec<Option<DyadicIndex>> = std::iter::once(None).chain(tree_nodes(j_max).map(Some)).collect();
    let table: Vec<Vec<f64>> = funcs
        .iter()
        .map(|&f| (0..cells).map(|c| haar_eval(f, a + (c as f64 + 0.5) * w, a, b)).collect())
        .collect();
    let mut worst = 0.0f64;
    for (p, rp) in table.iter().enumerate() {
        for (q, rq) in table.iter().enumerate().skip(p) {
            let ip: f64 = rp.iter().zip(rq).map(|(x, y)| x * y).sum::<f64>() * w;
            let target = if p == q { 1.0 } else { 0.0 };
            worst = worst.max((ip - target).abs());
        }
    }
    worst
}

/// Finest level so that the truncation remainder of a block score sum is
/// below `m^{-lambda}` with probability `1 - O(m^{-lambda})` by Chebyshev:
/// smallest `j` with `m^{2 lambda} ((B-A) 2^{-j-2} gamma')^2 m I <= m^{-lambda}`,
/// capped at `cap`.
pub fn j_star_rule(m: usize, lambda: f64, gamma_prime: f64, fisher: f64, a: f64, b: f64, cap: u32) -> u32 {
    let mf = m as f64;
    // 2^{-j-2} <= m^{-3 lambda / 2} / ((B-A) gamma' sqrt(m I))
    let need = (b - a) * gamma_prime * (mf * fisher).sqrt() * mf.powf(1.5 * lambda);
    if !(need > 0.0) {
        return 0;
    }
    let j = (need.log2() - 2.0).ceil().max(0.0);
    (j as u32).min(cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn unit_grid() -> Grid {
        Grid::new(-0.5, 1.5, 1.0 / 1024.0).unwrap()
    }

    #[test]
    fn dyadic_indexing() {
        let d = DyadicIndex::new(2, 3).unwrap();
        assert_eq!(d.id(), 6);
        assert_eq!(DyadicIndex::from_id(6), d);
        assert_eq!(d.parent(), Some(DyadicIndex { j: 1, k: 2 }));
        assert_eq!(d.children(), [DyadicIndex { j: 3, k: 5 }, DyadicIndex { j: 3, k: 6 }]);
        assert!(DyadicIndex { j: 1, k: 2 }.contains(&d));
        assert!(!DyadicIndex { j: 1, k: 1 }.contains(&d));
        assert!(DyadicIndex::new(2, 5).is_err());
        assert_eq!(tree_nodes(2).count(), 7);
    }

    #[test]
    fn cells_are_left_open() {
        assert_eq!(cell_of(0.0, 0.0, 1.0, 1), Some(1));
        assert_eq!(cell_of(0.5, 0.0, 1.0, 1), Some(1));
        assert_eq!(cell_of(0.500001, 0.0, 1.0, 1), Some(2));
        assert_eq!(cell_of(1.0, 0.0, 1.0, 3), Some(8));
        assert_eq!(cell_of(1.1, 0.0, 1.0, 3), None);
        assert_eq!(cell_of(-0.1, 0.0, 1.0, 3), None);
    }

    #[test]
    fn basis_values() {
        assert_eq!(haar_eval(None, 0.3, 0.0, 1.0), 1.0);
        let m = Some(DyadicIndex { j: 0, k: 1 });
        assert_eq!(haar_eval(m, 0.25, 0.0, 1.0), 1.0);
        assert_eq!(haar_eval(m, 0.75, 0.0, 1.0), -1.0);
        assert_eq!(haar_eval(m, 1.5, 0.0, 1.0), 0.0);
        // norm of h_{1,2} by a fine midpoint rule
        let h = Some(DyadicIndex { j: 1, k: 2 });
        let n = 100_000;
        let s: f64 = (0..n).map(|i| haar_eval(h, (i as f64 + 0.5) / n as f64, 0.0, 1.0).powi(2)).sum::<f64>() / n as f64;
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gram_is_identity() {
        assert!(gram_deviation(0.0, 1.0, 4) < 1e-12);
        assert!(gram_deviation(-1.3, 2.1, 4) < 1e-12);
    }

    #[test]
    fn constant_expands_to_c0_only() {
        let grid = unit_grid();
        let kappa = 0.7;
        let g = GridFunction::from_fn(grid, |x| if (0.0..=1.0).contains(&x) { kappa } else { 0.0 });
        let e = haar_expand(&g, 0.0, 1.0, 5).unwrap();
        // the interpolant ramps outside [0, 1] only
        assert!((e.c0 - kappa).abs() < 1e-12);
        assert!(e.coeffs.iter().flatten().all(|c| c.abs() < 1e-12));
        assert!((haar_reconstruct(&e, 0.42) - kappa).abs() < 1e-12);
        assert_eq!(haar_reconstruct(&e.zeroed(), 0.42), 0.0);
    }

    #[test]
    fn linear_function_attains_derivative_bound() {
        let grid = unit_grid();
        let g = GridFunction::from_fn(grid, |x| if (0.0..=1.0).contains(&x) { x } else { 0.0 });
        let e = haar_expand(&g, 0.0, 1.0, 6).unwrap();
        assert!((e.coeff(DyadicIndex { j: 0, k: 1 }) + 0.25).abs() < 1e-12);
        for j in 0..=6u32 {
            let want = 2f64.powf(-1.5 * j as f64 - 2.0);
            for &c in &e.coeffs[j as usize] {
                assert!((c.abs() - want).abs() < 1e-12);
            }
        }
        let r = coefficient_bounds_check(&e, &g);
        assert!(r.violations.is_empty(), "{:?}", r.violations);
        assert!((r.g_lipschitz - 1.0).abs() < 1e-9);
    }

    #[test]
    fn basis_function_expands_to_itself() {
        let grid = Grid::new(-0.5, 1.5, 1.0 / 256.0).unwrap();
        let idx = DyadicIndex { j: 2, k: 3 };
        let g = GridFunction::from_fn(grid, |x| haar_eval(Some(idx), x, 0.0, 1.0));
        let e = haar_expand(&g, 0.0, 1.0, 4).unwrap();
        // jumps sit on grid nodes, so the interpolant differs from h_{2,3}
        // on two cells of width 1/256 at each jump
        for (j, lv) in e.coeffs.iter().enumerate() {
            for (k, &c) in lv.iter().enumerate() {
                let want = if (j as u32, k as u64 + 1) == (idx.j, idx.k) { 1.0 } else { 0.0 };
                assert!((c - want).abs() < 0.05, "c[{j},{}] = {c}", k + 1);
            }
        }
    }

    #[test]
    fn support_leak_is_rejected() {
        let g = GridFunction::from_fn(unit_grid(), |x| x);
        assert!(matches!(haar_expand(&g, 0.0, 1.0, 3), Err(Error::SupportViolation { .. })));
    }

    #[test]
    fn residual_bound_on_a_bump() {
        let grid = Grid::new(-2.0, 2.0, 1.0 / 512.0).unwrap();
        let g = GridFunction::from_fn(grid, |x| 0.3 * crate::models::bump_profile(x));
        for j in 0..8 {
            let e = haar_expand(&g, -1.0, 1.0, j).unwrap();
            assert!(max_residual(&e, &g) <= e.residual_sup_bound * (1.0 + 1e-12));
            assert!(coefficient_bounds_check(&e, &g).violations.is_empty());
        }
    }

    #[test]
    fn json_layout() {
        let grid = unit_grid();
        let g = GridFunction::from_fn(grid, |x| if (0.0..=1.0).contains(&x) { x } else { 0.0 });
        let e = haar_expand(&g, 0.0, 1.0, 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&e.to_json().unwrap()).unwrap();
        assert_eq!(v["j_star"], 1);
        assert_eq!(v["coeffs"].as_array().unwrap().len(), 3);
        assert_eq!(v["coeffs"][2][1], 2);
    }

    #[test]
    fn j_star_rule_is_monotone_and_capped() {
        let a = j_star_rule(256, 0.5, 0.3, 1.0, -1.0, 1.0, 30);
        let b = j_star_rule(4096, 0.5, 0.3, 1.0, -1.0, 1.0, 30);
        assert!(b >= a);
        assert_eq!(j_star_rule(4096, 2.0, 0.3, 1.0, -1.0, 1.0, 12), 12);
        let j = j_star_rule(100, 0.5, 0.3, 1.0, -1.0, 1.0, 60);
        let m = 100f64;
        let lhs = |j: u32| m.powf(1.0) * (2.0 * 2f64.powi(-(j as i32) - 2) * 0.3).powi(2) * m;
        assert!(lhs(j) <= m.powf(-0.5) * (1.0 + 1e-12));
        assert!(lhs(j - 1) > m.powf(-0.5));
    }
}
