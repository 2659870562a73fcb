//! Uniform grids over a truncated real line and functions sampled on them.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `x_i = x_min + i h`, `i = 0..len`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_min: f64,
    pub h: f64,
    pub len: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Grid::new(-10.0, 10.0, 1.0 / 256.0).expect("default grid is valid")
    }
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) || !(x_max > x_min) {
            return Err(Error::InvalidArgument(format!(
                "grid needs h > 0 and x_max > x_min (got h={h}, [{x_min}, {x_max}])"
            )));
        }
        let cells = ((x_max - x_min) / h).round();
        if (x_min + cells * h - x_max).abs() > 1e-9 * h.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "domain width {} is not a multiple of h={h}",
                x_max - x_min
            )));
        }
        Ok(Grid { x_min, h, len: cells as usize + 1 })
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.h
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.len - 1)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.x(i)).collect()
    }

    /// Trapezoid weights.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![self.h; self.len];
        w[0] *= 0.5;
        w[self.len - 1] *= 0.5;
        w
    }

    /// Fractional index of `x`.
    #[inline]
    pub fn position(&self, x: f64) -> f64 {
        (x - self.x_min) / self.h
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.len == other.len
            && (self.x_min - other.x_min).abs() <= 1e-12
            && (self.h - other.h).abs() <= 1e-15
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// A real function sampled on a [`Grid`]; linear interpolation in between.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len
            )));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Grid, f: F) -> Self {
        let values = (0..grid.len).map(|i| f(grid.x(i))).collect();
        GridFunction { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        GridFunction { grid, values: vec![0.0; grid.len] }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        GridFunction { grid, values: vec![c; grid.len] }
    }

    /// Linear interpolation; constant extension beyond the ends.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let p = self.grid.position(x);
        if p <= 0.0 {
            return self.values[0];
        }
        let last = self.grid.len - 1;
        if p >= last as f64 {
            return self.values[last];
        }
        let i = p as usize;
        let t = p - i as f64;
        self.values[i] + t * (self.values[i + 1] - self.values[i])
    }

    /// Linear interpolation, zero outside the grid (used for densities).
    #[inline]
    pub fn eval_or_zero(&self, x: f64) -> f64 {
        let p = self.grid.position(x);
        let last = self.grid.len - 1;
        if p < 0.0 || p > last as f64 {
            return 0.0;
        }
        let i = (p as usize).min(last - 1);
        let t = p - i as f64;
        self.values[i] + t * (self.values[i + 1] - self.values[i])
    }

    pub fn integral(&self) -> f64 {
        let w = self.grid.weights();
        let terms: Vec<f64> = self.values.iter().zip(&w).map(|(v, w)| v * w).collect();
        crate::stats::pairwise_sum(&terms)
    }

    /// Exact integral of the interpolant over [a, b] (clipped to the grid).
    pub fn integral_between(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        self.antiderivative_at(b) - self.antiderivative_at(a)
    }

    /// Integral of the interpolant from `x_min` to `x`.
    pub fn antiderivative_at(&self, x: f64) -> f64 {
        let last = self.grid.len - 1;
        let p = self.grid.position(x).clamp(0.0, last as f64);
        let i = (p as usize).min(last.saturating_sub(1));
        let h = self.grid.h;
        let mut s = 0.0;
        for k in 0..i {
            s += 0.5 * h * (self.values[k] + self.values[k + 1]);
        }
        let t = p - i as f64;
        let v0 = self.values[i];
        let v1 = self.values[(i + 1).min(last)];
        s + h * (v0 * t + 0.5 * (v1 - v0) * t * t)
    }

    /// Central differences, one-sided at the ends.
    pub fn derivative(&self) -> GridFunction {
        let n = self.grid.len;
        let h = self.grid.h;
        let v = &self.values;
        let mut d = vec![0.0; n];
        if n >= 2 {
            d[0] = (v[1] - v[0]) / h;
            d[n - 1] = (v[n - 1] - v[n - 2]) / h;
        }
        for i in 1..n.saturating_sub(1) {
            d[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
        }
        GridFunction { grid: self.grid, values: d }
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest |v_{i+1} - v_i| / h: the Lipschitz constant of the interpolant.
    pub fn max_chord_slope(&self) -> f64 {
        self.values
            .windows(2)
            .fold(0.0f64, |m, w| m.max((w[1] - w[0]).abs()))
            / self.grid.h
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> GridFunction {
        GridFunction {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with<F: Fn(f64, f64) -> f64>(&self, other: &GridFunction, f: F) -> Result<GridFunction> {
        self.grid.ensure_same(&other.grid)?;
        Ok(GridFunction {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> GridFunction {
        self.map(|v| c * v)
    }

    /// L1 distance by trapezoid quadrature.
    pub fn l1_distance(&self, other: &GridFunction) -> Result<f64> {
        Ok(self.zip_with(other, |a, b| (a - b).abs())?.integral())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "value"])?;
        for (i, v) in self.values.iter().enumerate() {
            wr.write_record([format!("{:.17e}", self.grid.x(i)), format!("{v:.17e}")])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads the two-column CSV; the x column must be uniform.
    pub fn read_csv<R: Read>(r: R) -> Result<GridFunction> {
        let mut rd = csv::Reader::from_reader(r);
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Io(format!("bad number {s:?}: {e}")))
            };
            xs.push(parse(&rec[0])?);
            vs.push(parse(&rec[1])?);
        }
        if xs.len() < 2 {
            return Err(Error::Io("grid CSV needs at least two rows".into()));
        }
        let h = (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64;
        for (i, &x) in xs.iter().enumerate() {
            if (x - (xs[0] + i as f64 * h)).abs() > 1e-9 * h.max(1.0) {
                return Err(Error::GridMismatch(format!("x column is not uniform at row {i}")));
            }
        }
        GridFunction::new(Grid { x_min: xs[0], h, len: xs.len() }, vs)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&GridFunctionJson {
            x_min: self.grid.x_min,
            x_max: self.grid.x_max(),
            h: self.grid.h,
            values: self.values.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<GridFunction> {
        let d: GridFunctionJson = serde_json::from_str(s)?;
        let grid = Grid::new(d.x_min, d.x_max, d.h)?;
        GridFunction::new(grid, d.values)
    }
}

#[derive(Serialize, Deserialize)]
struct GridFunctionJson {
    x_min: f64,
    x_max: f64,
    h: f64,
    values: Vec<f64>,
}

/// Cumulative distribution of a nonnegative grid density (piecewise linear),
/// with exact inversion of the piecewise-quadratic CDF.
#[derive(Clone, Debug)]
pub struct CdfTable {
    grid: Grid,
    density: Vec<f64>,
    cum: Vec<f64>,
}

impl CdfTable {
    /// Normalizes so the total mass is one.
    pub fn new(density: &GridFunction) -> Result<Self> {
        let grid = density.grid;
        let h = grid.h;
        let mut cum = Vec::with_capacity(grid.len);
        cum.push(0.0);
        let mut s = 0.0;
        for w in density.values.windows(2) {
            if w[0] < 0.0 || w[1] < 0.0 {
                return Err(Error::InvalidArgument("density must be nonnegative".into()));
            }
            s += 0.5 * h * (w[0] + w[1]);
            cum.push(s);
        }
        if !(s > 0.0) {
            return Err(Error::InvalidArgument("density has zero mass".into()));
        }
        let d: Vec<f64> = density.values.iter().map(|v| v / s).collect();
        for c in &mut cum {
            *c /= s;
        }
        Ok(CdfTable { grid, density: d, cum })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let last = self.grid.len - 1;
        let p = self.grid.position(x);
        if p <= 0.0 {
            return 0.0;
        }
        if p >= last as f64 {
            return 1.0;
        }
        let i = p as usize;
        let t = p - i as f64;
        let (d0, d1) = (self.density[i], self.density[i + 1]);
        self.cum[i] + self.grid.h * (d0 * t + 0.5 * (d1 - d0) * t * t)
    }

    /// Smallest x with cdf(x) = u, solving the quadratic inside the cell.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let last = self.grid.len - 1;
        // first index with cum > u
        let j = self.cum.partition_point(|&c| c <= u);
        if j == 0 {
            return self.grid.x(0);
        }
        if j > last {
            // u == 1: last point of positive mass
            let mut k = last;
            while k > 0 && self.cum[k - 1] >= 1.0 {
                k -= 1;
            }
            return self.grid.x(k);
        }
        let i = j - 1;
        let h = self.grid.h;
        let r = (u - self.cum[i]) / h;
        let (d0, d1) = (self.density[i], self.density[i + 1]);
        let a = 0.5 * (d1 - d0);
        // a t^2 + d0 t - r = 0, t in [0, 1]
        let t = if a.abs() <= 1e-14 * (d0.abs() + d1.abs()) {
            if d0 > 0.0 { r / d0 } else { 0.0 }
        } else {
            let disc = (d0 * d0 + 4.0 * a * r).max(0.0);
            // numerically stable root
            2.0 * r / (d0 + disc.sqrt())
        };
        self.grid.x(i) + h * t.clamp(0.0, 1.0)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Probability of the half-open interval (a, b].
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        (self.cdf(b) - self.cdf(a)).max(0.0)
    }
}
