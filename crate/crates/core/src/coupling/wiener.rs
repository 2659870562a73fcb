//! Lazily simulated Brownian paths.
//!
//! A path is stored on a coarse grid of step `dt`; coarse increments come in
//! fixed-size chunks, each drawn from its own keyed stream, so the path is the
//! same however far and in whatever order it is extended. Inside a coarse cell
//! the path is refined by Brownian-bridge bisection down to `2^levels` fine
//! cells, with each bridge midpoint a hash-derived normal; the canonical path is
//! the linear interpolant of the finest nodes.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{mix, rng_from_key, splitmix64};

pub const DEFAULT_LEVELS: u32 = 8;
const CHUNK: usize = 4096;
/// Bridges whose crossing probability is below this are not refined.
const SKIP_PROB: f64 = 1e-10;
const CHUNK_TAG: u64 = 0x636f_6172_7365;
const BRIDGE_TAG: u64 = 0x6272_6964_6765;

/// Outcome of scanning a path for an exit from a band.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scan {
    /// Left the band at `time`; through the upper barrier if `upper`.
    Exit { time: f64, upper: bool },
    /// Reached the end of the window inside the band.
    Horizon { increment: f64 },
}

#[derive(Clone, Debug)]
pub struct BrownianPath {
    key: u64,
    dt: f64,
    levels: u32,
    /// `coarse[n] = W(n dt)`
    coarse: Vec<f64>,
}

fn hash_normal(key: u64, n: usize, p: u64) -> f64 {
    let h = mix(mix(key ^ BRIDGE_TAG, n as u64), p);
    let u1 = ((h >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    let u2 = ((splitmix64(h) >> 11) as f64) * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[inline]
fn crossing_negligible(da: f64, db: f64, duration: f64) -> bool {
    // P(bridge crosses) = exp(-2 da db / duration)
    da > 0.0 && db > 0.0 && 2.0 * da * db >= duration * (1.0 / SKIP_PROB).ln()
}

impl BrownianPath {
    pub fn new(key: u64, dt: f64, levels: u32) -> Result<Self> {
        if !(dt > 0.0) || levels > 30 {
            return Err(Error::InvalidArgument(format!("bad path resolution dt = {dt}, levels = {levels}")));
        }
        Ok(BrownianPath { key, dt, levels, coarse: vec![0.0] })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Length of the coarse grid generated so far.
    pub fn generated(&self) -> usize {
        self.coarse.len()
    }

    fn ensure(&mut self, n: usize) {
        let sd = self.dt.sqrt();
        while self.coarse.len() <= n {
            let chunk = (self.coarse.len() - 1) / CHUNK;
            let mut rng = rng_from_key(mix(self.key ^ CHUNK_TAG, chunk as u64));
            let mut w = *self.coarse.last().expect("nonempty");
            self.coarse.reserve(CHUNK);
            for _ in 0..CHUNK {
                let z: f64 = rng.sample(StandardNormal);
                w += sd * z;
                self.coarse.push(w);
            }
        }
    }

    fn fine(&self) -> u64 {
        1u64 << self.levels
    }

    /// Bridge value at fine node `p` of coarse cell `n`, given the values at
    /// `p - s` and `p + s`, `s` the largest power of two dividing `p`.
    #[inline]
    fn node(&self, n: usize, p: u64, left: f64, right: f64) -> f64 {
        let s = p & p.wrapping_neg();
        let var = s as f64 * self.dt / self.fine() as f64 / 2.0;
        0.5 * (left + right) + var.sqrt() * hash_normal(self.key, n, p)
    }

    /// Canonical `W(t)`.
    pub fn value_at(&mut self, t: f64) -> f64 {
        let u = t / self.dt;
        let n = u.floor() as usize;
        self.ensure(n + 1);
        let fine = self.fine();
        let s = (u - n as f64) * fine as f64;
        let (mut lo, mut hi) = (0u64, fine);
        let (mut wl, mut wh) = (self.coarse[n], self.coarse[n + 1]);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            let wm = self.node(n, mid, wl, wh);
            if s < mid as f64 {
                hi = mid;
                wh = wm;
            } else {
                lo = mid;
                wl = wm;
            }
        }
        wl + (wh - wl) * (s - lo as f64)
    }

    #[allow(clippy::too_many_arguments)]
    fn search(&self, n: usize, lo: u64, hi: u64, wl: f64, wh: f64, ta: f64, tb: f64, band: (f64, f64)) -> Option<(f64, bool)> {
        if hi as f64 <= ta || lo as f64 >= tb {
            return None;
        }
        let (bl, bh) = band;
        if hi - lo == 1 {
            let s0 = ta.max(lo as f64);
            let s1 = tb.min(hi as f64);
            let slope = wh - wl;
            let w1 = wl + slope * (s1 - lo as f64);
            if w1 >= bh {
                return Some((lo as f64 + (bh - wl) / slope, true).clamp_time(s0, s1));
            }
            if w1 <= bl {
                return Some((lo as f64 + (bl - wl) / slope, false).clamp_time(s0, s1));
            }
            return None;
        }
        let duration = (hi - lo) as f64 * self.dt / self.fine() as f64;
        if crossing_negligible(bh - wl, bh - wh, duration) && crossing_negligible(wl - bl, wh - bl, duration) {
            return None;
        }
        let mid = (lo + hi) / 2;
        let wm = self.node(n, mid, wl, wh);
        self.search(n, lo, mid, wl, wm, ta, tb, band)
            .or_else(|| self.search(n, mid, hi, wm, wh, ta, tb, band))
    }

    /// First exit after `t0` of `W(t) - W(t0)` from `(lo, hi)`, looking no
    /// further than `t_end` (may be infinite). Requires `lo < 0 < hi`.
    pub fn first_exit(&mut self, t0: f64, t_end: f64, lo: f64, hi: f64) -> Result<Scan> {
        if !(lo < 0.0 && hi > 0.0) || !(t_end >= t0) || !(t0 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "exit scan needs lo < 0 < hi and 0 <= t0 <= t_end (got ({lo}, {hi}), {t0}, {t_end})"
            )));
        }
        if t_end == t0 {
            return Ok(Scan::Horizon { increment: 0.0 });
        }
        let w0 = self.value_at(t0);
        let (bl, bh) = (w0 + lo, w0 + hi);
        let fine = self.fine() as f64;
        let u0 = t0 / self.dt;
        let u_end = t_end / self.dt;
        let mut n = u0.floor() as usize;
        let skip_window = self.dt * (1.0 / SKIP_PROB).ln() / 2.0;
        loop {
            if n as f64 >= u_end {
                let w_end = self.value_at(t_end);
                return Ok(Scan::Horizon { increment: w_end - w0 });
            }
            if n + 1 >= self.coarse.len() {
                self.ensure(n + 1);
            }
            let (wl, wh) = (self.coarse[n], self.coarse[n + 1]);
            let first = n as f64 == u0.floor();
            let last = (n + 1) as f64 > u_end;
            let clear = (bh - wl) * (bh - wh) >= skip_window
                && (wl - bl) * (wh - bl) >= skip_window
                && wl < bh
                && wh < bh
                && wl > bl
                && wh > bl;
            if !clear || first || last {
                let ta = if first { (u0 - n as f64) * fine } else { 0.0 };
                let tb = if last { (u_end - n as f64) * fine } else { fine };
                if let Some((s, upper)) = self.search(n, 0, self.fine(), wl, wh, ta, tb, (bl, bh)) {
                    let time = (n as f64 + s / fine) * self.dt;
                    return Ok(Scan::Exit { time: time.max(t0), upper });
                }
            }
            n += 1;
        }
    }
}

trait ClampTime {
    fn clamp_time(self, s0: f64, s1: f64) -> Self;
}

impl ClampTime for (f64, bool) {
    fn clamp_time(self, s0: f64, s1: f64) -> Self {
        (self.0.clamp(s0, s1), self.1)
    }
}

/// Independent paths indexed by a node id (`0` for the exterior process,
/// heap numbering for the dyadic tree).
#[derive(Clone, Debug)]
pub struct WienerFamily {
    key: u64,
    dt: f64,
    levels: u32,
    paths: Vec<Option<BrownianPath>>,
}

impl WienerFamily {
    pub fn new(key: u64, dt: f64, levels: u32) -> Result<Self> {
        BrownianPath::new(key, dt, levels)?;
        Ok(WienerFamily { key, dt, levels, paths: Vec::new() })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn path(&mut self, id: usize) -> &mut BrownianPath {
        if self.paths.len() <= id {
            self.paths.resize(id + 1, None);
        }
        let (key, dt, levels) = (mix(self.key, id as u64), self.dt, self.levels);
        self.paths[id].get_or_insert_with(|| BrownianPath::new(key, dt, levels).expect("validated"))
    }

    /// Coarse nodes generated across all paths.
    pub fn generated(&self) -> usize {
        self.paths.iter().flatten().map(BrownianPath::generated).sum()
    }
}
