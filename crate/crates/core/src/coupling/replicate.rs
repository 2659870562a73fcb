//! Coupled replications of the autoregression and a regression experiment,
//! block by block, with horizons frozen from a pilot pass.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embed::{embed_ar_side, embed_regression_side, pilot_expectations, CouplingLedger, Horizons, Tree};
use super::gaps::{z_statistics, GapReport};
use super::skorokhod::ScoreLaw;
use super::wiener::WienerFamily;
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::likelihood::BlockPartition;
use crate::models::NoiseModel;
use crate::rng::{names, Streams};
use crate::simulate::ArTrajectory;
use crate::stationary::{sample_stationary, StationaryDensity};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    Random,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Construction {
    /// Both sides read the same Wiener family.
    Coupled,
    /// The regression side reads an independent family.
    Independent,
}

#[derive(Clone, Debug)]
pub struct CouplingSetup {
    pub f0: GridFunction,
    pub noise_p: NoiseModel,
    pub noise_q: NoiseModel,
    pub law_p: ScoreLaw,
    pub law_q: ScoreLaw,
    pub sd0: StationaryDensity,
    pub tree: Tree,
    pub dt: f64,
    pub levels: u32,
    pub c_h: f64,
}

pub struct BlockRun {
    pub l: usize,
    pub ledger_x: CouplingLedger,
    pub ledger_y: CouplingLedger,
    pub wf_x: WienerFamily,
    pub wf_y: Option<WienerFamily>,
}

impl BlockRun {
    pub fn z_statistics(&mut self, lambda: f64, c_lambda: f64) -> Result<(GapReport, Vec<f64>, Vec<f64>)> {
        z_statistics(&self.ledger_x, &self.ledger_y, &mut self.wf_x, self.wf_y.as_mut(), lambda, c_lambda)
    }
}

pub struct Replication {
    pub x: ArTrajectory,
    /// Design points in observation order.
    pub design: Vec<f64>,
    pub y: Vec<f64>,
    pub eta: Vec<f64>,
    pub blocks: Vec<BlockRun>,
}

impl CouplingSetup {
    /// `dt = dt_factor * Var(l_p'(eps))`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        f0: GridFunction,
        noise_p: NoiseModel,
        noise_q: NoiseModel,
        sd0: StationaryDensity,
        tree: Tree,
        dt_factor: f64,
        levels: u32,
        c_h: f64,
    ) -> Result<Self> {
        let law_p = ScoreLaw::for_noise(&noise_p)?;
        let law_q = ScoreLaw::for_noise(&noise_q)?;
        let dt = dt_factor * law_p.variance();
        if !(dt > 0.0) || !(c_h >= 0.0) {
            return Err(Error::Configuration(format!("dt = {dt} and c_h = {c_h} must be positive")));
        }
        Ok(CouplingSetup { f0, noise_p, noise_q, law_p, law_q, sd0, tree, dt, levels, c_h })
    }

    fn family(&self, key: u64) -> Result<WienerFamily> {
        WienerFamily::new(key, self.dt, self.levels)
    }

    /// Horizons for blocks of size `m` from `reps` unconstrained AR-side pilot runs.
    pub fn pilot_horizons(&self, m: usize, reps: usize, streams: &Streams) -> Result<Horizons> {
        if reps == 0 {
            return Err(Error::Configuration("pilot needs at least one replication".into()));
        }
        let pilot = streams.derive(names::PILOT, &[m as u64]);
        let free = Horizons::unbounded(self.tree);
        let ledgers = (0..reps)
            .into_par_iter()
            .map(|r| {
                let x0 = sample_stationary(&self.sd0, 1, &mut pilot.rng(names::AR_INITIAL, &[r as u64]))[0];
                let mut wf = self.family(pilot.key(names::WIENER, &[r as u64]))?;
                let mut rng = pilot.rng(names::EMBED_AR, &[r as u64]);
                let (_, mut ledger) = embed_ar_side(&self.f0, &self.noise_p, &self.law_p, x0, m, &mut wf, &free, &mut rng)
                    .map_err(|e| e.in_replication("coupling", r))?;
                for s in &mut ledger.steps {
                    s.stretches.clear();
                    s.stretches.shrink_to_fit();
                }
                Ok(ledger)
            })
            .collect::<Result<Vec<_>>>()?;
        Horizons::from_expected(self.tree, pilot_expectations(&ledgers)?, m, self.c_h)
    }

    /// Pilot horizons for every distinct block size of `partition`.
    pub fn horizons_for(&self, partition: &BlockPartition, reps: usize, streams: &Streams) -> Result<BTreeMap<usize, Horizons>> {
        let mut out = BTreeMap::new();
        for m in partition.sizes() {
            if let std::collections::btree_map::Entry::Vacant(e) = out.entry(m) {
                e.insert(self.pilot_horizons(m, reps, streams)?);
            }
        }
        Ok(out)
    }

    /// One coupled replication under `f0`. `fixed` supplies the (block
    /// rearranged) design points when `design` is `Fixed`.
    #[allow(clippy::too_many_arguments)]
    pub fn replicate(
        &self,
        partition: &BlockPartition,
        horizons: &BTreeMap<usize, Horizons>,
        design: Design,
        fixed: Option<&[f64]>,
        construction: Construction,
        streams: &Streams,
        rep: usize,
    ) -> Result<Replication> {
        let r = rep as u64;
        let n = partition.n;
        let x0 = sample_stationary(&self.sd0, 1, &mut streams.rng(names::AR_INITIAL, &[r]))[0];
        let locators = match (design, fixed) {
            (Design::Random, _) => sample_stationary(&self.sd0, n, &mut streams.rng(names::DESIGN, &[r])),
            (Design::Fixed, Some(t)) if t.len() == n => t.to_vec(),
            (Design::Fixed, _) => return Err(Error::Configuration("fixed design needs n design points".into())),
        };
        let embed_y = match design {
            Design::Random => names::EMBED_REGRESSION,
            Design::Fixed => names::EMBED_FIXED,
        };
        let mut eps = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut eta = Vec::with_capacity(n);
        let mut blocks = Vec::with_capacity(partition.k);
        let mut x_start = x0;
        for l in 1..=partition.k {
            let m = partition.size(l);
            let h = horizons
                .get(&m)
                .ok_or_else(|| Error::Configuration(format!("no horizons for block size {m}")))?;
            let path = [r, l as u64];
            let mut wf_x = self.family(streams.key(names::WIENER, &path))?;
            let (traj, ledger_x) = embed_ar_side(
                &self.f0,
                &self.noise_p,
                &self.law_p,
                x_start,
                m,
                &mut wf_x,
                h,
                &mut streams.rng(names::EMBED_AR, &path),
            )?;
            x_start = *traj.x.last().expect("nonempty");
            eps.extend_from_slice(&traj.eps[1..]);
            let loc = &locators[partition.start(l) - 1..partition.bounds[l]];
            let mut rng_y = streams.rng(embed_y, &path);
            let (by, beta, ledger_y, wf_y) = match construction {
                Construction::Coupled => {
                    let (a, b, c) = embed_regression_side(&self.f0, &self.noise_q, &self.law_q, loc, &mut wf_x, h, &mut rng_y)?;
                    (a, b, c, None)
                }
                Construction::Independent => {
                    let mut wf = self.family(streams.key(names::WIENER_INDEPENDENT, &path))?;
                    let (a, b, c) = embed_regression_side(&self.f0, &self.noise_q, &self.law_q, loc, &mut wf, h, &mut rng_y)?;
                    (a, b, c, Some(wf))
                }
            };
            y.extend(by);
            eta.extend(beta);
            blocks.push(BlockRun { l, ledger_x, ledger_y, wf_x, wf_y });
        }
        Ok(Replication { x: ArTrajectory::from_innovations(&self.f0, x0, &eps), design: locators, y, eta, blocks })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::stationary::solve_stationary;

    fn setup(j_star: u32) -> CouplingSetup {
        let grid = Grid::default();
        let noise = NoiseModel::gaussian(1.0, grid).unwrap();
        let f0 = GridFunction::from_fn(grid, |x| 0.4 * x.sin());
        let sd0 = solve_stationary(&f0, &noise, 1e-12, 500).unwrap();
        let tree = Tree::new(-1.0, 1.0, j_star).unwrap();
        CouplingSetup::new(f0, noise.clone(), noise, sd0, tree, 1e-3, 8, 0.25).unwrap()
    }

    #[test]
    fn pilot_matches_wald_oracle() {
        let s = setup(2);
        let m = 300;
        let h = s.pilot_horizons(m, 40, &Streams::new(1)).unwrap();
        // E[tau | X] = Var(score) = 1, so E_{j,k} ~ m P(I_{j,k})
        for id in 1..s.tree.len() {
            let (lo, hi) = crate::haar::DyadicIndex::from_id(id).bounds(-1.0, 1.0);
            let want = m as f64 * s.sd0.cdf().mass(lo, hi);
            assert!((h.expected[id] - want).abs() < 0.1 * want + 3.0, "{id}: {} vs {want}", h.expected[id]);
        }
        assert!(h.telescoping_error() < 1e-9);
    }

    #[test]
    fn replication_is_reproducible_and_consistent() {
        let s = setup(3);
        let part = BlockPartition::new(200);
        let streams = Streams::new(5);
        let h = s.horizons_for(&part, 10, &streams).unwrap();
        let mut a = s.replicate(&part, &h, Design::Random, None, Construction::Coupled, &streams, 3).unwrap();
        let b = s.replicate(&part, &h, Design::Random, None, Construction::Coupled, &streams, 3).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.x.reconstruction_error(&s.f0), 0.0);
        for blk in &mut a.blocks {
            blk.ledger_x.audit().unwrap();
            blk.ledger_y.audit().unwrap();
            blk.z_statistics(2.0, 1.0).unwrap();
        }
        let ind = s.replicate(&part, &h, Design::Random, None, Construction::Independent, &streams, 3).unwrap();
        assert_eq!(ind.x, a.x);
        assert_ne!(ind.eta, a.eta);
        assert!(s.replicate(&part, &h, Design::Fixed, None, Construction::Coupled, &streams, 3).is_err());
    }
}
