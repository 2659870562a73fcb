//! Named experiments: each reads an [`ExperimentConfig`], writes CSV/JSON
//! artifacts under `out_dir/<name>/` and reports pass/fail checks.

mod basic;
pub mod config;
mod coupled;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::ExperimentConfig;

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::likelihood::BlockPartition;
use crate::models::{rates, Bump, FunctionClassSpec, NoiseModel};
use crate::stationary::{solve_stationary, StationaryDensity};
use config::PerturbationDescriptor;

type Runner = fn(&ExperimentConfig, &Artifacts) -> Result<Vec<Check>>;

/// Registry in listing order.
const EXPERIMENTS: &[(&str, &str, Runner)] = &[
    ("stationary-oracle", "stationary solver against shifted-noise oracles and a long chain", basic::stationary_oracle),
    ("stationary-hellinger", "stationary Hellinger term against its shift bound over random neighborhoods", basic::stationary_hellinger),
    ("haar-suite", "Haar orthonormality, coefficient bounds and residual bound on random bumps", basic::haar_suite),
    ("likelihood-normalization", "E[L] = 1 for the three experiments and the Hellinger/TV inequality", basic::likelihood_normalization),
    ("hellinger-gaussian", "Monte Carlo Hellinger distance against the Gaussian shift formula", basic::hellinger_gaussian),
    ("skorokhod", "embedded laws, Wald identity, two-point exits and embedded noise marginals", coupled::skorokhod),
    ("coupling-gap", "per-cell gaps |Z1 - Z2| against the calibrated threshold", coupled::coupling_gap),
    ("strong-approx", "block score-sum gaps against c(lambda) r_n, coupled versus independent", coupled::strong_approx),
    ("hellinger-sweep", "coupled Hellinger distance across n for random and fixed designs", coupled::hellinger_sweep),
    ("berbee", "maximal coupling on the 2x2 joint: mismatch, independence and law", basic::berbee),
    ("exp-inequality", "exponential moment bound for bounded centered variables", basic::exp_inequality),
    ("lemma-suite", "blockwise Hellinger bound plus Haar, stationary, coupling and moment lemmas", coupled::lemma_suite),
    ("mixing-tail", "tail frequency of centered stopping-time cell sums", coupled::mixing_tail),
    ("phi-mixing", "phi-mixing coefficients of the chain and their geometric decay", basic::phi_mixing),
];

/// `(name, description)` in stable order.
pub fn list_experiments() -> Vec<(&'static str, &'static str)> {
    EXPERIMENTS.iter().map(|(n, d, _)| (*n, *d)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub bound: f64,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, value: f64, bound: f64, detail: String) -> Self {
        Check { name: name.to_string(), pass, value, bound, detail }
    }

    /// `value <= bound`.
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Check::new(name, value <= bound, value, bound, format!("{value:.6e} <= {bound:.6e}"))
    }

    /// `value >= bound`.
    pub fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Check::new(name, value >= bound, value, bound, format!("{value:.6e} >= {bound:.6e}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub experiment: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub files: Vec<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Output directory of one experiment.
pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Artifacts { dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv(&self, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
        Ok(csv::Writer::from_writer(BufWriter::new(File::create(self.path(name))?)))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.path(name))?);
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// Validates `cfg` and runs it, writing into `out_dir/<experiment>/`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let (_, _, runner) = EXPERIMENTS
        .iter()
        .find(|(n, _, _)| *n == cfg.experiment)
        .ok_or_else(|| Error::Configuration(format!("unknown experiment '{}'", cfg.experiment)))?;
    let art = Artifacts::new(out_dir.join(&cfg.experiment))?;
    std::fs::write(art.path("config.toml"), cfg.to_toml()?)?;
    let checks = runner(cfg, &art)?;
    let mut outcome = Outcome { experiment: cfg.experiment.clone(), seed: cfg.seed, checks, files: Vec::new() };
    art.json("summary.json", &outcome)?;
    let mut files: Vec<String> = std::fs::read_dir(&art.dir)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    files.sort();
    outcome.files = files;
    Ok(outcome)
}

/// Runs `work(r)` for `r in 0..reps` in parallel chunks and hands each
/// result to `sink` in index order as soon as its chunk completes.
pub(crate) fn replicate_in_order<T, F, S>(reps: usize, module: &'static str, work: F, mut sink: S) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
    S: FnMut(usize, &T) -> Result<()>,
{
    let chunk = 4 * rayon::current_num_threads().max(1);
    let mut out = Vec::with_capacity(reps);
    let mut start = 0;
    while start < reps {
        let end = (start + chunk).min(reps);
        let part: Vec<T> = (start..end)
            .into_par_iter()
            .map(|r| work(r).map_err(|e| e.in_replication(module, r)))
            .collect::<Result<_>>()?;
        for (i, t) in part.iter().enumerate() {
            sink(start + i, t)?;
        }
        out.extend(part);
        start = end;
    }
    Ok(out)
}

/// Class, noise laws and the base model of a config.
pub(crate) struct Base {
    pub spec: FunctionClassSpec,
    pub noise_p: NoiseModel,
    pub noise_q: NoiseModel,
    pub f0: GridFunction,
    pub sd0: StationaryDensity,
}

/// `f = f0 + g` at sample size `n`.
pub(crate) struct Alternative {
    pub gamma: f64,
    pub gamma_prime: f64,
    pub g: GridFunction,
    pub f: GridFunction,
    pub sdf: StationaryDensity,
    pub partition: BlockPartition,
}

impl Base {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let spec = cfg.class.spec()?;
        let noise_p = NoiseModel::from_family(cfg.noise_p, spec.grid)?;
        let noise_q = NoiseModel::from_family(cfg.noise_q, spec.grid)?;
        let f0 = cfg.f0.on_grid(spec.grid);
        let sd0 = solve_stationary(&f0, &noise_p, cfg.solver.tol, cfg.solver.max_iter)?;
        Ok(Base { spec, noise_p, noise_q, f0, sd0 })
    }

    pub fn alternative(&self, cfg: &ExperimentConfig, n: usize) -> Result<Alternative> {
        let (gamma, gamma_prime) = rates(&cfg.rates.at(n), &self.spec)?;
        let g = match cfg.g {
            PerturbationDescriptor::Zero => GridFunction::zeros(self.spec.grid),
            PerturbationDescriptor::Bump { fraction } => {
                Bump::budget(self.spec.a, self.spec.b, gamma, gamma_prime, fraction).on_grid(self.spec.grid)
            }
        };
        let f = self.f0.add(&g)?;
        let sdf = solve_stationary(&f, &self.noise_p, cfg.solver.tol, cfg.solver.max_iter)?;
        Ok(Alternative { gamma, gamma_prime, g, f, sdf, partition: BlockPartition::new(n) })
    }
}
