//! Experiment configuration: one TOML (or JSON) document per run, with every
//! default embedded per experiment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::haar::j_star_rule;
use crate::models::{FunctionClassSpec, NoiseFamily, NoiseModel, RateConstants};

/// Base function `f0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FunctionDescriptor {
    Zero,
    Constant { value: f64 },
    /// `amplitude * sin(frequency x + phase)`.
    Sine { amplitude: f64, frequency: f64, phase: f64 },
}

impl FunctionDescriptor {
    pub fn on_grid(&self, grid: Grid) -> GridFunction {
        match *self {
            FunctionDescriptor::Zero => GridFunction::zeros(grid),
            FunctionDescriptor::Constant { value } => GridFunction::constant(grid, value),
            FunctionDescriptor::Sine { amplitude, frequency, phase } => {
                GridFunction::from_fn(grid, |x| amplitude * (frequency * x + phase).sin())
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            FunctionDescriptor::Zero => 0.0,
            FunctionDescriptor::Constant { value } => value.abs(),
            FunctionDescriptor::Sine { amplitude, .. } => amplitude.abs(),
        }
    }
}

/// Local perturbation `g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PerturbationDescriptor {
    Zero,
    /// Centered bump on `[A, B]` using `fraction` of the `(gamma_n, gamma'_n)` budget.
    Bump { fraction: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum JStarRule {
    Fixed { level: u32 },
    /// Smallest level meeting the `m^{-lambda}` residual target, capped.
    Rate { cap: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub m: f64,
    pub beta: f64,
    pub l: f64,
    pub a: f64,
    pub b: f64,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_step: f64,
}

impl Default for ClassConfig {
    fn default() -> Self {
        ClassConfig { m: 0.5, beta: 3.0, l: 2.0, a: -1.0, b: 1.0, grid_min: -10.0, grid_max: 10.0, grid_step: 1.0 / 256.0 }
    }
}

impl ClassConfig {
    pub fn spec(&self) -> Result<FunctionClassSpec> {
        let grid = Grid::new(self.grid_min, self.grid_max, self.grid_step).map_err(as_config)?;
        let spec = FunctionClassSpec { m: self.m, beta: self.beta, l: self.l, a: self.a, b: self.b, grid };
        spec.validate().map_err(as_config)?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    pub c: f64,
    pub c_prime: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig { c: 1.0, c_prime: 1.0 }
    }
}

impl RateConfig {
    pub fn at(&self, n: usize) -> RateConstants {
        RateConstants { c: self.c, c_prime: self.c_prime, n }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingConfig {
    pub lambda: f64,
    /// Cell threshold constant; calibrated on a pilot when absent.
    pub c_lambda: Option<f64>,
    /// Block threshold constant `c(lambda)`; calibrated when absent.
    pub c_strong: Option<f64>,
    /// Quantile used by both calibrations.
    pub calibration_quantile: f64,
    /// Horizon offset constant.
    pub c_h: f64,
    /// Coarse Wiener step as a multiple of the score variance.
    pub dt_factor: f64,
    /// Bridge refinement levels per coarse step.
    pub levels: u32,
    pub j_star: JStarRule,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        CouplingConfig {
            lambda: 2.0,
            c_lambda: None,
            c_strong: None,
            calibration_quantile: 0.995,
            c_h: 0.5,
            dt_factor: 1e-3,
            levels: 8,
            j_star: JStarRule::Fixed { level: 6 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: 1e-12, max_iter: 2000 }
    }
}

/// Knobs read by individual experiments; unused ones are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Constant of the shifted-noise oracle.
    pub theta: f64,
    pub chain_length: usize,
    /// Finest Haar level checked.
    pub haar_level: u32,
    pub shifts: Vec<f64>,
    pub two_point_a: f64,
    /// Sample size of the embedding-side marginal checks.
    pub embed_m: usize,
    pub berbee_diagonal: f64,
    pub exp_lambdas: Vec<f64>,
    pub conditioning_draws: usize,
    pub inner_reps: usize,
    pub c_event: f64,
    pub c_tail: f64,
    pub tail_level: u32,
    pub mixing_cells: usize,
    pub max_lag: usize,
    pub decay_floor: f64,
    /// Replications used by the coupled/independent correlation check.
    pub correlation_reps: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            theta: 0.3,
            chain_length: 1_000_000,
            haar_level: 8,
            shifts: vec![0.1, 0.5, 1.0],
            two_point_a: 1.0,
            embed_m: 10_000,
            berbee_diagonal: 0.4,
            exp_lambdas: vec![-1.0, -0.5, 0.5, 1.0],
            conditioning_draws: 30,
            inner_reps: 40,
            c_event: 1.0,
            c_tail: 2.0,
            tail_level: 2,
            mixing_cells: 10,
            max_lag: 8,
            decay_floor: 1e-11,
            correlation_reps: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub reps: usize,
    pub pilot_reps: usize,
    pub calibration_reps: usize,
    pub n: usize,
    pub n_sweep: Vec<usize>,
    pub f0: FunctionDescriptor,
    pub g: PerturbationDescriptor,
    pub noise_p: NoiseFamily,
    pub noise_q: NoiseFamily,
    #[serde(default)]
    pub class: ClassConfig,
    #[serde(default)]
    pub rates: RateConfig,
    #[serde(default)]
    pub coupling: CouplingConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub params: Params,
}

pub const DEFAULT_SEED: u64 = 20_240_601;

fn as_config(e: Error) -> Error {
    match e {
        Error::Configuration(_) => e,
        other => Error::Configuration(other.to_string()),
    }
}

impl ExperimentConfig {
    fn base(name: &str) -> Self {
        ExperimentConfig {
            experiment: name.to_string(),
            seed: DEFAULT_SEED,
            reps: 200,
            pilot_reps: 50,
            calibration_reps: 50,
            n: 4096,
            n_sweep: vec![256, 1024, 4096],
            f0: FunctionDescriptor::Sine { amplitude: 0.4, frequency: 1.0, phase: 0.0 },
            g: PerturbationDescriptor::Bump { fraction: 1.0 },
            noise_p: NoiseFamily::Gaussian { sigma: 1.0 },
            noise_q: NoiseFamily::Gaussian { sigma: 1.0 },
            class: ClassConfig::default(),
            rates: RateConfig::default(),
            coupling: CouplingConfig::default(),
            solver: SolverConfig::default(),
            params: Params::default(),
        }
    }

    /// Documented defaults for a named experiment.
    pub fn defaults_for(name: &str) -> Result<Self> {
        let mut c = Self::base(name);
        match name {
            "stationary-oracle" => {
                c.f0 = FunctionDescriptor::Zero;
                c.g = PerturbationDescriptor::Zero;
                c.reps = 1;
            }
            "stationary-hellinger" => {
                c.reps = 50;
                c.n = 1000;
            }
            "haar-suite" => c.reps = 200,
            "likelihood-normalization" => {
                c.reps = 10_000;
                c.n = 100;
                c.pilot_reps = 20;
            }
            "hellinger-gaussian" => c.reps = 100_000,
            "skorokhod" => {
                c.reps = 10_000;
                c.f0 = FunctionDescriptor::Zero;
                c.pilot_reps = 20;
            }
            "coupling-gap" | "strong-approx" => {}
            "hellinger-sweep" => c.reps = 2000,
            "berbee" => c.reps = 100_000,
            "exp-inequality" => c.reps = 100_000,
            "lemma-suite" => {
                c.reps = 400;
                c.n = 256;
                c.pilot_reps = 30;
            }
            "mixing-tail" => {
                c.f0 = FunctionDescriptor::Zero;
                c.g = PerturbationDescriptor::Zero;
            }
            "phi-mixing" => {
                c.f0 = FunctionDescriptor::Sine { amplitude: 0.5, frequency: 1.0, phase: 0.0 };
                c.g = PerturbationDescriptor::Zero;
                c.params.chain_length = 400_000;
            }
            other => return Err(Error::Configuration(format!("unknown experiment '{other}'"))),
        }
        Ok(c)
    }

    /// Parses TOML, or JSON when the text starts with `{`. Missing top-level
    /// keys fall back to the defaults of the named experiment.
    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Configuration(format!("json: {e}")))?
        } else {
            let t: toml::Table = toml::from_str(text).map_err(|e| Error::Configuration(format!("toml: {e}")))?;
            serde_json::to_value(t).map_err(|e| Error::Configuration(e.to_string()))?
        };
        let name = value
            .get("experiment")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Configuration("config must name an experiment".into()))?;
        let mut merged = serde_json::to_value(Self::defaults_for(name)?)?;
        merge(&mut merged, value);
        let cfg: Self = serde_json::from_value(merged).map_err(|e| Error::Configuration(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Configuration(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Configuration(msg));
        Self::defaults_for(&self.experiment)?;
        let spec = self.class.spec()?;
        if self.reps == 0 || self.pilot_reps == 0 || self.calibration_reps == 0 {
            return bad("replication counts must be positive".into());
        }
        if self.n < 2 || self.n_sweep.iter().any(|&n| n < 2) {
            return bad("sample sizes must be at least 2".into());
        }
        if self.f0.sup() > spec.m {
            return bad(format!("sup|f0| = {} exceeds M = {}", self.f0.sup(), spec.m));
        }
        if let PerturbationDescriptor::Bump { fraction } = self.g {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return bad(format!("budget fraction {fraction} outside (0, 1]"));
            }
        }
        for fam in [self.noise_p, self.noise_q] {
            NoiseModel::from_family(fam, spec.grid).map_err(as_config)?;
        }
        let c = &self.coupling;
        if !(c.lambda > 0.0 && c.c_h >= 0.0 && c.dt_factor > 0.0 && c.levels <= 20) {
            return bad("coupling needs lambda > 0, c_h >= 0, dt_factor > 0, levels <= 20".into());
        }
        if !(c.calibration_quantile > 0.0 && c.calibration_quantile < 1.0) {
            return bad(format!("calibration quantile {} outside (0, 1)", c.calibration_quantile));
        }
        for v in [c.c_lambda, c.c_strong].into_iter().flatten() {
            if !(v > 0.0) {
                return bad(format!("threshold constant {v} must be positive"));
            }
        }
        if matches!(c.j_star, JStarRule::Fixed { level } | JStarRule::Rate { cap: level } if level > 16) {
            return bad("j* above 16 is not supported".into());
        }
        if !(self.solver.tol > 0.0 && self.solver.max_iter > 0) {
            return bad("solver needs tol > 0 and max_iter > 0".into());
        }
        let p = &self.params;
        if p.exp_lambdas.iter().any(|l| !(l.abs() <= 1.0)) {
            return bad("exp_lambdas must lie in [-1, 1]".into());
        }
        if !(p.berbee_diagonal >= 0.0 && p.berbee_diagonal <= 0.5) {
            return bad("berbee_diagonal must lie in [0, 0.5]".into());
        }
        if p.mixing_cells < 2 || p.max_lag == 0 || p.inner_reps < 2 || p.conditioning_draws == 0 {
            return bad("need mixing_cells >= 2, max_lag >= 1, inner_reps >= 2, conditioning_draws >= 1".into());
        }
        Ok(())
    }

    /// Tree depth for blocks of size `m`.
    pub fn j_star(&self, m: usize, gamma_prime: f64, fisher: f64) -> u32 {
        match self.coupling.j_star {
            JStarRule::Fixed { level } => level,
            JStarRule::Rate { cap } => {
                j_star_rule(m, self.coupling.lambda, gamma_prime, fisher, self.class.a, self.class.b, cap)
            }
        }
    }
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    // tagged enums are replaced whole
                    Some(slot) if slot.is_object() && !is_tagged(&v) => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn is_tagged(v: &serde_json::Value) -> bool {
    ["kind", "family", "rule"].iter().any(|t| v.get(t).is_some())
}
