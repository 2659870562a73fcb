//! Acceptance criteria, one line per criterion on stderr.
//!
//! Runs the named experiments at their default configurations. Expect
//! about fifteen minutes on a single core (the Hellinger sweep dominates).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use eqlab_core::experiments::{run, ExperimentConfig, Outcome};
use eqlab_core::Result;

fn report(line: &str) {
    // bypasses the test harness capture so the lines land in the log
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{line}");
}

type Criterion<'a> = Box<dyn Fn() -> Result<Outcome> + 'a>;

fn run_default(name: &str, out: &Path) -> Result<Outcome> {
    run(&ExperimentConfig::defaults_for(name)?, out)
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

/// Runs `cfg` under two worker counts and compares every artifact byte for byte.
fn rerun_identical(cfg: &ExperimentConfig, root: &Path) -> Result<bool> {
    let mut seen = Vec::new();
    for (i, workers) in [1usize, 3].into_iter().enumerate() {
        let dir = root.join(format!("run{i}"));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
        pool.install(|| run(cfg, &dir))?;
        seen.push(files(&dir.join(&cfg.experiment)));
    }
    Ok(seen[0] == seen[1] && !seen[0].is_empty())
}

fn determinism(out: &Path) -> Result<Outcome> {
    let mut checks = Vec::new();
    let mut small = |name: &str, edit: &dyn Fn(&mut ExperimentConfig)| -> Result<()> {
        let mut cfg = ExperimentConfig::defaults_for(name)?;
        edit(&mut cfg);
        let same = rerun_identical(&cfg, &out.join(name))?;
        checks.push(eqlab_core::experiments::Check::new(name, same, 0.0, 0.0, format!("byte-identical: {same}")));
        Ok(())
    };
    small("likelihood-normalization", &|c| c.reps = 500)?;
    small("berbee", &|c| c.reps = 20_000)?;
    small("coupling-gap", &|c| {
        c.n = 1024;
        c.reps = 12;
        c.pilot_reps = 6;
        c.calibration_reps = 6;
        c.params.correlation_reps = 12;
    })?;
    small("strong-approx", &|c| {
        c.n = 512;
        c.reps = 8;
        c.pilot_reps = 4;
        c.calibration_reps = 4;
    })?;
    Ok(Outcome { experiment: "determinism".into(), seed: 0, checks, files: Vec::new() })
}

#[test]
fn acceptance_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("stationary solver", Box::new(|| run_default("stationary-oracle", out))),
        ("stationary Hellinger bound", Box::new(|| run_default("stationary-hellinger", out))),
        ("Haar suite", Box::new(|| run_default("haar-suite", out))),
        ("likelihood normalization", Box::new(|| run_default("likelihood-normalization", out))),
        ("Gaussian Hellinger validation", Box::new(|| run_default("hellinger-gaussian", out))),
        ("Skorokhod embedding", Box::new(|| run_default("skorokhod", out))),
        ("coupling gap", Box::new(|| run_default("coupling-gap", out))),
        ("strong approximation", Box::new(|| run_default("strong-approx", out))),
        ("equivalence trend", Box::new(|| run_default("hellinger-sweep", out))),
        ("Berbee coupling", Box::new(|| run_default("berbee", out))),
        ("exponential moment bound", Box::new(|| run_default("exp-inequality", out))),
        ("determinism", Box::new(|| determinism(&out.join("determinism")))),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = f();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(o) => {
                for c in o.checks.iter().filter(|c| !c.pass) {
                    report(&format!("    failed check: {} ({})", c.name, c.detail));
                }
                let verdict = if o.passed() { "PASS" } else { "FAIL" };
                report(&format!("criterion {:>2} {verdict}: {name} [{}, {} checks, {secs:.1}s]", i + 1, o.experiment, o.checks.len()));
                if !o.passed() {
                    failed.push(i + 1);
                }
            }
            Err(e) => {
                report(&format!("criterion {:>2} FAIL: {name} [error: {e}, {secs:.1}s]", i + 1));
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
