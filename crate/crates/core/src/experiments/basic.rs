use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::{replicate_in_order, Artifacts, Base, Check, ExperimentConfig};
use crate::bounds::{exp_inequality_check, BoundedLaw, BoundedVariableSpec};
use crate::coupling::berbee::{berbee_couple, two_by_two, DiscreteJoint};
use crate::coupling::mixing::{geometric_decay_fit, phi_mixing_chain, phi_mixing_simulated, quantile_cells};
use crate::error::Result;
use crate::grid::GridFunction;
use crate::haar::{coefficient_bounds_check, gram_deviation, haar_expand, max_residual};
use crate::likelihood::{estimate_from_pairs, hellinger_mc, loglr_ar, loglr_regression, HellingerEstimate};
use crate::models::{random_neighborhood, Bump, FunctionClassSpec, NoiseFamily, NoiseModel};
use crate::rng::Streams;
use crate::simulate::{design_points, simulate_ar, simulate_fixed_design, simulate_random_design};
use crate::stationary::{dobrushin_rho, lemma61_check, solve_stationary};
use crate::stats::{chi_square_independence, ks_distance, ks_two_sample, mean_se, std_normal_cdf};

pub(crate) fn stationary_oracle(cfg: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let base = Base::new(cfg)?;
    let grid = base.spec.grid;
    let noise = &base.noise_p;
    let (tol, iters) = (cfg.solver.tol, cfg.solver.max_iter);
    base.sd0.psi.save_csv(&art.path("psi_f0.csv"))?;

    let shifted = |c: f64| GridFunction::from_fn(grid, |x| noise.pdf(x - c));
    let mut checks = Vec::new();
    let mut reports = vec![("f0", base.sd0.report())];
    if let Some(c) = match cfg.f0 {
        super::config::FunctionDescriptor::Zero => Some(0.0),
        super::config::FunctionDescriptor::Constant { value } => Some(value),
        _ => None,
    } {
        checks.push(Check::at_most("configured f0 gives the shifted noise density (L1)", base.sd0.psi.l1_distance(&shifted(c))?, 1e-6));
    }

    let zero = solve_stationary(&GridFunction::zeros(grid), noise, tol, iters)?;
    checks.push(Check::at_most("f = 0 gives the noise density (L1)", zero.psi.l1_distance(&noise.density)?, 1e-6));
    let theta = cfg.params.theta;
    let constant = solve_stationary(&GridFunction::constant(grid, theta), noise, tol, iters)?;
    checks.push(Check::at_most("f = theta gives the shifted noise density (L1)", constant.psi.l1_distance(&shifted(theta))?, 1e-6));

    let sine = GridFunction::from_fn(grid, |x| 0.5 * x.sin());
    let sd = solve_stationary(&sine, noise, tol, iters)?;
    sd.psi.save_csv(&art.path("psi_sine.csv"))?;
    let path = simulate_ar(&sine, noise, &sd, cfg.params.chain_length, &Streams::new(cfg.seed));
    let ks = ks_distance(&path.x[1..], |x| sd.cdf().cdf(x));
    checks.push(Check::at_most("KS of the 0.5 sin chain marginal against psi", ks, 0.01));
    reports.extend([("zero", zero.report()), ("constant", constant.report()), ("sine", sd.report())]);
    art.json("solver.json", &reports)?;
    Ok(checks)
}

#[derive(Serialize)]
pub(crate) struct PairRow {
    pair: usize,
    lhs: f64,
    rhs: f64,
    rho: f64,
    pub holds: bool,
}

/// Stationary Hellinger term against its bound for `count` random neighborhood pairs.
pub(crate) fn neighborhood_pairs(cfg: &ExperimentConfig, spec: &FunctionClassSpec, noise: &NoiseModel, count: usize, art: &Artifacts, file: &str) -> Result<Vec<PairRow>> {
    let streams = Streams::new(cfg.seed).derive("neighborhood", &[]);
    let rc = cfg.rates.at(cfg.n);
    let mut w = art.csv(file)?;
    replicate_in_order(
        count,
        "stationary",
        |r| {
            let pf = random_neighborhood(&mut streams.rng("pair", &[r as u64]), spec, &rc)?;
            let rep = lemma61_check(&pf.f(), &pf.f0, noise, spec.m, cfg.solver.tol)?;
            Ok(PairRow { pair: r, lhs: rep.lhs, rhs: rep.rhs, rho: rep.rho, holds: rep.holds })
        },
        |_, row| {
            w.serialize(row)?;
            w.flush()?;
            Ok(())
        },
    )
}

pub(crate) fn stationary_hellinger(cfg: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let spec = cfg.class.spec()?;
    let noise = NoiseModel::from_family(cfg.noise_p, spec.grid)?;
    let mut checks = Vec::new();
    let rho = dobrushin_rho(&noise, spec.m);
    if let NoiseFamily::Gaussian { sigma } = cfg.noise_p {
        let exact = 2.0 * std_normal_cdf(spec.m / sigma) - 1.0;
        checks.push(Check::at_most("|rho - (2 Phi(M/sigma) - 1)|", (rho - exact).abs(), 1e-3));
    }
    checks.push(Check::at_most("rho < 1", rho, 1.0 - 1e-12));
    let rows = neighborhood_pairs(cfg, &spec, &noise, cfg.reps, art, "pairs.csv")?;
    let failed = rows.iter().filter(|r| !r.holds).count();
    checks.push(Check::new("lhs <= rhs for every pair", failed == 0, failed as f64, 0.0, format!("{failed} of {} pairs fail", rows.len())));
    Ok(checks)
}

#[derive(Serialize)]
struct HaarRow {
    bump: usize,
    j: u32,
    coefficient_violations: usize,
    max_residual: f64,
    residual_bound: f64,
    residual_ok: bool,
}

/// Coefficient and residual bounds for `count` random bump sums on `[A, B]`,
/// expanded through every level up to `level`. Returns the number of failures.
pub(crate) fn haar_bumps(cfg: &ExperimentConfig, spec: &FunctionClassSpec, count: usize, level: u32, art: &Artifacts, file: &str) -> Result<usize> {
    let streams = Streams::new(cfg.seed).derive("haar-bumps", &[]);
    let (a, b) = (spec.a, spec.b);
    let mut w = art.csv(file)?;
    let rows = replicate_in_order(
        count,
        "haar",
        |r| {
            let mut rng = streams.rng("bump", &[r as u64]);
            let bumps: Vec<Bump> = (0..rng.random_range(1..=3))
                .map(|_| {
                    let half_width = (b - a) * rng.random_range(0.05..0.5);
                    let center = rng.random_range(a + half_width..=b - half_width);
                    let height = rng.random_range(-1.0..1.0);
                    Bump { center, half_width, height }
                })
                .collect();
            let g = GridFunction::from_fn(spec.grid, |x| bumps.iter().map(|bp| bp.eval(x)).sum());
            let full = haar_expand(&g, a, b, level)?;
            let violations = coefficient_bounds_check(&full, &g).violations.len();
            (0..=level)
                .map(|j| {
                    let e = full.truncated(j);
                    let res = max_residual(&e, &g);
                    let bound = e.residual_sup_bound;
                    Ok(HaarRow {
                        bump: r,
                        j,
                        coefficient_violations: if j == level { violations } else { 0 },
                        max_residual: res,
                        residual_bound: bound,
                        residual_ok: res <= bound * (1.0 + 1e-9) + 1e-12,
                    })
                })
                .collect::<Result<Vec<_>>>()
        },
        |_, rows| {
            for row in rows {
                w.serialize(row)?;
            }
            w.flush()?;
            Ok(())
        },
    )?;
    Ok(rows.iter().flatten().map(|r| r.coefficient_violations + usize::from(!r.residual_ok)).sum())
}

pub(crate) fn haar_suite(cfg: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let spec = cfg.class.spec()?;
    let level = cfg.params.haar_level;
    let gram = gram_deviation(spec.a, spec.b, level);
    let failures = haar_bumps(cfg, &spec, cfg.reps, level, art, "bumps.csv")?;
    Ok(vec![
        Check::at_most("max |Gram - I| through the finest level", gram, 1e-6),
        Check::new("coefficient and residual bounds hold for every bump", failures == 0, failures as f64, 0.0, format!("{failures} violations")),
    ])
}

#[derive(Serialize)]
struct LikelihoodRow {
    rep: usize,
    ln_l1: f64,
    ln_l2: f64,
    ln_l3: f64,
}

pub(crate) fn likelihood_normalization(cfg: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let base = Base::new(cfg)?;
    let n = cfg.n;
    let alt = base.alternative(cfg, n)?;
    let part = &alt.partition;
    let t = design_points(&base.sd0, n)?;
    let streams = Streams::new(cfg.seed);
    let mut w = art.csv("replications.csv")?;
    let rows = replicate_in_order(
        cfg.reps,
        "likelihood",
        |r| {
            let st = streams.derive("replication", &[r as u64]);
            let ar = simulate_ar(&base.f0, &base.noise_p, &base.sd0, n, &st);
            let l1 = loglr_ar(&ar.x, &alt.f, &base.f0, &base.noise_p, &alt.sdf.psi, &base.sd0.psi, part)?.total;
            let rd = simulate_random_design(&base.f0, &base.noise_q, &base.sd0, n, &st);
            let l2 = loglr_regression(&rd.xi, &rd.y, &alt.f, &base.f0, &base.noise_q, part)?.total;
            let fd = simulate_fixed_design(&base.f0, &base.noise_q, &t, &st.derive("fixed", &[]));
            let l3 = loglr_regression(&fd.t, &fd.y, &alt.f, &base.f0, &base.noise_q, part)?.total;
            Ok(LikelihoodRow { rep: r, ln_l1: l1, ln_l2: l2, ln_l3: l3 })
        },
        |_, row| Ok(w.serialize(row)?),
    )?;
    w.flush()?;
    let mut checks = Vec::new();
    let mut summary = Vec::new();
    for (e, get) in [(1, (|r: &LikelihoodRow| r.ln_l1) as fn(&LikelihoodRow) -> f64), (2, |r| r.ln_l2), (3, |r| r.ln_l3)] {
        let l: Vec<f64> = rows.iter().map(|r| get(r).exp()).collect();
        let ms = mean_se(&l);
        checks.push(Check::at_most(&format!("|E L^{e} - 1| within 3 s.e."), (ms.mean - 1.0).abs(), 3.0 * ms.se));
        summary.push((e, ms));
    }
    let pairs = |a: fn(&LikelihoodRow) -> f64, b: fn(&LikelihoodRow) -> f64| -> Vec<(f64, f64)> { rows.iter().map(|r| (a(r), b(r))).collect() };
    let h12 = estimate_from_pairs(&pairs(|r| r.ln_l1, |r| r.ln_l2));
    let h13 = estimate_from_pairs(&pairs(|r| r.ln_l1, |r| r.ln_l3));
    for (name, h) in [("L1 vs L2", &h12), ("L1 vs L3", &h13)] {
        checks.push(tv_check(name, h));
    }
    art.json("means.json", &(summary, h12, h13))?;
    Ok(checks)
}

pub(crate) fn tv_check(name: &str, h: &HellingerEstimate) -> Check {
    let lhs = 0.5 * h.l1.mean;
    let rhs = h.h2.mean.sqrt();
    Check::new(
        &format!("(1/2) E|L1 - L2| <= H, {name}"),
        h.total_variation_bound_holds(),
        lhs,
        rhs,
        format!("{lhs:.6e} <= {rhs:.6e} (3 s.e. allowance)"),
    )
}

#[derive(Serialize)]
struct ShiftRow {
    mu: f64,
    h2: f64,
    h2_se: f64,
    exact: f64,
    half_l1: f64,
    tv_bound_holds: bool,
}

pub(crate) fn hellinger_gaussian(cfg: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let streams = Streams::new(cfg.seed);
    let mut checks = Vec::new();
    let mut w = art.csv("shifts.csv")?;
    for (i, &mu) in cfg.params.shifts.iter().enumerate() {
        // both ratios read the same observation x ~ N(0, 1)
        let est = hellinger_mc(cfg.reps, |r| {
            let x: f64 = streams.rng("observation", &[i as u64, r as u64]).sample(StandardNormal);
            Ok((mu * x - 0.5 * mu * mu, 0.0))
        })?;
        let exact = 2.0 * (1.0 - (-mu * mu / 8.0).exp());
        checks.push(Check::at_most(&format!("|H^2 - 2(1 - exp(-mu^2/8))| within 3 s.e., mu = {mu}"), (est.h2.mean - exact).abs(), 3.0 * est.h2.se));
        checks.push(tv_check(&format!("mu = {mu}"), &est));
        w.serialize(ShiftRow { mu, h2: est.h2.mean, h2_se: est.h2.se, exact, half_l1: 0.5 * est.l1.mean, tv_bound_holds: est.total_variation_bound_holds() })?;
    }
    w.flush()?;
    Ok(checks)
}

#[derive(Serialize)]
struct CountRow {
    xi: usize,
    eta: usize,
    xi_tilde: usize,
    count: usize,
}

pub(crate) struct BerbeeResult {
    pub checks: Vec<Check>,
    table: Vec<CountRow>,
}

pub(crate) fn berbee_checks(diag: f64, draws: usize, streams: &Streams) -> Result<BerbeeResult> {
    let joint = two_by_two(diag)?;
    let (d, diagnostics) = berbee_couple(&joint, draws, &mut streams.rng("berbee", &[]))?;
    let mut checks = vec![Check::at_most(
        "mismatch rate <= phi + 3 s.e.",
        diagnostics.mismatch_rate,
        diagnostics.phi + 3.0 * diagnostics.mismatch_se,
    )];
    let mut table = vec![vec![0u64; 2]; 2];
    let mut counts = [0usize; 8];
    for x in &d {
        table[x.xi_tilde][x.eta] += 1;
        counts[4 * x.xi + 2 * x.eta + x.xi_tilde] += 1;
    }
    let (_, _, p) = chi_square_independence(&table);
    checks.push(Check::at_least("chi-square independence p-value of (xi~, eta)", p, 0.01));
    let a: Vec<f64> = d.iter().map(|x| joint.xs[x.xi]).collect();
    let b: Vec<f64> = d.iter().map(|x| joint.xs[x.xi_tilde]).collect();
    checks.push(Check::at_most("KS between the laws of xi~ and xi", ks_two_sample(&a, &b), 0.02));

    let indep = DiscreteJoint::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![vec![0.12, 0.28], vec![0.18, 0.42]])?;
    let (d0, _) = berbee_couple(&indep, draws.min(10_000), &mut streams.rng("berbee-independent", &[]))?;
    let moved = d0.iter().filter(|x| x.xi != x.xi_tilde).count();
    checks.push(Check::new("independent joint is never moved", moved == 0, moved as f64, 0.0, format!("{moved} moved")));
    let table = (0..8).map(|i| CountRow { xi: i / 4, eta: (i / 2) % 2, xi_tilde: i % 2, count: counts[i] }).collect();
    Ok(BerbeeResult { checks, table })
}

pub(crate) fn berbee(cfg: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let res = berbee_checks(cfg.params.berbee_diagonal, cfg.reps, &Streams::new(cfg.seed))?;
    let mut w = art.csv("counts.csv")?;
    for row in &res.table {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(res.checks)
}

#[derive(Serialize)]
struct ExpCsvRow {
    law: String,
    a: f64,
    lambda: f64,
    lhs: f64,
    lhs_se: f64,
    rhs: f64,
    exact: bool,
    holds: bool,
}

pub(crate) fn exp_specs() -> Vec<(String, BoundedVariableSpec)> {
    let mut out: Vec<(String, BoundedVariableSpec)> =
        [0.5, 1.0, 2.0].iter().map(|&a| (format!("two-point a={a}"), BoundedVariableSpec::two_point(a))).collect();
    out.push((
        "three-point a=1".into(),
        BoundedVariableSpec { law: BoundedLaw::Discrete { values: vec![-1.0, 0.0, 1.0], probs: vec![0.25, 0.5, 0.25] }, a: 1.0 },
    ));
    out.push(("truncated-uniform a=1".into(), BoundedVariableSpec { law: BoundedLaw::TruncatedUniform, a: 1.0 }));
    out.push(("truncated-gaussian sigma=1 a=2".into(), BoundedVariableSpec { law: BoundedLaw::TruncatedGaussian { sigma: 1.0 }, a: 2.0 }));
    out
}

pub(crate) fn exp_inequality(cfg: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let streams = Streams::new(cfg.seed);
    let specs = exp_specs();
    let reports = specs
        .par_iter()
        .enumerate()
        .map(|(i, (_, spec))| exp_inequality_check(spec, &cfg.params.exp_lambdas, cfg.reps, &mut streams.rng("exp", &[i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let mut w = art.csv("rows.csv")?;
    let (mut exact_fail, mut mc_fail) = (0, 0);
    for ((name, _), rep) in specs.iter().zip(&reports) {
        for r in &rep.rows {
            if !r.holds {
                if r.exact {
                    exact_fail += 1;
                } else {
                    mc_fail += 1;
                }
            }
            w.serialize(ExpCsvRow { law: name.clone(), a: rep.a, lambda: r.lambda, lhs: r.lhs, lhs_se: r.lhs_se, rhs: r.rhs, exact: r.exact, holds: r.holds })?;
        }
    }
    w.flush()?;
    Ok(vec![
        Check::new("exact enumeration holds for finite laws", exact_fail == 0, exact_fail as f64, 0.0, format!("{exact_fail} failures")),
        Check::new("Monte Carlo holds for truncated laws", mc_fail == 0, mc_fail as f64, 0.0, format!("{mc_fail} failures")),
    ])
}

#[derive(Serialize)]
struct LagRow {
    lag: usize,
    phi: f64,
    pair_max: f64,
    phi_simulated: f64,
    phi_iid: f64,
}

pub(crate) fn phi_mixing(cfg: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let base = Base::new(cfg)?;
    let p = &cfg.params;
    let edges = quantile_cells(&base.sd0, p.mixing_cells)?;
    let est = phi_mixing_chain(&base.f0, &base.noise_p, &base.sd0, &edges, p.max_lag)?;
    let path = simulate_ar(&base.f0, &base.noise_p, &base.sd0, p.chain_length, &Streams::new(cfg.seed));
    let sim = (1..=p.max_lag).map(|k| phi_mixing_simulated(&path.x, k, &edges)).collect::<Result<Vec<_>>>()?;

    let zero = GridFunction::zeros(base.spec.grid);
    let sd_zero = solve_stationary(&zero, &base.noise_p, cfg.solver.tol, cfg.solver.max_iter)?;
    let iid = phi_mixing_chain(&zero, &base.noise_p, &sd_zero, &quantile_cells(&sd_zero, p.mixing_cells)?, p.max_lag)?;

    let mut w = art.csv("lags.csv")?;
    for ((e, s), z) in est.iter().zip(&sim).zip(&iid) {
        w.serialize(LagRow { lag: e.lag, phi: e.phi, pair_max: e.pair_max, phi_simulated: *s, phi_iid: z.phi })?;
    }
    w.flush()?;
    let fit = geometric_decay_fit(&est, p.decay_floor)?;
    art.json("fit.json", &fit)?;
    let increase = est.windows(2).map(|w| w[1].phi - w[0].phi).fold(f64::NEG_INFINITY, f64::max);
    Ok(vec![
        Check::at_most("phi(k) is nonincreasing", increase, 1e-12),
        Check::at_least("R^2 of the geometric fit", fit.r2, 0.9),
        Check::at_most("fitted decay rate", fit.rho, 1.0 - 1e-9),
        Check::at_most("phi of the i.i.d. chain", iid.iter().map(|e| e.phi).fold(0.0, f64::max), 1e-9),
        Check::at_most("|simulated - operator| phi(1)", (sim[0] - est[0].phi).abs(), 0.03),
    ])
}
