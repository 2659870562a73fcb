use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::basic::{berbee_checks, exp_specs, haar_bumps, neighborhood_pairs, tv_check};
use super::{replicate_in_order, Artifacts, Base, Check, ExperimentConfig};
use crate::bounds::{exp_inequality_check, mixing_tail_check};
use crate::coupling::embed::{embed_ar_side, embed_regression_side, Horizons, Tree, EXTERIOR};
use crate::coupling::gaps::{r_n, strong_approx_gap, StrongApproxGap};
use crate::coupling::replicate::{Construction, CouplingSetup, Design};
use crate::coupling::{skorokhod_stop, BrownianPath, ScoreLaw, WienerFamily};
use crate::error::{Error, Result};
use crate::haar::{haar_expand, HaarExpansion};
use crate::likelihood::{
    block0_hellinger, estimate_from_pairs, event_diagnostics, lemma31_check, loglr_ar, loglr_regression, taylor_terms,
    BlockPartition, EventConstants,
};
use crate::models::rates;
use crate::rng::Streams;
use crate::simulate::{design_points, rearrange_blocks};
use crate::stationary::sample_stationary;
use crate::stats::{correlation, ks_distance, mean_se, median, quantile, sign_test_p};

fn setup_for(cfg: &ExperimentConfig, base: &Base, m: usize, gamma_prime: f64) -> Result<CouplingSetup> {
    let j = cfg.j_star(m, gamma_prime, base.noise_p.fisher_info);
    let tree = Tree::new(base.spec.a, base.spec.b, j)?;
    CouplingSetup::new(
        base.f0.clone(),
        base.noise_p.clone(),
        base.noise_q.clone(),
        base.sd0.clone(),
        tree,
        cfg.coupling.dt_factor,
        cfg.coupling.levels,
        cfg.coupling.c_h,
    )
}

fn largest_block(p: &BlockPartition) -> usize {
    p.sizes().into_iter().max().unwrap_or(p.n)
}

#[derive(Serialize)]
struct StopSummary {
    law: &'static str,
    draws: usize,
    mean_value: f64,
    mean_value_se: f64,
    mean_tau: f64,
    mean_tau_se: f64,
    target_variance: f64,
    ks: f64,
}

pub(crate) fn skorokhod(cfg: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let base = Base::new(cfg)?;
    let streams = Streams::new(cfg.seed);
    let dt = cfg.coupling.dt_factor * ScoreLaw::for_noise(&base.noise_p)?.variance();
    let levels = cfg.coupling.levels;
    let stops = |law: &ScoreLaw, tag: u64| {
        replicate_in_order(
            cfg.reps,
            "coupling",
            |r| {
                let mut path = BrownianPath::new(streams.key("skorokhod-path", &[tag, r as u64]), dt, levels)?;
                skorokhod_stop(&mut path, 0.0, f64::INFINITY, law, &mut streams.rng("skorokhod-barriers", &[tag, r as u64]))
            },
            |_, _| Ok(()),
        )
    };
    let mut checks = Vec::new();
    let mut summary = Vec::new();

    let law = ScoreLaw::for_noise(&base.noise_p)?;
    let s = stops(&law, 0)?;
    let values: Vec<f64> = s.iter().map(|s| s.value).collect();
    let taus: Vec<f64> = s.iter().map(|s| s.tau).collect();
    let (v, t) = (mean_se(&values), mean_se(&taus));
    let ks = ks_distance(&values, |x| law.cdf(x));
    checks.push(Check::at_most("KS of embedded values against the score law", ks, 0.02));
    checks.push(Check::at_most("|mean embedded value| within 3 s.e.", v.mean.abs(), 3.0 * v.se));
    checks.push(Check::at_most("|E tau - Var(score)| within 3 s.e. (Wald)", (t.mean - law.variance()).abs(), 3.0 * t.se));
    summary.push(StopSummary { law: "score", draws: s.len(), mean_value: v.mean, mean_value_se: v.se, mean_tau: t.mean, mean_tau_se: t.se, target_variance: law.variance(), ks });

    let a = cfg.params.two_point_a;
    let two = ScoreLaw::two_point(a)?;
    let s = stops(&two, 1)?;
    let off = s.iter().filter(|s| s.value != a && s.value != -a).count();
    checks.push(Check::new("two-point exits land exactly on +-a", off == 0, off as f64, 0.0, format!("{off} inexact exits")));
    let ups: Vec<f64> = s.iter().map(|s| f64::from(u8::from(s.value > 0.0))).collect();
    let u = mean_se(&ups);
    checks.push(Check::at_most("|P(+a) - 1/2| within 3 s.e.", (u.mean - 0.5).abs(), 3.0 * u.se.max(1e-12)));
    let taus: Vec<f64> = s.iter().map(|s| s.tau).collect();
    let t = mean_se(&taus);
    checks.push(Check::at_most("|E tau - a^2| within 3 s.e.", (t.mean - a * a).abs(), 3.0 * t.se));
    let values: Vec<f64> = s.iter().map(|s| s.value).collect();
    let v = mean_se(&values);
    summary.push(StopSummary { law: "two-point", draws: s.len(), mean_value: v.mean, mean_value_se: v.se, mean_tau: t.mean, mean_tau_se: t.se, target_variance: a * a, ks: f64::NAN });

    // noise recovered from the glued embedding, one block of size embed_m
    let m = cfg.params.embed_m;
    let (_, gp) = rates(&cfg.rates.at(m), &base.spec)?;
    let setup = setup_for(cfg, &base, m, gp)?;
    let part = BlockPartition::with_blocks(m, 1);
    let h = setup.horizons_for(&part, cfg.pilot_reps, &streams)?;
    let rep = setup.replicate(&part, &h, Design::Random, None, Construction::Coupled, &streams, 0)?;
    for b in &rep.blocks {
        b.ledger_x.audit()?;
        b.ledger_y.audit()?;
    }
    let cdf = |x: f64| base.noise_p.cdf_table().cdf(x);
    let ks_eps = ks_distance(&rep.x.eps[1..], cdf);
    let ks_eta = ks_distance(&rep.eta, |x| base.noise_q.cdf_table().cdf(x));
    checks.push(Check::at_most("KS of embedded AR innovations against p", ks_eps, 0.02));
    checks.push(Check::at_most("KS of embedded regression noise against q", ks_eta, 0.02));
    art.json("summary_stops.json", &(summary, ks_eps, ks_eta))?;
    Ok(checks)
}

/// Gap ratios `|Z1 - Z2| / ((m 2^-j)^{1/4} ln m)` of one block.
fn cell_ratios(setup: &CouplingSetup, part: &BlockPartition, h: &BTreeMap<usize, Horizons>, st: &Streams, r: usize, lambda: f64) -> Result<Vec<f64>> {
    let mut rep = setup.replicate(part, h, Design::Random, None, Construction::Coupled, st, r)?;
    let (report, _, _) = rep.blocks[0].z_statistics(lambda, 1.0)?;
    Ok(report.cells.iter().map(|c| c.gap / c.threshold).collect())
}

#[derive(Serialize)]
struct CellRow {
    rep: usize,
    j: u32,
    k: u64,
    z1: f64,
    z2: f64,
    gap: f64,
    threshold: f64,
    pass: bool,
}

#[derive(Serialize)]
struct Calibration {
    constant: f64,
    quantile: f64,
    calibration_reps: usize,
    calibrated: bool,
}

pub(crate) fn coupling_gap(cfg: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let base = Base::new(cfg)?;
    let m = cfg.n;
    let lambda = cfg.coupling.lambda;
    let (_, gp) = rates(&cfg.rates.at(m), &base.spec)?;
    let setup = setup_for(cfg, &base, m, gp)?;
    let part = BlockPartition::with_blocks(m, 1);
    let streams = Streams::new(cfg.seed);
    let h = setup.horizons_for(&part, cfg.pilot_reps, &streams)?;

    let q = cfg.coupling.calibration_quantile;
    let c_lambda = match cfg.coupling.c_lambda {
        Some(c) => c,
        None => {
            let cal = streams.derive("calibration", &[]);
            let ratios: Vec<f64> = (0..cfg.calibration_reps)
                .into_par_iter()
                .map(|r| cell_ratios(&setup, &part, &h, &cal, r, lambda).map_err(|e| e.in_replication("coupling", r)))
                .collect::<Result<Vec<_>>>()?
                .concat();
            quantile(&ratios, q)
        }
    };
    art.json("calibration.json", &Calibration { constant: c_lambda, quantile: q, calibration_reps: cfg.calibration_reps, calibrated: cfg.coupling.c_lambda.is_none() })?;

    let mut w = art.csv("cells.csv")?;
    let fresh = replicate_in_order(
        cfg.reps,
        "coupling",
        |r| {
            let mut rep = setup.replicate(&part, &h, Design::Random, None, Construction::Coupled, &streams, r)?;
            let (report, _, _) = rep.blocks[0].z_statistics(lambda, c_lambda)?;
            Ok(report.cells)
        },
        |r, cells| {
            for c in cells {
                w.serialize(CellRow { rep: r, j: c.j, k: c.k, z1: c.z1, z2: c.z2, gap: c.gap, threshold: c.threshold, pass: c.pass })?;
            }
            w.flush()?;
            Ok(())
        },
    )?;
    let total: usize = fresh.iter().map(|c| c.len()).sum();
    let passing = fresh.iter().flatten().filter(|c| c.pass).count();
    let frac = passing as f64 / total.max(1) as f64;
    let mut checks = vec![Check::at_least("fraction of (cell, replication) gaps under the threshold", frac, 0.99)];

    // per-cell correlation of Z1 and Z2, coupled against independent families
    let nc = cfg.params.correlation_reps.min(cfg.reps);
    let indep = (0..nc)
        .into_par_iter()
        .map(|r| {
            let mut rep = setup.replicate(&part, &h, Design::Random, None, Construction::Independent, &streams, r)?;
            Ok(rep.blocks[0].z_statistics(lambda, c_lambda)?.0.cells)
        })
        .collect::<Result<Vec<_>>>()?;
    let cells = fresh[0].len();
    let corr = |set: &[Vec<crate::coupling::gaps::CellGap>], c: usize| {
        let z1: Vec<f64> = set[..nc].iter().map(|v| v[c].z1).collect();
        let z2: Vec<f64> = set[..nc].iter().map(|v| v[c].z2).collect();
        correlation(&z1, &z2)
    };
    let mut cw = art.csv("correlations.csv")?;
    cw.write_record(["j", "k", "corr_coupled", "corr_independent"])?;
    let mut worse = 0;
    for c in 0..cells {
        let (a, b) = (corr(&fresh, c), corr(&indep, c));
        worse += usize::from(!(a > b));
        cw.serialize((fresh[0][c].j, fresh[0][c].k, a, b))?;
    }
    cw.flush()?;
    checks.push(Check::new(
        "corr(Z1, Z2) coupled > independent in every cell",
        worse == 0,
        worse as f64,
        0.0,
        format!("{worse} of {cells} cells not larger over {nc} replications"),
    ));
    Ok(checks)
}

/// Strong-approximation gaps per block for one replication.
#[allow(clippy::too_many_arguments)]
fn block_gaps(
    setup: &CouplingSetup,
    part: &BlockPartition,
    h: &BTreeMap<usize, Horizons>,
    construction: Construction,
    st: &Streams,
    r: usize,
    g: &crate::grid::GridFunction,
    expansion: &HaarExpansion,
    lambda: f64,
) -> Result<Vec<StrongApproxGap>> {
    let mut rep = setup.replicate(part, h, Design::Random, None, construction, st, r)?;
    rep.blocks
        .iter_mut()
        .map(|b| {
            let (_, z1, z2) = b.z_statistics(lambda, 1.0)?;
            strong_approx_gap(g, expansion, &b.ledger_x, &b.ledger_y, &z1, &z2)
        })
        .collect()
}

#[derive(Serialize)]
struct BlockRow {
    rep: usize,
    block: usize,
    m: usize,
    s1: f64,
    s2: f64,
    gap: f64,
    decomposed: f64,
    r_n: f64,
    threshold: f64,
    pass: bool,
    gap_independent: f64,
}

pub(crate) fn strong_approx(cfg: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let base = Base::new(cfg)?;
    let alt = base.alternative(cfg, cfg.n)?;
    let part = &alt.partition;
    let lambda = cfg.coupling.lambda;
    let setup = setup_for(cfg, &base, largest_block(part), alt.gamma_prime)?;
    if setup.tree.j_star == 0 {
        return Err(Error::Configuration("strong-approx needs j* >= 1".into()));
    }
    let expansion = haar_expand(&alt.g, base.spec.a, base.spec.b, setup.tree.j_star - 1)?;
    let streams = Streams::new(cfg.seed);
    let h = setup.horizons_for(part, cfg.pilot_reps, &streams)?;
    let rn: Vec<f64> = (1..=part.k).map(|l| r_n(alt.gamma, alt.gamma_prime, part.size(l), lambda)).collect();
    let gaps = |c: Construction, st: &Streams, r: usize| block_gaps(&setup, part, &h, c, st, r, &alt.g, &expansion, lambda);

    let q = cfg.coupling.calibration_quantile;
    let c_strong = match cfg.coupling.c_strong {
        Some(c) => c,
        None => {
            let cal = streams.derive("calibration", &[]);
            let ratios: Vec<f64> = (0..cfg.calibration_reps)
                .into_par_iter()
                .map(|r| {
                    let g = gaps(Construction::Coupled, &cal, r).map_err(|e| e.in_replication("coupling", r))?;
                    Ok(g.iter().zip(&rn).map(|(g, rn)| g.direct / rn).collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()?
                .concat();
            quantile(&ratios, q)
        }
    };
    art.json("calibration.json", &Calibration { constant: c_strong, quantile: q, calibration_reps: cfg.calibration_reps, calibrated: cfg.coupling.c_strong.is_none() })?;

    let mut w = art.csv("blocks.csv")?;
    let runs = replicate_in_order(
        cfg.reps,
        "coupling",
        |r| Ok((gaps(Construction::Coupled, &streams, r)?, gaps(Construction::Independent, &streams, r)?)),
        |r, (co, ind)| {
            for (l, (a, b)) in co.iter().zip(ind).enumerate() {
                let threshold = c_strong * rn[l];
                w.serialize(BlockRow {
                    rep: r,
                    block: l + 1,
                    m: part.size(l + 1),
                    s1: a.s1,
                    s2: a.s2,
                    gap: a.direct,
                    decomposed: a.decomposed,
                    r_n: rn[l],
                    threshold,
                    pass: a.direct <= threshold,
                    gap_independent: b.direct,
                })?;
            }
            w.flush()?;
            Ok(())
        },
    )?;
    let cells = runs.len() * part.k;
    let exceed = runs.iter().flat_map(|(co, _)| co.iter().zip(&rn)).filter(|(g, rn)| g.direct > c_strong * **rn).count();
    let inconsistent = runs.iter().flat_map(|(co, ind)| co.iter().chain(ind)).filter(|g| !g.consistent()).count();
    let coupled: Vec<f64> = runs.iter().map(|(co, _)| co.iter().map(|g| g.direct).sum()).collect();
    let independent: Vec<f64> = runs.iter().map(|(_, ind)| ind.iter().map(|g| g.direct).sum()).collect();
    let wins = coupled.iter().zip(&independent).filter(|(a, b)| a < b).count();
    let ties = coupled.iter().zip(&independent).filter(|(a, b)| a == b).count();
    let p = sign_test_p(wins, runs.len() - ties);
    let (mc, mi) = (median(&coupled), median(&independent));
    art.json("sign_test.json", &(wins, runs.len() - ties, p, mc, mi))?;
    Ok(vec![
        Check::at_most("P(|S1 - S2| > c(lambda) r_n) per block", exceed as f64 / cells.max(1) as f64, 0.01),
        Check::new("direct gap <= Haar-decomposed bound", inconsistent == 0, inconsistent as f64, 0.0, format!("{inconsistent} inconsistent blocks")),
        Check::new("median gap coupled < independent", mc < mi, mc, mi, format!("{mc:.6e} < {mi:.6e}")),
        Check::at_most("paired sign test p-value (coupled smaller)", p, 0.01),
    ])
}

#[derive(Serialize)]
struct SweepRow {
    n: usize,
    blocks: usize,
    reps: usize,
    gamma: f64,
    gamma_prime: f64,
    h2_random: f64,
    h2_random_se: f64,
    half_l1_random: f64,
    h2_fixed: f64,
    h2_fixed_se: f64,
    half_l1_fixed: f64,
}

#[derive(Serialize)]
struct LrRow {
    rep: usize,
    ln_l1: f64,
    ln_l2: f64,
    ln_l3: f64,
}

pub(crate) fn hellinger_sweep(cfg: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let base = Base::new(cfg)?;
    let streams = Streams::new(cfg.seed);
    let mut checks = Vec::new();
    let mut rows: Vec<SweepRow> = Vec::new();
    let mut w = art.csv("sweep.csv")?;
    for &n in &cfg.n_sweep {
        let alt = base.alternative(cfg, n)?;
        let part = &alt.partition;
        let setup = setup_for(cfg, &base, largest_block(part), alt.gamma_prime)?;
        let st = streams.derive("sweep", &[n as u64]);
        let h = setup.horizons_for(part, cfg.pilot_reps, &st)?;
        let t = rearrange_blocks(&design_points(&base.sd0, n)?, &base.sd0, part)?.t;
        let mut rw = art.csv(&format!("replications_n{n}.csv"))?;
        let lrs = replicate_in_order(
            cfg.reps,
            "likelihood",
            |r| {
                let rd = setup.replicate(part, &h, Design::Random, None, Construction::Coupled, &st, r)?;
                let l1 = loglr_ar(&rd.x.x, &alt.f, &base.f0, &base.noise_p, &alt.sdf.psi, &base.sd0.psi, part)?.total;
                let l2 = loglr_regression(&rd.design, &rd.y, &alt.f, &base.f0, &base.noise_q, part)?.total;
                let fd = setup.replicate(part, &h, Design::Fixed, Some(&t), Construction::Coupled, &st, r)?;
                let l3 = loglr_regression(&fd.design, &fd.y, &alt.f, &base.f0, &base.noise_q, part)?.total;
                Ok(LrRow { rep: r, ln_l1: l1, ln_l2: l2, ln_l3: l3 })
            },
            |_, row| {
                rw.serialize(row)?;
                rw.flush()?;
                Ok(())
            },
        )?;
        let er = estimate_from_pairs(&lrs.iter().map(|r| (r.ln_l1, r.ln_l2)).collect::<Vec<_>>());
        let ef = estimate_from_pairs(&lrs.iter().map(|r| (r.ln_l1, r.ln_l3)).collect::<Vec<_>>());
        checks.push(tv_check(&format!("random design, n = {n}"), &er));
        checks.push(tv_check(&format!("fixed design, n = {n}"), &ef));
        let row = SweepRow {
            n,
            blocks: part.k,
            reps: cfg.reps,
            gamma: alt.gamma,
            gamma_prime: alt.gamma_prime,
            h2_random: er.h2.mean,
            h2_random_se: er.h2.se,
            half_l1_random: 0.5 * er.l1.mean,
            h2_fixed: ef.h2.mean,
            h2_fixed_se: ef.h2.se,
            half_l1_fixed: 0.5 * ef.l1.mean,
        };
        w.serialize(&row)?;
        w.flush()?;
        rows.push(row);
    }
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        for (name, ha, sa, hb, sb) in [
            ("random", a.h2_random, a.h2_random_se, b.h2_random, b.h2_random_se),
            ("fixed", a.h2_fixed, a.h2_fixed_se, b.h2_fixed, b.h2_fixed_se),
        ] {
            let need = 2.0 * (sa * sa + sb * sb).sqrt();
            checks.push(Check::new(
                &format!("{name} design H^2 drops from n = {} to n = {} by > 2 combined s.e.", a.n, b.n),
                ha - hb > need,
                ha - hb,
                need,
                format!("{:.6e} - {:.6e} = {:.6e} > {need:.6e}", ha, hb, ha - hb),
            ));
        }
    }
    Ok(checks)
}

pub(crate) fn mixing_tail(cfg: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let base = Base::new(cfg)?;
    let m = cfg.n;
    let tree = Tree::new(base.spec.a, base.spec.b, cfg.params.tail_level)?;
    let law = ScoreLaw::for_noise(&base.noise_p)?;
    let dt = cfg.coupling.dt_factor * law.variance();
    let free = Horizons::unbounded(tree);
    let streams = Streams::new(cfg.seed);
    let sums = replicate_in_order(
        cfg.reps,
        "bounds",
        |r| {
            let path = [r as u64];
            let x0 = sample_stationary(&base.sd0, 1, &mut streams.rng("tail-initial", &path))[0];
            let mut wf = WienerFamily::new(streams.key("tail-wiener", &path), dt, cfg.coupling.levels)?;
            let (_, ledger) = embed_ar_side(&base.f0, &base.noise_p, &law, x0, m, &mut wf, &free, &mut streams.rng("tail-embed", &path))?;
            let mut s = vec![0.0; tree.len() - 1];
            for step in ledger.steps.iter().filter(|s| s.leaf != EXTERIOR) {
                for node in tree.chain(step.leaf) {
                    s[node - 1] += step.tau;
                }
            }
            Ok(s)
        },
        |_, _| Ok(()),
    )?;
    // E[tau 1{X in I}] = Var(score) P(I) under stationarity
    let expected: Vec<f64> = (1..tree.len())
        .map(|id| {
            let (lo, hi) = crate::haar::DyadicIndex::from_id(id).bounds(tree.a, tree.b);
            m as f64 * law.variance() * base.sd0.cdf().mass(lo, hi)
        })
        .collect();
    let scale = |c: f64| -> Vec<f64> {
        (1..tree.len()).map(|id| c * (m as f64 / 2f64.powi(Tree::level(id) as i32)).sqrt() * (m as f64).ln()).collect()
    };
    let c = cfg.params.c_tail;
    let report = mixing_tail_check(&sums, &expected, &scale(c))?;
    report.write_csv(std::fs::File::create(art.path("tail.csv"))?)?;
    let mut checks = vec![
        Check::at_most("exceedance frequency of the root cell", report.rows[0].frequency, 0.01),
        Check::at_most("largest exceedance frequency over cells", report.max_frequency(), 0.01),
        Check::at_most("exceedances at 10x the threshold", mixing_tail_check(&sums, &expected, &scale(10.0 * c))?.max_frequency(), 0.0),
    ];
    let grid = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0];
    let freqs = grid.iter().map(|&k| Ok(mixing_tail_check(&sums, &expected, &scale(k))?.rows[0].frequency)).collect::<Result<Vec<_>>>()?;
    let rise = freqs.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    art.json("threshold_grid.json", &grid.iter().zip(&freqs).collect::<Vec<_>>())?;
    checks.push(Check::at_most("root exceedance is nonincreasing in the constant", rise, 0.0));
    Ok(checks)
}

#[derive(Serialize)]
struct EventRow {
    rep: usize,
    block: usize,
    a1: bool,
    a2: bool,
    b: bool,
    c: bool,
}

pub(crate) fn lemma_suite(cfg: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let base = Base::new(cfg)?;
    let n = cfg.n;
    let alt = base.alternative(cfg, n)?;
    let part = &alt.partition;
    let setup = setup_for(cfg, &base, largest_block(part), alt.gamma_prime)?;
    let streams = Streams::new(cfg.seed);
    let h = setup.horizons_for(part, cfg.pilot_reps, &streams)?;
    let mut checks = Vec::new();

    // full-sample Hellinger term against the blockwise bound
    let constants = EventConstants { n, gamma: alt.gamma, gamma_prime: alt.gamma_prime, c_event: cfg.params.c_event };
    let mut ew = art.csv("events.csv")?;
    let runs = replicate_in_order(
        cfg.reps,
        "likelihood",
        |r| {
            let rep = setup.replicate(part, &h, Design::Random, None, Construction::Coupled, &streams, r)?;
            let la = loglr_ar(&rep.x.x, &alt.f, &base.f0, &base.noise_p, &alt.sdf.psi, &base.sd0.psi, part)?;
            let lb = loglr_regression(&rep.design, &rep.y, &alt.f, &base.f0, &base.noise_q, part)?;
            let (mut first, mut second) = (Vec::new(), Vec::new());
            for l in 1..=part.k {
                let (s, e) = (part.start(l) - 1, part.bounds[l]);
                first.push((taylor_terms(&rep.x.x[s..e], &rep.x.eps[s + 1..e + 1], &alt.g, &base.noise_p)?, la.blocks[l - 1]));
                second.push((taylor_terms(&rep.design[s..e], &rep.eta[s..e], &alt.g, &base.noise_q)?, lb.blocks[l - 1]));
            }
            let ev = event_diagnostics(part, &first, &second, &constants)?;
            Ok(((la.total, lb.total), ev))
        },
        |r, (_, ev)| {
            for b in &ev.blocks {
                ew.serialize(EventRow { rep: r, block: b.l, a1: b.a1, a2: b.a2, b: b.b, c: b.c })?;
            }
            ew.flush()?;
            Ok(())
        },
    )?;
    let lhs = estimate_from_pairs(&runs.iter().map(|(p, _)| *p).collect::<Vec<_>>());
    let block0 = block0_hellinger(&alt.sdf.psi, &base.sd0.psi)?;
    let cond = streams.derive(crate::rng::names::CONDITIONING, &[]);
    let report = lemma31_check(&lhs, block0, part, cfg.params.conditioning_draws, cfg.params.inner_reps, |l, r, s| {
        let m = part.size(l);
        let one = BlockPartition::with_blocks(m, 1);
        let hz = h.get(&m).ok_or_else(|| Error::Configuration(format!("no horizons for block size {m}")))?;
        let x0 = sample_stationary(&base.sd0, 1, &mut cond.rng("history", &[l as u64, r as u64]))[0];
        let path = [l as u64, r as u64, s as u64];
        let mut wf = WienerFamily::new(cond.key("wiener", &path), setup.dt, setup.levels)?;
        let (traj, _) = embed_ar_side(&base.f0, &base.noise_p, &setup.law_p, x0, m, &mut wf, hz, &mut cond.rng("embed-ar", &path))?;
        let loc = sample_stationary(&base.sd0, m, &mut cond.rng("design", &path));
        let (y, _, _) = embed_regression_side(&base.f0, &base.noise_q, &setup.law_q, &loc, &mut wf, hz, &mut cond.rng("embed-regression", &path))?;
        // conditional block: no initial-density term
        let a = loglr_ar(&traj.x, &alt.f, &base.f0, &base.noise_p, &base.sd0.psi, &base.sd0.psi, &one)?.total;
        let b = loglr_regression(&loc, &y, &alt.f, &base.f0, &base.noise_q, &one)?.total;
        Ok((a, b))
    })?;
    art.json("blockwise.json", &report)?;
    checks.push(Check::new(
        "full-sample H^2 <= stationary term + sum of worst conditional block terms",
        report.holds,
        report.lhs.mean,
        report.rhs,
        format!("{:.6e} (se {:.1e}) <= {:.6e} (se {:.1e})", report.lhs.mean, report.lhs.se, report.rhs, report.rhs_se),
    ));

    let failures = haar_bumps(cfg, &base.spec, 20, 6, art, "haar_bumps.csv")?;
    checks.push(Check::new("Haar coefficient and residual bounds", failures == 0, failures as f64, 0.0, format!("{failures} violations")));

    let pairs = neighborhood_pairs(cfg, &base.spec, &base.noise_p, 10, art, "stationary_pairs.csv")?;
    let failed = pairs.iter().filter(|p| !p.holds).count();
    checks.push(Check::new("stationary Hellinger term within its shift bound", failed == 0, failed as f64, 0.0, format!("{failed} of {} pairs fail", pairs.len())));

    let bb = berbee_checks(cfg.params.berbee_diagonal, 20_000, &streams.derive("berbee", &[]))?;
    checks.push(bb.checks.into_iter().next().expect("mismatch check first"));

    let mut exact_fail = 0;
    for (i, (_, spec)) in exp_specs().into_iter().filter(|(_, s)| s.is_exact()).enumerate() {
        let rep = exp_inequality_check(&spec, &cfg.params.exp_lambdas, 0, &mut streams.rng("exp", &[i as u64]))?;
        exact_fail += rep.rows.iter().filter(|r| !r.holds).count();
    }
    checks.push(Check::new("exponential moment bound by exact enumeration", exact_fail == 0, exact_fail as f64, 0.0, format!("{exact_fail} failures")));
    Ok(checks)
}
