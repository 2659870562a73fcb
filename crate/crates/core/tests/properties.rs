//! Property tests for the module invariants.

use proptest::prelude::*;

use eqlab_core::bounds::mixing_tail_check;
use eqlab_core::coupling::embed::{embed_ar_side, Horizons, Tree};
use eqlab_core::coupling::gaps::checked_sums;
use eqlab_core::coupling::{ScoreLaw, WienerFamily};
use eqlab_core::grid::{Grid, GridFunction};
use eqlab_core::haar::{coefficient_bounds_check, haar_expand, max_residual};
use eqlab_core::likelihood::{loglr_ar, loglr_regression, BlockPartition};
use eqlab_core::models::{
    check_membership, check_neighborhood, random_neighborhood, rates, FunctionClassSpec, NoiseModel, PerturbedFunction,
    RateConstants,
};
use eqlab_core::rng::{rng_from_key, Streams};
use eqlab_core::simulate::simulate_ar;
use eqlab_core::stationary::{lemma61_check, minorization_ratio, solve_stationary, transfer_apply};

fn coarse() -> Grid {
    Grid::new(-10.0, 10.0, 1.0 / 64.0).unwrap()
}

fn coarse_spec() -> FunctionClassSpec {
    FunctionClassSpec { grid: coarse(), ..FunctionClassSpec::default() }
}

fn noise_strategy() -> impl Strategy<Value = (u8, f64, f64)> {
    (0u8..3, 0.5f64..1.5, 15.0f64..40.0)
}

fn build_noise((family, scale, nu): (u8, f64, f64), grid: Grid) -> NoiseModel {
    match family {
        0 => NoiseModel::gaussian(scale, grid),
        // wider scales and heavier tails leak mass off [-10, 10] and are rejected
        1 => NoiseModel::logistic(scale * 0.35, grid),
        _ => NoiseModel::student_t(nu, scale * 0.7, grid),
    }
    .unwrap()
}

fn quad(g: &GridFunction, h: impl Fn(f64, f64) -> f64, weight: &GridFunction) -> f64 {
    g.zip_with(weight, h).unwrap().integral()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noise_tables_integrate_consistently(params in noise_strategy()) {
        let noise = build_noise(params, Grid::default());
        let d = &noise.density;
        prop_assert!((d.integral() - 1.0).abs() < 1e-6);
        prop_assert!(quad(&noise.score, |s, p| s * p, d).abs() < 1e-6);
        prop_assert!((quad(&noise.score, |s, p| s * s * p, d) - noise.fisher_info).abs() < 1e-6);
    }

    #[test]
    fn rates_decrease_in_n(beta in 1.01f64..6.0, c in 0.01f64..10.0, c_prime in 0.01f64..10.0,
                           n in 3usize..10_000_000, step in 1usize..1_000_000) {
        let spec = FunctionClassSpec { beta, ..FunctionClassSpec::default() };
        let n2 = (n + step).min(10_000_000);
        prop_assume!(n2 > n);
        let (g1, p1) = rates(&RateConstants { c, c_prime, n }, &spec).unwrap();
        let (g2, p2) = rates(&RateConstants { c, c_prime, n: n2 }, &spec).unwrap();
        prop_assert!(g2 < g1 && p2 < p1);
    }

    #[test]
    fn zero_perturbation_is_in_every_neighborhood(amp in 0.0f64..0.45, freq in 0.1f64..1.0, phase in 0.0f64..6.3,
                                                  n in 2usize..100_000) {
        let spec = FunctionClassSpec::default();
        let f0 = GridFunction::from_fn(spec.grid, |x| amp * (freq * x + phase).sin());
        prop_assume!(check_membership(&f0, &spec).unwrap().ok());
        let pf = PerturbedFunction::unperturbed(f0, &spec);
        prop_assert!(check_neighborhood(&pf, &RateConstants::new(n), &spec).unwrap().ok());
    }

    #[test]
    fn random_neighborhoods_stay_in_budget(seed in any::<u64>(), n in 16usize..100_000) {
        let spec = FunctionClassSpec::default();
        let rc = RateConstants::new(n);
        let pf = random_neighborhood(&mut rng_from_key(seed), &spec, &rc).unwrap();
        let report = check_neighborhood(&pf, &rc, &spec).unwrap();
        prop_assert!(report.ok(), "{:?}", report.violations);
    }

    #[test]
    fn haar_expansions_respect_their_bounds(seed in any::<u64>(), n in 16usize..100_000, j_star in 2u32..9) {
        let spec = FunctionClassSpec::default();
        let pf = random_neighborhood(&mut rng_from_key(seed), &spec, &RateConstants::new(n)).unwrap();
        let exp = haar_expand(&pf.g, spec.a, spec.b, j_star).unwrap();
        let report = coefficient_bounds_check(&exp, &pf.g);
        prop_assert!(report.violations.is_empty(), "{:?}", report.violations);
        let res = max_residual(&exp, &pf.g);
        prop_assert!(res <= exp.residual_sup_bound * (1.0 + 1e-6) + 1e-12, "{res} > {}", exp.residual_sup_bound);
        // Parseval on the truncated span
        let energy: f64 = exp.c0 * exp.c0 + exp.coeffs.iter().flatten().map(|c| c * c).sum::<f64>();
        let norm = pf.g.map(|v| v * v).integral();
        prop_assert!(energy <= norm * (1.0 + 1e-4) + 1e-12, "{energy} > {norm}");
    }

    #[test]
    fn mixing_tail_frequencies_fall_with_the_threshold(seed in any::<u64>(), cells in 1usize..6,
                                                       c_lo in 0.1f64..2.0, factor in 1.0f64..4.0) {
        use rand::Rng;
        let mut rng = rng_from_key(seed);
        let sums: Vec<Vec<f64>> = (0..150).map(|_| (0..cells).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let expected = vec![0.0; cells];
        let lo = mixing_tail_check(&sums, &expected, &vec![c_lo; cells]).unwrap();
        let hi = mixing_tail_check(&sums, &expected, &vec![c_lo * factor; cells]).unwrap();
        for (a, b) in lo.rows.iter().zip(&hi.rows) {
            prop_assert!(b.frequency <= a.frequency);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solver_output_is_a_fixed_point(amp in 0.0f64..0.5, freq in 0.2f64..1.5, params in noise_strategy()) {
        let grid = coarse();
        let noise = build_noise(params, grid);
        let f = GridFunction::from_fn(grid, |x| amp * (freq * x).sin());
        let tol = 1e-10;
        let sd = solve_stationary(&f, &noise, tol, 2000).unwrap();
        let next = transfer_apply(&sd.psi, &f, &noise).unwrap();
        prop_assert!(next.l1_distance(&sd.psi).unwrap() <= 2.0 * tol);
        // cells below 1e-6 mass sit where truncation drops inflow from outside the grid
        prop_assert!(minorization_ratio(&sd, &f, &noise, 1e-6) >= 1.0 - 1e-6);
    }

    #[test]
    fn ar_paths_reconstruct_exactly_and_repeat(seed in any::<u64>(), amp in 0.0f64..0.5, n in 1usize..2000) {
        let grid = coarse();
        let noise = NoiseModel::gaussian(1.0, grid).unwrap();
        let f = GridFunction::from_fn(grid, |x| amp * x.sin());
        let sd = solve_stationary(&f, &noise, 1e-10, 2000).unwrap();
        let streams = Streams::new(seed);
        let a = simulate_ar(&f, &noise, &sd, n, &streams);
        prop_assert_eq!(a.reconstruction_error(&f), 0.0);
        prop_assert_eq!(a, simulate_ar(&f, &noise, &sd, n, &streams));
    }

    #[test]
    fn log_ratio_splits_over_blocks(seed in any::<u64>(), n in 2usize..3000) {
        let spec = coarse_spec();
        let rc = RateConstants::new(n.max(16));
        let pf = random_neighborhood(&mut rng_from_key(seed), &spec, &rc).unwrap();
        let noise = NoiseModel::gaussian(1.0, spec.grid).unwrap();
        let f = pf.f();
        let sd0 = solve_stationary(&pf.f0, &noise, 1e-10, 2000).unwrap();
        let sdf = solve_stationary(&f, &noise, 1e-10, 2000).unwrap();
        let x = simulate_ar(&pf.f0, &noise, &sd0, n, &Streams::new(seed)).x;
        let part = BlockPartition::new(n);
        let lr = loglr_ar(&x, &f, &pf.f0, &noise, &sdf.psi, &sd0.psi, &part).unwrap();
        prop_assert_eq!(lr.blocks.len(), part.k);
        let naive: f64 = (1..=n).map(|i| noise.ln_pdf(x[i] - f.eval(x[i - 1])) - noise.ln_pdf(x[i] - pf.f0.eval(x[i - 1]))).sum::<f64>()
            + sdf.psi.eval(x[0]).ln() - sd0.psi.eval(x[0]).ln();
        prop_assert!((lr.total - naive).abs() <= 1e-9 * (n as f64).max(1.0) * (1.0 + naive.abs()));
        let again = loglr_ar(&x, &f, &pf.f0, &noise, &sdf.psi, &sd0.psi, &part).unwrap();
        prop_assert_eq!(lr.total.to_bits(), again.total.to_bits());
        // regression ratio: no initial term, same block split
        let reg = loglr_regression(&x[..n], &x[1..], &f, &pf.f0, &noise, &part).unwrap();
        prop_assert!((reg.total - (lr.total - lr.block0)).abs() <= 1e-9 * (n as f64) * (1.0 + reg.total.abs()));
    }

    #[test]
    fn coupling_ledgers_pass_audit_and_cross_check(seed in any::<u64>(), m in 1usize..400, j_star in 1u32..5) {
        let grid = Grid::default();
        let noise = NoiseModel::gaussian(1.0, grid).unwrap();
        let law = ScoreLaw::for_noise(&noise).unwrap();
        let f0 = GridFunction::from_fn(grid, |x| 0.4 * x.sin());
        let h = Horizons::unbounded(Tree::new(-1.0, 1.0, j_star).unwrap());
        let mut wf = WienerFamily::new(seed, 1e-3, 8).unwrap();
        let (traj, ledger) = embed_ar_side(&f0, &noise, &law, 0.0, m, &mut wf, &h, &mut rng_from_key(seed ^ 1)).unwrap();
        prop_assert!(ledger.audit().is_ok());
        prop_assert!(checked_sums(&ledger, &mut wf).is_ok());
        prop_assert_eq!(traj.reconstruction_error(&f0), 0.0);
    }
}

proptest! {
    // the stationary shift bound over neighborhood pairs; at least 50 pairs
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn stationary_hellinger_stays_below_the_shift_bound(seed in any::<u64>(), n in 16usize..100_000) {
        let spec = coarse_spec();
        let pf = random_neighborhood(&mut rng_from_key(seed), &spec, &RateConstants::new(n)).unwrap();
        let noise = NoiseModel::gaussian(1.0, spec.grid).unwrap();
        let r = lemma61_check(&pf.f(), &pf.f0, &noise, spec.m, 1e-12).unwrap();
        prop_assert!(r.holds, "{} > {}", r.lhs, r.rhs);
    }
}
