use std::sync::Arc;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

use deki_core::darcy::{
    assemble_darcy, observation_matrix, solve_darcy, DarcySolver, GridField, GridSpec,
    ObservationPoints,
};
use deki_core::diagnostics::{covariance_extremes, member_span_basis, subspace_residual};
use deki_core::experiment::{self, EnsembleSpec, ExperimentConfig, StreamKind, StreamSpec};
use deki_core::mcmc::{gaussian_log_density, run_chain, AcceptanceRule, PcnSampler};
use deki_core::random_field::{build_kle, matern_cov, MaternParams};
use deki_core::rng::seeded;
use deki_core::streams::{
    DarcyPointStream, NoiseModel, ObservationStream, OperatorFamily, Selector, SyntheticStream,
};
use deki_core::{
    run_deki_observed, step_size_bound, Ensemble, RegularizedProblem, RunOptions, StepSchedule,
};

struct Case {
    ens0: Ensemble,
    problem: RegularizedProblem,
    stream: SyntheticStream,
    h: f64,
}

fn case(
    seed: u64,
    dim: usize,
    size: usize,
    blocks: usize,
    alpha: f64,
    sigma0: f64,
    fraction: f64,
) -> Case {
    let mut rng = seeded(seed);
    let family = Arc::new(OperatorFamily::random(dim, blocks, 0.0, 1.0, &mut rng).unwrap());
    let z_star = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
    let problem = RegularizedProblem::new(
        alpha,
        z_star.clone(),
        family.average().clone(),
        family.bound(),
    )
    .unwrap();
    let ens0 = Ensemble::gaussian(dim, size, sigma0, &mut rng).unwrap();
    let h = fraction
        * step_size_bound(ens0.stats().spread_energy, alpha, family.bound(), size).unwrap();
    let stream = SyntheticStream::new(
        family,
        Selector::Iid,
        z_star,
        NoiseModel::new(0.1).unwrap(),
        seeded(seed + 1),
    )
    .unwrap();
    Case {
        ens0,
        problem,
        stream,
        h,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ensemble_invariants_hold_along_runs(
        seed in 0u64..10_000,
        dim in 2usize..7,
        extra in 0usize..6,
        per_row in any::<bool>(),
        alpha in 0.5f64..2.0,
        fraction in 0.1f64..1.0,
    ) {
        let size = dim + 1 + extra;
        let sigma0 = 0.9 / (dim as f64).sqrt();
        let mut c = case(seed, dim, size, if per_row { dim } else { 1 }, alpha, sigma0, fraction);
        let a_max = c.problem.a_max();
        let basis = member_span_basis(&c.ens0);
        let (l0, _) = covariance_extremes(&c.ens0.stats());
        let mut prev = c.ens0.stats();
        let mut failures = Vec::new();
        let opts = RunOptions::new(200, StepSchedule::constant(c.h).unwrap());
        let h = c.h;
        let j = size as f64;
        let out = run_deki_observed(&mut c.stream, &c.ens0, &c.problem, &opts, &mut seeded(0), |t, ens| {
            let st = ens.stats();
            let tf = t as f64;
            for k in 0..ens.size() {
                if subspace_residual(&basis, &ens.member(k)) > 1e-9 {
                    failures.push(format!("t={t}: member {k} left the initial span"));
                }
            }
            if st.spread_energy > prev.spread_energy * (1.0 + 1e-12) {
                failures.push(format!("t={t}: spread increased"));
            }
            let (lmin, lmax) = covariance_extremes(&st);
            if lmin * (1.0 + 1e-9) < l0 / (tf + 1.0) {
                failures.push(format!("t={t}: lambda_min {lmin} below {}", l0 / (tf + 1.0)));
            }
            if lmax > (1.0 + 1e-9) * j / (h * alpha * (tf + 1.0)) {
                failures.push(format!("t={t}: lambda_max {lmax} above the collapse bound"));
            }
            // C_{t-1} - C_t = 2h C A C - h^2 C A C A C with |C_{t-1}| <= J/(h alpha t)
            let increment = (&prev.covariance - &st.covariance).norm();
            let lip = a_max + alpha;
            let bound = lip * j.powf(2.5) * (2.0 + lip * j / (alpha * tf)) / (h * alpha * alpha * tf * tf);
            if increment > bound * (1.0 + 1e-9) {
                failures.push(format!("t={t}: covariance increment {increment} above {bound}"));
            }
            let fro = st.covariance.norm();
            let e = st.spread_energy;
            if fro > e * (1.0 + 1e-12) || fro * (1.0 + 1e-12) < e / j.sqrt() {
                failures.push(format!("t={t}: |C|_F = {fro} outside [{}, {e}]", e / j.sqrt()));
            }
            prev = st;
        })
        .unwrap();
        prop_assert!(failures.is_empty(), "{}", failures.join("; "));
        prop_assert!(out.records.iter().all(|r| r.loss_gap >= -1e-9));
    }

    #[test]
    fn darcy_matrix_is_symmetric_positive_definite(seed in 0u64..1000, n in 2usize..9, amp in 0.0f64..50.0) {
        let g = GridSpec::new(n).unwrap();
        let mut rng = seeded(seed);
        let (p, q) = (rng.random_range(0.5..4.0), rng.random_range(0.5..4.0));
        let a = GridField::from_fn(g, |x, y| amp * (p * x).sin() * (q * y).cos()).unwrap();
        let m = assemble_darcy(&a).unwrap().to_dense();
        prop_assert_eq!(&m, &m.transpose());
        prop_assert!(m.clone().cholesky().is_some());
    }

    #[test]
    fn darcy_solve_is_linear(seed in 0u64..1000, n in 2usize..10) {
        let g = GridSpec::new(n).unwrap();
        let mut rng = seeded(seed);
        let a = GridField::new(g, DVector::from_fn(g.dim(), |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let z1 = GridField::new(g, DVector::from_fn(g.dim(), |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let z2 = GridField::new(g, DVector::from_fn(g.dim(), |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let sum = GridField::new(g, z1.values() + z2.values()).unwrap();
        let lhs = solve_darcy(&a, &sum).unwrap();
        let rhs = solve_darcy(&a, &z1).unwrap().values() + solve_darcy(&a, &z2).unwrap().values();
        prop_assert!((lhs.values() - rhs).amax() <= 1e-10);
    }

    #[test]
    fn forward_matrix_matches_dense_inverse(seed in 0u64..1000, n in 2usize..11, k in 1usize..8) {
        let g = GridSpec::new(n).unwrap();
        let mut rng = seeded(seed);
        let a = GridField::new(g, DVector::from_fn(g.dim(), |_, _| rng.random_range(-2.0..2.0))).unwrap();
        let pts = ObservationPoints::new((0..k).map(|_| (rng.random_range(0.01..0.99), rng.random_range(0.01..0.99))).collect()).unwrap();
        let inverse = assemble_darcy(&a).unwrap().to_dense().try_inverse().unwrap();
        let expected = observation_matrix(&pts, g) * inverse;
        let s = DarcySolver::new(&a).unwrap().forward_matrix(&pts);
        prop_assert!((s - expected).amax() <= 1e-8);
    }

    #[test]
    fn matern_is_nonincreasing(ell in 0.01f64..2.0, nu in 0.1f64..6.0) {
        let p = MaternParams::new(ell, nu).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..1000 {
            let c = matern_cov(i as f64 * ell * 0.01, p).unwrap();
            prop_assert!(c <= prev);
            prev = c;
        }
    }

    #[test]
    fn kle_eigenvalues_are_nonnegative_and_sorted(n in 2usize..9, ell in 0.02f64..1.0, nu in 0.3f64..5.0) {
        let b = build_kle(GridSpec::new(n).unwrap(), MaternParams::new(ell, nu).unwrap(), n * n).unwrap();
        let ev = b.eigenvalues();
        prop_assert!(ev.iter().all(|&l| l >= 0.0));
        prop_assert!(ev.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn chains_are_deterministic(seed in 0u64..1000, beta in 0.0f64..1.0, reversible in any::<bool>()) {
        let scales = DVector::from_vec(vec![1.0, 0.5, 0.1]);
        let rule = if reversible { AcceptanceRule::PriorReversible } else { AcceptanceRule::TargetRatio };
        let target = gaussian_log_density(DVector::from_vec(vec![0.3, 0.0, -0.2]), scales.clone());
        let s = PcnSampler::new(beta, scales, target, rule).unwrap();
        let a = run_chain(&s, DVector::zeros(3), 50, &mut seeded(seed)).unwrap();
        let b = run_chain(&s, DVector::zeros(3), 50, &mut seeded(seed)).unwrap();
        prop_assert_eq!(a.states, b.states);
    }

    #[test]
    fn point_streams_are_reproducible_and_one_strip_is_iid(seed in 0u64..1000, k in 1usize..6, sigma in 0.0f64..0.5) {
        let g = GridSpec::new(4).unwrap();
        let solver = Arc::new(DarcySolver::with_dense_cache(&GridField::constant(g, 0.2)).unwrap());
        let z = GridField::from_fn(g, |x, y| x * y).unwrap();
        let noise = NoiseModel::new(sigma).unwrap();
        let mut a = DarcyPointStream::iid(solver.clone(), k, &z, noise, seeded(seed)).unwrap();
        let mut b = DarcyPointStream::periodic(solver, k, 1, &z, noise, seeded(seed)).unwrap();
        for _ in 0..5 {
            let (x, y) = (a.next_observation().unwrap(), b.next_observation().unwrap());
            prop_assert_eq!(x.operator.as_slice(), y.operator.as_slice());
            prop_assert_eq!(x.data.as_slice(), y.data.as_slice());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn run_directories_are_complete(
        seed in 0u64..1000,
        horizon in 0usize..25,
        kind in prop::sample::select(StreamKind::ALL.to_vec()),
        size in 3usize..12,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let base = ExperimentConfig::desk();
        let cfg = ExperimentConfig {
            grid_n: 3,
            horizon,
            ensemble: EnsembleSpec { size, ..base.ensemble },
            stream: StreamSpec { kind, points: 5, chain_truncation: 4, ..base.stream },
            seed: Some(seed),
            replicates: 1,
            reference_draws: 40,
            warmup_draws: 5,
            output: dir.path().to_path_buf(),
            ..base
        };
        experiment::run_experiment(&cfg).unwrap();
        let run = experiment::run_dir(&cfg, seed);
        let text = std::fs::read_to_string(run.join(experiment::RECORDS_FILE)).unwrap();
        let mut lines = text.lines();
        prop_assert_eq!(lines.next().unwrap(), "t,E_t,lambda_min_C,lambda_max_C,loss_gap,err_ref,err_truth");
        prop_assert_eq!(lines.count(), horizon);
        let meta = experiment::read_metadata(&run).unwrap();
        prop_assert_eq!(meta.config.hash().unwrap(), meta.config_hash);
        prop_assert!(experiment::verify_run(&run).unwrap());
    }
}

/// Mean increments per step averaged over 100 seeds, for a whitened
/// ensemble and the target-rate step.
fn mean_increments(lambda: f64, horizon: usize) -> Vec<f64> {
    let (dim, size, seeds) = (6, 7, 100u64);
    let mut sums = vec![0.0; horizon];
    for seed in 0..seeds {
        let mut c = case(seed, dim, size, 2, 1.0, 1.0, 0.9);
        let ens0 = Ensemble::whitened(dim, size, 1.0, &mut seeded(seed + 77)).unwrap();
        let schedule = experiment::resolve_schedule(
            experiment::StepSpec::TargetRate { lambda },
            &ens0,
            1.0,
            c.problem.a_max(),
        )
        .unwrap();
        let mut prev = ens0.mean();
        let opts = RunOptions::new(horizon, schedule);
        run_deki_observed(
            &mut c.stream,
            &ens0,
            &c.problem,
            &opts,
            &mut seeded(0),
            |t, ens| {
                let mean = ens.mean();
                sums[t - 1] += (&mean - &prev).norm_squared() / seeds as f64;
                prev = mean;
            },
        )
        .unwrap();
    }
    sums
}

/// `E|mean_{t+1} - mean_t|^2 <= B/(t+1)^2` with `B` fitted at `t = 1`.
#[test]
fn mean_increments_decay_like_inverse_square() {
    let sums = mean_increments(0.9, 400);
    let fitted = sums[0] * 4.0;
    for (i, m) in sums.iter().enumerate() {
        let t = (i + 1) as f64;
        assert!(
            *m <= fitted / (t + 1.0).powi(2),
            "t = {t}: {m} > {}",
            fitted / (t + 1.0).powi(2)
        );
    }
}

/// The increment bound `((A_max + alpha) + h (A_max + alpha)^2) J / (alpha (t+1)^2)`
/// carries no `1/h`, while the increment itself behaves like `1/(h t^2)`, so
/// it breaks for small steps.
#[test]
fn increment_bound_without_step_factor_fails_for_small_steps() {
    let (dim, size, alpha) = (2, 4, 0.5);
    let mut c = case(4629, dim, size, dim, alpha, 0.9 / (dim as f64).sqrt(), 0.1);
    let (a_max, h, j) = (c.problem.a_max(), c.h, size as f64);
    let mut prev = c.ens0.stats().covariance;
    let mut worst = 0.0f64;
    let opts = RunOptions::new(200, StepSchedule::constant(h).unwrap());
    run_deki_observed(
        &mut c.stream,
        &c.ens0,
        &c.problem,
        &opts,
        &mut seeded(0),
        |t, ens| {
            let cov = ens.stats().covariance;
            let bound =
                ((a_max + alpha) + h * (a_max + alpha).powi(2)) * j / (alpha * (t as f64).powi(2));
            worst = worst.max((&prev - &cov).norm() / bound);
            prev = cov;
        },
    )
    .unwrap();
    assert!(worst > 1.0, "largest ratio {worst}");
}

#[test]
fn frobenius_sandwich_on_rank_deficient_ensembles() {
    let mut rng = seeded(3);
    for size in 2..8 {
        let ens = Ensemble::gaussian(12, size, 1.0, &mut rng).unwrap();
        let st = ens.stats();
        let fro = st.covariance.norm();
        assert!(fro <= st.spread_energy * (1.0 + 1e-12));
        assert!(fro * (1.0 + 1e-12) >= st.spread_energy / (size as f64).sqrt());
    }
}
