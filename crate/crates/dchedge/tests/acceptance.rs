//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured margins. Tolerances are pinned here, not
//! configured elsewhere.

use dchedge::brute;
use dchedge::harness::DIRECT_RESIDUAL_TOL;
use dchedge::markowitz::{self, ModelVariant};
use dchedge::model::{
    eval_f_surrogate, eval_h_surrogate, natural_residual_surrogate, verify_monotone, Layout,
    PrimalDualPoint, QuadraticObjective, SurrogateAnchor,
};
use dchedge::penalty::{prox_point, PenaltyKind};
use dchedge::phm::{run_phm, PhmRunStatus, PhmState, PhmStop};
use dchedge::sdc::{
    count_nonzero, run_direct_phm, run_sdc, SdcConfig, SdcStatus, NNZ_TOL,
};
use dchedge::synthetic;
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use std::time::Instant;

fn random_penalty_kind(rng: &mut ChaCha8Rng) -> PenaltyKind {
    match rng.random_range(0..3) {
        0 => PenaltyKind::Zero,
        1 => PenaltyKind::L0 { gamma: rng.random_range(1e-6..1e-1) },
        _ => PenaltyKind::L1 { gamma: rng.random_range(1e-3..2.0) },
    }
}

/// Criterion 1: closed-form prox and envelope match the brute-force search
/// within 1e-8 over 1000 random draws, in under 10 seconds.
#[test]
fn acceptance_01_prox_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst_point: f64 = 0.0;
    let mut worst_env: f64 = 0.0;
    for _ in 0..1000 {
        let kind = random_penalty_kind(&mut rng);
        let rho = rng.random_range(1e-4..10.0);
        let n = rng.random_range(1..=8);
        let w = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-5.0..5.0)));
        let fast = prox_point(&kind, rho, &w).expect("prox");
        let slow = brute::prox_brute_force(&kind, rho, &w);
        worst_point = worst_point.max((fast.point - &slow.point).amax());
        worst_env = worst_env.max((fast.envelope_value - slow.envelope_value).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(worst_point < 1e-8, "prox point gap {worst_point}");
    assert!(worst_env < 1e-8, "envelope gap {worst_env}");
    assert!(elapsed < 10.0, "took {elapsed:.1}s");
    println!(
        "ACCEPTANCE 1 prox-oracle-equivalence: PASS (point gap {worst_point:.2e}, \
         envelope gap {worst_env:.2e}, {elapsed:.1}s)"
    );
}

/// Criterion 2: the DC identity holds to 1e-10 relative and the envelope
/// sandwich holds on the same kind of sample set.
#[test]
fn acceptance_02_dc_identity_and_sandwich() {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..1000 {
        let kind = random_penalty_kind(&mut rng);
        let rho = rng.random_range(1e-4..10.0);
        let n = rng.random_range(1..=8);
        let w = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-5.0..5.0)));
        let r = prox_point(&kind, rho, &w).expect("prox");
        let lhs = r.envelope_value;
        let rhs = w.norm_squared() / (2.0 * rho) - r.dc_concave_value;
        worst_rel = worst_rel.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        assert!(lhs >= kind.lower_bound() - 1e-12, "sandwich lower bound");
        assert!(lhs <= kind.value(&w).expect("value") + 1e-12, "sandwich upper bound");
    }
    assert!(worst_rel <= 1e-10, "DC identity relative gap {worst_rel}");
    println!("ACCEPTANCE 2 dc-identity-and-sandwich: PASS (worst relative gap {worst_rel:.2e})");
}

/// Criterion 3: surrogate majorization and anchor equality to 1e-10 on 1000
/// random draws; the tau perturbation is exact on the primal block and the
/// residual perturbation bound holds.
#[test]
fn acceptance_03_surrogate_laws() {
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let mut checked = 0;
    while checked < 1000 {
        // Penalties present on every block so the full inequality with both
        // proximal terms is exercised.
        let prob = synthetic::random_instance(&mut rng, 0);
        let layout = Layout::of(&prob);
        let (xa, ya) = synthetic::random_primal(&mut rng, &prob);
        let rho = rng.random_range(0.05..2.0);
        let (tau1, tau2) = (rng.random_range(1e-5..1e-1), rng.random_range(1e-5..1e-1));
        let anchor = SurrogateAnchor::refresh(&prob, rho, tau1, tau2, xa, ya).expect("anchor");

        // Anchor equality.
        let at_anchor = eval_f_surrogate(&prob, &anchor, &anchor.x, &anchor.ys).unwrap();
        let f_rho_anchor = prob.f_rho(rho, &anchor.x, &anchor.ys).unwrap();
        assert!(
            (at_anchor - f_rho_anchor).abs() <= 1e-10 * (1.0 + f_rho_anchor.abs()),
            "anchor equality: {at_anchor} vs {f_rho_anchor}"
        );

        // Majorization with the full proximal slack.
        let (x, ys) = synthetic::random_primal(&mut rng, &prob);
        let f_rho = prob.f_rho(rho, &x, &ys).unwrap();
        let f_sur = eval_f_surrogate(&prob, &anchor, &x, &ys).unwrap();
        let mut slack = tau1 / 2.0 * (&x - &anchor.x).norm_squared();
        for (i, y) in ys.iter().enumerate() {
            slack += tau2 / 2.0 * prob.probs[i] * (y - &anchor.ys[i]).norm_squared();
        }
        assert!(
            f_rho <= f_sur - slack + 1e-10 * (1.0 + f_sur.abs()),
            "majorization: {f_rho} vs {f_sur} - {slack}"
        );

        // Map perturbation: zero on dual rows, exact tau terms blockwise.
        let z = synthetic::random_point(&mut rng, &prob);
        let point = PrimalDualPoint::from_vector(&layout, &z).unwrap();
        let anchor0 = anchor.with_zero_tau();
        let h_tau = eval_h_surrogate(&prob, &anchor, &z).unwrap();
        let h_0 = eval_h_surrogate(&prob, &anchor0, &z).unwrap();
        let diff = &h_tau - &h_0;
        for j in layout.alpha1_off()..layout.total_dim() {
            assert!(diff[j].abs() < 1e-12, "dual row perturbed");
        }
        let mut block_l1 = DVector::from(diff.rows(0, layout.m1)).norm();
        let mut bound = tau1 * (&point.x - &anchor.x).norm();
        for i in 0..layout.k {
            block_l1 += DVector::from(diff.rows(layout.y_off(i), layout.m2)).norm();
            bound += tau2 * prob.probs[i] * (&point.ys[i] - &anchor.ys[i]).norm();
        }
        assert!(
            (block_l1 - bound).abs() <= 1e-10 * (1.0 + bound),
            "primal-block equality: {block_l1} vs {bound}"
        );

        // Natural-residual perturbation bound via projection nonexpansiveness.
        let (r_tau, _) = natural_residual_surrogate(&prob, &anchor, &z).unwrap();
        let (r_0, _) = natural_residual_surrogate(&prob, &anchor0, &z).unwrap();
        assert!(
            (r_tau - r_0).norm() <= bound + 1e-10 * (1.0 + bound),
            "residual perturbation bound"
        );
        checked += 1;
    }
    println!("ACCEPTANCE 3 surrogate-laws: PASS (1000 draws)");
}

/// Criterion 4: sampled quadratic forms of the built scenario blocks are
/// nonnegative to 1e-10 over 10^4 samples, and an injected indefinite
/// covariance is detected.
#[test]
fn acceptance_04_monotonicity_certificate() {
    let mut min_form = f64::INFINITY;
    for (seed, variant) in [(41u64, ModelVariant::A), (42, ModelVariant::C), (43, ModelVariant::A)]
    {
        let data = markowitz::synthesize_market(5, 4, seed).unwrap();
        let prob = markowitz::build_problem(&data, variant).unwrap();
        let x0 = DVector::from_element(5, 0.2);
        let anchor = SurrogateAnchor::refresh(
            &prob,
            0.7,
            1e-4,
            1e-4,
            x0.clone(),
            vec![x0.clone(); 4],
        )
        .unwrap();
        let report = verify_monotone(&prob, &anchor, 3334, seed).unwrap();
        min_form = min_form.min(report.min_quadratic_form);
    }
    assert!(min_form >= -1e-10, "min sampled quadratic form {min_form}");

    // Indefinite fixture must be caught.
    let data = markowitz::synthesize_market(4, 2, 44).unwrap();
    let mut bad = markowitz::build_problem(&data, ModelVariant::A).unwrap();
    bad.obj_second[0] = Arc::new(QuadraticObjective::pure(-DMatrix::identity(4, 4)));
    let x0 = DVector::from_element(4, 0.25);
    let anchor =
        SurrogateAnchor::refresh(&bad, 0.7, 1e-4, 1e-4, x0.clone(), vec![x0.clone(); 2]).unwrap();
    let report = verify_monotone(&bad, &anchor, 2000, 44).unwrap();
    assert!(
        report.min_quadratic_form < -1e-10,
        "indefinite covariance not detected ({:.3e})",
        report.min_quadratic_form
    );
    println!(
        "ACCEPTANCE 4 monotonicity-certificate: PASS (min form {min_form:.2e} over 10^4 samples, \
         fixture detected at {:.2e})",
        report.min_quadratic_form
    );
}

/// Criterion 5: hedging matches the active-set enumeration oracle within
/// 1e-4 in the primal variables on decoupled instances, with the
/// nonanticipativity sums conserved to 1e-10 at every iteration, in under
/// 60 seconds.
#[test]
fn acceptance_05_phm_vs_oracle() {
    let start = Instant::now();
    let mut worst_gap: f64 = 0.0;
    let mut worst_conservation: f64 = 0.0;
    for (n, k, seed) in [(2usize, 1usize, 51u64), (2, 2, 52), (3, 1, 53), (3, 2, 54)] {
        // Order-one curvature instances keep the residual-to-primal
        // conversion well inside the tolerance.
        let data = synthetic::conditioned_market(n, k, seed);
        let prob = markowitz::build_problem(&data, ModelVariant::D).unwrap();
        let layout = Layout::of(&prob);
        let x0 = DVector::from_element(n, 1.0 / n as f64);
        let anchor = SurrogateAnchor::refresh(
            &prob,
            1.0,
            1e-4,
            1e-4,
            x0.clone(),
            vec![x0.clone(); k],
        )
        .unwrap();
        let mut state = PhmState::new(&prob, &DVector::zeros(layout.total_dim()), 1.0).unwrap();
        let stop = PhmStop { eta1: 1e-7, rho_t: 1.0, eta2: 1e9, inner_index: 0 };
        let run = run_phm(&prob, &anchor, stop, 100_000, &mut state).unwrap();
        assert_eq!(run.status, PhmRunStatus::Satisfied, "hedging did not converge");
        worst_conservation = worst_conservation.max(run.conservation_error);

        let first = brute::solve_block_qp_enumerate(&data.q1, &data.rbar1, data.r1_min).unwrap();
        worst_gap = worst_gap.max((&run.point.x - &first.z).amax());
        for i in 0..k {
            let block =
                brute::solve_block_qp_enumerate(&data.q2[i], &data.rbar2[i], data.r2_min[i])
                    .unwrap();
            worst_gap = worst_gap.max((&run.point.ys[i] - &block.z).amax());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(worst_gap < 1e-4, "primal gap {worst_gap}");
    assert!(worst_conservation <= 1e-10, "conservation {worst_conservation}");
    assert!(elapsed < 60.0, "took {elapsed:.1}s");
    println!(
        "ACCEPTANCE 5 phm-vs-oracle: PASS (primal gap {worst_gap:.2e}, conservation \
         {worst_conservation:.2e}, {elapsed:.1}s)"
    );
}

/// Criterion 6: sparse runs at n=10, K=16 over five seeds keep every
/// surviving component above the hard threshold `sqrt(2 gamma rho-final)`,
/// with KKT_rel <= 1e-2 and feasibility error <= 1e-4, in under 5 minutes.
#[test]
fn acceptance_06_sdc_thresholding() {
    let start = Instant::now();
    let mut worst_kkt: f64 = 0.0;
    let mut worst_feas: f64 = 0.0;
    let mut min_ratio = f64::INFINITY;
    for seed in 1u64..=5 {
        let data = markowitz::synthesize_market(10, 16, seed).unwrap();
        let prob = markowitz::build_problem(&data, ModelVariant::A).unwrap();
        let layout = Layout::of(&prob);
        let mut config = SdcConfig::for_scenarios(16);
        // Residual precision two orders tighter than the default; the drift
        // and objective thresholds stay at their defaults.
        config.eta1 *= 0.01;
        let out = run_sdc(&prob, &config, &DVector::zeros(layout.total_dim())).unwrap();
        assert_eq!(out.status, SdcStatus::Converged, "seed {seed} did not converge");
        let threshold = (2.0 * data.gamma * out.rho_final).sqrt();
        for xj in out.point.x.iter() {
            if xj.abs() > NNZ_TOL {
                min_ratio = min_ratio.min(xj.abs() / threshold);
                assert!(
                    xj.abs() >= threshold * (1.0 - 1e-9),
                    "seed {seed}: component {xj} below threshold {threshold}"
                );
            }
        }
        worst_kkt = worst_kkt.max(out.metrics.kkt_rel);
        worst_feas = worst_feas.max(out.metrics.feas_error);
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(worst_kkt <= 1e-2, "KKT_rel {worst_kkt}");
    assert!(worst_feas <= 1e-4, "feasibility error {worst_feas}");
    assert!(elapsed < 300.0, "took {elapsed:.1}s");
    println!(
        "ACCEPTANCE 6 sdc-thresholding: PASS (min threshold ratio {min_ratio:.1}, \
         KKT_rel {worst_kkt:.2e}, FeasError {worst_feas:.2e}, {elapsed:.1}s)"
    );
}

/// Criterion 7: qualitative benchmark orderings at n=20, K=100 over ten
/// replications. (a) the cardinality term prunes: mean nnz(A) < mean nnz(C)
/// and mean nnz(B) < mean nnz(D); (b) the coupling binds: soc(A), soc(C)
/// within 0.2 + 1e-3 while soc(B) > soc(A) and soc(D) > soc(C); (c) the
/// smoothed runs need strictly fewer hedging steps than the convex baselines
/// on at least 8 of 10 replications. Under 15 minutes.
#[test]
fn acceptance_07_benchmark_orderings() {
    let start = Instant::now();
    let n = 20;
    let k = 100;
    let reps = 10u64;
    let mut nnz = [[0usize; 4]; 10];
    let mut soc = [[0f64; 4]; 10];
    let mut iters = [[0usize; 4]; 10];
    for rep in 0..reps {
        let data = markowitz::synthesize_market(n, k, 100 + rep).unwrap();
        for (vi, variant) in
            [ModelVariant::A, ModelVariant::B, ModelVariant::C, ModelVariant::D]
                .into_iter()
                .enumerate()
        {
            let prob = markowitz::build_problem(&data, variant).unwrap();
            let layout = Layout::of(&prob);
            let mut config = SdcConfig::for_scenarios(k);
            let out = if variant.include_l0 {
                config.eta1 *= 0.01;
                run_sdc(&prob, &config, &DVector::zeros(layout.total_dim())).unwrap()
            } else {
                config.phm_budget = 20_000;
                run_direct_phm(
                    &prob,
                    &config,
                    &DVector::zeros(layout.total_dim()),
                    DIRECT_RESIDUAL_TOL,
                )
                .unwrap()
            };
            let r = rep as usize;
            nnz[r][vi] = count_nonzero(&out.point.x, NNZ_TOL);
            soc[r][vi] = out.metrics.soc;
            iters[r][vi] = out.total_phm_steps;
        }
    }
    let mean = |vi: usize, v: &[[usize; 4]; 10]| {
        v.iter().map(|r| r[vi] as f64).sum::<f64>() / reps as f64
    };
    let mean_f = |vi: usize, v: &[[f64; 4]; 10]| v.iter().map(|r| r[vi]).sum::<f64>() / reps as f64;

    // (a) cardinality orderings on means.
    let (na, nb, nc, nd) = (mean(0, &nnz), mean(1, &nnz), mean(2, &nnz), mean(3, &nnz));
    assert!(na < nc, "mean nnz: A {na} !< C {nc}");
    assert!(nb < nd, "mean nnz: B {nb} !< D {nd}");

    // (b) coupling orderings.
    let (sa, sb, sc, sd) = (mean_f(0, &soc), mean_f(1, &soc), mean_f(2, &soc), mean_f(3, &soc));
    assert!(sa <= 0.2 + 1e-3, "soc(A) {sa}");
    assert!(sc <= 0.2 + 1e-3, "soc(C) {sc}");
    assert!(sb > sa, "soc(B) {sb} !> soc(A) {sa}");
    assert!(sd > sc, "soc(D) {sd} !> soc(C) {sc}");

    // (c) iteration ordering per replication.
    let wins = (0..reps as usize)
        .filter(|&r| iters[r][0].max(iters[r][1]) < iters[r][2].min(iters[r][3]))
        .count();
    assert!(wins >= 8, "iteration ordering held on only {wins}/10 replications");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 900.0, "took {elapsed:.1}s");
    println!(
        "ACCEPTANCE 7 benchmark-orderings: PASS (nnz A {na:.1} < C {nc:.1}, B {nb:.1} < D {nd:.1}; \
         soc A {sa:.3} C {sc:.3} B {sb:.3} D {sd:.3}; iteration wins {wins}/10; {elapsed:.0}s)"
    );
}

/// Criterion 8: the smoothing parameter follows the geometric schedule
/// 1, 0.8, 0.64, ...; the run terminates only once rho <= 1e-4 with the
/// objective stabilized to 1e-3; and the descent ledger holds at every inner
/// step.
#[test]
fn acceptance_08_schedule_and_termination() {
    let data = markowitz::synthesize_market(6, 8, 81).unwrap();
    let prob = markowitz::build_problem(&data, ModelVariant::A).unwrap();
    let layout = Layout::of(&prob);
    let config = SdcConfig::for_scenarios(8);
    assert_eq!(config.rho_floor, 1e-4);
    assert_eq!(config.obj_tol, 1e-3);
    let out = run_sdc(&prob, &config, &DVector::zeros(layout.total_dim())).unwrap();
    assert_eq!(out.status, SdcStatus::Converged);

    // Geometric schedule, exactly.
    for row in &out.trace {
        let expected = config.rho0 * config.rho_decay.powi(row.outer as i32);
        assert!(
            (row.rho - expected).abs() <= 1e-12 * expected,
            "rho at t={} is {}, expected {expected}",
            row.outer,
            row.rho
        );
    }
    let first = [1.0, 0.8, 0.64, 0.512, 0.4096, 0.32768];
    for (t, e) in first.iter().enumerate() {
        let row = out.trace.iter().find(|r| r.outer == t).expect("outer iteration present");
        assert!((row.rho - e).abs() < 1e-12);
    }

    // Termination happened at the first outer iteration where both the
    // smoothing floor and the objective stability held, and not before.
    let outer_end_obj: Vec<(usize, f64, f64)> = {
        let mut v: Vec<(usize, f64, f64)> = Vec::new();
        for row in &out.trace {
            if let Some(last) = v.last_mut() {
                if last.0 == row.outer {
                    last.1 = row.objective;
                    continue;
                }
            }
            v.push((row.outer, row.objective, row.rho));
        }
        v
    };
    assert!(out.rho_final <= config.rho_floor, "terminated above the floor");
    for w in outer_end_obj.windows(2) {
        let (t_prev, obj_prev, _) = w[0];
        let (_t, obj, rho) = w[1];
        let qualifies = rho <= config.rho_floor && (obj - obj_prev).abs() <= config.obj_tol;
        let is_last = w[1].0 == outer_end_obj.last().unwrap().0;
        if qualifies {
            assert!(is_last, "run continued past a qualifying outer iteration t={t_prev}");
        }
    }
    let last_pair = outer_end_obj.windows(2).last().expect("at least two outer iterations");
    assert!(
        (last_pair[1].1 - last_pair[0].1).abs() <= config.obj_tol,
        "objective not stabilized at termination"
    );

    // Descent ledger at every inner step.
    for row in &out.trace {
        assert!(
            row.f_rho_accepted
                <= row.f_rho_anchor - row.sq_drift
                    + row.objective_slack
                    + 1e-9 * (1.0 + row.f_rho_anchor.abs()),
            "descent ledger violated at (t={}, l={})",
            row.outer,
            row.inner
        );
    }
    println!(
        "ACCEPTANCE 8 schedule-and-termination: PASS ({} outer iterations, rho_final {:.3e}, \
         {} ledger rows)",
        out.outer_iterations,
        out.rho_final,
        out.trace.len()
    );
}

/// Criterion 9: two bench runs with identical configuration and base seed
/// produce byte-identical metric tables.
#[test]
fn acceptance_09_bench_determinism() {
    use dchedge::harness::{cmd_bench, parse_variants, RunConfig, SdcOverrides};
    let dir1 = std::env::temp_dir().join("dchedge_acc9_a");
    let dir2 = std::env::temp_dir().join("dchedge_acc9_b");
    std::fs::remove_dir_all(&dir1).ok();
    std::fs::remove_dir_all(&dir2).ok();
    let base = RunConfig {
        variants: parse_variants("A,B,C,D").unwrap(),
        n: 5,
        k: 4,
        replications: 2,
        base_seed: 77,
        out_dir: dir1.clone(),
        data_csv: None,
        overrides: SdcOverrides::default(),
    };
    let s1 = cmd_bench(&base).unwrap();
    let s2 = cmd_bench(&RunConfig { out_dir: dir2.clone(), ..base }).unwrap();
    let f1 = std::fs::read(dir1.join("summary_metrics.csv")).unwrap();
    let f2 = std::fs::read(dir2.join("summary_metrics.csv")).unwrap();
    assert_eq!(f1, f2, "metric tables differ between identical runs");
    assert_eq!(s1.metrics_csv, s2.metrics_csv);
    std::fs::remove_dir_all(&dir1).ok();
    std::fs::remove_dir_all(&dir2).ok();
    println!(
        "ACCEPTANCE 9 bench-determinism: PASS ({} bytes, byte-identical)",
        f1.len()
    );
}
