use super::*;
use crate::conditions::find_w;
use crate::linalg::{SimDiagOptions, C64};
use crate::model::{ClassicalDiag, Example2};
use crate::povm::construct_optimal;

fn tols() -> Tolerances {
    Tolerances::default()
}

fn example2() -> Example2 {
    Example2::new(C64::new(0.6, 0.0), 1.0, 2.0).unwrap()
}

fn optimal(m: &dyn StateModel, theta: &[f64]) -> Povm {
    let a = analyze_point(m, &ParamPoint::new(theta.to_vec()), &tols(), DerivativeMode::Auto).unwrap();
    let w = find_w(&a.slds, &tols(), SimDiagOptions::default());
    construct_optimal(&a.slds, w.certified().unwrap(), &tols(), SimDiagOptions::default()).unwrap()
}

fn eigenbasis() -> Povm {
    let effects = (0..3)
        .map(|k| {
            let mut d = [0.0; 3];
            d[k] = 1.0;
            CMatrix::from_real_diag(&d)
        })
        .collect();
    Povm::new(effects, &tols()).unwrap().0
}

fn trivial(n: usize) -> Povm {
    Povm::new(vec![CMatrix::identity(n)], &tols()).unwrap().0
}

fn bundle(m: &dyn StateModel, theta: &[f64]) -> StateBundle {
    eval_bundle(m, &ParamPoint::new(theta.to_vec()), 1e-5, DerivativeMode::Auto).unwrap()
}

#[test]
fn trivial_povm_puts_everything_on_one_outcome() {
    let rho = bundle(&ClassicalDiag::default(), &[0.2, 0.3]).rho;
    assert_eq!(sample_povm(&trivial(3), &rho, 500, 1, &tols()).unwrap(), vec![500]);
}

#[test]
fn example2_sample_proportions() {
    let p = optimal(&example2(), &[0.25, 0.5]);
    let rho = bundle(&example2(), &[0.25, 0.5]).rho;
    let probs = outcome_probabilities(&p, &rho, &tols()).unwrap();
    assert_eq!(probs[2], 0.0);
    let n = 100_000u64;
    for seed in 0..5 {
        let c = sample_povm(&p, &rho, n, seed, &tols()).unwrap();
        assert_eq!(c.iter().sum::<u64>(), n);
        assert_eq!(c[2], 0);
        for k in 0..2 {
            let sigma = (n as f64 * probs[k] * (1.0 - probs[k])).sqrt();
            assert!((c[k] as f64 - n as f64 * probs[k]).abs() <= 5.0 * sigma);
        }
    }
}

#[test]
fn binomial_concentration() {
    let n = 100_000u64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = sample_counts(&[0.5, 0.5], n, &mut rng);
    assert_eq!(c[0] + c[1], n);
    assert!((c[0] as f64 - 50_000.0).abs() <= 5.0 * (n as f64 * 0.25).sqrt());
}

#[test]
fn negative_probability_rejected() {
    let (p, _) = Povm::new(
        vec![CMatrix::from_real_diag(&[1.0, 0.0]), CMatrix::from_real_diag(&[0.0, 1.0])],
        &tols(),
    )
    .unwrap();
    let bad = CMatrix::from_real_diag(&[1.1, -0.1]);
    assert!(matches!(outcome_probabilities(&p, &bad, &tols()), Err(EstimateError::NegativeProbability { index: 1, .. })));
    let tiny = CMatrix::from_real_diag(&[1.0 + 5e-10, -5e-10]);
    assert_eq!(outcome_probabilities(&p, &tiny, &tols()).unwrap()[1], 0.0);
}

#[test]
fn expected_counts_return_the_point() {
    let m = ClassicalDiag::default();
    let b = bundle(&m, &[0.2, 0.3]);
    let p = eigenbasis();
    let fc = classical_fi(&p, &b, tols().p).f_c;
    let th = one_step_estimate(&[2, 3, 5], &p, &b, &fc, &tols()).unwrap();
    assert!((th[0] - 0.2).abs() < 1e-12 && (th[1] - 0.3).abs() < 1e-12);
}

#[test]
fn one_cell_surplus_moves_along_first_axis() {
    // Moving a count from cell 3 to cell 1 gives score F e_1, so θ̂ − θ = e_1 / N.
    let m = ClassicalDiag::default();
    let b = bundle(&m, &[0.2, 0.3]);
    let p = eigenbasis();
    let fc = classical_fi(&p, &b, tols().p).f_c;
    let th = one_step_estimate(&[3, 3, 4], &p, &b, &fc, &tols()).unwrap();
    assert!((th[0] - 0.3).abs() < 1e-10 && (th[1] - 0.3).abs() < 1e-10);
}

#[test]
fn trivial_povm_is_singular() {
    let m = ClassicalDiag::default();
    let b = bundle(&m, &[0.2, 0.3]);
    let p = trivial(3);
    let fc = classical_fi(&p, &b, tols().p).f_c;
    assert!(matches!(one_step_estimate(&[10], &p, &b, &fc, &tols()), Err(EstimateError::SingularFisher { .. })));
}

#[test]
fn classical_diag_covariance_matches_prediction() {
    let m = ClassicalDiag::default();
    let cfg = SimConfig { seed: 7, n: 1000, r: 2000, delta: vec![0.0, 0.0] };
    let res = run_trials(&m, &eigenbasis(), &ParamPoint::new(vec![0.2, 0.3]), &cfg, &tols()).unwrap();
    assert!(res.rel_err <= 0.1, "rel_err {}", res.rel_err);
    for (b, bound) in res.mean_bias.iter().zip(&res.bias_bound) {
        assert!(b.abs() <= *bound);
    }
    assert!(res.emp_cov.symmetric_residual() < 1e-15);
    let bar = 3.0 * res.stat_scale * res.pred_cov.max_abs();
    assert!(res.qcrb_min_gap.unwrap() >= -bar);
}

#[test]
fn trials_are_reproducible() {
    let m = ClassicalDiag::default();
    let cfg = SimConfig { seed: 42, n: 50, r: 20, delta: vec![0.0, 0.0] };
    let th = ParamPoint::new(vec![0.2, 0.3]);
    let a = run_trials(&m, &eigenbasis(), &th, &cfg, &tols()).unwrap();
    let b = run_trials(&m, &eigenbasis(), &th, &cfg, &tols()).unwrap();
    assert_eq!(a.emp_cov, b.emp_cov);
    assert_eq!(a.mean_bias, b.mean_bias);
    let c = run_trials(&m, &eigenbasis(), &th, &SimConfig { seed: 43, ..cfg }, &tols()).unwrap();
    assert_ne!(a.emp_cov, c.emp_cov);
}

#[test]
fn invalid_configs() {
    let m = ClassicalDiag::default();
    let th = ParamPoint::new(vec![0.2, 0.3]);
    for cfg in [
        SimConfig { seed: 0, n: 0, r: 10, delta: vec![0.0, 0.0] },
        SimConfig { seed: 0, n: 10, r: 1, delta: vec![0.0, 0.0] },
        SimConfig { seed: 0, n: 10, r: 10, delta: vec![0.0] },
    ] {
        assert!(matches!(run_trials(&m, &eigenbasis(), &th, &cfg, &tols()), Err(EstimateError::InvalidConfig(_))));
    }
    let cfg = SimConfig { seed: 0, n: 10, r: 10, delta: vec![0.9, 0.0] };
    assert!(matches!(run_trials(&m, &eigenbasis(), &th, &cfg, &tols()), Err(EstimateError::Model(ModelError::OutOfDomain { .. }))));
}

#[test]
fn example2_unidentifiable_at_zero_delta() {
    let m = example2();
    let p = optimal(&m, &[0.25, 0.5]);
    let cfg = SimConfig { seed: 1, n: 1000, r: 10, delta: vec![0.0, 0.0] };
    match run_trials(&m, &p, &ParamPoint::new(vec![0.25, 0.5]), &cfg, &tols()) {
        Err(EstimateError::SingularFisher { direction, .. }) => {
            assert!(direction[0].abs() < 1e-9 && (direction[1] - 1.0).abs() < 1e-9, "{direction:?}");
        }
        other => panic!("expected SingularFisher, got {other:?}"),
    }
}

#[test]
fn example2_displaced_covariance() {
    let m = example2();
    let p = optimal(&m, &[0.25, 0.5]);
    let cfg = SimConfig { seed: 9, n: 1000, r: 2000, delta: vec![0.0, 0.05] };
    let res = run_trials(&m, &p, &ParamPoint::new(vec![0.25, 0.5]), &cfg, &tols()).unwrap();
    assert!(res.probabilities[2] > 0.0);
    assert!(res.rel_err <= 0.1, "rel_err {}", res.rel_err);
}

#[test]
fn example2_convergence_to_qfim() {
    let m = example2();
    let th = ParamPoint::new(vec![0.25, 0.5]);
    let p = optimal(&m, &th);
    let study = fc_convergence_study(&m, &p, &th, &diagonal_deltas(2, &[1e-1, 1e-2, 1e-3]), &tols()).unwrap();
    assert!(study.is_decreasing(), "{:?}", study.rows.iter().map(|r| r.max_abs_dev).collect::<Vec<_>>());
    let last = study.rows.last().unwrap();
    assert!(last.max_abs_dev <= 1e-2 * study.f.max_abs());
    assert!(last.excluded_outcomes.is_empty());
}

#[test]
fn dropping_null_effect_leaves_a_gap() {
    let m = example2();
    let th = ParamPoint::new(vec![0.25, 0.5]);
    let p = optimal(&m, &th);
    let mut effects = p.effects.clone();
    let null = effects.pop().unwrap();
    effects[0] += &null;
    let (q, _) = Povm::new(effects, &tols()).unwrap();
    let f_null = analyze_point(&m, &th, &tols(), DerivativeMode::Auto).unwrap().qfim.f_null;
    let study = fc_convergence_study(&m, &q, &th, &diagonal_deltas(2, &[1e-1, 1e-2, 1e-3]), &tols()).unwrap();
    for r in &study.rows[1..] {
        assert!(r.max_abs_dev >= 0.5 * f_null.max_abs(), "{}", r.max_abs_dev);
    }
}

#[test]
fn classical_diag_converges_linearly() {
    let m = ClassicalDiag::default();
    let th = ParamPoint::new(vec![0.2, 0.3]);
    let study = fc_convergence_study(&m, &eigenbasis(), &th, &diagonal_deltas(2, &[1e-2, 1e-3, 1e-4]), &tols()).unwrap();
    assert!(study.is_decreasing());
    for w in study.rows.windows(2) {
        let ratio = w[0].max_abs_dev / w[1].max_abs_dev;
        assert!((5.0..20.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn csv_has_seventeen_digits() {
    let m = ClassicalDiag::default();
    let th = ParamPoint::new(vec![0.2, 0.3]);
    let study = fc_convergence_study(&m, &eigenbasis(), &th, &diagonal_deltas(2, &[1e-2, 1e-3]), &tols()).unwrap();
    let csv = study.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("delta,max_abs_dev"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let mantissa = row[0].split('e').next().unwrap().replace(['.', '-'], "");
    assert_eq!(mantissa.len(), 17);
    assert!((row[0].parse::<f64>().unwrap() - 1e-2).abs() < 1e-15);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn unbiased_to_first_order(seed in any::<u64>(), t1 in 0.15f64..0.4, t2 in 0.15f64..0.4) {
            let m = ClassicalDiag::default();
            let cfg = SimConfig { seed, n: 1000, r: 400, delta: vec![0.0, 0.0] };
            let res = run_trials(&m, &eigenbasis(), &ParamPoint::new(vec![t1, t2]), &cfg, &tols()).unwrap();
            // bias_bound is 3σ; random seeds over many cases need 5σ.
            for (b, bound) in res.mean_bias.iter().zip(&res.bias_bound) {
                prop_assert!(b.abs() <= bound * 5.0 / 3.0, "bias {b} bound {bound}");
            }
            prop_assert!(res.emp_cov.sym_eigen().unwrap().0[0] >= 0.0);
        }
    }
}
