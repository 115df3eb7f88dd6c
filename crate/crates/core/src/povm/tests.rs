use super::*;
use crate::blocks::{decompose, RankOptions};
use crate::conditions::{check_conditions, find_w, Classification};
use crate::model::{eval_bundle, ClassicalDiag, DerivativeMode, Example2, FixedRange, ParamPoint, PureState, QubitXY, Restricted, StateModel};
use crate::sld::{compute_slds, qfim, SldOptions};

struct Setup {
    bundle: StateBundle,
    slds: SldSet,
    qfim: Qfim,
}

fn setup(m: &dyn StateModel, theta: &[f64]) -> Setup {
    let bundle = eval_bundle(m, &ParamPoint::new(theta.to_vec()), 1e-5, DerivativeMode::Auto).unwrap();
    let dec = decompose(&bundle.rho, RankOptions::default()).unwrap();
    let slds = compute_slds(&bundle, &dec, &SldOptions::default()).unwrap();
    let qfim = qfim(&slds).unwrap();
    Setup { bundle, slds, qfim }
}

fn example2() -> Example2 {
    Example2::new(C64::new(0.6, 0.0), 1.0, 2.0).unwrap()
}

fn tols() -> Tolerances {
    Tolerances::default()
}

fn optimal(s: &Setup) -> Povm {
    let cand = find_w(&s.slds, &tols(), SimDiagOptions::default());
    construct_optimal(&s.slds, cand.certified().expect("certified"), &tols(), SimDiagOptions::default()).unwrap()
}

fn basis_povm(u: &CMatrix) -> Povm {
    let effects = (0..u.cols()).map(|j| CMatrix::outer(&u.col(j), &u.col(j))).collect();
    Povm::new(effects, &tols()).unwrap().0
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn r(x: f64) -> C64 {
    c(x, 0.0)
}

#[test]
fn validation_rejects_bad_effects() {
    let t = tols();
    let half = CMatrix::identity(2).scale(0.5);
    assert!(matches!(Povm::new(vec![half.clone()], &t), Err(PovmError::Incomplete { .. })));
    let nh = CMatrix::from_rows(vec![vec![r(1.0), r(0.5)], vec![r(0.0), r(0.0)]]);
    assert!(matches!(Povm::new(vec![nh], &t), Err(PovmError::NotHermitian { .. })));
    let neg = CMatrix::from_real_diag(&[-0.1, 0.0]);
    let rest = CMatrix::from_real_diag(&[1.1, 1.0]);
    assert!(matches!(Povm::new(vec![neg, rest], &t), Err(PovmError::NotPsd { .. })));
    assert!(matches!(Povm::new(vec![], &t), Err(PovmError::Empty)));
    assert!(matches!(
        Povm::new(vec![CMatrix::identity(2), CMatrix::zeros(3, 3)], &t),
        Err(PovmError::DimensionMismatch { index: 1, .. })
    ));
}

#[test]
fn tiny_negative_eigenvalue_is_clipped_with_warning() {
    let a = CMatrix::from_real_diag(&[1.0, -5e-10]);
    let b = CMatrix::from_real_diag(&[0.0, 1.0 + 5e-10]);
    let (p, warnings) = Povm::new(vec![a, b], &tols()).unwrap();
    assert_eq!(warnings.len(), 1);
    assert!(p.effects[0][(1, 1)].re == 0.0);
}

#[test]
fn projective_flag() {
    let p = basis_povm(&CMatrix::identity(3));
    assert!(p.projective);
    let half = CMatrix::identity(2).scale(0.5);
    let (q, _) = Povm::new(vec![half.clone(), half], &tols()).unwrap();
    assert!(!q.projective);
}

#[test]
fn file_round_trip() {
    let p = basis_povm(&CMatrix::identity(2));
    let s = serde_json::to_string(&p.to_file()).unwrap();
    let back: PovmFile = serde_json::from_str(&s).unwrap();
    let (q, _) = Povm::from_file(back, &tols()).unwrap();
    for (a, b) in p.effects.iter().zip(&q.effects) {
        assert_eq!(a, b);
    }
    assert!(serde_json::from_str::<PovmFile>(r#"{"effects": [], "extra": 1}"#).is_err());
}

#[test]
fn example2_construction() {
    let s = setup(&example2(), &[0.25, 0.5]);
    let p = optimal(&s);
    assert_eq!(p.len(), 3);
    assert!(p.projective);
    let labels = classify(&p, &s.slds.dec, &tols());
    let kinds: Vec<_> = labels.iter().map(|l| l.kind).collect();
    assert_eq!(kinds, [EffectKind::Regular, EffectKind::Regular, EffectKind::Null]);
    let probs: Vec<f64> = labels.iter().map(|l| l.probability).collect();
    let mut sorted = probs[..2].to_vec();
    sorted.sort_by(f64::total_cmp);
    assert!((sorted[0] - 0.25).abs() < 1e-12 && (sorted[1] - 0.75).abs() < 1e-12);
    assert!(probs[2].abs() < 1e-14);
    assert!(!labels[2].inconsistent_null);
    let yy = CMatrix::outer(&s.slds.dec.y.col(0), &s.slds.dec.y.col(0));
    assert!((&p.effects[2] - &yy).fro_norm() < 1e-12);
}

#[test]
fn example2_optimality_constants() {
    let s = setup(&example2(), &[0.25, 0.5]);
    let p = optimal(&s);
    let rep = verify_optimality(&p, &s.slds, &s.bundle, &s.qfim, &tols());
    assert!(rep.pass);
    let mut c1: Vec<f64> = rep.regular.iter().map(|x| x.c[0]).collect();
    c1.sort_by(f64::total_cmp);
    assert!((c1[0] + 4.0 / 3.0).abs() < 1e-6 && (c1[1] - 4.0).abs() < 1e-6);
    assert!(rep.regular.iter().all(|x| x.c[1].abs() < 1e-6));
    assert_eq!(rep.null.len(), 1);
    let pair = rep.null[0].pairs.iter().find(|x| x.l == 0 && x.m == 1).unwrap();
    assert!((pair.c.unwrap() - 0.5).abs() < 1e-8);
    let back = rep.null[0].pairs.iter().find(|x| x.l == 1 && x.m == 0).unwrap();
    assert!((back.c.unwrap() - 2.0).abs() < 1e-8);
    assert!(rep.null[0].reciprocity < 1e-8);
    assert!(rep.canonical_form_ok && rep.null_sum_ok);
}

#[test]
fn example2_saturation_values() {
    let s = setup(&example2(), &[0.25, 0.5]);
    let p = optimal(&s);
    let fc = classical_fi(&p, &s.bundle, tols().p);
    assert_eq!(fc.excluded, vec![2]);
    let want = RMatrix::from_rows(&[vec![16.0 / 3.0, 0.0], vec![0.0, 0.0]]);
    assert!((&fc.f_c - &want).max_abs() < 1e-7);
    let n = null_component_sum(&p, &s.slds, &tols());
    let want_n = RMatrix::from_rows(&[vec![0.6912, 1.3824], vec![1.3824, 2.7648]]);
    assert!((&n - &want_n).max_abs() < 1e-7);
    assert!(saturation_check(&p, &s.slds, &s.bundle, &s.qfim, &tols()).pass);
}

#[test]
fn trivial_povm_fails() {
    let s = setup(&example2(), &[0.25, 0.5]);
    let (p, _) = Povm::new(vec![CMatrix::identity(3)], &tols()).unwrap();
    let labels = classify(&p, &s.slds.dec, &tols());
    assert_eq!(labels.len(), 1);
    assert_eq!(labels[0].kind, EffectKind::Regular);
    let rep = verify_optimality(&p, &s.slds, &s.bundle, &s.qfim, &tols());
    assert!(!rep.pass);
    assert!(rep.regular[0].residual[0] > 1e-2);
    let fc = classical_fi(&p, &s.bundle, tols().p);
    assert!(fc.f_c.max_abs() < 1e-9);
}

#[test]
fn dropping_null_effect_breaks_saturation() {
    let s = setup(&example2(), &[0.25, 0.5]);
    let p = optimal(&s);
    let mut effects = p.effects.clone();
    let null = effects.pop().unwrap();
    effects[0] += &null;
    let (q, _) = Povm::new(effects, &tols()).unwrap();
    let n = null_component_sum(&q, &s.slds, &tols());
    assert!(n.max_abs() < 1e-12);
    let sat = saturation_check(&q, &s.slds, &s.bundle, &s.qfim, &tols());
    assert!(!sat.pass);
    assert!(sat.null_deviation >= 0.5 * s.qfim.f_null.max_abs());
    assert!(!verify_optimality(&q, &s.slds, &s.bundle, &s.qfim, &tols()).pass);
}

fn pauli_bases() -> Vec<CMatrix> {
    let h = 1.0 / 2f64.sqrt();
    vec![
        CMatrix::from_rows(vec![vec![r(h), r(h)], vec![r(h), r(-h)]]),
        CMatrix::from_rows(vec![vec![r(h), r(h)], vec![c(0.0, h), c(0.0, -h)]]),
        CMatrix::identity(2),
    ]
}

#[test]
fn qubit_xy_no_basis_saturates() {
    let s = setup(&QubitXY::default(), &[0.3, 0.2]);
    for u in pauli_bases() {
        let p = basis_povm(&u);
        let rep = verify_optimality(&p, &s.slds, &s.bundle, &s.qfim, &tols());
        assert!(!rep.pass);
        assert!(!rep.saturation.pass);
        assert!(rep.regular.iter().any(|x| x.residual.iter().any(|&v| v > tols().cond)));
    }
    let s = setup(&QubitXY::default(), &[0.3, 0.2]);
    assert!(construct_optimal_requires_c1(&s));
}

fn construct_optimal_requires_c1(s: &Setup) -> bool {
    let w = WCandidate {
        w: CMatrix::zeros(0, 0),
        verification: crate::conditions::verify_w(&s.slds, &CMatrix::zeros(0, 0), &tols()).unwrap(),
    };
    matches!(construct_optimal(&s.slds, &w, &tols(), SimDiagOptions::default()), Err(PovmError::ConditionFailed(_)))
}

#[test]
fn classical_diag_saturates_fully() {
    let s = setup(&ClassicalDiag::default(), &[0.2, 0.3]);
    let p = optimal(&s);
    assert_eq!(p.len(), 3);
    assert!(p.effects.iter().all(|e| e.off_diag_norm() < 1e-12));
    let fc = classical_fi(&p, &s.bundle, tols().p);
    assert!((&fc.f_c - &s.qfim.f).max_abs() < 1e-7 * (1.0 + s.qfim.f.max_abs()));
    let rep = verify_optimality(&p, &s.slds, &s.bundle, &s.qfim, &tols());
    assert!(rep.pass && rep.null.is_empty());
}

#[test]
fn scalar_slds_give_single_regular_effect() {
    // Lpp = 0 for the pure state; one cluster spans the range.
    let m = Restricted::new(Box::new(PureState::default()), vec![None, Some(0.3)]);
    let s = setup(&m, &[0.4]);
    let p = optimal(&s);
    let labels = classify(&p, &s.slds.dec, &tols());
    assert_eq!(labels.iter().filter(|l| l.kind == EffectKind::Regular).count(), 1);
    assert_eq!(labels.iter().filter(|l| l.kind == EffectKind::Null).count(), s.slds.dec.r_zero);
}

#[test]
fn closure_on_saturable_models() {
    let pure = Restricted::new(Box::new(PureState::default()), vec![None, Some(0.3)]);
    let cases: Vec<(Box<dyn StateModel>, Vec<f64>)> = vec![
        (Box::new(example2()), vec![0.25, 0.5]),
        (Box::new(example2()), vec![0.6, 0.3]),
        (Box::new(FixedRange::default()), vec![0.3, 0.7]),
        (Box::new(ClassicalDiag::default()), vec![0.1, 0.5]),
        (Box::new(pure), vec![0.7]),
    ];
    for (m, theta) in cases {
        let s = setup(m.as_ref(), &theta);
        let rep = check_conditions(&s.slds, &tols(), SimDiagOptions::default());
        assert_eq!(rep.classification, Classification::SaturableProjective, "{}", m.name());
        let p = optimal(&s);
        let v = verify_optimality(&p, &s.slds, &s.bundle, &s.qfim, &tols());
        assert!(v.pass, "{} at {theta:?}", m.name());
        assert!(rep.c1.pass && rep.c3.pass);
    }
}

#[test]
fn pure_state_two_parameters_is_not_saturable() {
    let s = setup(&PureState::default(), &[0.4, 0.3]);
    let rep = check_conditions(&s.slds, &tols(), SimDiagOptions::default());
    assert!(!rep.c3.pass, "residual {}", rep.c3.residual);
    assert_eq!(rep.classification, Classification::NecessaryFailed);
}

#[test]
fn canonicalize_splits_regular_null_block() {
    let s = setup(&FixedRange::default(), &[0.3, 0.7]);
    let dec = &s.slds.dec;
    let p = optimal(&s);
    // Fold the null effect into a regular one: diag(Π, I).
    let mut effects = p.effects.clone();
    let null = effects.pop().unwrap();
    effects[0] += &null;
    let (q, _) = Povm::new(effects, &tols()).unwrap();
    let before = verify_optimality(&q, &s.slds, &s.bundle, &s.qfim, &tols());
    assert!(before.pass && !before.null_sum_ok);
    let canon = canonicalize(&q, &s.slds, &tols()).unwrap();
    assert_eq!(canon.len(), p.len());
    let after = verify_optimality(&canon, &s.slds, &s.bundle, &s.qfim, &tols());
    assert!(after.pass && after.null_sum_ok);
    assert!(after.null_sum_residual <= 1e-8);
    let pb = q.probabilities(&s.bundle.rho);
    let pa = canon.probabilities(&s.bundle.rho);
    for k in 0..q.len() {
        assert!((pa[k] - pb[k]).abs() < 1e-12);
    }
    assert!(block_of(&canon.effects[0], dec).unwrap().ozz.fro_norm() < 1e-12);
}

#[test]
fn canonicalize_keeps_constructed_povm() {
    let s = setup(&example2(), &[0.25, 0.5]);
    let p = optimal(&s);
    let canon = canonicalize(&p, &s.slds, &tols()).unwrap();
    assert_eq!(canon.len(), p.len());
    for (a, b) in p.effects.iter().zip(&canon.effects) {
        assert!((a - b).fro_norm() < 1e-12);
    }
}

#[test]
fn canonicalize_rejects_offdiagonal_regular_effect() {
    let s = setup(&example2(), &[0.25, 0.5]);
    let dec = &s.slds.dec;
    // Rotate between the largest range vector and the null vector.
    let (a, b) = (dec.v.col(0), dec.y.col(0));
    let h = 1.0 / 2f64.sqrt();
    let plus: Vec<C64> = a.iter().zip(&b).map(|(x, y)| (x + y) * h).collect();
    let minus: Vec<C64> = a.iter().zip(&b).map(|(x, y)| (x - y) * h).collect();
    let other = dec.v.col(1);
    let effects = vec![CMatrix::outer(&plus, &plus), CMatrix::outer(&minus, &minus), CMatrix::outer(&other, &other)];
    let (p, _) = Povm::new(effects, &tols()).unwrap();
    assert!(matches!(canonicalize(&p, &s.slds, &tols()), Err(PovmError::NotBlockDiagonal { index: 0, .. })));
    let rep = verify_optimality(&p, &s.slds, &s.bundle, &s.qfim, &tols());
    assert!(!rep.canonical_form_ok && !rep.pass);
}

#[test]
fn inconsistent_null_is_flagged() {
    let s = setup(&example2(), &[0.25, 0.5]);
    let dec = &s.slds.dec;
    // Null in probability only through tiny weight on the range.
    let y = dec.y.col(0);
    let v = dec.v.col(0);
    let eps = 1e-6;
    let mix: Vec<C64> = y.iter().zip(&v).map(|(a, b)| a * (1.0f64 - eps * eps).sqrt() + b * eps).collect();
    let e = CMatrix::outer(&mix, &mix);
    let (p, _) = Povm::new(vec![e.clone(), &CMatrix::identity(3) - &e], &tols()).unwrap();
    let labels = classify(&p, dec, &tols());
    assert_eq!(labels[0].kind, EffectKind::Null);
    assert!(labels[0].inconsistent_null);
}

#[test]
fn verdicts_invariant_under_permutation_and_regauge() {
    let s = setup(&example2(), &[0.25, 0.5]);
    let p = optimal(&s);
    let base = verify_optimality(&p, &s.slds, &s.bundle, &s.qfim, &tols());
    let perm = p.permuted(&[2, 0, 1]);
    let rp = verify_optimality(&perm, &s.slds, &s.bundle, &s.qfim, &tols());
    assert_eq!(base.pass, rp.pass);
    let dec = s.slds.dec.regauged(11);
    let slds = s.slds.regauged(dec);
    let rg = verify_optimality(&p, &slds, &s.bundle, &s.qfim, &tols());
    assert_eq!(base.pass, rg.pass);
    assert!(rg.pass);
    let reg = |r: &OptimalityReport| {
        let mut v: Vec<f64> = r.regular.iter().map(|x| x.c[0]).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    for (a, b) in reg(&base).iter().zip(reg(&rg).iter()) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn cluster_merges_close_tuples() {
    let vals = vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0 + 1e-9, 0.0], vec![0.0, 2.0]];
    let cl = cluster_tuples(&vals, 1e-7);
    assert_eq!(cl, vec![vec![1], vec![3], vec![0, 2]]);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn classical_fi_below_qfim(t1 in 0.05f64..0.95, t2 in 0.05f64..0.95, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let s = setup(&example2(), &[t1, t2]);
            let u = crate::linalg::unitary_exp(&CMatrix::from_rows(vec![
                vec![r(a), c(b, 0.3), r(0.1)],
                vec![c(b, -0.3), r(-a), c(0.0, 0.5)],
                vec![r(0.1), c(0.0, -0.5), r(0.2)],
            ])).unwrap();
            let p = basis_povm(&u);
            let fc = classical_fi(&p, &s.bundle, tols().p);
            let gap = &s.qfim.f - &fc.f_c;
            let min = gap.sym_eigen().unwrap().0[0];
            prop_assert!(min >= -1e-6, "min eigenvalue {min}");
        }

        #[test]
        fn constructed_povm_verifies(t1 in 0.05f64..0.95, t2 in 0.05f64..0.95) {
            let s = setup(&example2(), &[t1, t2]);
            let p = optimal(&s);
            let rep = verify_optimality(&p, &s.slds, &s.bundle, &s.qfim, &tols());
            prop_assert!(rep.pass);
        }
    }
}
