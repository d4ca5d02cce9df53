use proptest::prelude::*;
use ssr_core::mpo::loss_mpo_sum;
use ssr_core::mps::Mps;
use ssr_core::qubit::{decode, encode, pauli_expand};
use ssr_core::tensor::{svd_matrix, TruncationPolicy};
use ssr_core::{AngleSet, ConstraintSpec, LaminationPoint, SsrProblem, StackingSequence};

fn labels(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=4, n)
}

fn point(sym: bool) -> impl Strategy<Value = LaminationPoint> {
    (prop::array::uniform4(-1.0f64..1.0), prop::array::uniform4(-1.0f64..1.0), prop::array::uniform4(-1.0f64..1.0))
        .prop_map(move |(a, b, d)| LaminationPoint::new(a, (!sym).then_some(b), d).unwrap())
}

fn all_constraints() -> Vec<ConstraintSpec> {
    vec![
        ConstraintSpec::Disorientation { max_delta_deg: 45.0, gamma: 0.25 },
        ConstraintSpec::Contiguity { max_same: 2, gamma: 0.1 },
        ConstraintSpec::Balanced { s: 2, t: 4, gamma: 0.05 },
        ConstraintSpec::MinCount { t: 3, n_t: 2, gamma: 0.3 },
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lamination_parameters_bounded(seq in labels(1..=40), sym in any::<bool>()) {
        let n = seq.len();
        let p = SsrProblem::new(AngleSet::quad(), n, sym, LaminationPoint::zeros(sym), vec![]).unwrap();
        let v = p.lamination_parameters(&StackingSequence::new(seq, 4).unwrap()).unwrap();
        for x in v.to_vec() {
            prop_assert!(x.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn mpo_chain_equals_objective(seq in labels(3..=12), target in point(true)) {
        let n = seq.len();
        let p = SsrProblem::new(AngleSet::quad(), n, true, target, all_constraints()).unwrap();
        let s = StackingSequence::new(seq, 4).unwrap();
        let terms = loss_mpo_sum(&p).unwrap();
        let got = terms.chain_value(&s).unwrap();
        prop_assert!((got - p.objective(&s).unwrap()).abs() <= 1e-10 * (1.0 + got.abs()));
    }

    #[test]
    fn general_mpo_chain_equals_loss(seq in labels(1..=12), target in point(false)) {
        let n = seq.len();
        let p = SsrProblem::new(AngleSet::quad(), n, false, target, vec![]).unwrap();
        let s = StackingSequence::new(seq, 4).unwrap();
        let got = loss_mpo_sum(&p).unwrap().chain_value(&s).unwrap();
        prop_assert!((got - p.loss(&s).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn basis_mps_expectation_equals_objective(seq in labels(2..=10), target in point(true)) {
        let n = seq.len();
        let p = SsrProblem::new(AngleSet::quad(), n, true, target, all_constraints()).unwrap();
        let s = StackingSequence::new(seq, 4).unwrap();
        let mps = Mps::basis_state(&s, 4).unwrap();
        let e = mps.expectation(&loss_mpo_sum(&p).unwrap()).unwrap();
        prop_assert!((e - p.objective(&s).unwrap()).abs() <= 1e-10);
        prop_assert_eq!(mps.extract_sequence().unwrap(), s);
    }

    #[test]
    fn dihedral_moves_preserve_loss(seq in labels(2..=16), target in point(false)) {
        let angles = AngleSet::quad();
        let n = seq.len();
        let p = SsrProblem::new(angles.clone(), n, false, target.clone(), vec![]).unwrap();
        let s = StackingSequence::new(seq, 4).unwrap();
        for g in angles.dihedral_group().unwrap() {
            let gs = g.apply_to_sequence(&angles, &s).unwrap();
            let q = p.with_target(g.apply_to_point(&angles, &target)).unwrap();
            prop_assert!((q.loss(&gs).unwrap() - p.loss(&s).unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn qubit_round_trip_and_eigenvalue(seq in labels(1..=7), target in point(true)) {
        let n = seq.len();
        let p = SsrProblem::new(AngleSet::quad(), n, true, target, all_constraints()[..1].to_vec()).unwrap();
        let s = StackingSequence::new(seq, 4).unwrap();
        let bits = encode(&s, 4).unwrap();
        prop_assert_eq!(decode(&bits).unwrap(), s.clone());
        let e = pauli_expand(&p, true).unwrap();
        prop_assert!((e.evaluate(&bits).unwrap() - p.objective(&s).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn untruncated_svd_reconstructs(rows in 1usize..7, cols in 1usize..7, seed in any::<u64>()) {
        let mut x = seed;
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        let f = svd_matrix(rows, cols, &data, &TruncationPolicy::rank_only(usize::MAX)).unwrap();
        for r in 0..rows {
            for c in 0..cols {
                let v: f64 = (0..f.rank).map(|k| f.u[r * f.rank + k] * f.s[k] * f.vt[k * cols + c]).sum();
                prop_assert!((v - data[r * cols + c]).abs() <= 1e-12);
            }
        }
        prop_assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn mps_json_round_trip(n in 1usize..6, chi in 1usize..5, seed in any::<u64>()) {
        let m = Mps::random(n, 4, chi, seed).unwrap();
        let back = Mps::from_json_str(&m.to_json_string().unwrap()).unwrap();
        prop_assert_eq!(back.to_dense().unwrap(), m.to_dense().unwrap());
        prop_assert_eq!(back.center(), m.center());
    }
}
