use proptest::prelude::*;
use sosnet::datagen::{make_record, DatasetSpec, Dist, Label, Record, Task};
use sosnet::formats::RecordJson;
use sosnet_core::models::ModelInput;
use sosnet_core::polycore::{gram_to_coeffs, GroupElement};

fn spec(task: Task, degree: usize, seed: u64) -> DatasetSpec {
    DatasetSpec { task, dist: Dist::Wigner, degree, n_train: 1, n_val: 0, n_test: 0, seed }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn records_survive_a_json_round_trip(seed in any::<u64>(), index in 0u64..1000, min in any::<bool>(), half in 2usize..=4) {
        let s = if min { spec(Task::Min, 2 * half, seed) } else { spec(Task::Maxdet, 2 * half, seed) };
        let r = make_record(&s, index).unwrap();
        let line = serde_json::to_string(&r.to_json()).unwrap();
        let back = Record::from_json(&serde_json::from_str::<RecordJson>(&line).unwrap()).unwrap();
        prop_assert_eq!(back, r);
    }

    #[test]
    fn transformed_labels_represent_transformed_inputs(
        seed in any::<u64>(),
        t1 in -3.2f64..3.2,
        s in 0.6f64..1.7,
        t2 in -3.2f64..3.2,
    ) {
        let r = make_record(&spec(Task::Maxdet, 6, seed), 0).unwrap();
        let moved = r.transformed(&GroupElement::from_svd(t1, s, t2));
        let (ModelInput::Form(p), Label::Gram(q)) = (&moved.input, &moved.label) else { unreachable!() };
        let err = gram_to_coeffs(q).max_abs_diff(p);
        prop_assert!(err <= 1e-8 * (1.0 + p.norm()), "{}", err);
    }

    #[test]
    fn scalar_labels_are_transform_invariant(seed in any::<u64>(), t1 in -3.2f64..3.2, s in 0.6f64..1.7) {
        let r = make_record(&spec(Task::Min, 4, seed), 0).unwrap();
        let moved = r.transformed(&GroupElement::from_svd(t1, s, 0.3));
        prop_assert_eq!(moved.label, r.label);
    }
}
