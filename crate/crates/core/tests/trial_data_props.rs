use j2r_core::trial_data::DropoutPattern;
use j2r_core::{impute, load_csv, write_csv, fit_sequential, ImputationConfig, LoadOptions, NuPolicy, TrialDataset};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn dataset() -> impl Strategy<Value = TrialDataset> {
    (4usize..25, 1usize..5, 0usize..3).prop_flat_map(|(n, t, q)| {
        (
            proptest::collection::vec(-1e6f64..1e6, n * q),
            proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, t), n),
            proptest::collection::vec(1usize..=t, n),
        )
            .prop_map(move |(x, ys, k)| {
                let x = DMatrix::from_row_slice(n, q, &x);
                let rows = ys
                    .into_iter()
                    .zip(k)
                    .map(|(row, k)| row.into_iter().enumerate().map(|(s, v)| (s < k).then_some(v)).collect())
                    .collect();
                TrialDataset::new(
                    (0..n).map(|i| format!("p{i}")).collect(),
                    (0..n).map(|i| (i % 2) as u8).collect(),
                    x,
                    rows,
                )
                .unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_round_trip(d in dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trial.csv");
        write_csv(&d, &path).unwrap();
        let back = load_csv(&path, None, LoadOptions::default()).unwrap();
        prop_assert_eq!(back.ids(), d.ids());
        prop_assert_eq!(back.treatment(), d.treatment());
        prop_assert_eq!(back.baseline(), d.baseline());
        for i in 0..d.n() {
            prop_assert_eq!(back.observed_visits(i), d.observed_visits(i));
            for s in 1..=d.t() {
                prop_assert_eq!(back.observed(i, s), d.observed(i, s));
                prop_assert_eq!(back.outcome(i, s), d.outcome(i, s));
            }
        }
    }

    #[test]
    fn dropout_patterns_partition_subjects(d in dataset()) {
        let mut counts = vec![0usize; d.t() + 1];
        for i in 0..d.n() {
            match d.dropout_pattern(i) {
                DropoutPattern::Completer => counts[0] += 1,
                DropoutPattern::At(s) => counts[s] += 1,
            }
        }
        prop_assert_eq!(counts.iter().sum::<usize>(), d.n());
    }
}

#[test]
fn completed_histories_have_full_length() {
    let n = 60;
    let x = DMatrix::from_fn(n, 1, |i, _| ((i * 13) % 7) as f64 - 3.0);
    let rows = (0..n)
        .map(|i| {
            let k = 1 + i % 3;
            (0..3)
                .map(|s| (s < k).then(|| x[(i, 0)] + s as f64 + ((i * 31 + s * 7) % 11) as f64 * 0.1))
                .collect()
        })
        .collect();
    let d = TrialDataset::new(
        (0..n).map(|i| i.to_string()).collect(),
        (0..n).map(|i| (i % 2) as u8).collect(),
        x,
        rows,
    )
    .unwrap();
    let cfg = ImputationConfig {
        nu: NuPolicy::unweighted(),
        ..Default::default()
    };
    let c = impute(&d, &fit_sequential(&d, &cfg).unwrap()).unwrap();
    for i in 0..n {
        for s in 0..=d.t() {
            assert_eq!(c.history(i, s).len(), d.p() + s);
        }
    }
}
