//! Fixtures shared by the benchmarks.

use j2r_core::{generate, ErrorFamily, Hypothesis, OutlierMode, Scenario, TrialDataset};
use nalgebra::DMatrix;

/// Simulated trial under the alternative with t5 errors and outliers in both arms.
pub fn trial(n_per_arm: usize, seed: u64) -> TrialDataset {
    let mut sc = Scenario::new(ErrorFamily::T5, Hypothesis::H1, OutlierMode::None);
    sc.n_per_arm = n_per_arm;
    let d = generate(&sc, seed).data;
    j2r_core::inject_outliers(&d, OutlierMode::BothArms, seed).unwrap_or(d)
}

/// Regression of the first visit on the baseline design, unit weights.
pub fn regression(n_per_arm: usize, seed: u64) -> (Vec<f64>, DMatrix<f64>, Vec<f64>) {
    let d = trial(n_per_arm, seed);
    let y = (0..d.n()).map(|i| d.outcome(i, 1).unwrap()).collect();
    (y, d.baseline().clone_owned(), vec![1.0; d.n()])
}
