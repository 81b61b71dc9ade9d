//! Robust estimation of treatment effects in longitudinal trials with monotone
//! dropout under the jump-to-reference assumption.
//!
//! The pipeline is: fit sequential weighted robust regressions on the control
//! arm ([`j2r_imputer`]), mean-impute every missing outcome from the control
//! profile, fit a robust working model on the completed data
//! ([`ate_analysis`]) and report the treatment effect with a linearized or
//! bootstrap variance. [`mi_baseline`] provides the multiple-imputation
//! comparator and [`sim_bench`] the Monte Carlo harness.

pub mod ate_analysis;
pub mod error;
pub mod j2r_imputer;
pub mod linalg;
pub mod mi_baseline;
pub mod robust_loss;
pub mod seeding;
pub mod sim_bench;
pub mod trial_data;
pub mod weighted_mestimation;

pub use error::{Error, Result};
pub use robust_loss::{LossKind, LossSpec};
pub use trial_data::{
    load_csv, write_csv, CompletedDataset, CsvSchema, DropoutPattern, LoadOptions, TrialDataset,
};
pub use weighted_mestimation::{
    cross_validate_nu, fit_weighted_robust, fold_assignment, mahalanobis_weights,
    robust_center_scatter, CovariateWeighting, CvResult, FitResult, WeightMode,
};
pub use j2r_imputer::{
    compose_beta, fit_sequential, impute, impute_mar, ImputationConfig, ImputationModel, NuPolicy,
    Strategy,
};
pub use ate_analysis::{
    ate, bootstrap_variance, bootstrap_with, fit_analysis, linearized_variance, AteEstimate, Form,
    InfluenceDecomposition, PipelineConfig, VarianceMethod, WorkingModel,
};
pub use mi_baseline::{run_mi, MiConfig, MiResult};
pub use sim_bench::{
    generate, inject_outliers, reproduce, run_mc, ErrorFamily, Hypothesis, McConfig, McReport,
    Method, OutlierMode, Scenario, TableId,
};
