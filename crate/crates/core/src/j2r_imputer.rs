//! Sequential weighted robust imputation models fitted on the reference arm,
//! and conditional-mean imputation of missing outcomes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::robust_loss::LossSpec;
use crate::seeding;
use crate::trial_data::{CompletedDataset, TrialDataset};
use crate::weighted_mestimation::{
    cross_validate_nu, fit_weighted_robust, mahalanobis_weights, CovariateWeighting, WeightMode,
    DEFAULT_NU, DEFAULT_NU_GRID,
};

/// How the covariate-weight tuning constant is chosen at each visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NuPolicy {
    /// A fixed value; `f64::INFINITY` disables covariate weighting.
    Fixed(f64),
    Cv { grid: Vec<f64>, folds: usize, seed: u64 },
}

impl Default for NuPolicy {
    fn default() -> Self {
        NuPolicy::Fixed(DEFAULT_NU)
    }
}

impl NuPolicy {
    pub fn default_cv(seed: u64) -> Self {
        NuPolicy::Cv {
            grid: DEFAULT_NU_GRID.to_vec(),
            folds: 5,
            seed,
        }
    }

    pub fn unweighted() -> Self {
        NuPolicy::Fixed(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationConfig {
    pub loss: LossSpec,
    pub nu: NuPolicy,
    pub mode: WeightMode,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        Self {
            loss: LossSpec::default(),
            nu: NuPolicy::default(),
            mode: WeightMode::Normalized,
        }
    }
}

/// Which arm's models impute a subject's missing outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Every dropout follows the control-arm conditional means.
    JumpToReference,
    /// Each arm is imputed from its own models.
    MissingAtRandom,
}

/// The regression of `Y_s` on `H_{s-1}` for one visit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisitFit {
    /// 1-based visit of the response.
    pub visit: usize,
    /// `alpha_{s-1}`, length `p + s - 1`.
    pub coefficients: DVector<f64>,
    pub scale: f64,
    pub nu: f64,
    pub weighting: Option<CovariateWeighting>,
    /// Covariate weights of the fitted rows, in dataset order.
    pub covariate_weights: Vec<f64>,
    pub n_fit: usize,
    pub iterations: usize,
    pub converged: bool,
    pub ee_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImputationModel {
    pub p: usize,
    pub t: usize,
    /// Arm the regressions were fitted on.
    pub arm: u8,
    pub loss: LossSpec,
    pub visits: Vec<VisitFit>,
    /// `betas[s - 1]` holds `beta_{t, s-1}`.
    pub betas: Vec<DVector<f64>>,
}

impl ImputationModel {
    /// `alpha_{s-1}` for 1-based visit `s`.
    pub fn alpha(&self, s: usize) -> &DVector<f64> {
        &self.visits[s - 1].coefficients
    }

    /// `beta_{t, s-1}` for dropout at 1-based visit `s`.
    pub fn beta(&self, s: usize) -> &DVector<f64> {
        &self.betas[s - 1]
    }
}

/// Indices of the subjects in `arm` observed at visit `s`, in dataset order.
pub fn fit_rows(d: &TrialDataset, arm: u8, s: usize) -> Vec<usize> {
    (0..d.n())
        .filter(|&i| d.arm(i) == arm && d.observed(i, s))
        .collect()
}

/// Stacked observed histories `H_{i,s-1}` for the given subjects.
pub fn history_matrix(d: &TrialDataset, rows: &[usize], s: usize) -> DMatrix<f64> {
    let k = d.p() + s - 1;
    let mut h = DMatrix::<f64>::zeros(rows.len(), k);
    for (r, &i) in rows.iter().enumerate() {
        let hist = d.history(i, s - 1).expect("history of an observed subject");
        h.row_mut(r).copy_from(&hist.transpose());
    }
    h
}

fn fit_visit(d: &TrialDataset, arm: u8, s: usize, cfg: &ImputationConfig) -> Result<VisitFit> {
    let rows = fit_rows(d, arm, s);
    let k = d.p() + s - 1;
    if rows.len() < k {
        return Err(Error::InsufficientData(format!(
            "visit {s}: {} subjects in arm {arm} observed, {k} needed",
            rows.len()
        )));
    }
    let h = history_matrix(d, &rows, s);
    let y: Vec<f64> = rows.iter().map(|&i| d.outcome(i, s).unwrap()).collect();
    let wrap = |e: Error| Error::ImputationFit {
        visit: s,
        source: Box::new(e),
    };

    let nu = match &cfg.nu {
        NuPolicy::Fixed(v) => *v,
        NuPolicy::Cv { grid, folds, seed } => {
            let visit_seed = seeding::derive_seed(*seed, &[s as u64]);
            cross_validate_nu(&y, &h, &cfg.loss, cfg.mode, grid, *folds, visit_seed)
                .map_err(wrap)?
                .nu
        }
    };
    let (weighting, w) = if nu.is_infinite() {
        (None, vec![1.0; rows.len()])
    } else {
        let cw = CovariateWeighting::fit(&h, nu, cfg.mode).map_err(wrap)?;
        let w = mahalanobis_weights(&h, &cw).map_err(wrap)?;
        (Some(cw), w)
    };
    let fit = fit_weighted_robust(&y, &h, &w, &cfg.loss).map_err(wrap)?;
    Ok(VisitFit {
        visit: s,
        coefficients: fit.coefficients,
        scale: fit.scale,
        nu,
        weighting,
        covariate_weights: w,
        n_fit: rows.len(),
        iterations: fit.iterations,
        converged: fit.converged,
        ee_norm: fit.ee_norm,
    })
}

/// Fits the sequential regressions on the control arm.
pub fn fit_sequential(d: &TrialDataset, cfg: &ImputationConfig) -> Result<ImputationModel> {
    fit_sequential_arm(d, 0, cfg)
}

/// Fits `Y_s ~ H_{s-1}` for `s = 1..=t` on the subjects of `arm` observed at `s`.
pub fn fit_sequential_arm(
    d: &TrialDataset,
    arm: u8,
    cfg: &ImputationConfig,
) -> Result<ImputationModel> {
    let visits = (1..=d.t())
        .map(|s| fit_visit(d, arm, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let alphas: Vec<DVector<f64>> = visits.iter().map(|v| v.coefficients.clone()).collect();
    let betas = compose_all(d.p(), &alphas);
    Ok(ImputationModel {
        p: d.p(),
        t: d.t(),
        arm,
        loss: cfg.loss,
        visits,
        betas,
    })
}

/// `beta_{t,s-1}` for every `s`, from `beta_{t,t-1} = alpha_{t-1}` and
/// `beta_{t,s-1} = (I, alpha_{s-1}) beta_{t,s}`.
fn compose_all(p: usize, alphas: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let t = alphas.len();
    let mut betas = vec![DVector::zeros(0); t];
    betas[t - 1] = alphas[t - 1].clone();
    for s in (1..t).rev() {
        let next = &betas[s];
        let m = p + s - 1;
        betas[s - 1] = next.rows(0, m).into_owned() + &alphas[s - 1] * next[m];
    }
    betas
}

/// `beta_{t,s-1}` for a subject whose missingness begins at visit `s`.
pub fn compose_beta(model: &ImputationModel, s: usize) -> Result<DVector<f64>> {
    if s == 0 || s > model.t || model.visits.len() != model.t {
        return Err(Error::Config(format!(
            "dropout visit {s} outside 1..={}",
            model.t
        )));
    }
    let alphas: Vec<DVector<f64>> = model.visits.iter().map(|v| v.coefficients.clone()).collect();
    Ok(compose_all(model.p, &alphas).swap_remove(s - 1))
}

fn check_shape(d: &TrialDataset, model: &ImputationModel) -> Result<()> {
    if d.p() != model.p || d.t() != model.t {
        return Err(Error::Schema(format!(
            "model fitted for p = {}, t = {}; data has p = {}, t = {}",
            model.p,
            model.t,
            d.p(),
            d.t()
        )));
    }
    Ok(())
}

fn impute_rows(d: &TrialDataset, model_for: impl Fn(usize) -> usize, models: &[&ImputationModel]) -> CompletedDataset {
    let (n, t, p) = (d.n(), d.t(), d.p());
    let mut values = d.outcome_matrix().clone();
    for i in 0..n {
        let model = models[model_for(i)];
        for s in (d.observed_visits(i) + 1)..=t {
            let alpha = model.alpha(s);
            let mut v = 0.0;
            for j in 0..p {
                v += d.baseline()[(i, j)] * alpha[j];
            }
            for k in 0..(s - 1) {
                v += values[(i, k)] * alpha[p + k];
            }
            values[(i, s - 1)] = v;
        }
    }
    CompletedDataset::new(d.clone(), values)
}

/// Jump-to-reference mean imputation: every missing `Y_is` becomes
/// `H*_{i,s-1}' alpha_{s-1}` with the control-arm coefficients, whatever the arm.
pub fn impute(d: &TrialDataset, model: &ImputationModel) -> Result<CompletedDataset> {
    check_shape(d, model)?;
    Ok(impute_rows(d, |_| 0, &[model]))
}

/// Mean imputation with each arm using its own models, `[control, treated]`.
pub fn impute_mar(d: &TrialDataset, models: [&ImputationModel; 2]) -> Result<CompletedDataset> {
    for m in models {
        check_shape(d, m)?;
    }
    Ok(impute_rows(d, |i| d.arm(i) as usize, &models))
}

/// Fits the models the strategy needs and imputes.
pub fn fit_and_impute(
    d: &TrialDataset,
    cfg: &ImputationConfig,
    strategy: Strategy,
) -> Result<(Vec<ImputationModel>, CompletedDataset)> {
    match strategy {
        Strategy::JumpToReference => {
            let m = fit_sequential(d, cfg)?;
            let c = impute(d, &m)?;
            Ok((vec![m], c))
        }
        Strategy::MissingAtRandom => {
            let m0 = fit_sequential_arm(d, 0, cfg)?;
            let m1 = fit_sequential_arm(d, 1, cfg)?;
            let c = impute_mar(d, [&m0, &m1])?;
            Ok((vec![m0, m1], c))
        }
    }
}
