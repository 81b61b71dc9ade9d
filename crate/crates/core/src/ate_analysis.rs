//! Working-model fit on the completed data, the treatment-effect estimate and
//! its linearized and bootstrap variances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::j2r_imputer::{
    fit_rows, fit_sequential, history_matrix, impute, ImputationConfig, ImputationModel,
};
use crate::linalg;
use crate::robust_loss::LossSpec;
use crate::seeding;
use crate::trial_data::{CompletedDataset, DropoutPattern, TrialDataset};
use crate::weighted_mestimation::fit_weighted_robust;

/// Mean structure of the analysis model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Form {
    /// `mu = gamma0 * A + X' gamma1`.
    MainEffects,
    /// `mu = A * X' gamma0 + X' gamma1`.
    #[default]
    Interaction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkingModel {
    pub form: Form,
    pub loss: LossSpec,
    /// `(gamma0, gamma1)` stacked.
    pub gamma: DVector<f64>,
    pub d0: usize,
    pub d1: usize,
    pub scale: f64,
    pub iterations: usize,
    pub converged: bool,
    pub ee_norm: f64,
}

impl WorkingModel {
    pub fn gamma0(&self) -> DVector<f64> {
        self.gamma.rows(0, self.d0).into_owned()
    }
}

/// Rows `dmu/dgamma` of the analysis design: `(A, X)` or `(A X, X)`.
pub fn analysis_design(d: &TrialDataset, form: Form) -> DMatrix<f64> {
    let (n, p) = (d.n(), d.p());
    let x = d.baseline();
    match form {
        Form::MainEffects => DMatrix::from_fn(n, 1 + p, |i, j| {
            if j == 0 {
                d.arm(i) as f64
            } else {
                x[(i, j - 1)]
            }
        }),
        Form::Interaction => DMatrix::from_fn(n, 2 * p, |i, j| {
            if j < p {
                d.arm(i) as f64 * x[(i, j)]
            } else {
                x[(i, j - p)]
            }
        }),
    }
}

/// Fits the working model to `Y*_t` without covariate weights.
pub fn fit_analysis(c: &CompletedDataset, form: Form, spec: &LossSpec) -> Result<WorkingModel> {
    let v = analysis_design(c.source(), form);
    let y = c.last_visit();
    let fit = fit_weighted_robust(&y, &v, &vec![1.0; y.len()], spec)?;
    let d0 = match form {
        Form::MainEffects => 1,
        Form::Interaction => c.p(),
    };
    Ok(WorkingModel {
        form,
        loss: *spec,
        d0,
        d1: c.p(),
        gamma: fit.coefficients,
        scale: fit.scale,
        iterations: fit.iterations,
        converged: fit.converged,
        ee_norm: fit.ee_norm,
    })
}

/// Baseline covariate means over both arms.
pub fn baseline_means(d: &TrialDataset) -> DVector<f64> {
    d.baseline().row_mean().transpose()
}

/// `tau = n^-1 sum_i g(X_i; gamma0)`.
pub fn ate(wm: &WorkingModel, c: &CompletedDataset) -> f64 {
    match wm.form {
        Form::MainEffects => wm.gamma[0],
        Form::Interaction => baseline_means(c.source()).dot(&wm.gamma0()),
    }
}

/// Per-subject terms of the linearized variance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceDecomposition {
    /// `V_{tau,i}`.
    pub v_tau: Vec<f64>,
    /// `V_{gamma,i}` as rows.
    pub v_gamma: DMatrix<f64>,
    /// `q[s-1]`: rows `q(H_{i,s-1}, alpha_{s-1})`, zero outside the visit's fit set.
    pub q: Vec<DMatrix<f64>>,
    /// `u[s-1]`: rows `U_{t,s-1,i}`.
    pub u: Vec<DMatrix<f64>>,
    /// `corrections[s-1]`: `n^-1 sum_i R_{i,s-1}(1-R_is) psi'(e_i) V_i H_{i,s-1}'`.
    pub corrections: Vec<DMatrix<f64>>,
    pub d_phi: DMatrix<f64>,
    pub psi: Vec<f64>,
    pub psi_prime: Vec<f64>,
    pub dropout: Vec<DropoutPattern>,
    pub mu_x: Option<DVector<f64>>,
}

impl InfluenceDecomposition {
    pub fn mean(&self) -> f64 {
        linalg::mean(&self.v_tau)
    }

    /// `n^-2 sum_i (V_{tau,i} - mean)^2`.
    pub fn variance(&self) -> f64 {
        centered_variance(&self.v_tau)
    }
}

fn centered_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = linalg::mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n * n)
}

struct AnalysisParts {
    v: DMatrix<f64>,
    psi: Vec<f64>,
    psi_prime: Vec<f64>,
    d_phi: DMatrix<f64>,
    d_inv: DMatrix<f64>,
}

fn analysis_parts(c: &CompletedDataset, wm: &WorkingModel) -> Result<AnalysisParts> {
    let v = analysis_design(c.source(), wm.form);
    let y = c.last_visit();
    let n = y.len();
    let fitted = &v * &wm.gamma;
    let mut psi = Vec::with_capacity(n);
    let mut psi_prime = Vec::with_capacity(n);
    for i in 0..n {
        let e = y[i] - fitted[i];
        psi.push(wm.loss.psi(e, wm.scale));
        psi_prime.push(wm.loss.psi_prime(e, wm.scale)?);
    }
    let (d_phi, _) = linalg::weighted_normal_equations(&v, &vec![0.0; n], &psi_prime);
    let d_phi = d_phi / n as f64;
    let d_inv = linalg::inverse(&d_phi)
        .ok_or_else(|| Error::SingularJacobian("analysis model".into()))?;
    Ok(AnalysisParts {
        v,
        psi,
        psi_prime,
        d_phi,
        d_inv,
    })
}

/// Maps `V_{gamma,i}` rows to `V_{tau,i}`.
fn project_tau(
    c: &CompletedDataset,
    wm: &WorkingModel,
    v_gamma: &DMatrix<f64>,
) -> (Vec<f64>, Option<DVector<f64>>) {
    match wm.form {
        Form::MainEffects => (v_gamma.column(0).iter().cloned().collect(), None),
        Form::Interaction => {
            let mu = baseline_means(c.source());
            let g0 = wm.gamma0();
            let x = c.source().baseline();
            let p = c.p();
            let v = (0..c.n())
                .map(|i| {
                    let mut a = 0.0;
                    let mut b = 0.0;
                    for j in 0..p {
                        a += (x[(i, j)] - mu[j]) * g0[j];
                        b += mu[j] * v_gamma[(i, j)];
                    }
                    a + b
                })
                .collect();
            (v, Some(mu))
        }
    }
}

/// Influence values of `tau` for a fit on fully known outcomes, i.e. without
/// the imputation-model correction. Used for within-imputation variances.
pub fn analysis_influence(c: &CompletedDataset, wm: &WorkingModel) -> Result<Vec<f64>> {
    let parts = analysis_parts(c, wm)?;
    let mut phi = parts.v.clone();
    for (i, mut row) in phi.row_iter_mut().enumerate() {
        row *= parts.psi[i];
    }
    let v_gamma = phi * parts.d_inv.transpose();
    Ok(project_tau(c, wm, &v_gamma).0)
}

/// Sandwich variance of `tau` treating the completed outcomes as data.
pub fn analysis_variance(c: &CompletedDataset, wm: &WorkingModel) -> Result<f64> {
    Ok(centered_variance(&analysis_influence(c, wm)?))
}

/// Linearized variance of `tau`, propagating the estimation error of the
/// imputation coefficients through the imputed outcomes.
pub fn linearized_variance(
    c: &CompletedDataset,
    model: &ImputationModel,
    wm: &WorkingModel,
) -> Result<(f64, InfluenceDecomposition)> {
    let d = c.source();
    let (n, p, t) = (d.n(), d.p(), d.t());
    if !model.loss.has_derivative() {
        return Err(Error::UnsupportedDerivative(model.loss.kind.name()));
    }
    if model.p != p || model.t != t {
        return Err(Error::Schema("imputation model does not match the data".into()));
    }
    let parts = analysis_parts(c, wm)?;
    let nf = n as f64;

    // q(H_{i,s-1}, alpha_{s-1}) for each visit's regression
    let mut q = Vec::with_capacity(t);
    for s in 1..=t {
        let vf = &model.visits[s - 1];
        let rows = fit_rows(d, model.arm, s);
        let h = history_matrix(d, &rows, s);
        let k = p + s - 1;
        let mut jac = DMatrix::<f64>::zeros(k, k);
        let mut phi = DMatrix::<f64>::zeros(rows.len(), k);
        for (r, &i) in rows.iter().enumerate() {
            let hr = h.row(r);
            let e = d.outcome(i, s).unwrap() - (hr * &vf.coefficients)[(0, 0)];
            let w = vf.covariate_weights[r];
            let dp = w * model.loss.psi_prime(e, vf.scale)?;
            jac += dp * hr.transpose() * hr;
            phi.row_mut(r).copy_from(&(hr * (w * model.loss.psi(e, vf.scale))));
        }
        jac /= nf;
        let jinv = linalg::inverse(&jac)
            .ok_or_else(|| Error::SingularJacobian(format!("imputation model at visit {s}")))?;
        let qs_fit = phi * jinv.transpose();
        let mut qs = DMatrix::<f64>::zeros(n, k);
        for (r, &i) in rows.iter().enumerate() {
            qs.row_mut(i).copy_from(&qs_fit.row(r));
        }
        q.push(qs);
    }

    // U_{t,t-1} = q_t; U_{t,s-1} = (I, alpha_{s-1}) U_{t,s} + beta_{t,s}[last] q_s
    let mut u = vec![DMatrix::<f64>::zeros(0, 0); t];
    u[t - 1] = q[t - 1].clone();
    for s in (1..t).rev() {
        let m = p + s - 1;
        let next = &u[s];
        let alpha = model.alpha(s);
        let b_last = model.beta(s + 1)[m];
        let mut cur = next.columns(0, m).into_owned();
        cur += next.column(m) * alpha.transpose();
        cur += &q[s - 1] * b_last;
        u[s - 1] = cur;
    }

    let dim = parts.v.ncols();
    let dropout: Vec<DropoutPattern> = (0..n).map(|i| d.dropout_pattern(i)).collect();
    let mut corrections = Vec::with_capacity(t);
    for s in 1..=t {
        let m = p + s - 1;
        let mut cs = DMatrix::<f64>::zeros(dim, m);
        for i in 0..n {
            if dropout[i] == DropoutPattern::At(s) && parts.psi_prime[i] != 0.0 {
                let h = d.history(i, s - 1).unwrap();
                cs += parts.psi_prime[i] * parts.v.row(i).transpose() * h.transpose();
            }
        }
        corrections.push(cs / nf);
    }

    let mut phi = parts.v.clone();
    for (i, mut row) in phi.row_iter_mut().enumerate() {
        row *= parts.psi[i];
    }
    for s in 1..=t {
        phi += &u[s - 1] * corrections[s - 1].transpose();
    }
    let v_gamma = phi * parts.d_inv.transpose();
    let (v_tau, mu_x) = project_tau(c, wm, &v_gamma);

    let decomposition = InfluenceDecomposition {
        v_tau,
        v_gamma,
        q,
        u,
        corrections,
        d_phi: parts.d_phi,
        psi: parts.psi,
        psi_prime: parts.psi_prime,
        dropout,
        mu_x,
    };
    Ok((decomposition.variance(), decomposition))
}

/// The three estimation steps bundled for reuse (bootstrap, simulations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub imputation: ImputationConfig,
    pub analysis_loss: LossSpec,
    pub form: Form,
}

impl PipelineConfig {
    /// Weighted Huber imputation and Huber analysis.
    pub fn robust() -> Self {
        Self {
            imputation: ImputationConfig::default(),
            analysis_loss: LossSpec::default(),
            form: Form::Interaction,
        }
    }

    /// Weighted Huber imputation and least-squares analysis.
    pub fn lse() -> Self {
        Self {
            analysis_loss: LossSpec::least_squares(),
            ..Self::robust()
        }
    }
}

/// Fitted pieces of one pass through the pipeline.
#[derive(Debug, Clone)]
pub struct PipelineFit {
    pub model: ImputationModel,
    pub completed: CompletedDataset,
    pub working: WorkingModel,
    pub tau: f64,
}

pub fn run_pipeline(d: &TrialDataset, cfg: &PipelineConfig) -> Result<PipelineFit> {
    let model = fit_sequential(d, &cfg.imputation)?;
    let completed = impute(d, &model)?;
    let working = fit_analysis(&completed, cfg.form, &cfg.analysis_loss)?;
    let tau = ate(&working, &completed);
    Ok(PipelineFit {
        model,
        completed,
        working,
        tau,
    })
}

pub const BOOTSTRAP_RETRIES: usize = 10;
const BOOTSTRAP_FAILURE_LIMIT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub variance: f64,
    pub replicates: Vec<f64>,
    /// Failed resample attempts, including ones later retried successfully.
    pub failed_attempts: usize,
}

/// Subject indices per arm in a canonical order that does not depend on how
/// the input rows are arranged.
fn canonical_arms(d: &TrialDataset) -> [Vec<usize>; 2] {
    let key_cmp = |&a: &usize, &b: &usize| {
        d.ids()[a].cmp(&d.ids()[b]).then_with(|| {
            let ra = d.baseline().row(a).iter().chain(d.outcome_matrix().row(a).iter()).cloned().collect::<Vec<_>>();
            let rb = d.baseline().row(b).iter().chain(d.outcome_matrix().row(b).iter()).cloned().collect::<Vec<_>>();
            ra.iter()
                .zip(&rb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    };
    let mut arms = [Vec::new(), Vec::new()];
    for i in 0..d.n() {
        arms[d.arm(i) as usize].push(i);
    }
    for a in arms.iter_mut() {
        a.sort_by(key_cmp);
    }
    arms
}

/// Arm-stratified nonparametric bootstrap of the whole pipeline.
pub fn bootstrap_variance(
    d: &TrialDataset,
    cfg: &PipelineConfig,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    bootstrap_with(d, b, seed, |r| Ok(run_pipeline(r, cfg)?.tau))
}

/// Arm-stratified bootstrap of an arbitrary estimator.
pub fn bootstrap_with<F>(d: &TrialDataset, b: usize, seed: u64, estimator: F) -> Result<BootstrapResult>
where
    F: Fn(&TrialDataset) -> Result<f64> + Sync,
{
    if b < 2 {
        return Err(Error::Config(format!("bootstrap needs B >= 2, got {b}")));
    }
    let arms = canonical_arms(d);
    let outcomes: Vec<(Option<f64>, usize)> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut failed = 0;
            for attempt in 0..BOOTSTRAP_RETRIES {
                let mut rng = seeding::substream(
                    seed,
                    &[seeding::tag::BOOTSTRAP, rep as u64, attempt as u64],
                );
                let mut rows = Vec::with_capacity(d.n());
                for arm in &arms {
                    for _ in 0..arm.len() {
                        rows.push(arm[rng.random_range(0..arm.len())]);
                    }
                }
                match estimator(&d.select(&rows)) {
                    Ok(tau) => return (Some(tau), failed),
                    Err(e) => {
                        log::debug!("bootstrap replicate {rep} attempt {attempt} failed: {e}");
                        failed += 1;
                    }
                }
            }
            (None, failed)
        })
        .collect();
    let failed_attempts: usize = outcomes.iter().map(|o| o.1).sum();
    let replicates: Vec<f64> = outcomes.iter().filter_map(|o| o.0).collect();
    if failed_attempts as f64 > BOOTSTRAP_FAILURE_LIMIT * b as f64 || replicates.len() < 2 {
        return Err(Error::BootstrapInstability {
            failed: failed_attempts,
            total: b,
        });
    }
    Ok(BootstrapResult {
        variance: linalg::sample_variance(&replicates),
        replicates,
        failed_attempts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMethod {
    #[default]
    Linearized,
    Bootstrap,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisitDiagnostics {
    pub visit: usize,
    pub n_fit: usize,
    pub nu: f64,
    pub scale: f64,
    pub iterations: usize,
    pub converged: bool,
    pub ee_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub imputation: Vec<VisitDiagnostics>,
    pub analysis_iterations: usize,
    pub analysis_converged: bool,
    pub analysis_ee_norm: f64,
    pub influence_mean: Option<f64>,
    pub bootstrap_failed_attempts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AteEstimate {
    pub tau_hat: f64,
    pub var_linearized: Option<f64>,
    pub var_bootstrap: Option<f64>,
    pub ci95: [f64; 2],
    pub loss: LossSpec,
    pub form: Form,
    /// Control and treated means of the completed final-visit outcome.
    pub arm_means: [f64; 2],
    pub diagnostics: Diagnostics,
}

/// Wald interval `tau +- 1.96 sqrt(var)`.
pub fn wald_ci(tau: f64, var: f64) -> [f64; 2] {
    let half = 1.96 * var.max(0.0).sqrt();
    [tau - half, tau + half]
}

/// Point estimate with the requested variance estimates.
pub fn estimate(
    d: &TrialDataset,
    cfg: &PipelineConfig,
    variance: VarianceMethod,
    bootstrap_b: usize,
    seed: u64,
) -> Result<AteEstimate> {
    let fit = run_pipeline(d, cfg)?;
    let (var_lin, influence_mean) = match variance {
        VarianceMethod::Linearized | VarianceMethod::Both => {
            let (v, dec) = linearized_variance(&fit.completed, &fit.model, &fit.working)?;
            (Some(v), Some(dec.mean()))
        }
        VarianceMethod::Bootstrap => (None, None),
    };
    let boot = match variance {
        VarianceMethod::Bootstrap | VarianceMethod::Both => {
            Some(bootstrap_variance(d, cfg, bootstrap_b, seed)?)
        }
        VarianceMethod::Linearized => None,
    };
    let var_boot = boot.as_ref().map(|b| b.variance);
    let chosen = var_lin.or(var_boot).expect("at least one variance");
    Ok(AteEstimate {
        tau_hat: fit.tau,
        var_linearized: var_lin,
        var_bootstrap: var_boot,
        ci95: wald_ci(fit.tau, chosen),
        loss: cfg.analysis_loss,
        form: cfg.form,
        arm_means: fit.completed.arm_means(),
        diagnostics: Diagnostics {
            imputation: fit
                .model
                .visits
                .iter()
                .map(|v| VisitDiagnostics {
                    visit: v.visit,
                    n_fit: v.n_fit,
                    nu: v.nu,
                    scale: v.scale,
                    iterations: v.iterations,
                    converged: v.converged,
                    ee_norm: v.ee_norm,
                })
                .collect(),
            analysis_iterations: fit.working.iterations,
            analysis_converged: fit.working.converged,
            analysis_ee_norm: fit.working.ee_norm,
            influence_mean,
            bootstrap_failed_attempts: boot.map(|b| b.failed_attempts),
        },
    })
}
