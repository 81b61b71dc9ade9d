//! Multiple imputation with sequential least-squares models on the control arm
//! and Rubin's combining rule.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ate_analysis::{analysis_variance, ate, fit_analysis, Form};
use crate::error::{Error, Result};
use crate::j2r_imputer::{fit_rows, history_matrix};
use crate::linalg;
use crate::robust_loss::LossSpec;
use crate::seeding;
use crate::trial_data::{CompletedDataset, TrialDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiConfig {
    /// Number of imputations.
    pub m: usize,
    pub seed: u64,
    /// Draw the imputation parameters from their posterior (proper imputation);
    /// otherwise impute around the point estimates.
    pub proper: bool,
    pub form: Form,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self {
            m: 10,
            seed: 0,
            proper: true,
            form: Form::Interaction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiResult {
    pub tau_mi: f64,
    pub rubin_variance: f64,
    pub within_mean: f64,
    pub between: f64,
    pub taus: Vec<f64>,
    pub within: Vec<f64>,
}

/// Least-squares regression of `Y_s` on `H_{s-1}` with what a posterior draw needs.
#[derive(Debug, Clone)]
struct LsVisit {
    coef: DVector<f64>,
    rss: f64,
    df: usize,
    /// Lower Cholesky factor of `(H'H)^-1`.
    cov_chol: DMatrix<f64>,
}

fn fit_ls_visit(d: &TrialDataset, s: usize) -> Result<LsVisit> {
    let rows = fit_rows(d, 0, s);
    let k = d.p() + s - 1;
    if rows.len() <= k {
        return Err(Error::InsufficientData(format!(
            "visit {s}: {} control subjects observed, more than {k} needed",
            rows.len()
        )));
    }
    let h = history_matrix(d, &rows, s);
    let y: Vec<f64> = rows.iter().map(|&i| d.outcome(i, s).unwrap()).collect();
    let (xtx, xty) = linalg::weighted_normal_equations(&h, &y, &vec![1.0; y.len()]);
    let rank_err = || Error::ImputationFit {
        visit: s,
        source: Box::new(Error::Rank {
            rank: linalg::rank(&h),
            required: k,
            context: "control-arm least-squares imputation model".into(),
        }),
    };
    let chol = xtx.clone().cholesky().ok_or_else(rank_err)?;
    let coef = chol.solve(&xty);
    let fitted = &h * &coef;
    let rss: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let ymax = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if rss <= (f64::EPSILON * (1.0 + ymax)).powi(2) * y.len() as f64 {
        return Err(Error::DegenerateNoise { visit: s });
    }
    let cov = chol.inverse();
    let cov_chol = cov.cholesky().ok_or_else(rank_err)?.l();
    Ok(LsVisit {
        coef,
        rss,
        df: rows.len() - k,
        cov_chol,
    })
}

/// One imputed dataset: parameters drawn per visit, then each missing outcome
/// drawn as its conditional mean plus normal noise, visit by visit.
fn impute_once(d: &TrialDataset, fits: &[LsVisit], proper: bool, rng: &mut impl Rng) -> CompletedDataset {
    let (n, p, t) = (d.n(), d.p(), d.t());
    let draws: Vec<(DVector<f64>, f64)> = fits
        .iter()
        .map(|f| {
            if proper {
                let chi: f64 = ChiSquared::new(f.df as f64).unwrap().sample(rng);
                let sigma2 = f.rss / chi;
                let z = DVector::from_iterator(f.coef.len(), (0..f.coef.len()).map(|_| StandardNormal.sample(rng)));
                (&f.coef + &f.cov_chol * z * sigma2.sqrt(), sigma2.sqrt())
            } else {
                (f.coef.clone(), (f.rss / f.df as f64).sqrt())
            }
        })
        .collect();
    let mut values = d.outcome_matrix().clone();
    for i in 0..n {
        for s in (d.observed_visits(i) + 1)..=t {
            let (beta, sigma) = &draws[s - 1];
            let mut mean = 0.0;
            for j in 0..p {
                mean += d.baseline()[(i, j)] * beta[j];
            }
            for k in 0..(s - 1) {
                mean += values[(i, k)] * beta[p + k];
            }
            let e: f64 = StandardNormal.sample(rng);
            values[(i, s - 1)] = mean + sigma * e;
        }
    }
    CompletedDataset::new(d.clone(), values)
}

/// Rubin's rule: `T = mean(W) + (1 + 1/M) B`.
pub fn rubin(taus: &[f64], within: &[f64]) -> (f64, f64, f64, f64) {
    let m = taus.len() as f64;
    let tau = linalg::mean(taus);
    let w = linalg::mean(within);
    let b = linalg::sample_variance(taus);
    (tau, w + (1.0 + 1.0 / m) * b, w, b)
}

pub fn run_mi(d: &TrialDataset, cfg: &MiConfig) -> Result<MiResult> {
    if cfg.m < 2 {
        return Err(Error::Config(format!("MI needs at least 2 imputations, got {}", cfg.m)));
    }
    let fits = (1..=d.t())
        .map(|s| fit_ls_visit(d, s))
        .collect::<Result<Vec<_>>>()?;
    let ls = LossSpec::least_squares();
    let per: Vec<(f64, f64)> = (0..cfg.m)
        .into_par_iter()
        .map(|m| {
            let mut rng = seeding::substream(cfg.seed, &[seeding::tag::MI, m as u64]);
            let c = impute_once(d, &fits, cfg.proper, &mut rng);
            let wm = fit_analysis(&c, cfg.form, &ls)?;
            Ok((ate(&wm, &c), analysis_variance(&c, &wm)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let taus: Vec<f64> = per.iter().map(|v| v.0).collect();
    let within: Vec<f64> = per.iter().map(|v| v.1).collect();
    let (tau_mi, rubin_variance, within_mean, between) = rubin(&taus, &within);
    Ok(MiResult {
        tau_mi,
        rubin_variance,
        within_mean,
        between,
        taus,
        within,
    })
}
