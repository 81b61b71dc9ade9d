//! Data-generating processes, outlier injection and the Monte Carlo harness
//! comparing MI, LSE and Robust estimators.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ate_analysis::{
    bootstrap_with, linearized_variance, run_pipeline, Form, PipelineConfig,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mi_baseline::{run_mi, MiConfig};
use crate::seeding::{self, derive_seed, tag};
use crate::trial_data::TrialDataset;

/// Visit-1 model shared by both arms: `(1, X1, X2)`.
const VISIT1: [f64; 3] = [0.5, 1.0, -0.2];

/// Control-arm coefficients on `(1, X1, X2, Y1, ..)` for visits 2..5.
pub const CONTROL_COEFS: [&[f64]; 5] = [
    &VISIT1,
    &[0.4, 0.14, 0.52, 0.01],
    &[0.77, 0.02, 0.06, 0.71, 0.84],
    &[1.44, -0.45, -0.24, -0.50, -0.39, 0.53],
    &[4.37, -0.84, -0.31, 0.01, 0.35, -0.32, 0.81],
];

pub const TREATED_COEFS: [&[f64]; 5] = [
    &VISIT1,
    &[1.79, 0.35, -0.05, 0.33],
    &[2.52, 1.16, -0.51, -1.53, 0.46],
    &[2.72, -0.46, -0.06, 0.91, 0.19, 0.70],
    &[4.21, -0.02, -1.26, 0.24, -0.18, 0.65, 0.13],
];

pub const SIGMA: [f64; 5] = [2.0, 1.8, 2.0, 2.1, 2.2];
pub const VISITS: usize = 5;
pub const OUTLIER_POOL: usize = 30;
pub const OUTLIER_COUNT: usize = 10;
pub const OUTLIER_FACTOR: f64 = 3.0;
const MC_FAILURE_LIMIT: f64 = 0.02;

/// Published true effects used for the tolerance checks.
pub const TRUTH_NORMAL: f64 = 0.7118;
pub const TRUTH_T5: f64 = 0.6809;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorFamily {
    Normal,
    /// `sqrt(3/5) sigma t_5`, matching the normal variance.
    T5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Both arms share the control coefficients.
    H0,
    H1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierMode {
    None,
    BothArms,
    ControlOnly,
    TreatmentOnly,
}

impl OutlierMode {
    fn targets(self, arm: u8) -> bool {
        matches!(
            (self, arm),
            (OutlierMode::BothArms, _) | (OutlierMode::ControlOnly, 0) | (OutlierMode::TreatmentOnly, 1)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub errors: ErrorFamily,
    pub hypothesis: Hypothesis,
    pub outliers: OutlierMode,
    pub n_per_arm: usize,
    /// Dropout-logit intercepts `[control, treated]`.
    pub phi1: [f64; 2],
    /// Dropout-logit slopes on the previous outcome `[control, treated]`.
    pub phi2: [f64; 2],
    pub sigma: [f64; VISITS],
}

impl Scenario {
    pub fn new(errors: ErrorFamily, hypothesis: Hypothesis, outliers: OutlierMode) -> Self {
        let phi1 = match hypothesis {
            Hypothesis::H1 => [-3.5, -3.6],
            Hypothesis::H0 => [-3.5, -3.5],
        };
        let name = format!(
            "{}-{}-{}",
            match hypothesis {
                Hypothesis::H0 => "h0",
                Hypothesis::H1 => "h1",
            },
            match errors {
                ErrorFamily::Normal => "normal",
                ErrorFamily::T5 => "t5",
            },
            match outliers {
                OutlierMode::None => "clean",
                OutlierMode::BothArms => "both",
                OutlierMode::ControlOnly => "control",
                OutlierMode::TreatmentOnly => "treatment",
            }
        );
        Self {
            name,
            errors,
            hypothesis,
            outliers,
            n_per_arm: 500,
            phi1,
            phi2: [0.2, 0.2],
            sigma: SIGMA,
        }
    }

    /// Looks up a scenario by the name `new` would give it, e.g. `h1-normal-both`.
    pub fn preset(name: &str) -> Result<Self> {
        for h in [Hypothesis::H0, Hypothesis::H1] {
            for e in [ErrorFamily::Normal, ErrorFamily::T5] {
                for o in [
                    OutlierMode::None,
                    OutlierMode::BothArms,
                    OutlierMode::ControlOnly,
                    OutlierMode::TreatmentOnly,
                ] {
                    let sc = Self::new(e, h, o);
                    if sc.name == name {
                        return Ok(sc);
                    }
                }
            }
        }
        Err(Error::Config(format!("unknown scenario `{name}`")))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_arm < 2 {
            return Err(Error::Config("n_per_arm must be at least 2".into()));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("sigma entries must be positive".into()));
        }
        Ok(())
    }

    pub fn coefficients(&self, arm: u8) -> [&'static [f64]; 5] {
        match (self.hypothesis, arm) {
            (Hypothesis::H1, 1) => TREATED_COEFS,
            _ => CONTROL_COEFS,
        }
    }

    /// True effect as published for this scenario family.
    pub fn published_truth(&self) -> f64 {
        match (self.hypothesis, self.errors) {
            (Hypothesis::H0, _) => 0.0,
            (Hypothesis::H1, ErrorFamily::Normal) => TRUTH_NORMAL,
            (Hypothesis::H1, ErrorFamily::T5) => TRUTH_T5,
        }
    }
}

/// A generated trial: the masked dataset plus every subject's full trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTrial {
    pub data: TrialDataset,
    /// `n x t` outcomes before masking.
    pub full_outcomes: DMatrix<f64>,
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draws a trial. Control subjects come first, then treated ones.
pub fn generate(sc: &Scenario, seed: u64) -> SimulatedTrial {
    let mut rng = seeding::substream(seed, &[tag::GENERATE]);
    let n = 2 * sc.n_per_arm;
    let t5 = StudentT::new(5.0).unwrap();
    let t5_scale = (3.0f64 / 5.0).sqrt();
    let mut baseline = DMatrix::<f64>::zeros(n, 3);
    let mut full = DMatrix::<f64>::zeros(n, VISITS);
    let mut treatment = Vec::with_capacity(n);
    let mut observed = Vec::with_capacity(n);
    for i in 0..n {
        let a = u8::from(i >= sc.n_per_arm);
        let coefs = sc.coefficients(a);
        let x1: f64 = StandardNormal.sample(&mut rng);
        let x2 = if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 };
        let mut h = vec![1.0, x1, x2];
        for s in 0..VISITS {
            let mean: f64 = coefs[s].iter().zip(&h).map(|(c, v)| c * v).sum();
            let e = match sc.errors {
                ErrorFamily::Normal => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sc.sigma[s] * z
                }
                ErrorFamily::T5 => t5_scale * sc.sigma[s] * t5.sample(&mut rng),
            };
            h.push(mean + e);
        }
        // visit 1 is always observed; afterwards a subject seen at s-1
        // drops out with probability expit(phi1 + phi2 * Y_{s-1})
        let mut k = 1;
        for s in 2..=VISITS {
            let p = expit(sc.phi1[a as usize] + sc.phi2[a as usize] * h[3 + s - 2]);
            if rng.random::<f64>() < p {
                break;
            }
            k = s;
        }
        baseline[(i, 0)] = 1.0;
        baseline[(i, 1)] = x1;
        baseline[(i, 2)] = x2;
        for s in 0..VISITS {
            full[(i, s)] = h[3 + s];
        }
        treatment.push(a);
        observed.push(k);
    }
    let mut masked = full.clone();
    for i in 0..n {
        for s in observed[i]..VISITS {
            masked[(i, s)] = f64::NAN;
        }
    }
    let ids = (0..n).map(|i| format!("{:06}", i + 1)).collect();
    SimulatedTrial {
        data: TrialDataset::from_raw(ids, treatment, baseline, masked, observed),
        full_outcomes: full,
    }
}

/// Multiplies every outcome of 10 subjects drawn from the 30 completers with
/// the highest final outcome, in each targeted arm.
pub fn inject_outliers(d: &TrialDataset, mode: OutlierMode, seed: u64) -> Result<TrialDataset> {
    let mut out = d.clone();
    let t = d.t();
    for arm in [0u8, 1] {
        if !mode.targets(arm) {
            continue;
        }
        let mut completers: Vec<usize> = (0..d.n())
            .filter(|&i| d.arm(i) == arm && d.observed_visits(i) == t)
            .collect();
        if completers.len() < OUTLIER_POOL {
            return Err(Error::InsufficientCompleters {
                arm,
                found: completers.len(),
                required: OUTLIER_POOL,
            });
        }
        completers.sort_by(|&a, &b| {
            d.outcome(b, t)
                .unwrap()
                .total_cmp(&d.outcome(a, t).unwrap())
                .then(a.cmp(&b))
        });
        let mut rng = seeding::substream(seed, &[tag::OUTLIERS, arm as u64]);
        let y = out.outcomes_mut();
        for pos in index::sample(&mut rng, OUTLIER_POOL, OUTLIER_COUNT) {
            let i = completers[pos];
            for s in 0..t {
                y[(i, s)] *= OUTLIER_FACTOR;
            }
        }
    }
    Ok(out)
}

/// Mean of the final outcome per arm from the linear recursions, which does
/// not depend on the error family: `[control, treated]`.
pub fn analytic_means(sc: &Scenario) -> [f64; 2] {
    let mut out = [0.0; 2];
    for arm in [0u8, 1] {
        let coefs = sc.coefficients(arm);
        let mut m = vec![1.0, 0.0, 0.3];
        for c in coefs.iter() {
            let v: f64 = c.iter().zip(&m).map(|(a, b)| a * b).sum();
            m.push(v);
        }
        out[arm as usize] = m[m.len() - 1];
    }
    out
}

/// Full-data effect `E(Y_t | A=1) - E(Y_t | A=0)` in closed form.
pub fn analytic_full_data_tau(sc: &Scenario) -> f64 {
    let m = analytic_means(sc);
    m[1] - m[0]
}

/// Empirical full-data effect on a large generated sample (dropout ignored).
pub fn full_data_tau(sc: &Scenario, n_per_arm: usize, seed: u64) -> f64 {
    let big = Scenario {
        n_per_arm,
        ..sc.clone()
    };
    let trial = generate(&big, seed);
    let mut sum = [0.0; 2];
    for i in 0..trial.data.n() {
        sum[trial.data.arm(i) as usize] += trial.full_outcomes[(i, VISITS - 1)];
    }
    (sum[1] - sum[0]) / n_per_arm as f64
}

/// `beta_{t,s-1}` from the generating control coefficients.
fn true_control_betas() -> Vec<DVector<f64>> {
    let mut betas = vec![DVector::zeros(0); VISITS];
    betas[VISITS - 1] = DVector::from_column_slice(CONTROL_COEFS[VISITS - 1]);
    for s in (1..VISITS).rev() {
        let m = 3 + s - 1;
        let next = betas[s].clone();
        let alpha = DVector::from_column_slice(CONTROL_COEFS[s - 1]);
        betas[s - 1] = next.rows(0, m).into_owned() + alpha * next[m];
    }
    betas
}

/// Effect under jump-to-reference on a large sample: each dropout's final
/// outcome replaced by its conditional mean under the true control model.
pub fn j2r_oracle_tau(sc: &Scenario, n_per_arm: usize, seed: u64) -> f64 {
    let big = Scenario {
        n_per_arm,
        outliers: OutlierMode::None,
        ..sc.clone()
    };
    let trial = generate(&big, seed);
    let d = &trial.data;
    let betas = true_control_betas();
    let mut sum = [0.0; 2];
    for i in 0..d.n() {
        let k = d.observed_visits(i);
        let v = if k == VISITS {
            trial.full_outcomes[(i, VISITS - 1)]
        } else {
            d.history(i, k).unwrap().dot(&betas[k])
        };
        sum[d.arm(i) as usize] += v;
    }
    (sum[1] - sum[0]) / n_per_arm as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mi,
    Lse,
    Robust,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mi, Method::Lse, Method::Robust];

    pub fn label(self) -> &'static str {
        match self {
            Method::Mi => "MI",
            Method::Lse => "LSE",
            Method::Robust => "Robust",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub reps: usize,
    /// Bootstrap replicates per MC replicate; 0 disables the bootstrap.
    pub bootstrap_b: usize,
    pub mi_m: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub form: Form,
    /// Subjects per arm for the derived-truth oracles; 0 skips them.
    pub oracle_n_per_arm: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            reps: 1000,
            bootstrap_b: 0,
            mi_m: 10,
            seed: 7,
            methods: Method::ALL.to_vec(),
            form: Form::Interaction,
            oracle_n_per_arm: 200_000,
        }
    }
}

/// One method's result on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub method: Method,
    pub tau: Option<f64>,
    /// Linearized variance (LSE, Robust) or Rubin's variance (MI).
    pub var_v1: Option<f64>,
    pub var_boot: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub successes: usize,
    pub failures: usize,
    pub point_est: f64,
    pub bias: f64,
    pub mc_variance: f64,
    pub var_v1: f64,
    pub var_boot: Option<f64>,
    pub rel_bias_v1: f64,
    pub rel_bias_boot: Option<f64>,
    pub coverage_v1: f64,
    pub coverage_boot: Option<f64>,
    /// Share of Wald tests rejecting `tau = 0`: type-1 error under H0, power under H1.
    pub rejection_v1: f64,
    pub rejection_boot: Option<f64>,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedTruth {
    pub analytic_full_data: f64,
    pub j2r_oracle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub version: String,
    pub scenario: Scenario,
    pub config: McConfig,
    /// Truth the metrics are computed against (the published value).
    pub truth: f64,
    pub derived_truth: DerivedTruth,
    pub methods: Vec<MethodSummary>,
}

impl McReport {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

#[derive(Debug, Clone)]
pub struct McRun {
    pub report: McReport,
    pub records: Vec<ReplicateRecord>,
}

fn mean_of(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Aggregates one method's replicates against `truth`.
pub fn summarize(method: Method, records: &[ReplicateRecord], truth: f64) -> MethodSummary {
    let ok: Vec<&ReplicateRecord> = records
        .iter()
        .filter(|r| r.method == method && r.tau.is_some() && r.var_v1.is_some())
        .collect();
    let failures = records.iter().filter(|r| r.method == method).count() - ok.len();
    let taus: Vec<f64> = ok.iter().map(|r| r.tau.unwrap()).collect();
    let k = taus.len() as f64;
    let point = linalg::mean(&taus);
    let mc_var = taus.iter().map(|t| (t - point) * (t - point)).sum::<f64>() / k;
    let rmse = (taus.iter().map(|t| (t - truth) * (t - truth)).sum::<f64>() / k).sqrt();
    let cover = |tau: f64, v: f64| ((tau - truth).abs() <= 1.96 * v.sqrt()) as u8 as f64;
    let reject = |tau: f64, v: f64| (tau.abs() > 1.96 * v.sqrt()) as u8 as f64;
    let var_v1 = mean_of(ok.iter().map(|r| r.var_v1.unwrap()));
    let has_boot = !ok.is_empty() && ok.iter().all(|r| r.var_boot.is_some());
    let boot = |f: &dyn Fn(f64, f64) -> f64| -> Option<f64> {
        has_boot.then(|| mean_of(ok.iter().map(|r| f(r.tau.unwrap(), r.var_boot.unwrap()))))
    };
    let var_boot = boot(&|_, v| v);
    MethodSummary {
        method,
        successes: ok.len(),
        failures,
        point_est: point,
        bias: point - truth,
        mc_variance: mc_var,
        var_v1,
        var_boot,
        rel_bias_v1: (var_v1 - mc_var) / mc_var,
        rel_bias_boot: var_boot.map(|v| (v - mc_var) / mc_var),
        coverage_v1: mean_of(ok.iter().map(|r| cover(r.tau.unwrap(), r.var_v1.unwrap()))),
        coverage_boot: boot(&cover),
        rejection_v1: mean_of(ok.iter().map(|r| reject(r.tau.unwrap(), r.var_v1.unwrap()))),
        rejection_boot: boot(&reject),
        rmse,
    }
}

fn mi_config(cfg: &McConfig, seed: u64) -> MiConfig {
    MiConfig {
        m: cfg.mi_m,
        seed,
        proper: true,
        form: cfg.form,
    }
}

fn run_method(d: &TrialDataset, method: Method, cfg: &McConfig, rep_seed: u64) -> Result<(f64, f64, Option<f64>)> {
    let mi_seed = derive_seed(rep_seed, &[tag::MI]);
    let boot_seed = derive_seed(rep_seed, &[tag::BOOTSTRAP]);
    match method {
        Method::Mi => {
            let mi = run_mi(d, &mi_config(cfg, mi_seed))?;
            let boot = if cfg.bootstrap_b > 0 {
                let mc = mi_config(cfg, mi_seed);
                Some(bootstrap_with(d, cfg.bootstrap_b, boot_seed, |b| Ok(run_mi(b, &mc)?.tau_mi))?.variance)
            } else {
                None
            };
            Ok((mi.tau_mi, mi.rubin_variance, boot))
        }
        Method::Lse | Method::Robust => {
            let mut pc = if method == Method::Robust {
                PipelineConfig::robust()
            } else {
                PipelineConfig::lse()
            };
            pc.form = cfg.form;
            let fit = run_pipeline(d, &pc)?;
            let (v, _) = linearized_variance(&fit.completed, &fit.model, &fit.working)?;
            let boot = if cfg.bootstrap_b > 0 {
                Some(bootstrap_with(d, cfg.bootstrap_b, boot_seed, |b| Ok(run_pipeline(b, &pc)?.tau))?.variance)
            } else {
                None
            };
            Ok((fit.tau, v, boot))
        }
    }
}

/// One replicate's dataset: generated, then contaminated per the scenario.
pub fn replicate_data(sc: &Scenario, seed: u64, rep: usize) -> Result<TrialDataset> {
    let rep_seed = derive_seed(seed, &[tag::REPLICATE, rep as u64]);
    let trial = generate(sc, rep_seed);
    inject_outliers(&trial.data, sc.outliers, rep_seed)
}

/// Runs the Monte Carlo study. Replicates are independent and each draws from
/// its own seed, so results do not depend on the thread count.
pub fn run_mc(sc: &Scenario, cfg: &McConfig) -> Result<McRun> {
    sc.validate()?;
    if cfg.reps < 2 {
        return Err(Error::Config("reps must be at least 2".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    let per_rep: Vec<Vec<ReplicateRecord>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = derive_seed(cfg.seed, &[tag::REPLICATE, rep as u64]);
            let data = replicate_data(sc, cfg.seed, rep);
            cfg.methods
                .iter()
                .map(|&method| {
                    let res = data
                        .as_ref()
                        .map_err(|e| e.to_string())
                        .and_then(|d| run_method(d, method, cfg, rep_seed).map_err(|e| e.to_string()));
                    match res {
                        Ok((tau, v1, vb)) => ReplicateRecord {
                            rep,
                            method,
                            tau: Some(tau),
                            var_v1: Some(v1),
                            var_boot: vb,
                            error: None,
                        },
                        Err(e) => {
                            log::warn!("replicate {rep}, {}: {e}", method.label());
                            ReplicateRecord {
                                rep,
                                method,
                                tau: None,
                                var_v1: None,
                                var_boot: None,
                                error: Some(e),
                            }
                        }
                    }
                })
                .collect()
        })
        .collect();
    let records: Vec<ReplicateRecord> = per_rep.into_iter().flatten().collect();

    let truth = sc.published_truth();
    let mut methods = Vec::new();
    for &m in &cfg.methods {
        let s = summarize(m, &records, truth);
        if s.failures as f64 > MC_FAILURE_LIMIT * cfg.reps as f64 || s.successes < 2 {
            return Err(Error::McInstability {
                method: m.label().into(),
                failed: s.failures,
                total: cfg.reps,
            });
        }
        methods.push(s);
    }
    let derived_truth = DerivedTruth {
        analytic_full_data: analytic_full_data_tau(sc),
        j2r_oracle: (cfg.oracle_n_per_arm > 0)
            .then(|| j2r_oracle_tau(sc, cfg.oracle_n_per_arm, derive_seed(cfg.seed, &[u64::MAX]))),
    };
    Ok(McRun {
        report: McReport {
            version: env!("CARGO_PKG_VERSION").into(),
            scenario: sc.clone(),
            config: cfg.clone(),
            truth,
            derived_truth,
            methods,
        },
        records,
    })
}

/// Flat per-replicate CSV for external plotting.
pub fn write_records_csv(records: &[ReplicateRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rep", "method", "tau", "var_v1", "var_boot", "error"])?;
    let f = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for r in records {
        w.write_record([
            r.rep.to_string(),
            r.method.label().to_string(),
            f(r.tau),
            f(r.var_v1),
            f(r.var_boot),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableId {
    #[serde(rename = "1b")]
    T1b,
    #[serde(rename = "1c")]
    T1c,
    S1,
    S2,
    S3,
}

impl std::str::FromStr for TableId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1b" => Ok(TableId::T1b),
            "1c" => Ok(TableId::T1c),
            "s1" => Ok(TableId::S1),
            "s2" => Ok(TableId::S2),
            "s3" => Ok(TableId::S3),
            _ => Err(Error::Config(format!("unknown table `{s}` (expected 1b, 1c, S1, S2, S3)"))),
        }
    }
}

impl TableId {
    pub const ALL: [TableId; 5] = [TableId::T1b, TableId::T1c, TableId::S1, TableId::S2, TableId::S3];

    pub fn label(self) -> &'static str {
        match self {
            TableId::T1b => "1b",
            TableId::T1c => "1c",
            TableId::S1 => "S1",
            TableId::S2 => "S2",
            TableId::S3 => "S3",
        }
    }

    pub fn default_reps(self) -> usize {
        match self {
            TableId::T1b | TableId::T1c => 1000,
            TableId::S1 => 500,
            TableId::S2 | TableId::S3 => 2000,
        }
    }

    pub fn scenarios(self) -> Vec<Scenario> {
        use ErrorFamily::*;
        use Hypothesis::*;
        use OutlierMode::*;
        match self {
            TableId::T1b => vec![Scenario::new(Normal, H1, None), Scenario::new(Normal, H1, BothArms)],
            TableId::T1c => vec![Scenario::new(T5, H1, None)],
            TableId::S1 => vec![
                Scenario::new(Normal, H1, ControlOnly),
                Scenario::new(Normal, H1, TreatmentOnly),
            ],
            TableId::S2 => vec![Scenario::new(Normal, H0, None)],
            TableId::S3 => vec![Scenario::new(T5, H0, None)],
        }
    }
}

/// One tolerance check of a reproduced number against the published one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub scenario: String,
    pub metric: String,
    pub published: Option<f64>,
    pub reproduced: f64,
    pub tolerance: String,
    pub pass: bool,
}

impl Comparison {
    fn within(scenario: &str, metric: &str, published: Option<f64>, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            scenario: scenario.into(),
            metric: metric.into(),
            published,
            reproduced: value,
            tolerance: format!("[{lo:.4}, {hi:.4}]"),
            pass: value >= lo && value <= hi,
        }
    }

    fn below(scenario: &str, metric: &str, published: Option<f64>, value: f64, bound: f64) -> Self {
        Self {
            scenario: scenario.into(),
            metric: metric.into(),
            published,
            reproduced: value,
            tolerance: format!("< {bound:.4}"),
            pass: value < bound,
        }
    }

    fn above(scenario: &str, metric: &str, published: Option<f64>, value: f64, bound: f64) -> Self {
        Self {
            scenario: scenario.into(),
            metric: metric.into(),
            published,
            reproduced: value,
            tolerance: format!("> {bound:.4}"),
            pass: value > bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReproduceReport {
    pub version: String,
    pub table: TableId,
    pub reps: usize,
    pub seed: u64,
    pub comparisons: Vec<Comparison>,
    pub reports: Vec<McReport>,
    pub all_pass: bool,
}

fn get(r: &McReport, m: Method) -> &MethodSummary {
    r.method(m).expect("method was run")
}

/// Tolerance checks for a table given its Monte Carlo reports (in the order
/// of [`TableId::scenarios`]).
pub fn table_checks(table: TableId, reports: &[McReport]) -> Vec<Comparison> {
    use Method::*;
    let mut c = Vec::new();
    match table {
        TableId::T1b => {
            let (clean, dirty) = (&reports[0], &reports[1]);
            let n = clean.scenario.name.as_str();
            let rb = get(clean, Robust);
            c.push(Comparison::within(n, "Robust point est", Some(0.7009), rb.point_est, 0.7118 - 0.020, 0.7118 + 0.020));
            c.push(Comparison::within(n, "Robust linearized variance relative bias", Some(0.0475), rb.rel_bias_v1, -0.10, 0.20));
            c.push(Comparison::within(n, "Robust coverage (linearized)", Some(0.95), rb.coverage_v1, 0.93, 0.97));
            let n = dirty.scenario.name.as_str();
            let (rb, mi) = (get(dirty, Robust), get(dirty, Mi));
            c.push(Comparison::below(n, "|Robust bias| / |MI bias|", Some(0.0116 / 0.0624), rb.bias.abs() / mi.bias.abs(), 1.0 / 3.0));
            c.push(Comparison::above(n, "MI Rubin variance relative bias", Some(2.1636), mi.rel_bias_v1, 1.0));
            c.push(Comparison::within(n, "Robust coverage (linearized)", Some(0.95), rb.coverage_v1, 0.925, 0.97));
            c.push(Comparison::within(n, "Robust point est", Some(0.7234), rb.point_est, 0.7118 - 0.015, 0.7118 + 0.015));
        }
        TableId::T1c => {
            let r = &reports[0];
            let n = r.scenario.name.as_str();
            let (rb, lse, mi) = (get(r, Robust), get(r, Lse), get(r, Mi));
            c.push(Comparison::below(n, "Robust MC variance - LSE MC variance", Some(0.0272 - 0.0290), rb.mc_variance - lse.mc_variance, 0.0));
            c.push(Comparison::below(n, "LSE MC variance - MI Rubin variance", Some(0.0290 - 0.0535), lse.mc_variance - mi.var_v1, 0.0));
            c.push(Comparison::within(n, "Robust point est", Some(0.6981), rb.point_est, 0.6809 - 0.020, 0.6809 + 0.020));
        }
        TableId::S1 => {
            let (ctrl, trt) = (&reports[0], &reports[1]);
            let n = ctrl.scenario.name.as_str();
            c.push(Comparison::within(n, "Robust point est", Some(0.7486), get(ctrl, Robust).point_est, 0.7118 - 0.05, 0.7118 + 0.05));
            c.push(Comparison::above(n, "MI downward deviation (truth - point est)", Some(0.7118 - 0.4307), -get(ctrl, Mi).bias, 0.15));
            let n = trt.scenario.name.as_str();
            c.push(Comparison::within(n, "Robust point est", Some(0.6771), get(trt, Robust).point_est, 0.7118 - 0.05, 0.7118 + 0.05));
            c.push(Comparison::above(n, "MI upward deviation (point est - truth)", Some(1.1655 - 0.7118), get(trt, Mi).bias, 0.15));
        }
        TableId::S2 | TableId::S3 => {
            let r = &reports[0];
            let n = r.scenario.name.as_str();
            let (published_rb, published_mi) = if table == TableId::S2 { (0.0496, 0.0212) } else { (0.0538, 0.0233) };
            c.push(Comparison::within(n, "Robust type-1 error (linearized)", Some(published_rb), get(r, Robust).rejection_v1, 0.035, 0.065));
            c.push(Comparison::below(n, "MI Rubin type-1 error", Some(published_mi), get(r, Mi).rejection_v1, 0.035));
        }
    }
    c
}

/// Runs the scenarios behind a published table and checks the tolerance bands.
pub fn reproduce(table: TableId, cfg: &McConfig) -> Result<(ReproduceReport, Vec<McRun>)> {
    let runs = table
        .scenarios()
        .iter()
        .map(|sc| run_mc(sc, cfg))
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<McReport> = runs.iter().map(|r| r.report.clone()).collect();
    let comparisons = table_checks(table, &reports);
    let all_pass = comparisons.iter().all(|c| c.pass);
    Ok((
        ReproduceReport {
            version: env!("CARGO_PKG_VERSION").into(),
            table,
            reps: cfg.reps,
            seed: cfg.seed,
            comparisons,
            reports,
            all_pass,
        },
        runs,
    ))
}
