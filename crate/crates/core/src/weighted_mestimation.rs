//! Weighted M-estimation by iteratively reweighted least squares, robust
//! Mahalanobis covariate weights, and cross-validation of their tuning constant.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::robust_loss::{LossKind, LossSpec};
use crate::seeding;

pub const MAX_ITERATIONS: usize = 200;
const SCALE_FREEZE_TOL: f64 = 1e-6;
const COEF_TOL: f64 = 1e-10;
const EE_TOL: f64 = 1e-8;
const SMOOTHING: f64 = 1e-8;
/// Smoothing widths for the piecewise-linear losses, relative to the scale;
/// the last is the one solved to convergence.
const SMOOTHING_LEVELS: [f64; 4] = [1e-2, 1e-4, 1e-6, SMOOTHING];
const NEWTON_DAMPING: f64 = 1e-6;

/// Default tuning constant for the covariate weights.
pub const DEFAULT_NU: f64 = 10.0;
/// Default cross-validation grid for `nu`.
pub const DEFAULT_NU_GRID: [f64; 6] = [5.0, 8.0, 10.0, 15.0, 20.0, 30.0];

/// Shape of the trisquared covariate weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// `{1 - (u/nu)^2}^3` for `u <= nu`: one at the center, zero past `nu`.
    #[default]
    Normalized,
    /// `u * {1 - (u/nu)^2}^3` for `u <= nu`, which is zero at the center.
    Literal,
}

/// Robust Mahalanobis weighting of regressor rows.
///
/// `center` and `scatter` live in the space of the non-intercept regressors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateWeighting {
    pub nu: f64,
    pub center: DVector<f64>,
    pub scatter: DMatrix<f64>,
    pub mode: WeightMode,
    #[serde(skip)]
    precision: DMatrix<f64>,
}

impl CovariateWeighting {
    /// Builds the weighting from a set of regressors `h` whose first column is
    /// the intercept (excluded from the distance).
    pub fn fit(h: &DMatrix<f64>, nu: f64, mode: WeightMode) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::Config(format!("nu must be positive, got {nu}")));
        }
        let z = drop_intercept(h);
        if z.ncols() == 0 {
            // intercept-only regressors: every distance is zero
            return Self::new(nu, DVector::zeros(0), DMatrix::zeros(0, 0), mode);
        }
        let (center, scatter) = robust_center_scatter(&z)?;
        Self::new(nu, center, scatter, mode)
    }

    pub fn new(
        nu: f64,
        center: DVector<f64>,
        scatter: DMatrix<f64>,
        mode: WeightMode,
    ) -> Result<Self> {
        let precision = if scatter.nrows() == 0 {
            DMatrix::zeros(0, 0)
        } else {
            scatter
                .clone()
                .cholesky()
                .ok_or(Error::SingularScatter)?
                .inverse()
        };
        Ok(Self {
            nu,
            center,
            scatter,
            mode,
            precision,
        })
    }

    /// Squared robust Mahalanobis distance of one non-intercept row.
    fn distance(&self, z: impl Iterator<Item = f64>) -> f64 {
        let diff = DVector::from_iterator(self.center.len(), z) - &self.center;
        (diff.transpose() * &self.precision * &diff)[(0, 0)]
    }

    /// Weight for a squared distance `d`.
    pub fn weight_of_distance(&self, d: f64) -> f64 {
        trisquared(d, self.nu, self.mode)
    }
}

/// Trisquared weight at squared distance `d`, with `u = (d / nu)^(1/2)`.
pub fn trisquared(d: f64, nu: f64, mode: WeightMode) -> f64 {
    if nu.is_infinite() {
        return 1.0;
    }
    let u = (d.max(0.0) / nu).sqrt();
    if u > nu {
        return 0.0;
    }
    let core = (1.0 - (u / nu).powi(2)).powi(3);
    match mode {
        WeightMode::Normalized => core,
        WeightMode::Literal => u * core,
    }
}

fn drop_intercept(h: &DMatrix<f64>) -> DMatrix<f64> {
    if h.ncols() <= 1 {
        DMatrix::zeros(h.nrows(), 0)
    } else {
        h.columns(1, h.ncols() - 1).into_owned()
    }
}

/// Covariate weights for each row of `rows` (first column is the intercept).
pub fn mahalanobis_weights(rows: &DMatrix<f64>, cw: &CovariateWeighting) -> Result<Vec<f64>> {
    if rows.nrows() == 0 {
        return Err(Error::InsufficientData("no rows to weight".into()));
    }
    let q = rows.ncols().saturating_sub(1);
    if q != cw.center.len() {
        return Err(Error::Schema(format!(
            "weighting fitted on {} covariates, rows have {}",
            cw.center.len(),
            q
        )));
    }
    Ok((0..rows.nrows())
        .map(|i| {
            let d = if q == 0 {
                0.0
            } else {
                cw.distance((1..rows.ncols()).map(|j| rows[(i, j)]))
            };
            cw.weight_of_distance(d)
        })
        .collect())
}

/// Robust spread of one column: normalized MAD, falling back to IQR/1.349 and
/// then the standard deviation for heavily tied (e.g. binary) columns.
fn robust_spread(col: &[f64], column: usize) -> Result<f64> {
    let m = linalg::mad(col);
    if m > 0.0 {
        return Ok(m);
    }
    let iqr = linalg::quantile(col, 0.75) - linalg::quantile(col, 0.25);
    if iqr > 0.0 {
        return Ok(iqr / 1.349);
    }
    let sd = linalg::sample_variance(col).sqrt();
    if sd > 0.0 {
        return Ok(sd);
    }
    Err(Error::DegenerateScale { column })
}

/// Coordinate-wise median center and a rank-based robust scatter
/// `D R D`, where `D` holds per-column robust spreads and `R` is the Spearman
/// correlation mapped to the Pearson scale by `2 sin(pi r / 6)`.
pub fn robust_center_scatter(z: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, q) = z.shape();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "robust scatter needs at least 2 rows, got {n}"
        )));
    }
    let cols: Vec<Vec<f64>> = (0..q).map(|j| z.column(j).iter().cloned().collect()).collect();
    let center = DVector::from_iterator(q, cols.iter().map(|c| linalg::median(c)));
    let spread = cols
        .iter()
        .enumerate()
        .map(|(j, c)| robust_spread(c, j))
        .collect::<Result<Vec<_>>>()?;
    let ranks: Vec<Vec<f64>> = cols.iter().map(|c| linalg::average_ranks(c)).collect();

    let mut s = DMatrix::<f64>::zeros(q, q);
    for a in 0..q {
        s[(a, a)] = spread[a] * spread[a];
        for b in 0..a {
            let r = linalg::pearson(&ranks[a], &ranks[b]);
            let rho = 2.0 * (std::f64::consts::PI * r / 6.0).sin();
            let v = spread[a] * spread[b] * rho;
            s[(a, b)] = v;
            s[(b, a)] = v;
        }
    }
    Ok((center, repair_spd(s)?))
}

/// Adds a growing ridge until the matrix admits a Cholesky factor.
fn repair_spd(s: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if s.nrows() == 0 || s.clone().cholesky().is_some() {
        return Ok(s);
    }
    let q = s.nrows();
    let base = s.trace() / q as f64;
    let mut ridge = base * 1e-10;
    for _ in 0..12 {
        let mut t = s.clone();
        for j in 0..q {
            t[(j, j)] += ridge;
        }
        if t.clone().cholesky().is_some() {
            log::debug!("robust scatter repaired with ridge {ridge:e}");
            return Ok(t);
        }
        ridge *= 10.0;
    }
    Err(Error::SingularScatter)
}

/// One IRLS step's objective at the scale held during that step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IrlsStep {
    pub scale: f64,
    pub objective_before: f64,
    pub objective_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub coefficients: DVector<f64>,
    /// Final robust residual scale (normalized MAD).
    pub scale: f64,
    /// Final IRLS working weights, `w_i psi(r_i) / r_i`; zero where `w_i = 0`.
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Norm of the weighted estimating equations at the solution. Absolute and
    /// eps-insensitive losses use their smoothed `psi`.
    pub ee_norm: f64,
    pub trace: Vec<IrlsStep>,
}

impl FitResult {
    pub fn residuals(&self, y: &[f64], h: &DMatrix<f64>) -> Vec<f64> {
        let fitted = h * &self.coefficients;
        y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect()
    }
}

/// IRLS working weight `psi(r) / r` for least squares and Huber.
fn working_weight(spec: &LossSpec, r: f64, scale: f64) -> f64 {
    match spec.kind {
        LossKind::Huber => {
            let k = spec.huber_l * scale;
            let a = r.abs();
            if a <= k {
                1.0
            } else {
                k / a
            }
        }
        _ => 1.0,
    }
}

/// Kinks of the piecewise-linear losses: `|r|` for absolute, and
/// `(|r - eps| + |r + eps|) / 2 - eps` for eps-insensitive.
fn kinks(spec: &LossSpec) -> [f64; 2] {
    match spec.kind {
        LossKind::EpsInsensitive => [spec.eps, -spec.eps],
        _ => [0.0, 0.0],
    }
}

/// Majorize-minimize step for the piecewise-linear losses, each `|r - c|`
/// bounded by `(r - c)^2 / (2 max(|r0 - c|, delta))`: returns the weight and
/// the shift applied to the response.
fn mm_weight(spec: &LossSpec, r: f64, delta: f64) -> (f64, f64) {
    let [c1, c2] = kinks(spec);
    let a = 0.5 / (r - c1).abs().max(delta);
    let b = 0.5 / (r - c2).abs().max(delta);
    (a + b, (a * c1 + b * c2) / (a + b))
}

/// `psi` with the kinks smoothed over `delta`.
fn smoothed_psi(spec: &LossSpec, r: f64, delta: f64) -> f64 {
    match spec.kind {
        LossKind::LeastSquares | LossKind::Huber => spec.psi(r, delta),
        _ => {
            let [c1, c2] = kinks(spec);
            0.5 * (r - c1) / (r - c1).abs().max(delta) + 0.5 * (r - c2) / (r - c2).abs().max(delta)
        }
    }
}

/// Second derivative of [`smoothed_rho`].
fn smoothed_curvature(spec: &LossSpec, r: f64, delta: f64) -> f64 {
    let [c1, c2] = kinks(spec);
    let inside = |u: f64| if u.abs() < delta { 1.0 / delta } else { 0.0 };
    0.5 * inside(r - c1) + 0.5 * inside(r - c2)
}

fn smoothed_objective(spec: &LossSpec, r: &[f64], w: &[f64], delta: f64) -> f64 {
    r.iter().zip(w).map(|(&ri, &wi)| wi * smoothed_rho(spec, ri, delta)).sum()
}

/// Loss with the kinks smoothed over `delta`, the objective the MM steps descend.
fn smoothed_rho(spec: &LossSpec, r: f64, delta: f64) -> f64 {
    let abs = |u: f64| {
        let a = u.abs();
        if a <= delta {
            0.5 * (u * u / delta + delta)
        } else {
            a
        }
    };
    match spec.kind {
        LossKind::Absolute => abs(r),
        LossKind::EpsInsensitive => 0.5 * abs(r - spec.eps) + 0.5 * abs(r + spec.eps) - spec.eps,
        _ => spec.rho(r, delta),
    }
}

fn residuals(y: &[f64], h: &DMatrix<f64>, alpha: &DVector<f64>) -> Vec<f64> {
    let fitted = h * alpha;
    y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect()
}

/// Norm of `sum w psi(r) h`; `scale` is the Huber scale or, for the
/// piecewise-linear losses, the smoothing width.
fn ee_norm(spec: &LossSpec, h: &DMatrix<f64>, r: &[f64], w: &[f64], scale: f64) -> f64 {
    let mut g = DVector::<f64>::zeros(h.ncols());
    for i in 0..h.nrows() {
        let c = w[i] * smoothed_psi(spec, r[i], scale);
        for j in 0..h.ncols() {
            g[j] += c * h[(i, j)];
        }
    }
    g.norm()
}

fn objective(spec: &LossSpec, r: &[f64], w: &[f64], scale: f64) -> f64 {
    r.iter().zip(w).map(|(&ri, &wi)| wi * spec.rho(ri, scale)).sum()
}

fn weighted_solve(h: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<DVector<f64>> {
    // QR of sqrt(W) H keeps accuracy when the weights span many orders of magnitude
    let (n, k) = h.shape();
    let mut a = h.clone();
    let mut b = DVector::<f64>::zeros(n);
    for i in 0..n {
        let sw = w[i].sqrt();
        a.row_mut(i).scale_mut(sw);
        b[i] = sw * y[i];
    }
    let rank_err = || Error::Rank {
        rank: linalg::weighted_rank(h, w),
        required: k,
        context: "weighted least-squares system is singular".into(),
    };
    let qr = a.qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if r.diagonal().iter().any(|d| !(d.abs() > 1e-13 * rmax)) {
        return Err(rank_err());
    }
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb).ok_or_else(rank_err)
}

fn residual_scale(r: &[f64], floor: f64) -> f64 {
    linalg::mad(r).max(floor)
}

/// Minimizes `sum_i w_i rho(y_i - H_i' alpha)` by IRLS with a concurrent MAD scale.
pub fn fit_weighted_robust(
    y: &[f64],
    h: &DMatrix<f64>,
    w: &[f64],
    spec: &LossSpec,
) -> Result<FitResult> {
    spec.validate()?;
    let (n, k) = h.shape();
    if y.len() != n || w.len() != n {
        return Err(Error::Schema(format!(
            "length mismatch: H has {n} rows, y {}, w {}",
            y.len(),
            w.len()
        )));
    }
    if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::Config("weights must be finite and nonnegative".into()));
    }
    if y.iter().any(|v| !v.is_finite()) || h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Schema("non-finite response or regressor".into()));
    }

    // Zero-weight rows are dropped up front so they cannot touch any statistic.
    let keep: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    let hk = h.select_rows(&keep);
    let yk: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
    let wk: Vec<f64> = keep.iter().map(|&i| w[i]).collect();
    let rank = linalg::weighted_rank(&hk, &wk);
    if keep.len() < k || rank < k {
        return Err(Error::Rank {
            rank,
            required: k,
            context: format!("weighted design with {} positive-weight rows", keep.len()),
        });
    }

    let ynorm = yk.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = EE_TOL * (1.0 + ynorm);
    let ymax = yk.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = f64::EPSILON * (1.0 + ymax);

    let mut alpha = weighted_solve(&hk, &yk, &wk)?;
    let mut r = residuals(&yk, &hk, &alpha);

    let expand = |v: &[f64]| -> Vec<f64> {
        let mut full = vec![0.0; n];
        for (pos, &i) in keep.iter().enumerate() {
            full[i] = v[pos];
        }
        full
    };

    if spec.kind == LossKind::LeastSquares {
        let scale = residual_scale(&r, floor);
        let ee = ee_norm(spec, &hk, &r, &wk, scale);
        let obj = objective(spec, &r, &wk, scale);
        return Ok(FitResult {
            coefficients: alpha,
            scale,
            weights: expand(&wk),
            iterations: 1,
            converged: true,
            ee_norm: ee,
            trace: vec![IrlsStep {
                scale,
                objective_before: obj,
                objective_after: obj,
            }],
        });
    }

    if matches!(spec.kind, LossKind::Absolute | LossKind::EpsInsensitive) {
        let base = residual_scale(&r, floor);
        let mut trace = Vec::new();
        let mut v = wk.clone();
        let mut shifted = yk.clone();
        let mut curv = wk.clone();
        let mut z = yk.clone();
        let mut it = 0;
        for level in SMOOTHING_LEVELS {
            let delta = level * base;
            let mut stage_done = false;
            while it < MAX_ITERATIONS {
                it += 1;
                let before = smoothed_objective(spec, &r, &wk, delta);
                for i in 0..yk.len() {
                    let (m, c) = mm_weight(spec, r[i], delta);
                    v[i] = wk[i] * m;
                    shifted[i] = yk[i] - c;
                    curv[i] = wk[i] * (smoothed_curvature(spec, r[i], delta) + NEWTON_DAMPING * m);
                    z[i] = wk[i] * smoothed_psi(spec, r[i], delta) / curv[i];
                }
                let mut next = weighted_solve(&hk, &shifted, &v)?;
                let mut r_next = residuals(&yk, &hk, &next);
                let mut after = smoothed_objective(spec, &r_next, &wk, delta);
                // damped Newton step, kept only when it beats the MM step
                let dir = weighted_solve(&hk, &z, &curv)?;
                let mut t = 1.0;
                for _ in 0..40 {
                    let cand = &alpha + &dir * t;
                    let rc = residuals(&yk, &hk, &cand);
                    let fc = smoothed_objective(spec, &rc, &wk, delta);
                    if fc < after {
                        (next, r_next, after) = (cand, rc, fc);
                        break;
                    }
                    t *= 0.5;
                }
                trace.push(IrlsStep {
                    scale: base,
                    objective_before: before,
                    objective_after: after,
                });
                let change = (&next - &alpha).norm() / alpha.norm().max(f64::MIN_POSITIVE);
                alpha = next;
                r = r_next;
                if change < COEF_TOL || ee_norm(spec, &hk, &r, &wk, delta) <= tol {
                    stage_done = true;
                    break;
                }
            }
            if !stage_done {
                return Err(Error::NonConvergence {
                    iterations: MAX_ITERATIONS,
                    last_iterate: alpha,
                });
            }
        }
        let delta = SMOOTHING * base;
        for i in 0..yk.len() {
            v[i] = wk[i] * mm_weight(spec, r[i], delta).0;
        }
        return Ok(FitResult {
            coefficients: alpha,
            scale: residual_scale(&r, floor),
            weights: expand(&v),
            iterations: it,
            converged: true,
            ee_norm: ee_norm(spec, &hk, &r, &wk, delta),
            trace,
        });
    }

    let mut scale: Option<f64> = None;
    let mut frozen = false;
    let mut trace = Vec::new();
    let mut v = wk.clone();
    for it in 1..=MAX_ITERATIONS {
        if !frozen {
            let new = residual_scale(&r, floor);
            if let Some(old) = scale {
                if (new - old).abs() <= SCALE_FREEZE_TOL * old {
                    frozen = true;
                }
            }
            scale = Some(new);
        }
        let sc = scale.unwrap();
        for i in 0..yk.len() {
            v[i] = wk[i] * working_weight(spec, r[i], sc);
        }
        let before = objective(spec, &r, &wk, sc);
        let next = weighted_solve(&hk, &yk, &v)?;
        let r_next = residuals(&yk, &hk, &next);
        let after = objective(spec, &r_next, &wk, sc);
        trace.push(IrlsStep {
            scale: sc,
            objective_before: before,
            objective_after: after,
        });
        let change = (&next - &alpha).norm() / alpha.norm().max(f64::MIN_POSITIVE);
        alpha = next;
        r = r_next;

        let ee = ee_norm(spec, &hk, &r, &wk, sc);
        if frozen && (ee <= tol || change < COEF_TOL) {
            for i in 0..yk.len() {
                v[i] = wk[i] * working_weight(spec, r[i], sc);
            }
            return Ok(FitResult {
                coefficients: alpha,
                scale: sc,
                weights: expand(&v),
                iterations: it,
                converged: true,
                ee_norm: ee,
                trace,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        last_iterate: alpha,
    })
}

/// Seeded assignment of `n` rows to `k` folds of near-equal size.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeding::substream(seed, &[seeding::tag::CV, n as u64, k as u64]);
    order.shuffle(&mut rng);
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// Cross-validated choice of `nu` with its per-candidate held-out SSE
/// (`None` when a candidate failed).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub nu: f64,
    pub sse: Vec<(f64, Option<f64>)>,
}

/// Held-out SSE for one `nu` over the given folds.
pub fn cv_sse(
    y: &[f64],
    h: &DMatrix<f64>,
    spec: &LossSpec,
    mode: WeightMode,
    nu: f64,
    folds: &[usize],
    k: usize,
) -> Result<f64> {
    let mut sse = 0.0;
    for f in 0..k {
        let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
        let ht = h.select_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let cw = CovariateWeighting::fit(&ht, nu, mode)?;
        let w = mahalanobis_weights(&ht, &cw)?;
        let fit = fit_weighted_robust(&yt, &ht, &w, spec)?;
        for &i in &test {
            let e = y[i] - (h.row(i) * &fit.coefficients)[(0, 0)];
            sse += e * e;
        }
    }
    Ok(sse)
}

/// K-fold cross-validation of `nu`; ties go to the larger value.
pub fn cross_validate_nu(
    y: &[f64],
    h: &DMatrix<f64>,
    spec: &LossSpec,
    mode: WeightMode,
    grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<CvResult> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if grid.is_empty() || grid.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Config("nu grid must be nonempty and positive".into()));
    }
    if y.len() < 2 * k {
        return Err(Error::InsufficientData(format!(
            "{} rows cannot support {k} folds",
            y.len()
        )));
    }
    let folds = fold_assignment(y.len(), k, seed);
    let sse: Vec<(f64, Option<f64>)> = grid
        .par_iter()
        .map(|&nu| match cv_sse(y, h, spec, mode, nu, &folds, k) {
            Ok(v) => (nu, Some(v)),
            Err(e) => {
                log::debug!("cv: nu = {nu} dropped: {e}");
                (nu, None)
            }
        })
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for &(nu, s) in &sse {
        if let Some(s) = s {
            best = match best {
                None => Some((nu, s)),
                Some((bn, bs)) if s < bs || (s == bs && nu > bn) => Some((nu, s)),
                keep => keep,
            };
        }
    }
    let (nu, _) = best.ok_or(Error::CvExhausted)?;
    Ok(CvResult { nu, sse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn design(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = DMatrix::from_fn(n, 3, |_, j| {
            if j == 0 {
                1.0
            } else {
                StandardNormal.sample(&mut rng)
            }
        });
        let y = (0..n)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                1.0 + 2.0 * h[(i, 1)] - 0.5 * h[(i, 2)] + e
            })
            .collect();
        (h, y)
    }

    #[test]
    fn weight_formula() {
        let cw = CovariateWeighting::new(
            10.0,
            DVector::from_vec(vec![0.0]),
            DMatrix::from_element(1, 1, 1.0),
            WeightMode::Normalized,
        )
        .unwrap();
        let at = |x: f64| {
            let rows = DMatrix::from_row_slice(1, 2, &[1.0, x]);
            mahalanobis_weights(&rows, &cw).unwrap()[0]
        };
        assert_eq!(at(0.0), 1.0);
        // d = 10 -> u = 1 -> (1 - 0.01)^3
        let w = at(10f64.sqrt());
        assert!((w - 0.99f64.powi(3)).abs() < 1e-12);
        assert!((w - 0.970299).abs() < 1e-12);
        // u = nu <=> d = nu^3
        assert_eq!(at(1000f64.sqrt()), 0.0);
        assert_eq!(trisquared(0.0, 10.0, WeightMode::Literal), 0.0);
        assert_eq!(trisquared(1000.0, 10.0, WeightMode::Literal), 0.0);
        assert_eq!(trisquared(1e9, f64::INFINITY, WeightMode::Normalized), 1.0);
    }

    #[test]
    fn scatter_of_identical_rows_is_degenerate() {
        let z = DMatrix::from_element(5, 2, 3.0);
        assert_eq!(robust_center_scatter(&z).unwrap_err().kind(), "DegenerateScaleError");
        let one = DMatrix::from_element(1, 2, 3.0);
        assert_eq!(robust_center_scatter(&one).unwrap_err().kind(), "InsufficientDataError");
    }

    #[test]
    fn univariate_scatter_is_squared_mad() {
        let v = [1.0, 2.0, 4.0, 7.0, 11.0, 3.0];
        let z = DMatrix::from_column_slice(6, 1, &v);
        let (c, s) = robust_center_scatter(&z).unwrap();
        assert_eq!(c[0], linalg::median(&v));
        assert!((s[(0, 0)] - linalg::mad(&v).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn binary_column_falls_back_to_iqr() {
        let v: Vec<f64> = (0..10).map(|i| if i < 3 { 1.0 } else { 0.0 }).collect();
        let z = DMatrix::from_column_slice(10, 1, &v);
        let (_, s) = robust_center_scatter(&z).unwrap();
        assert!(s[(0, 0)] > 0.0);
    }

    #[test]
    fn ls_matches_normal_equations() {
        let (h, y) = design(200, 1);
        let w = vec![1.0; 200];
        let fit = fit_weighted_robust(&y, &h, &w, &LossSpec::least_squares()).unwrap();
        let xtx = h.transpose() * &h;
        let xty = h.transpose() * DVector::from_vec(y.clone());
        let direct = xtx.lu().solve(&xty).unwrap();
        assert!((fit.coefficients - direct).amax() < 1e-8);
    }

    #[test]
    fn huber_with_wide_threshold_equals_ls() {
        let (h, y) = design(200, 2);
        let w = vec![1.0; 200];
        let ls = fit_weighted_robust(&y, &h, &w, &LossSpec::least_squares()).unwrap();
        let r = ls.residuals(&y, &h);
        let max_r = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let l = 2.0 * max_r / linalg::mad(&r);
        let hub = fit_weighted_robust(&y, &h, &w, &LossSpec::huber(l)).unwrap();
        assert!((hub.coefficients - ls.coefficients).amax() < 1e-6);
    }

    #[test]
    fn noiseless_data_is_interpolated() {
        let (h, _) = design(50, 3);
        let a0 = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let y: Vec<f64> = (&h * &a0).iter().cloned().collect();
        let w = vec![1.0; 50];
        for spec in [
            LossSpec::least_squares(),
            LossSpec::huber(1.345),
            LossSpec::absolute(),
            LossSpec::eps_insensitive(0.1),
        ] {
            let fit = fit_weighted_robust(&y, &h, &w, &spec).unwrap();
            assert!((&fit.coefficients - &a0).amax() < 1e-8, "{:?}", spec.kind);
        }
    }

    #[test]
    fn huber_resists_outliers() {
        let (h, mut y) = design(300, 4);
        for v in y.iter_mut().take(15) {
            *v += 40.0;
        }
        let w = vec![1.0; 300];
        let ls = fit_weighted_robust(&y, &h, &w, &LossSpec::least_squares()).unwrap();
        let hub = fit_weighted_robust(&y, &h, &w, &LossSpec::huber(1.345)).unwrap();
        assert!((hub.coefficients[0] - 1.0).abs() < (ls.coefficients[0] - 1.0).abs());
        assert!(hub.ee_norm <= 1e-8 * (1.0 + y.iter().map(|v| v * v).sum::<f64>().sqrt()));
    }

    #[test]
    fn absolute_loss_converges_on_noisy_data() {
        let (h, y) = design(150, 5);
        let w = vec![1.0; 150];
        let fit = fit_weighted_robust(&y, &h, &w, &LossSpec::absolute()).unwrap();
        assert!((fit.coefficients[1] - 2.0).abs() < 0.3);
    }

    #[test]
    fn rank_deficient_design() {
        let mut h = DMatrix::from_element(10, 2, 1.0);
        h[(0, 1)] = 2.0;
        let y = vec![1.0; 10];
        let mut w = vec![1.0; 10];
        w[0] = 0.0;
        let err = fit_weighted_robust(&y, &h, &w, &LossSpec::huber(1.345)).unwrap_err();
        assert_eq!(err.kind(), "RankError");
    }

    #[test]
    fn singleton_grid() {
        let (h, y) = design(60, 6);
        let cv = cross_validate_nu(&y, &h, &LossSpec::huber(1.345), WeightMode::Normalized, &[10.0], 5, 1)
            .unwrap();
        assert_eq!(cv.nu, 10.0);
    }

    #[test]
    fn cv_exhausted_when_every_nu_fails() {
        // literal weights vanish for an intercept-only design
        let h = DMatrix::from_element(40, 1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let err = cross_validate_nu(&y, &h, &LossSpec::huber(1.345), WeightMode::Literal, &[5.0, 10.0], 4, 1)
            .unwrap_err();
        assert_eq!(err.kind(), "CvExhaustedError");
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let f = fold_assignment(103, 5, 11);
        assert_eq!(f, fold_assignment(103, 5, 11));
        assert_ne!(f, fold_assignment(103, 5, 12));
        for k in 0..5 {
            let c = f.iter().filter(|&&v| v == k).count();
            assert!(c == 20 || c == 21);
        }
    }
}
