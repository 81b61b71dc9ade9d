//! Small dense linear-algebra and order-statistic helpers shared by the fitters.

use nalgebra::{DMatrix, DVector};

/// Consistency factor turning a median absolute deviation into a normal SD.
pub const MAD_SCALE: f64 = 1.4826;

/// Numerical rank from the singular values, relative tolerance `max(r, c) * eps * s_max`.
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * smax;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Rank of `diag(sqrt(w)) * h`.
pub fn weighted_rank(h: &DMatrix<f64>, w: &[f64]) -> usize {
    let mut scaled = h.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= w[i].sqrt();
    }
    rank(&scaled)
}

/// Accumulates `H^T diag(w) H` and `H^T diag(w) y`, skipping zero-weight rows.
pub fn weighted_normal_equations(
    h: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let k = h.ncols();
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    for i in 0..h.nrows() {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        for a in 0..k {
            let ha = wi * h[(i, a)];
            xty[a] += ha * y[i];
            for b in 0..=a {
                xtx[(a, b)] += ha * h[(i, b)];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[(b, a)] = xtx[(a, b)];
        }
    }
    (xtx, xty)
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.clone().cholesky()?;
    Some(chol.solve(b))
}

/// Inverse of a general square matrix, `None` when numerically singular.
pub fn inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let lu = a.clone().lu();
    let inv = lu.try_inverse()?;
    if inv.iter().all(|v| v.is_finite()) && rank(a) == n {
        Some(inv)
    } else {
        None
    }
}

/// Median of a slice. Returns NaN for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Normalized median absolute deviation about the median.
pub fn mad(values: &[f64]) -> f64 {
    let med = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    MAD_SCALE * median(&dev)
}

/// Linear-interpolation quantile (type 7), `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with divisor `n - 1`.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    // shifted by the first value so constant input gives exactly zero
    let shift = values[0];
    let d: Vec<f64> = values.iter().map(|v| v - shift).collect();
    let m = mean(&d);
    d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

/// Average ranks (1-based), ties share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = 0.5 * ((i + 1) + (j + 1)) as f64;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; 0 when either input has no spread.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_mad() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        // deviations from 2: 1, 0, 1, 2, 8 -> median 1
        let m = mad(&[1.0, 2.0, 3.0, 4.0, 10.0]);
        assert!((m - MAD_SCALE).abs() < 1e-15);
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn rank_detects_duplicate_columns() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 2.0, 1.0, 3.0, 3.0, 1.0, 5.0, 5.0]);
        assert_eq!(rank(&m), 2);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[0.0, 1.0, 2.0, 3.0], 0.5), 1.5);
        assert_eq!(quantile(&[0.0, 0.0, 0.0, 1.0], 0.75), 0.25);
    }
}
