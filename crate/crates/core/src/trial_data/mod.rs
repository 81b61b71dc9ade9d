//! Two-arm longitudinal trial data with monotone missingness.
//!
//! Visits are 1-based in the public API (`s = 1..=t`), matching how trial
//! protocols number them. Internally a subject's observation pattern is stored
//! as the count of observed visits, which makes non-monotone patterns
//! unrepresentable once a [`TrialDataset`] exists.

mod csv_io;

pub use csv_io::{load_csv, write_csv, CsvSchema, LoadOptions};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;

/// Where a subject's missingness begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum DropoutPattern {
    /// First unobserved visit (1-based).
    At(usize),
    Completer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    ids: Vec<String>,
    treatment: Vec<u8>,
    baseline: DMatrix<f64>,
    outcomes: DMatrix<f64>,
    observed_visits: Vec<usize>,
}

impl TrialDataset {
    /// Builds and validates a dataset.
    ///
    /// `covariates` excludes the intercept, which is always prepended.
    /// `outcomes[i][s - 1]` is `None` where visit `s` is unobserved.
    pub fn new(
        ids: Vec<String>,
        treatment: Vec<u8>,
        covariates: DMatrix<f64>,
        outcomes: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        let n = ids.len();
        if treatment.len() != n || covariates.nrows() != n || outcomes.len() != n {
            return Err(Error::Schema(format!(
                "inconsistent subject counts: ids {}, treatment {}, covariates {}, outcomes {}",
                n,
                treatment.len(),
                covariates.nrows(),
                outcomes.len()
            )));
        }
        if n == 0 {
            return Err(Error::Schema("dataset has no subjects".into()));
        }
        let t = outcomes[0].len();
        if t == 0 {
            return Err(Error::Schema("dataset has no outcome visits".into()));
        }
        if let Some((i, &a)) = treatment.iter().enumerate().find(|(_, &a)| a > 1) {
            return Err(Error::Schema(format!(
                "subject {}: treatment must be 0 or 1, got {}",
                ids[i], a
            )));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("baseline covariates must be finite".into()));
        }

        let p = covariates.ncols() + 1;
        let mut baseline = DMatrix::<f64>::from_element(n, p, 1.0);
        baseline.columns_mut(1, p - 1).copy_from(&covariates);

        let mut y = DMatrix::<f64>::from_element(n, t, f64::NAN);
        let mut observed_visits = Vec::with_capacity(n);
        for (i, row) in outcomes.iter().enumerate() {
            if row.len() != t {
                return Err(Error::Schema(format!(
                    "subject {}: expected {} outcomes, got {}",
                    ids[i],
                    t,
                    row.len()
                )));
            }
            let k = row.iter().take_while(|v| v.is_some()).count();
            if row[k..].iter().any(Option::is_some) {
                return Err(Error::Monotonicity {
                    subject: ids[i].clone(),
                });
            }
            for (s, v) in row.iter().enumerate().take(k) {
                let v = v.unwrap();
                if !v.is_finite() {
                    return Err(Error::Schema(format!("subject {}: non-finite outcome", ids[i])));
                }
                y[(i, s)] = v;
            }
            observed_visits.push(k);
        }

        let r = linalg::rank(&baseline);
        if r < p {
            return Err(Error::Rank {
                rank: r,
                required: p,
                context: "baseline covariates (with intercept)".into(),
            });
        }

        Ok(Self {
            ids,
            treatment,
            baseline,
            outcomes: y,
            observed_visits,
        })
    }

    /// Unchecked constructor for internally generated data. `baseline` already
    /// carries the intercept and unobserved outcome cells hold NaN.
    pub(crate) fn from_raw(
        ids: Vec<String>,
        treatment: Vec<u8>,
        baseline: DMatrix<f64>,
        outcomes: DMatrix<f64>,
        observed_visits: Vec<usize>,
    ) -> Self {
        debug_assert_eq!(ids.len(), baseline.nrows());
        debug_assert!(observed_visits.iter().all(|&k| k <= outcomes.ncols()));
        debug_assert!(observed_visits.iter().enumerate().all(|(i, &k)| {
            (0..outcomes.ncols()).all(|s| (s < k) == outcomes[(i, s)].is_finite())
        }));
        Self {
            ids,
            treatment,
            baseline,
            outcomes,
            observed_visits,
        }
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    /// Number of post-baseline visits.
    pub fn t(&self) -> usize {
        self.outcomes.ncols()
    }

    /// Baseline dimension including the intercept.
    pub fn p(&self) -> usize {
        self.baseline.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn arm(&self, i: usize) -> u8 {
        self.treatment[i]
    }

    /// `n x p` baseline matrix, first column all ones.
    pub fn baseline(&self) -> &DMatrix<f64> {
        &self.baseline
    }

    /// Raw outcome matrix; unobserved cells are NaN.
    pub fn outcome_matrix(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    /// Count of observed visits; visits `1..=k` are observed.
    pub fn observed_visits(&self, i: usize) -> usize {
        self.observed_visits[i]
    }

    /// `R_is` with the conventions `R_i0 = 1` and `R_i,t+1 = 0`.
    pub fn observed(&self, i: usize, s: usize) -> bool {
        s == 0 || (s <= self.t() && s <= self.observed_visits[i])
    }

    /// `Y_is` for 1-based visit `s`, when observed.
    pub fn outcome(&self, i: usize, s: usize) -> Option<f64> {
        if s >= 1 && s <= self.observed_visits[i] {
            Some(self.outcomes[(i, s - 1)])
        } else {
            None
        }
    }

    pub fn dropout_pattern(&self, i: usize) -> DropoutPattern {
        let k = self.observed_visits[i];
        if k == self.t() {
            DropoutPattern::Completer
        } else {
            DropoutPattern::At(k + 1)
        }
    }

    /// Observed history `H_is = (X_i, Y_i1, .., Y_is)`; `None` unless visits
    /// `1..=s` are all observed.
    pub fn history(&self, i: usize, s: usize) -> Option<DVector<f64>> {
        if s > self.observed_visits[i] {
            return None;
        }
        Some(build_history(&self.baseline, &self.outcomes, i, s))
    }

    pub fn arm_size(&self, arm: u8) -> usize {
        self.treatment.iter().filter(|&&a| a == arm).count()
    }

    /// Subset of subjects, in the given order.
    pub fn select(&self, rows: &[usize]) -> TrialDataset {
        TrialDataset {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            treatment: rows.iter().map(|&i| self.treatment[i]).collect(),
            baseline: self.baseline.select_rows(rows),
            outcomes: self.outcomes.select_rows(rows),
            observed_visits: rows.iter().map(|&i| self.observed_visits[i]).collect(),
        }
    }

    pub(crate) fn outcomes_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.outcomes
    }
}

/// A dataset whose missing outcomes have been filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedDataset {
    source: TrialDataset,
    values: DMatrix<f64>,
}

impl CompletedDataset {
    pub(crate) fn new(source: TrialDataset, values: DMatrix<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { source, values }
    }

    pub fn source(&self) -> &TrialDataset {
        &self.source
    }

    pub fn n(&self) -> usize {
        self.source.n()
    }

    pub fn t(&self) -> usize {
        self.source.t()
    }

    pub fn p(&self) -> usize {
        self.source.p()
    }

    /// `Y*_is` for 1-based `s`.
    pub fn value(&self, i: usize, s: usize) -> f64 {
        self.values[(i, s - 1)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Whether `Y*_is` was imputed rather than observed.
    pub fn is_imputed(&self, i: usize, s: usize) -> bool {
        !self.source.observed(i, s)
    }

    /// Completed history `H*_is` of length `p + s`.
    pub fn history(&self, i: usize, s: usize) -> DVector<f64> {
        build_history(self.source.baseline(), &self.values, i, s)
    }

    /// Completed outcomes at the final visit.
    pub fn last_visit(&self) -> Vec<f64> {
        self.values.column(self.t() - 1).iter().cloned().collect()
    }

    /// Mean of `Y*_it` per arm, `[control, treated]`.
    pub fn arm_means(&self) -> [f64; 2] {
        let mut sum = [0.0; 2];
        let mut cnt = [0usize; 2];
        let last = self.t() - 1;
        for i in 0..self.n() {
            let a = self.source.arm(i) as usize;
            sum[a] += self.values[(i, last)];
            cnt[a] += 1;
        }
        [sum[0] / cnt[0] as f64, sum[1] / cnt[1] as f64]
    }
}

fn build_history(baseline: &DMatrix<f64>, y: &DMatrix<f64>, i: usize, s: usize) -> DVector<f64> {
    let p = baseline.ncols();
    let mut h = DVector::<f64>::zeros(p + s);
    for j in 0..p {
        h[j] = baseline[(i, j)];
    }
    for k in 0..s {
        h[p + k] = y[(i, k)];
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: Vec<Vec<Option<f64>>>) -> Result<TrialDataset> {
        let n = rows.len();
        let ids = (0..n).map(|i| format!("s{i}")).collect();
        let trt = (0..n).map(|i| (i % 2) as u8).collect();
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 * 0.7 - 1.0);
        TrialDataset::new(ids, trt, x, rows)
    }

    #[test]
    fn dropout_patterns() {
        let d = ds(vec![
            vec![Some(1.0), Some(2.0), None, None, None],
            vec![Some(1.0); 5],
            vec![None; 5],
        ])
        .unwrap();
        assert_eq!(d.dropout_pattern(0), DropoutPattern::At(3));
        assert_eq!(d.dropout_pattern(1), DropoutPattern::Completer);
        assert_eq!(d.dropout_pattern(2), DropoutPattern::At(1));
        assert!(d.observed(2, 0));
        assert!(!d.observed(1, 6));
    }

    #[test]
    fn non_monotone_is_rejected() {
        let err = ds(vec![vec![Some(1.0), Some(2.0)], vec![None, Some(2.0)]]).unwrap_err();
        match err {
            Error::Monotonicity { subject } => assert_eq!(subject, "s1"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn non_binary_treatment_is_rejected() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let err = TrialDataset::new(
            vec!["a".into(), "b".into()],
            vec![0, 2],
            x,
            vec![vec![Some(1.0)], vec![Some(1.0)]],
        )
        .unwrap_err();
        assert_eq!(err.kind(), "SchemaError");
    }

    #[test]
    fn history_lengths() {
        let d = ds(vec![
            vec![Some(1.0), Some(2.0), None],
            vec![Some(3.0), Some(4.0), Some(5.0)],
        ])
        .unwrap();
        assert_eq!(d.history(0, 2).unwrap().len(), 4);
        assert!(d.history(0, 3).is_none());
        let h = d.history(1, 3).unwrap();
        assert_eq!(h.as_slice(), &[1.0, 0.7 - 1.0, 3.0, 4.0, 5.0]);
        assert_eq!(d.history(1, 0).unwrap().len(), 2);
    }

    #[test]
    fn constant_covariate_is_rank_deficient() {
        let x = DMatrix::from_element(3, 1, 2.0);
        let err = TrialDataset::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![0, 1, 0],
            x,
            vec![vec![Some(1.0)]; 3],
        )
        .unwrap_err();
        assert_eq!(err.kind(), "RankError");
    }
}
