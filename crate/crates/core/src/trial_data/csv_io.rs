use std::path::Path;

use nalgebra::DMatrix;

use super::TrialDataset;
use crate::error::{Error, Result};

/// Column names to read from a trial CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub id: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    pub outcomes: Vec<String>,
}

impl CsvSchema {
    /// The default layout `id, trt, x1..x{p-1}, y1..y{t}`, ordered by suffix.
    pub fn infer(headers: &[String]) -> Result<Self> {
        let numbered = |prefix: char| -> Vec<String> {
            let mut cols: Vec<(u32, String)> = headers
                .iter()
                .filter_map(|h| {
                    let rest = h.strip_prefix(prefix)?;
                    rest.parse::<u32>().ok().map(|k| (k, h.clone()))
                })
                .collect();
            cols.sort();
            cols.into_iter().map(|(_, h)| h).collect()
        };
        for required in ["id", "trt"] {
            if !headers.iter().any(|h| h == required) {
                return Err(Error::Schema(format!("missing required column `{required}`")));
            }
        }
        let outcomes = numbered('y');
        if outcomes.is_empty() {
            return Err(Error::Schema("no outcome columns y1..yt".into()));
        }
        Ok(Self {
            id: "id".into(),
            treatment: "trt".into(),
            covariates: numbered('x'),
            outcomes,
        })
    }
}

/// Ingestion switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Drop observations after each subject's first missing visit instead of
    /// rejecting non-monotone rows.
    pub force_monotone: bool,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "NA"
}

/// Reads a trial CSV. With `schema = None` the default column layout is inferred.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: Option<&CsvSchema>,
    opts: LoadOptions,
) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let inferred;
    let schema = match schema {
        Some(s) => s,
        None => {
            inferred = CsvSchema::infer(&headers)?;
            &inferred
        }
    };
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found")))
    };
    let id_col = col(&schema.id)?;
    let trt_col = col(&schema.treatment)?;
    let x_cols = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let y_cols = schema
        .outcomes
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;

    let mut ids = Vec::new();
    let mut trt = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        let id = rec.get(id_col).unwrap_or("").to_owned();
        let a = match rec.get(trt_col).map(str::trim) {
            Some("0") => 0u8,
            Some("1") => 1u8,
            other => {
                return Err(Error::Schema(format!(
                    "row {row}: treatment must be exactly 0 or 1, got {:?}",
                    other.unwrap_or("")
                )))
            }
        };
        for &c in &x_cols {
            let cell = rec.get(c).unwrap_or("");
            if is_missing(cell) {
                return Err(Error::Schema(format!("row {row}: missing baseline covariate")));
            }
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::Schema(format!("row {row}: bad covariate `{cell}`")))?;
            xs.push(v);
        }
        let mut y = Vec::with_capacity(y_cols.len());
        for &c in &y_cols {
            let cell = rec.get(c).unwrap_or("");
            if is_missing(cell) {
                y.push(None);
            } else {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| Error::Schema(format!("row {row}: bad outcome `{cell}`")))?;
                y.push(Some(v));
            }
        }
        if opts.force_monotone {
            if let Some(first_gap) = y.iter().position(Option::is_none) {
                for v in &mut y[first_gap..] {
                    *v = None;
                }
            }
        }
        ids.push(id);
        trt.push(a);
        ys.push(y);
    }
    for arm in [0u8, 1] {
        if !trt.contains(&arm) {
            return Err(Error::Schema(format!("arm {arm} has no subjects")));
        }
    }
    let x = DMatrix::from_row_slice(ids.len(), x_cols.len(), &xs);
    TrialDataset::new(ids, trt, x, ys)
}

/// Writes the default layout; unobserved outcomes become empty cells.
pub fn write_csv(d: &TrialDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_owned(), "trt".to_owned()];
    header.extend((1..d.p()).map(|j| format!("x{j}")));
    header.extend((1..=d.t()).map(|s| format!("y{s}")));
    w.write_record(&header)?;
    for i in 0..d.n() {
        let mut rec = vec![d.ids()[i].clone(), d.arm(i).to_string()];
        // `{:?}` on f64 is the shortest representation that round-trips exactly.
        rec.extend((1..d.p()).map(|j| format!("{:?}", d.baseline()[(i, j)])));
        rec.extend((1..=d.t()).map(|s| match d.outcome(i, s) {
            Some(v) => format!("{v:?}"),
            None => String::new(),
        }));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
