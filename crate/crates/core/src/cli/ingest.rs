//! CSV ingestion: subject-ID join, iterative cleaning to a fixed point and
//! covariate centering.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{GlvmError, Result};
use crate::families::Family;
use crate::model::DataSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Cleaning {
    pub min_item_responses: usize,
    pub min_subject_responses: usize,
}

impl Default for Cleaning {
    fn default() -> Self {
        Cleaning {
            min_item_responses: 2,
            min_subject_responses: 10,
        }
    }
}

/// Ingested data with the identifiers needed to report results.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub data: DataSet,
    pub subject_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub covariate_names: Vec<String>,
    /// Column means subtracted from the raw covariates.
    pub centers: Vec<f64>,
    pub dropped_items: Vec<String>,
    pub dropped_subjects: Vec<String>,
}

/// Mapping from retained rows/columns back to names, persisted next to fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdMaps {
    pub subject_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub covariate_names: Vec<String>,
    pub centers: Vec<f64>,
    pub dropped_items: Vec<String>,
    pub dropped_subjects: Vec<String>,
}

impl Ingested {
    pub fn maps(&self) -> IdMaps {
        IdMaps {
            subject_ids: self.subject_ids.clone(),
            item_ids: self.item_ids.clone(),
            covariate_names: self.covariate_names.clone(),
            centers: self.centers.clone(),
            dropped_items: self.dropped_items.clone(),
            dropped_subjects: self.dropped_subjects.clone(),
        }
    }
}

/// A parsed table: header names (without the ID column), row IDs and cells.
struct Table {
    columns: Vec<String>,
    ids: Vec<String>,
    cells: Vec<Vec<Option<f64>>>,
}

fn is_missing(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na")
}

fn read_table(path: &Path, allow_missing: bool) -> Result<Table> {
    let what = path.display();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(GlvmError::InvalidData(format!("{what}: need an ID column and at least one data column")));
    }
    let columns: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut ids = Vec::new();
    let mut cells = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        // line 1 is the header
        let line = r + 2;
        let rec = rec?;
        let id = rec.get(0).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(GlvmError::InvalidData(format!("{what}: row {line}: empty subject ID")));
        }
        let mut row = Vec::with_capacity(columns.len());
        for (c, cell) in rec.iter().skip(1).enumerate() {
            if is_missing(cell) {
                if !allow_missing {
                    return Err(GlvmError::InvalidData(format!(
                        "{what}: row {line}, column {} ({}): missing value",
                        c + 2,
                        columns[c]
                    )));
                }
                row.push(None);
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| {
                GlvmError::InvalidData(format!(
                    "{what}: row {line}, column {} ({}): cannot parse {:?} as a number",
                    c + 2,
                    columns[c],
                    cell
                ))
            })?;
            if !v.is_finite() {
                return Err(GlvmError::InvalidData(format!(
                    "{what}: row {line}, column {} ({}): non-finite value",
                    c + 2,
                    columns[c]
                )));
            }
            row.push(Some(v));
        }
        ids.push(id);
        cells.push(row);
    }
    Ok(Table { columns, ids, cells })
}

/// Indices kept after alternately dropping items and subjects below the
/// thresholds until nothing changes. The result is the largest sub-block in
/// which every item and subject meets its threshold, so it does not depend on
/// the order of rows or columns.
pub fn clean_mask(mask: &Array2<bool>, cfg: Cleaning) -> (Vec<usize>, Vec<usize>) {
    let (n, q) = mask.dim();
    let mut row_on = vec![true; n];
    let mut col_on = vec![true; q];
    loop {
        let mut changed = false;
        for j in 0..q {
            if col_on[j] && (0..n).filter(|&i| row_on[i] && mask[[i, j]]).count() < cfg.min_item_responses {
                col_on[j] = false;
                changed = true;
            }
        }
        for i in 0..n {
            if row_on[i] && (0..q).filter(|&j| col_on[j] && mask[[i, j]]).count() < cfg.min_subject_responses {
                row_on[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (
        (0..n).filter(|&i| row_on[i]).collect(),
        (0..q).filter(|&j| col_on[j]).collect(),
    )
}

/// Reads responses and covariates, joins them on the subject ID, cleans and
/// centers. Every item uses `family`.
pub fn ingest(responses: &Path, covariates: &Path, family: Family, cleaning: Cleaning) -> Result<Ingested> {
    let resp = read_table(responses, true)?;
    let cov = read_table(covariates, false)?;
    let mut cov_row: HashMap<&str, usize> = HashMap::new();
    for (r, id) in cov.ids.iter().enumerate() {
        if cov_row.insert(id.as_str(), r).is_some() {
            return Err(GlvmError::InvalidData(format!("{}: duplicate subject ID {id:?}", covariates.display())));
        }
    }
    let mut seen = HashMap::new();
    for id in &resp.ids {
        if seen.insert(id.as_str(), ()).is_some() {
            return Err(GlvmError::InvalidData(format!("{}: duplicate subject ID {id:?}", responses.display())));
        }
        if !cov_row.contains_key(id.as_str()) {
            return Err(GlvmError::InvalidData(format!(
                "subject {id:?} has responses but no row in {}",
                covariates.display()
            )));
        }
    }
    let extra = cov.ids.len() - resp.ids.len();
    if extra > 0 {
        log::warn!("{extra} covariate rows have no responses and are ignored");
    }

    let (n0, q0, p) = (resp.ids.len(), resp.columns.len(), cov.columns.len());
    let mask0 = Array2::from_shape_fn((n0, q0), |(i, j)| resp.cells[i][j].is_some());
    for (i, row) in resp.cells.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if let Some(v) = v {
                family.validate_response(*v).map_err(|e| {
                    GlvmError::InvalidData(format!(
                        "{}: row {}, column {} ({}): {e}",
                        responses.display(),
                        i + 2,
                        j + 2,
                        resp.columns[j]
                    ))
                })?;
            }
        }
    }
    let (rows, cols) = clean_mask(&mask0, cleaning);
    if rows.is_empty() || cols.is_empty() {
        return Err(GlvmError::InvalidData(format!(
            "no data left after cleaning (min {} responses per item, {} per subject)",
            cleaning.min_item_responses, cleaning.min_subject_responses
        )));
    }
    let (n, q) = (rows.len(), cols.len());
    let y = Array2::from_shape_fn((n, q), |(a, b)| resp.cells[rows[a]][cols[b]].unwrap_or(0.0));
    let mask = Array2::from_shape_fn((n, q), |(a, b)| mask0[[rows[a], cols[b]]]);
    let mut x = Array2::from_shape_fn((n, p), |(a, c)| cov.cells[cov_row[resp.ids[rows[a]].as_str()]][c].unwrap());
    let mut centers = Vec::with_capacity(p);
    for mut col in x.columns_mut() {
        let m = col.sum() / n as f64;
        col.mapv_inplace(|v| v - m);
        centers.push(m);
    }
    let data = DataSet::new(y, mask, x, vec![family; q])?;
    let keep_r: std::collections::HashSet<usize> = rows.iter().copied().collect();
    let keep_c: std::collections::HashSet<usize> = cols.iter().copied().collect();
    Ok(Ingested {
        data,
        subject_ids: rows.iter().map(|&i| resp.ids[i].clone()).collect(),
        item_ids: cols.iter().map(|&j| resp.columns[j].clone()).collect(),
        covariate_names: cov.columns.clone(),
        centers,
        dropped_items: (0..q0).filter(|j| !keep_c.contains(j)).map(|j| resp.columns[j].clone()).collect(),
        dropped_subjects: (0..n0).filter(|i| !keep_r.contains(i)).map(|i| resp.ids[i].clone()).collect(),
    })
}
