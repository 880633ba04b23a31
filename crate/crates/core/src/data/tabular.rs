use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DropReason, Normalization};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Zero mean, unit (population) variance.
    ZScore,
    /// Affine map of each feature's range onto `[-1, 1]`.
    MinMax,
}

/// Feature filtering and scaling applied by [`load_tabular`].
///
/// The covariation rule compares pairwise covariances of z-scored features
/// against the threshold, so with a threshold above 1 it only fires on
/// numerically duplicated columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularRules {
    pub label: Option<String>,
    /// Drop a feature whose most common value occurs more than this often.
    pub repeat_threshold: Option<usize>,
    pub covariation_threshold: Option<f64>,
    pub scaling: Scaling,
}

impl Default for TabularRules {
    fn default() -> Self {
        Self {
            label: Some("label".into()),
            repeat_threshold: None,
            covariation_threshold: None,
            scaling: Scaling::ZScore,
        }
    }
}

pub fn load_tabular(path: impl AsRef<Path>, rules: &TabularRules) -> Result<Dataset> {
    read_tabular(File::open(path)?, rules)
}

/// Parse a headered CSV. Rows are numbered from 1 after the header.
pub fn read_tabular<R: Read>(input: R, rules: &TabularRules) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let label_col = match &rules.label {
        Some(name) => Some(header.iter().position(|h| h == name).ok_or_else(|| Error::Data {
            row: 0,
            column: name.clone(),
            detail: "label column not found in header".into(),
        })?),
        None => None,
    };
    let feat_cols: Vec<usize> = (0..header.len()).filter(|c| Some(*c) != label_col).collect();

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    let mut rows = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        for &c in &feat_cols {
            let cell = rec.get(c).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| Error::Data {
                row,
                column: header[c].clone(),
                detail: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Data {
                    row,
                    column: header[c].clone(),
                    detail: format!("non-finite value `{cell}`"),
                });
            }
            values.push(v);
        }
        if let Some(c) = label_col {
            raw_labels.push(rec.get(c).unwrap_or("").trim().to_string());
        }
        rows += 1;
    }
    let raw = Tensor::new(rows, feat_cols.len(), values)?;
    let names: Vec<String> = feat_cols.iter().map(|c| header[*c].clone()).collect();

    let labels = label_col.map(|_| {
        let classes: BTreeSet<&str> = raw_labels.iter().map(String::as_str).collect();
        let id: HashMap<&str, usize> = classes.into_iter().enumerate().map(|(i, s)| (s, i)).collect();
        raw_labels.iter().map(|s| id[s.as_str()]).collect::<Vec<_>>()
    });

    let mut dropped = Vec::new();
    let mut keep: Vec<usize> = (0..raw.cols()).collect();
    if let Some(th) = rules.repeat_threshold {
        keep.retain(|&c| {
            let mut counts: HashMap<u64, usize> = HashMap::new();
            for v in raw.column(c) {
                *counts.entry((v + 0.0).to_bits()).or_default() += 1;
            }
            let modal = counts.values().copied().max().unwrap_or(0);
            if modal > th {
                dropped.push((names[c].clone(), DropReason::Repeats(modal)));
                false
            } else {
                true
            }
        });
    }
    if let Some(th) = rules.covariation_threshold {
        let z: Vec<Vec<f64>> = keep.iter().map(|&c| zscore(&raw.column(c))).collect();
        let mut kept: Vec<usize> = Vec::new();
        let mut next = Vec::new();
        for (a, &c) in keep.iter().enumerate() {
            let clash = kept.iter().find_map(|&b| {
                let cov = z[a].iter().zip(&z[b]).map(|(p, q)| p * q).sum::<f64>() / rows.max(1) as f64;
                (cov.abs() > th).then_some((b, cov))
            });
            match clash {
                Some((b, cov)) => dropped.push((
                    names[c].clone(),
                    DropReason::Covariation {
                        with: names[keep[b]].clone(),
                        value: cov,
                    },
                )),
                None => {
                    kept.push(a);
                    next.push(c);
                }
            }
        }
        keep = next;
    }

    let kept_raw = Tensor::from_parts(
        rows,
        keep.len(),
        (0..rows).flat_map(|r| keep.iter().map(move |&c| (r, c))).map(|(r, c)| raw.get(r, c)).collect(),
    );
    let mut norm = Normalization {
        shift: Vec::with_capacity(keep.len()),
        scale: Vec::with_capacity(keep.len()),
        dropped,
    };
    for c in 0..keep.len() {
        let col = kept_raw.column(c);
        let (shift, scale) = match rules.scaling {
            Scaling::ZScore => {
                let m = col.iter().sum::<f64>() / rows.max(1) as f64;
                let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / rows.max(1) as f64;
                (m, v.sqrt())
            }
            Scaling::MinMax => {
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (0.5 * (hi + lo), 0.5 * (hi - lo))
            }
        };
        norm.shift.push(shift);
        norm.scale.push(if scale > 0.0 { scale } else { 1.0 });
    }
    Ok(Dataset {
        features: norm.apply(&kept_raw),
        labels,
        names: keep.iter().map(|c| names[*c].clone()).collect(),
        norm,
    })
}

fn zscore(col: &[f64]) -> Vec<f64> {
    let n = col.len().max(1) as f64;
    let m = col.iter().sum::<f64>() / n;
    let s = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    let s = if s > 0.0 { s } else { 1.0 };
    col.iter().map(|x| (x - m) / s).collect()
}
