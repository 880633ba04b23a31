use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub validation: f64,
    pub per_class: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            validation: 0.1,
            per_class: 10,
            seed: 0,
        }
    }
}

/// Disjoint partition of a dataset. The unlabeled part keeps its labels so
/// they can be inspected, but training code must not read them.
#[derive(Clone, Debug)]
pub struct SslSplit {
    pub labeled: Dataset,
    pub unlabeled: Dataset,
    pub validation: Dataset,
    pub labeled_idx: Vec<usize>,
    pub unlabeled_idx: Vec<usize>,
    pub validation_idx: Vec<usize>,
}

/// Uniform (unstratified) validation subset first, then `per_class`
/// labeled rows per class from what remains.
pub fn split_ssl(ds: &Dataset, spec: &SplitSpec) -> Result<SslSplit> {
    if !(0.0..1.0).contains(&spec.validation) {
        return Err(Error::invalid(format!("validation fraction {} outside [0, 1)", spec.validation)));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_val = (spec.validation * ds.len() as f64).round() as usize;
    let (val, rest) = idx.split_at(n_val);

    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    if spec.per_class == 0 {
        unlabeled.extend_from_slice(rest);
    } else {
        let labels = ds
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("labeled split requested on an unlabeled dataset"))?;
        let mut taken: BTreeMap<usize, usize> = (0..ds.num_classes()).map(|c| (c, 0)).collect();
        for &i in rest {
            let t = taken.get_mut(&labels[i]).expect("every label is < num_classes");
            if *t < spec.per_class {
                *t += 1;
                labeled.push(i);
            } else {
                unlabeled.push(i);
            }
        }
        if let Some((c, t)) = taken.iter().find(|(_, t)| **t < spec.per_class) {
            return Err(Error::invalid(format!(
                "class {c} has only {t} training examples, {} requested",
                spec.per_class
            )));
        }
    }
    Ok(SslSplit {
        labeled: ds.subset(&labeled),
        unlabeled: ds.subset(&unlabeled),
        validation: ds.subset(val),
        labeled_idx: labeled,
        unlabeled_idx: unlabeled,
        validation_idx: val.to_vec(),
    })
}
