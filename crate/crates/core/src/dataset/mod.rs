//! Training sets with ground-truth Typical / Atypical / Noisy strata.
//!
//! Two recipes are provided. [`build_frequency_noise`] skews frequency by
//! duplicating the typical stratum, while [`build_score_noise`] marks the
//! lowest-scoring examples under a typicality score as atypical. Both
//! corrupt a disjoint random subset of labels to form the noisy stratum.

mod idx;
mod manifest;
mod stratify;
mod synthetic;
mod typicality;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use idx::{load_idx, read_idx, read_labels, write_idx_f64, write_idx_labels, IdxArray};
pub use manifest::{read_manifest, write_manifest, ManifestRecord};
pub use stratify::{
    build_frequency_noise, build_score_noise, relabel_uniform, shuffle_labels,
};
pub use synthetic::generate_gaussian_clusters;
pub use typicality::typicality_score_oracle;

/// A plain labeled dataset, before stratification.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<Tensor>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::contract(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Index {
                what: "class labels",
                index: bad,
                len: class_count,
            });
        }
        if let Some(first) = features.first() {
            if features.iter().any(|f| f.shape() != first.shape()) {
                return Err(Error::contract("feature tensors differ in shape"));
            }
        }
        Ok(Self {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_shape(&self) -> Option<&[usize]> {
        self.features.first().map(Tensor::shape)
    }
}

/// Ground-truth stratum of an example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Typical,
    Atypical,
    Noisy,
}

impl Tag {
    pub const ALL: [Tag; 3] = [Tag::Typical, Tag::Atypical, Tag::Noisy];

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Typical => "typical",
            Tag::Atypical => "atypical",
            Tag::Noisy => "noisy",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "typical" => Ok(Tag::Typical),
            "atypical" => Ok(Tag::Atypical),
            "noisy" => Ok(Tag::Noisy),
            other => Err(Error::format("tag", format!("unknown stratum {other:?}"))),
        }
    }
}

/// One training instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: usize,
    pub features: Tensor,
    pub original_label: usize,
    /// Label seen by training; differs from `original_label` only for noisy examples.
    pub assigned_label: usize,
    pub tag: Tag,
    /// Row of the source dataset this example was drawn from.
    pub source_index: usize,
}

/// How the noisy stratum's labels are corrupted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelNoise {
    /// Random permutation of the stratum's own labels.
    #[default]
    Permutation,
    /// Independent uniform draw over all classes.
    UniformRelabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrequencyNoiseConfig {
    pub atypical_fraction: f64,
    pub noisy_fraction: f64,
    pub duplicated_fraction: f64,
    pub copies: usize,
    pub label_noise: LabelNoise,
    pub seed: u64,
}

impl Default for FrequencyNoiseConfig {
    fn default() -> Self {
        Self {
            atypical_fraction: 0.2,
            noisy_fraction: 0.2,
            duplicated_fraction: 0.3,
            copies: 2,
            label_noise: LabelNoise::Permutation,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreNoiseConfig {
    pub atypical_fraction: f64,
    pub noisy_fraction: f64,
    pub label_noise: LabelNoise,
    pub seed: u64,
}

impl Default for ScoreNoiseConfig {
    fn default() -> Self {
        Self {
            atypical_fraction: 0.2,
            noisy_fraction: 0.2,
            label_noise: LabelNoise::Permutation,
            seed: 0,
        }
    }
}

/// How a [`StratifiedDataset`] was constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recipe {
    FrequencyNoise(FrequencyNoiseConfig),
    ScoreNoise(ScoreNoiseConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedDataset {
    pub examples: Vec<Example>,
    pub class_count: usize,
    pub recipe: Recipe,
}

impl StratifiedDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn tags(&self) -> Vec<Tag> {
        self.examples.iter().map(|e| e.tag).collect()
    }

    pub fn count(&self, tag: Tag) -> usize {
        self.examples.iter().filter(|e| e.tag == tag).count()
    }

    pub fn feature_shape(&self) -> Option<&[usize]> {
        self.examples.first().map(|e| e.features.shape())
    }

    pub fn manifest(&self) -> Vec<ManifestRecord> {
        self.examples
            .iter()
            .map(|e| ManifestRecord {
                id: e.id,
                tag: e.tag,
                original_label: e.original_label,
                assigned_label: e.assigned_label,
                source_index: e.source_index,
            })
            .collect()
    }
}

/// `floor(fraction × n)`, tolerant of representation error just below an integer.
pub(crate) fn stratum_size(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}
