//! Experiment configuration: a sectioned TOML file.
//!
//! ```toml
//! output_dir = "runs/demo"
//!
//! [dataset]
//! source = "synthetic"
//! recipe = "frequency_noise"
//! seed = 7
//! classes = 4
//! dim = 16
//!
//! [model]
//! architecture = "mlp"
//! hidden = [64, 64]
//!
//! [training]
//! epochs = 30
//!
//! [augmentation]
//! variants = ["none", "standard", "targeted"]
//! transforms = [{ kind = "gaussian_jitter", sigma = 0.5 }]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augmentation::{AugmentationPolicy, Regime, Transform};
use crate::dataset::{FrequencyNoiseConfig, LabelNoise, Recipe, ScoreNoiseConfig};
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelSpec};
use crate::trainer::TrainingSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeKind {
    FrequencyNoise,
    ScoreNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub source: Source,
    pub recipe: RecipeKind,
    pub seed: u64,
    pub atypical_fraction: f64,
    pub noisy_fraction: f64,
    /// Frequency recipe only.
    pub duplicated_fraction: f64,
    /// Frequency recipe only.
    pub copies: usize,
    pub label_noise: LabelNoise,
    /// Neighbours used by the typicality score (score recipe only).
    pub score_neighbors: usize,

    // synthetic source
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,

    // idx source; relative paths resolve against the config file
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            source: Source::Synthetic,
            recipe: RecipeKind::FrequencyNoise,
            seed: 0,
            atypical_fraction: 0.2,
            noisy_fraction: 0.2,
            duplicated_fraction: 0.3,
            copies: 2,
            label_noise: LabelNoise::Permutation,
            score_neighbors: 10,
            classes: 4,
            dim: 16,
            per_class: 500,
            test_per_class: 250,
            separation: 1.5,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
        }
    }
}

impl DatasetSection {
    pub fn recipe(&self) -> Recipe {
        match self.recipe {
            RecipeKind::FrequencyNoise => Recipe::FrequencyNoise(FrequencyNoiseConfig {
                atypical_fraction: self.atypical_fraction,
                noisy_fraction: self.noisy_fraction,
                duplicated_fraction: self.duplicated_fraction,
                copies: self.copies,
                label_noise: self.label_noise,
                seed: self.seed,
            }),
            RecipeKind::ScoreNoise => Recipe::ScoreNoise(ScoreNoiseConfig {
                atypical_fraction: self.atypical_fraction,
                noisy_fraction: self.noisy_fraction,
                label_noise: self.label_noise,
                seed: self.seed,
            }),
        }
    }

    /// The four IDX paths, train then test.
    pub fn idx_paths(&self) -> Result<[&Path; 4]> {
        fn get<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
            p.as_deref()
                .ok_or_else(|| Error::config(format!("dataset.{key} is required for source = \"idx\"")))
        }
        Ok([
            get(&self.train_images, "train_images")?,
            get(&self.train_labels, "train_labels")?,
            get(&self.test_images, "test_images")?,
            get(&self.test_labels, "test_labels")?,
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureKind {
    Mlp,
    SmallCnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub architecture: ArchitectureKind,
    /// MLP hidden widths.
    pub hidden: Vec<usize>,
    pub conv_channels: usize,
    pub dense_width: usize,
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            architecture: ArchitectureKind::Mlp,
            hidden: vec![64, 64],
            conv_channels: 8,
            dense_width: 64,
            init_seed: 0,
        }
    }
}

impl ModelSection {
    /// Completes the spec once the dataset's shape and class count are known.
    pub fn spec(&self, input_shape: Vec<usize>, class_count: usize) -> ModelSpec {
        let architecture = match self.architecture {
            ArchitectureKind::Mlp => Architecture::Mlp {
                hidden: self.hidden.clone(),
            },
            ArchitectureKind::SmallCnn => Architecture::SmallCnn {
                conv_channels: self.conv_channels,
                dense_width: self.dense_width,
            },
        };
        ModelSpec {
            architecture,
            input_shape,
            class_count,
            init_seed: self.init_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSection {
    pub variants: Vec<Regime>,
    pub warmup_epochs: usize,
    pub target_fraction: f64,
    /// Defaults to Gaussian jitter for synthetic vectors and to flip plus
    /// crop for images.
    pub transforms: Option<Vec<Transform>>,
}

impl Default for AugmentationSection {
    fn default() -> Self {
        Self {
            variants: Regime::ALL.to_vec(),
            warmup_epochs: 3,
            target_fraction: 0.2,
            transforms: None,
        }
    }
}

pub const DEFAULT_JITTER_SIGMA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSchedule,
    #[serde(default)]
    pub augmentation: AugmentationSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: default_output_dir(),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            training: TrainingSchedule::default(),
            augmentation: AugmentationSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    /// Reads and validates a config file, resolving relative IDX paths
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.dataset.train_images,
            &mut cfg.dataset.train_labels,
            &mut cfg.dataset.test_images,
            &mut cfg.dataset.test_labels,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Replaces every seed in the config.
    pub fn override_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.model.init_seed = seed;
        self.training.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        match d.recipe() {
            Recipe::FrequencyNoise(c) => c.validate()?,
            Recipe::ScoreNoise(c) => {
                c.validate()?;
                if d.score_neighbors == 0 {
                    return Err(Error::config("dataset.score_neighbors must be positive"));
                }
            }
        }
        match d.source {
            Source::Synthetic => {
                if d.classes < 2 || d.dim < 2 || d.per_class < 10 || d.test_per_class == 0 {
                    return Err(Error::config(
                        "synthetic data needs classes >= 2, dim >= 2, per_class >= 10 and test_per_class >= 1",
                    ));
                }
                if !(d.separation >= 0.0 && d.separation.is_finite()) {
                    return Err(Error::config("dataset.separation must be finite and >= 0"));
                }
                if self.model.architecture == ArchitectureKind::SmallCnn {
                    return Err(Error::config(
                        "small_cnn needs image input; synthetic vectors have no spatial extent",
                    ));
                }
            }
            Source::Idx => {
                for p in d.idx_paths()? {
                    if !p.is_file() {
                        return Err(Error::config(format!("{} does not exist", p.display())));
                    }
                }
            }
        }
        let m = &self.model;
        let bad_widths = match m.architecture {
            ArchitectureKind::Mlp => m.hidden.contains(&0),
            ArchitectureKind::SmallCnn => m.conv_channels == 0 || m.dense_width == 0,
        };
        if bad_widths {
            return Err(Error::config("model widths must be positive"));
        }
        self.training.validate()?;
        let a = &self.augmentation;
        if a.variants.is_empty() {
            return Err(Error::config("augmentation.variants must name at least one variant"));
        }
        for (i, v) in a.variants.iter().enumerate() {
            if a.variants[..i].contains(v) {
                return Err(Error::config(format!("variant {v} listed twice")));
            }
        }
        for v in &a.variants {
            self.policy(*v).validate()?;
        }
        Ok(())
    }

    pub fn transforms(&self) -> Vec<Transform> {
        match (&self.augmentation.transforms, self.dataset.source) {
            (Some(t), _) => t.clone(),
            (None, Source::Synthetic) => vec![Transform::GaussianJitter {
                sigma: DEFAULT_JITTER_SIGMA,
            }],
            (None, Source::Idx) => vec![
                Transform::HorizontalFlip { probability: 0.5 },
                Transform::RandomCrop { padding: 4 },
            ],
        }
    }

    pub fn policy(&self, regime: Regime) -> AugmentationPolicy {
        AugmentationPolicy {
            regime,
            warmup_epochs: self.augmentation.warmup_epochs,
            target_fraction: self.augmentation.target_fraction,
            transforms: self.transforms(),
        }
    }

    /// SHA-256 over the canonical serialization, excluding the output
    /// directory so relocated runs keep their hash.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
