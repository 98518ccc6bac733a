//! Stochastic input transforms and the three augmentation regimes.
//!
//! Targeted augmentation transforms every example during a warmup, then
//! only the lowest-MSP fraction of the training set each epoch, ranked on
//! the MSPs recorded at the end of the previous epoch.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transform {
    /// Mirror the last axis with the given probability. Needs `[c, h, w]`.
    HorizontalFlip { probability: f64 },
    /// Zero-pad every side by `padding` pixels, then crop back to the
    /// original size at a uniform offset. Needs `[c, h, w]`.
    RandomCrop { padding: usize },
    /// Add iid `N(0, sigma²)` noise to every element. Any shape.
    GaussianJitter { sigma: f64 },
}

impl Transform {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Transform::HorizontalFlip { probability } if !(0.0..=1.0).contains(&probability) => {
                Err(Error::config(format!("flip probability {probability} outside [0, 1]")))
            }
            Transform::GaussianJitter { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::config(format!("jitter sigma must be finite and >= 0, got {sigma}")))
            }
            _ => Ok(()),
        }
    }
}

/// Randomness key for one augmented view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewKey {
    pub seed: u64,
    pub epoch: usize,
    pub example_id: usize,
}

fn image_dims(features: &Tensor) -> Result<(usize, usize, usize)> {
    match *features.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Dimension {
            op: "image transform",
            left: features.shape().to_vec(),
            right: vec![3],
        }),
    }
}

/// Applies `transforms` in order. Deterministic in `key`; never touches the
/// input.
pub fn apply_transforms(features: &Tensor, transforms: &[Transform], key: ViewKey) -> Result<Tensor> {
    let mut out = features.clone();
    if transforms.is_empty() {
        return Ok(out);
    }
    let mut rng = rng::stream(
        key.seed,
        "augment",
        &[key.epoch as u64, key.example_id as u64],
    );
    for t in transforms {
        match *t {
            Transform::HorizontalFlip { probability } => {
                let (c, h, w) = image_dims(&out)?;
                if rng.random::<f64>() < probability {
                    let data = out.data_mut();
                    for row in 0..c * h {
                        data[row * w..(row + 1) * w].reverse();
                    }
                }
            }
            Transform::RandomCrop { padding } => {
                let (c, h, w) = image_dims(&out)?;
                let oy = rng.random_range(0..=2 * padding);
                let ox = rng.random_range(0..=2 * padding);
                out = crop_padded(&out, (c, h, w), padding, oy, ox)?;
            }
            Transform::GaussianJitter { sigma } => {
                for v in out.data_mut() {
                    *v += sigma * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
    Ok(out)
}

/// Crop of the zero-padded image whose top-left corner sits at `(oy, ox)`
/// in padded coordinates.
fn crop_padded(
    img: &Tensor,
    (c, h, w): (usize, usize, usize),
    padding: usize,
    oy: usize,
    ox: usize,
) -> Result<Tensor> {
    let src = img.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + oy) as isize - padding as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = (x + ox) as isize - padding as isize;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                out[(ch * h + y) * w + x] = src[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "none")]
    NoAugmentation,
    #[serde(rename = "standard")]
    Standard,
    #[serde(rename = "targeted")]
    Targeted,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::NoAugmentation, Regime::Standard, Regime::Targeted];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::NoAugmentation => "none",
            Regime::Standard => "standard",
            Regime::Targeted => "targeted",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Regime::NoAugmentation),
            "standard" => Ok(Regime::Standard),
            "targeted" => Ok(Regime::Targeted),
            other => Err(Error::config(format!(
                "unknown variant {other:?} (expected none, standard or targeted)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub regime: Regime,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default = "default_target_fraction")]
    pub target_fraction: f64,
    #[serde(default)]
    pub transforms: Vec<Transform>,
}

fn default_warmup() -> usize {
    3
}

fn default_target_fraction() -> f64 {
    0.2
}

impl AugmentationPolicy {
    pub fn new(regime: Regime, transforms: Vec<Transform>) -> Self {
        Self {
            regime,
            warmup_epochs: default_warmup(),
            target_fraction: default_target_fraction(),
            transforms,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(Error::config(format!(
                "target_fraction must lie in (0, 1], got {}",
                self.target_fraction
            )));
        }
        self.transforms.iter().try_for_each(Transform::validate)
    }
}

/// Ids to augment in `epoch` (1-based) under a targeted policy.
///
/// During warmup every id is returned. Afterwards exactly
/// `floor(target_fraction × n)` ids with the lowest previous-epoch MSP are
/// returned, ties broken by ascending id. `previous_msp` is a table of
/// `(id, msp)` pairs covering `0..n`; its order is irrelevant. The result is
/// sorted ascending.
pub fn select_targets(
    policy: &AugmentationPolicy,
    epoch: usize,
    n: usize,
    previous_msp: Option<&[(usize, f64)]>,
) -> Result<Vec<usize>> {
    if policy.regime != Regime::Targeted {
        return Err(Error::contract(format!(
            "select_targets requires the targeted regime, got {}",
            policy.regime
        )));
    }
    if epoch == 0 {
        return Err(Error::contract("epochs are 1-based"));
    }
    if epoch <= policy.warmup_epochs {
        return Ok((0..n).collect());
    }
    let table = previous_msp.ok_or_else(|| {
        Error::contract(format!(
            "epoch {epoch} is past warmup but no previous-epoch MSPs were supplied"
        ))
    })?;
    validate_table(table, n)?;

    let count = crate::dataset::stratum_size(policy.target_fraction, n);
    let mut ranked: Vec<(usize, f64)> = table.to_vec();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut ids: Vec<usize> = ranked[..count].iter().map(|&(id, _)| id).collect();
    ids.sort_unstable();
    Ok(ids)
}

fn validate_table(table: &[(usize, f64)], n: usize) -> Result<()> {
    if table.len() != n {
        return Err(Error::contract(format!(
            "MSP table has {} entries for {n} examples",
            table.len()
        )));
    }
    let mut seen = vec![false; n];
    for &(id, msp) in table {
        if id >= n || std::mem::replace(&mut seen[id], true) {
            return Err(Error::contract(format!("MSP table id {id} is out of range or repeated")));
        }
        if msp.is_nan() {
            return Err(Error::contract(format!("MSP for id {id} is NaN")));
        }
    }
    Ok(())
}

/// Per-example augment flags for `epoch` under any regime.
pub fn regime_mask(
    policy: &AugmentationPolicy,
    epoch: usize,
    previous_msp: Option<&[(usize, f64)]>,
    n: usize,
) -> Result<Vec<bool>> {
    match policy.regime {
        Regime::NoAugmentation => Ok(vec![false; n]),
        Regime::Standard => Ok(vec![true; n]),
        Regime::Targeted => {
            let mut mask = vec![false; n];
            for id in select_targets(policy, epoch, n, previous_msp)? {
                mask[id] = true;
            }
            Ok(mask)
        }
    }
}
