use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    stratum_size, Example, FrequencyNoiseConfig, LabelNoise, LabeledDataset, Recipe,
    ScoreNoiseConfig, StratifiedDataset, Tag,
};
use crate::error::{Error, Result};
use crate::rng;

const FRACTION_TOLERANCE: f64 = 1e-9;

fn check_fraction(name: &str, value: f64) -> Result<()> {
    if !(0.0..1.0).contains(&value) {
        return Err(Error::config(format!("{name} must lie in [0, 1), got {value}")));
    }
    Ok(())
}

impl FrequencyNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        check_fraction("atypical_fraction", self.atypical_fraction)?;
        check_fraction("noisy_fraction", self.noisy_fraction)?;
        check_fraction("duplicated_fraction", self.duplicated_fraction)?;
        if self.copies < 2 {
            return Err(Error::config(format!("copies must be >= 2, got {}", self.copies)));
        }
        let total = self.atypical_fraction
            + self.noisy_fraction
            + self.duplicated_fraction * self.copies as f64;
        if (total - 1.0).abs() > FRACTION_TOLERANCE {
            return Err(Error::config(format!(
                "atypical_fraction + noisy_fraction + duplicated_fraction * copies must equal 1, got {total}"
            )));
        }
        Ok(())
    }
}

impl ScoreNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        check_fraction("atypical_fraction", self.atypical_fraction)?;
        check_fraction("noisy_fraction", self.noisy_fraction)?;
        if self.atypical_fraction + self.noisy_fraction >= 1.0 {
            return Err(Error::config(
                "atypical_fraction + noisy_fraction must be < 1",
            ));
        }
        Ok(())
    }
}

fn example(source: &LabeledDataset, index: usize, tag: Tag) -> Example {
    Example {
        id: 0,
        features: source.features[index].clone(),
        original_label: source.labels[index],
        assigned_label: source.labels[index],
        tag,
        source_index: index,
    }
}

fn corrupt(
    noisy: &mut [Example],
    mode: LabelNoise,
    class_count: usize,
    seed: u64,
) -> Result<()> {
    match (mode, noisy.len()) {
        (_, 0) => Ok(()),
        (LabelNoise::Permutation, _) => shuffle_labels(noisy, seed),
        (LabelNoise::UniformRelabel, _) => relabel_uniform(noisy, class_count, seed),
    }
}

/// Frequency-skewed stratification.
///
/// A class-balanced sample of `atypical_fraction × N` examples appears once
/// each; `noisy_fraction × N` further examples get corrupted labels; and
/// `duplicated_fraction × N` examples are repeated `copies` times as the
/// typical stratum. Source examples left over are discarded, so the output
/// has the same size as the source.
///
/// If flooring leaves the typical stratum short of `N − atypical − noisy`
/// instances, the gap is filled with single-copy typical examples.
pub fn build_frequency_noise(
    source: &LabeledDataset,
    config: &FrequencyNoiseConfig,
) -> Result<StratifiedDataset> {
    config.validate()?;
    let n = source.len();
    let classes = source.class_count;
    if n < 10 * classes {
        return Err(Error::config(format!(
            "frequency recipe needs at least 10 examples per class ({} for {classes} classes), got {n}",
            10 * classes
        )));
    }

    let n_atypical = stratum_size(config.atypical_fraction, n);
    let n_noisy = stratum_size(config.noisy_fraction, n);
    let n_typical = n - n_atypical - n_noisy;
    let n_unique = n_typical / config.copies;
    let n_single = n_typical % config.copies;

    // class-balanced atypical sample; leftover quota goes round-robin from class 0
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &label) in source.labels.iter().enumerate() {
        by_class[label].push(i);
    }
    let mut atypical = Vec::with_capacity(n_atypical);
    let mut pool = Vec::with_capacity(n - n_atypical);
    for (class, members) in by_class.iter_mut().enumerate() {
        let quota = n_atypical / classes + usize::from(class < n_atypical % classes);
        if members.len() < quota {
            return Err(Error::config(format!(
                "class {class} has {} examples but the balanced atypical sample needs {quota}",
                members.len()
            )));
        }
        members.shuffle(&mut rng::stream(config.seed, "frequency-atypical", &[class as u64]));
        atypical.extend_from_slice(&members[..quota]);
        pool.extend_from_slice(&members[quota..]);
    }
    pool.sort_unstable();
    pool.shuffle(&mut rng::stream(config.seed, "frequency-remainder", &[]));

    let needed = n_noisy + n_unique + n_single;
    if pool.len() < needed {
        return Err(Error::config(format!(
            "only {} examples remain after the atypical sample, {needed} required",
            pool.len()
        )));
    }
    let (noisy_idx, rest) = pool.split_at(n_noisy);
    let (dup_idx, rest) = rest.split_at(n_unique);
    let single_idx = &rest[..n_single];

    let mut noisy: Vec<Example> = noisy_idx
        .iter()
        .map(|&i| example(source, i, Tag::Noisy))
        .collect();
    corrupt(&mut noisy, config.label_noise, classes, config.seed)?;

    let mut examples: Vec<Example> = Vec::with_capacity(n);
    examples.extend(atypical.iter().map(|&i| example(source, i, Tag::Atypical)));
    examples.extend(noisy);
    for &i in dup_idx {
        for _ in 0..config.copies {
            examples.push(example(source, i, Tag::Typical));
        }
    }
    examples.extend(single_idx.iter().map(|&i| example(source, i, Tag::Typical)));
    debug_assert_eq!(examples.len(), n);

    examples.shuffle(&mut rng::stream(config.seed, "frequency-order", &[]));
    for (id, e) in examples.iter_mut().enumerate() {
        e.id = id;
    }
    Ok(StratifiedDataset {
        examples,
        class_count: classes,
        recipe: Recipe::FrequencyNoise(config.clone()),
    })
}

/// Score-based stratification. The `atypical_fraction × N` lowest-scoring
/// examples (ties by ascending index) are atypical; a uniform
/// `noisy_fraction × N` sample of the rest is corrupted. Every source
/// example is kept exactly once and `id == source_index`.
pub fn build_score_noise(
    source: &LabeledDataset,
    scores: &[f64],
    config: &ScoreNoiseConfig,
) -> Result<StratifiedDataset> {
    config.validate()?;
    let n = source.len();
    if scores.len() != n {
        return Err(Error::contract(format!(
            "{} typicality scores for {n} examples",
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::contract("typicality scores contain NaN"));
    }
    let n_atypical = stratum_size(config.atypical_fraction, n);
    let n_noisy = stratum_size(config.noisy_fraction, n);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut tags = vec![Tag::Typical; n];
    for &i in &order[..n_atypical] {
        tags[i] = Tag::Atypical;
    }

    let mut remainder: Vec<usize> = (0..n).filter(|&i| tags[i] == Tag::Typical).collect();
    remainder.shuffle(&mut rng::stream(config.seed, "score-noisy", &[]));
    let mut noisy_idx = remainder[..n_noisy].to_vec();
    noisy_idx.sort_unstable();

    let mut examples: Vec<Example> = (0..n).map(|i| example(source, i, tags[i])).collect();
    let mut noisy: Vec<Example> = noisy_idx.iter().map(|&i| examples[i].clone()).collect();
    corrupt(&mut noisy, config.label_noise, source.class_count, config.seed)?;
    for e in noisy {
        let slot = e.source_index;
        examples[slot] = e;
    }
    for (id, e) in examples.iter_mut().enumerate() {
        e.id = id;
    }
    Ok(StratifiedDataset {
        examples,
        class_count: source.class_count,
        recipe: Recipe::ScoreNoise(config.clone()),
    })
}

/// Replaces the subset's assigned labels with a uniformly random
/// permutation of its original labels and tags every member Noisy. The
/// label multiset is preserved; an example may keep its label by chance.
pub fn shuffle_labels(subset: &mut [Example], seed: u64) -> Result<()> {
    if subset.len() < 2 {
        return Err(Error::contract(format!(
            "cannot shuffle labels of a subset of size {}",
            subset.len()
        )));
    }
    let mut labels: Vec<usize> = subset.iter().map(|e| e.original_label).collect();
    labels.shuffle(&mut rng::stream(seed, "label-shuffle", &[]));
    for (e, label) in subset.iter_mut().zip(labels) {
        e.assigned_label = label;
        e.tag = Tag::Noisy;
    }
    Ok(())
}

/// Assigns every member an independent uniform label in `0..class_count`.
pub fn relabel_uniform(subset: &mut [Example], class_count: usize, seed: u64) -> Result<()> {
    if class_count == 0 {
        return Err(Error::contract("class_count must be positive"));
    }
    let mut rng = rng::stream(seed, "label-relabel", &[]);
    for e in subset {
        e.assigned_label = rng.random_range(0..class_count);
        e.tag = Tag::Noisy;
    }
    Ok(())
}
