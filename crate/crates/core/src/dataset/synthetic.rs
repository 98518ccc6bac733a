use rand::Rng;
use rand_distr::StandardNormal;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Isotropic unit-variance Gaussian clusters, one per class.
///
/// Class `c` is centred at `separation × e_c` for `c < dim`; classes beyond
/// the dimension get seeded random unit directions. Rows are class-major.
pub fn generate_gaussian_clusters(
    class_count: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if class_count < 2 || dim < 2 || per_class < 10 {
        return Err(Error::contract(format!(
            "gaussian clusters need >= 2 classes, dim >= 2 and >= 10 per class \
             (got {class_count}, {dim}, {per_class})"
        )));
    }
    let centers = cluster_centers(class_count, dim, separation, seed);
    let mut features = Vec::with_capacity(class_count * per_class);
    let mut labels = Vec::with_capacity(class_count * per_class);
    for (class, center) in centers.iter().enumerate() {
        let mut rng = rng::stream(seed, "gaussian-samples", &[class as u64]);
        for _ in 0..per_class {
            let x: Vec<f64> = center
                .iter()
                .map(|&m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            features.push(Tensor::vector(x)?);
            labels.push(class);
        }
    }
    LabeledDataset::new(features, labels, class_count)
}

pub(crate) fn cluster_centers(
    class_count: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    (0..class_count)
        .map(|c| {
            let mut dir = vec![0.0; dim];
            if c < dim {
                dir[c] = 1.0;
            } else {
                let mut rng = rng::stream(seed, "gaussian-direction", &[c as u64]);
                dir.iter_mut()
                    .for_each(|v| *v = rng.sample::<f64, _>(StandardNormal));
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                dir.iter_mut().for_each(|v| *v /= norm);
            }
            dir.into_iter().map(|v| v * separation).collect()
        })
        .collect()
}
