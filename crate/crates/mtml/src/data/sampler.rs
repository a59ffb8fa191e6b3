//! Identity-balanced mini-batch sampling.
//!
//! Every batch draws the same composition from each camera: P identities,
//! K images each, so cameras with few labels train as fast as large ones.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{IcsDataset, Sample};

/// A mini-batch of size `M * P * K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub samples: Vec<Sample>,
    pub size: usize,
    pub per_camera_counts: BTreeMap<usize, usize>,
}

/// First `k` elements of a seeded Fisher-Yates pass over `0..n`.
fn choose_distinct(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.random_range(0..n - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Draw a P×K batch: from each camera, `persons_per_camera` distinct
/// identities, `images_per_person` images each. Identities with too few
/// images are completed by drawing with replacement.
pub fn sample_batch(
    dataset: &IcsDataset,
    rng: &mut ChaCha8Rng,
    persons_per_camera: usize,
    images_per_person: usize,
) -> Result<Batch> {
    if persons_per_camera == 0 || images_per_person == 0 {
        return Err(Error::InvalidConfig(
            "persons_per_camera and images_per_person must be >= 1".into(),
        ));
    }
    let mut samples =
        Vec::with_capacity(dataset.num_cameras * persons_per_camera * images_per_person);
    let mut per_camera_counts = BTreeMap::new();
    for view in &dataset.cameras {
        if view.num_identities < persons_per_camera {
            return Err(Error::InsufficientIdentities {
                camera_id: view.camera_id,
                available: view.num_identities,
                requested: persons_per_camera,
            });
        }
        let identities = choose_distinct(rng, view.num_identities, persons_per_camera);
        for label in identities {
            let images = view.images_of(label);
            debug_assert!(
                !images.is_empty(),
                "validated datasets have no empty labels"
            );
            if images.len() >= images_per_person {
                for idx in choose_distinct(rng, images.len(), images_per_person) {
                    samples.push(view.samples[images[idx]].clone());
                }
            } else {
                for _ in 0..images_per_person {
                    let idx = rng.random_range(0..images.len());
                    samples.push(view.samples[images[idx]].clone());
                }
            }
        }
        per_camera_counts.insert(view.camera_id, persons_per_camera * images_per_person);
    }
    let size = samples.len();
    Ok(Batch {
        samples,
        size,
        per_camera_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, CameraView, SynthConfig};
    use rand::SeedableRng;

    fn dataset() -> IcsDataset {
        generate_synthetic(&SynthConfig {
            num_global_identities: 10,
            num_cameras: 3,
            camera_presence_probability: 1.0,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn pk_batch_has_expected_shape() {
        let d = dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = sample_batch(&d, &mut rng, 2, 4).unwrap();
        assert_eq!(batch.size, 24);
        for view in &d.cameras {
            assert_eq!(batch.per_camera_counts[&view.camera_id], 8);
        }
        assert_eq!(batch.samples.iter().filter(|s| s.camera_id == 2).count(), 8);
    }

    #[test]
    fn same_rng_state_gives_identical_batch() {
        let d = dataset();
        let a = sample_batch(&d, &mut ChaCha8Rng::seed_from_u64(9), 2, 4).unwrap();
        let b = sample_batch(&d, &mut ChaCha8Rng::seed_from_u64(9), 2, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scarce_identity_is_oversampled_with_repeats() {
        // One camera, one identity, two images; ask for K=4.
        let samples = vec![
            Sample {
                features: vec![0.0],
                person_label: 0,
                camera_id: 1,
                global_id: None,
            },
            Sample {
                features: vec![1.0],
                person_label: 0,
                camera_id: 1,
                global_id: None,
            },
        ];
        let d = IcsDataset {
            num_cameras: 1,
            feature_dim: 1,
            cameras: vec![CameraView {
                camera_id: 1,
                num_identities: 1,
                samples,
            }],
            ground_truth: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = sample_batch(&d, &mut rng, 1, 4).unwrap();
        assert_eq!(batch.size, 4);
        // Only the two source images can appear; four draws from two images
        // necessarily repeat one.
        for s in &batch.samples {
            assert!(s.features[0] == 0.0 || s.features[0] == 1.0);
        }
    }

    #[test]
    fn too_few_identities_is_an_error() {
        let d = dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = sample_batch(&d, &mut rng, 11, 4).unwrap_err();
        assert!(matches!(err, Error::InsufficientIdentities { .. }));
    }

    #[test]
    fn distinct_identities_within_camera() {
        let d = dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let batch = sample_batch(&d, &mut rng, 3, 2).unwrap();
            for view in &d.cameras {
                let mut labels: Vec<usize> = batch
                    .samples
                    .iter()
                    .filter(|s| s.camera_id == view.camera_id)
                    .map(|s| s.person_label)
                    .collect();
                labels.sort_unstable();
                labels.dedup();
                assert_eq!(labels.len(), 3);
            }
        }
    }
}
