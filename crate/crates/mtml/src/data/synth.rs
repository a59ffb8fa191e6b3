//! Synthetic dataset generation and conversion of globally-labeled data.
//!
//! Each hidden identity is a Gaussian cluster center; each camera adds a fixed
//! offset vector to everything it sees, standing in for per-camera appearance
//! shift. Per-camera labels are a dense re-indexing of whichever identities
//! that camera happened to capture, so the generated data has exactly the
//! camera-local annotation structure the trainer expects.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::{CameraView, IcsDataset, Sample};

/// Knobs for [`generate_synthetic`]. All randomness flows from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Number of hidden cross-camera identities.
    pub num_global_identities: usize,
    pub num_cameras: usize,
    pub feature_dim: usize,
    /// Images generated per (identity, camera) pair that is present.
    pub images_per_identity_per_camera: usize,
    /// Probability that a given identity shows up in a given camera.
    pub camera_presence_probability: f64,
    /// Per-coordinate noise std around an identity's center.
    pub cluster_spread: f64,
    /// Per-coordinate std of each camera's fixed offset vector.
    pub camera_shift_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_global_identities: 20,
            num_cameras: 3,
            feature_dim: 16,
            images_per_identity_per_camera: 4,
            camera_presence_probability: 0.8,
            cluster_spread: 0.15,
            camera_shift_scale: 0.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_global_identities == 0
            || self.num_cameras == 0
            || self.feature_dim == 0
            || self.images_per_identity_per_camera == 0
        {
            return Err(Error::InvalidConfig("all counts must be positive".into()));
        }
        let in_unit =
            self.camera_presence_probability > 0.0 && self.camera_presence_probability <= 1.0;
        if !in_unit {
            return Err(Error::InvalidConfig(
                "camera_presence_probability must lie in (0, 1]".into(),
            ));
        }
        // NaN fails both of these.
        if self.cluster_spread.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::InvalidConfig("cluster_spread must be > 0".into()));
        }
        if self.camera_shift_scale.partial_cmp(&0.0) == Some(std::cmp::Ordering::Less)
            || self.camera_shift_scale.is_nan()
        {
            return Err(Error::InvalidConfig(
                "camera_shift_scale must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

const PRESENCE_RETRIES: usize = 100;

/// Generate a dataset with hidden cross-camera ground truth.
///
/// Identity centers are unit Gaussians, so `cluster_spread` and
/// `camera_shift_scale` are relative to an inter-center distance of about
/// `sqrt(2 * feature_dim)`. Deterministic for a given config.
pub fn generate_synthetic(config: &SynthConfig) -> Result<IcsDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let standard = Normal::new(0.0, 1.0).expect("unit normal");

    let g = config.num_global_identities;
    let m = config.num_cameras;
    let f = config.feature_dim;

    let centers: Vec<Vec<f64>> = (0..g)
        .map(|_| (0..f).map(|_| standard.sample(&mut rng)).collect())
        .collect();
    let offsets: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            (0..f)
                .map(|_| standard.sample(&mut rng) * config.camera_shift_scale)
                .collect()
        })
        .collect();

    // presence[g][p]: does identity g show up in camera p? Redraw the whole
    // matrix while any camera stays empty.
    let mut presence = vec![vec![false; m]; g];
    let mut ok = false;
    for _ in 0..PRESENCE_RETRIES {
        for row in presence.iter_mut() {
            for cell in row.iter_mut() {
                *cell = rng.random_bool(config.camera_presence_probability);
            }
        }
        if (0..m).all(|p| (0..g).any(|gi| presence[gi][p])) {
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(Error::DegenerateCamera(format!(
            "no presence draw filled every camera after {PRESENCE_RETRIES} retries"
        )));
    }

    let noise = Normal::new(0.0, config.cluster_spread).expect("spread checked positive");
    let mut cameras = Vec::with_capacity(m);
    for p in 0..m {
        let present: Vec<usize> = (0..g).filter(|&gi| presence[gi][p]).collect();
        let mut samples = Vec::with_capacity(present.len() * config.images_per_identity_per_camera);
        for (label, &gi) in present.iter().enumerate() {
            for _ in 0..config.images_per_identity_per_camera {
                let features: Vec<f64> = (0..f)
                    .map(|k| centers[gi][k] + offsets[p][k] + noise.sample(&mut rng))
                    .collect();
                samples.push(Sample {
                    features,
                    person_label: label,
                    camera_id: p + 1,
                    global_id: Some(gi),
                });
            }
        }
        cameras.push(CameraView {
            camera_id: p + 1,
            num_identities: present.len(),
            samples,
        });
    }

    let ground_truth = IcsDataset::ground_truth_from_samples(&cameras);
    let dataset = IcsDataset {
        num_cameras: m,
        feature_dim: f,
        cameras,
        ground_truth,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// One globally-labeled input record for [`relabel_to_ics`].
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub features: Vec<f64>,
    pub global_id: usize,
    pub camera_id: usize,
}

/// Strip global labels down to independent per-camera label spaces.
///
/// Within each camera, global ids are re-indexed densely in first-appearance
/// order; the inverse map is kept as ground truth.
pub fn relabel_to_ics(annotations: &[Annotation]) -> Result<IcsDataset> {
    if annotations.is_empty() {
        return Err(Error::DegenerateCamera("no annotations".into()));
    }
    let feature_dim = annotations[0].features.len();
    let num_cameras = annotations.iter().map(|a| a.camera_id).max().unwrap_or(0);
    if annotations.iter().any(|a| a.camera_id == 0) {
        return Err(Error::InvalidSample("camera ids start at 1".into()));
    }

    let mut cameras: Vec<CameraView> = (1..=num_cameras)
        .map(|camera_id| CameraView {
            camera_id,
            num_identities: 0,
            samples: Vec::new(),
        })
        .collect();
    let mut label_maps: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); num_cameras];

    for a in annotations {
        if a.features.len() != feature_dim {
            return Err(Error::InvalidSample(format!(
                "feature length {} != {}",
                a.features.len(),
                feature_dim
            )));
        }
        if a.features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSample(format!(
                "non-finite feature for global id {} in camera {}",
                a.global_id, a.camera_id
            )));
        }
        let map = &mut label_maps[a.camera_id - 1];
        let next = map.len();
        let label = *map.entry(a.global_id).or_insert(next);
        cameras[a.camera_id - 1].samples.push(Sample {
            features: a.features.clone(),
            person_label: label,
            camera_id: a.camera_id,
            global_id: Some(a.global_id),
        });
    }

    for (view, map) in cameras.iter_mut().zip(&label_maps) {
        if view.samples.is_empty() {
            return Err(Error::DegenerateCamera(format!(
                "camera {} has no annotations",
                view.camera_id
            )));
        }
        view.num_identities = map.len();
    }

    let ground_truth = IcsDataset::ground_truth_from_samples(&cameras);
    let dataset = IcsDataset {
        num_cameras,
        feature_dim,
        cameras,
        ground_truth,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let config = SynthConfig::default();
        let a = generate_synthetic(&config).unwrap();
        let b = generate_synthetic(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_presence_gives_expected_counts() {
        let config = SynthConfig {
            num_global_identities: 10,
            num_cameras: 3,
            camera_presence_probability: 1.0,
            images_per_identity_per_camera: 4,
            ..SynthConfig::default()
        };
        let d = generate_synthetic(&config).unwrap();
        for view in &d.cameras {
            assert_eq!(view.num_identities, 10);
            assert_eq!(view.samples.len(), 40);
        }
    }

    #[test]
    fn vanishing_noise_collapses_to_centers() {
        let config = SynthConfig {
            camera_shift_scale: 0.0,
            cluster_spread: 1e-9,
            camera_presence_probability: 1.0,
            ..SynthConfig::default()
        };
        let d = generate_synthetic(&config).unwrap();
        // All samples of one global identity agree across cameras.
        let mut by_global: BTreeMap<usize, Vec<&Sample>> = BTreeMap::new();
        for view in &d.cameras {
            for s in &view.samples {
                by_global.entry(s.global_id.unwrap()).or_default().push(s);
            }
        }
        for group in by_global.values() {
            let first = &group[0].features;
            for s in group {
                for (a, b) in first.iter().zip(&s.features) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn impossible_presence_reports_degenerate_camera() {
        let config = SynthConfig {
            num_global_identities: 1,
            camera_presence_probability: 0.01,
            ..SynthConfig::default()
        };
        assert!(matches!(
            generate_synthetic(&config),
            Err(Error::DegenerateCamera(_))
        ));
    }

    #[test]
    fn relabel_reindexes_per_camera() {
        // Globals 100 (A) and 200 (B) in both cameras, first-appearance order.
        let annotations = vec![
            Annotation {
                features: vec![0.0],
                global_id: 100,
                camera_id: 1,
            },
            Annotation {
                features: vec![1.0],
                global_id: 200,
                camera_id: 1,
            },
            Annotation {
                features: vec![2.0],
                global_id: 100,
                camera_id: 2,
            },
            Annotation {
                features: vec![3.0],
                global_id: 200,
                camera_id: 2,
            },
        ];
        let d = relabel_to_ics(&annotations).unwrap();
        let gt = d.ground_truth.as_ref().unwrap();
        assert_eq!(gt[&(1, 0)], 100);
        assert_eq!(gt[&(1, 1)], 200);
        assert_eq!(gt[&(2, 0)], 100);
        assert_eq!(gt[&(2, 1)], 200);
    }

    #[test]
    fn camera_local_identity_stays_local() {
        let annotations = vec![
            Annotation {
                features: vec![0.0],
                global_id: 1,
                camera_id: 1,
            },
            Annotation {
                features: vec![1.0],
                global_id: 1,
                camera_id: 2,
            },
            Annotation {
                features: vec![2.0],
                global_id: 3,
                camera_id: 2,
            },
        ];
        let d = relabel_to_ics(&annotations).unwrap();
        assert_eq!(d.cameras[0].num_identities, 1);
        assert_eq!(d.cameras[1].num_identities, 2);
        let gt = d.ground_truth.as_ref().unwrap();
        assert_eq!(gt[&(2, 1)], 3);
        assert!(!gt.contains_key(&(1, 1)));
    }

    #[test]
    fn single_camera_input_is_valid() {
        let annotations = vec![Annotation {
            features: vec![0.0],
            global_id: 5,
            camera_id: 1,
        }];
        let d = relabel_to_ics(&annotations).unwrap();
        assert_eq!(d.num_cameras, 1);
        d.validate().unwrap();
    }

    #[test]
    fn missing_camera_in_range_is_degenerate() {
        // Ids 1 and 3 present, 2 absent.
        let annotations = vec![
            Annotation {
                features: vec![0.0],
                global_id: 5,
                camera_id: 1,
            },
            Annotation {
                features: vec![1.0],
                global_id: 5,
                camera_id: 3,
            },
        ];
        assert!(matches!(
            relabel_to_ics(&annotations),
            Err(Error::DegenerateCamera(_))
        ));
    }

    #[test]
    fn non_finite_annotation_rejected() {
        let annotations = vec![Annotation {
            features: vec![f64::INFINITY],
            global_id: 5,
            camera_id: 1,
        }];
        assert!(matches!(
            relabel_to_ics(&annotations),
            Err(Error::InvalidSample(_))
        ));
    }
}
