//! Datasets with camera-local identity label spaces.
//!
//! Every camera view annotates its own identities independently: label `3` in
//! camera 1 and label `3` in camera 2 are unrelated people. The hidden
//! `global_id` carried by synthetic samples records the true cross-camera
//! identity for scoring only; nothing in training reads it.

mod format;
mod sampler;
mod synth;

pub use format::{load_dataset, save_dataset, DATASET_FORMAT_VERSION};
pub use sampler::{sample_batch, Batch};
pub use synth::{generate_synthetic, relabel_to_ics, Annotation, SynthConfig};

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// One person image, reduced to a feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Descriptor of length `feature_dim`.
    pub features: Vec<f64>,
    /// Identity index inside this camera's own label space, `0..num_identities`.
    pub person_label: usize,
    /// Camera index, `1..=num_cameras`.
    pub camera_id: usize,
    /// Hidden cross-camera identity. Used by evaluation, never by training.
    pub global_id: Option<usize>,
}

/// All samples of one camera, with its independent label space.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub camera_id: usize,
    /// Number of distinct identities annotated in this camera.
    pub num_identities: usize,
    pub samples: Vec<Sample>,
}

impl CameraView {
    /// Indices into `samples` for each identity label, in sample order.
    pub fn images_of(&self, person_label: usize) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.person_label == person_label)
            .map(|(i, _)| i)
            .collect()
    }
}

/// A multi-camera training set with one label space per camera.
#[derive(Debug, Clone, PartialEq)]
pub struct IcsDataset {
    pub num_cameras: usize,
    pub feature_dim: usize,
    /// Exactly `num_cameras` views, camera ids `1..=num_cameras` in order.
    pub cameras: Vec<CameraView>,
    /// `(camera_id, person_label) -> global_id`, present when every sample
    /// carries a hidden identity.
    pub ground_truth: Option<BTreeMap<(usize, usize), usize>>,
}

impl IcsDataset {
    /// Total sample count over all cameras.
    pub fn total_samples(&self) -> usize {
        self.cameras.iter().map(|c| c.samples.len()).sum()
    }

    /// Identity counts per camera, in camera order.
    pub fn head_sizes(&self) -> Vec<usize> {
        self.cameras.iter().map(|c| c.num_identities).collect()
    }

    pub fn camera(&self, camera_id: usize) -> Result<&CameraView> {
        self.cameras
            .get(camera_id.wrapping_sub(1))
            .filter(|c| c.camera_id == camera_id)
            .ok_or(Error::NoSuchHead(camera_id))
    }

    /// Check every structural invariant. Called after generation and loading.
    pub fn validate(&self) -> Result<()> {
        if self.num_cameras == 0 {
            return Err(Error::DegenerateCamera("dataset has no cameras".into()));
        }
        if self.cameras.len() != self.num_cameras {
            return Err(Error::DegenerateCamera(format!(
                "expected {} cameras, found {}",
                self.num_cameras,
                self.cameras.len()
            )));
        }
        for (i, view) in self.cameras.iter().enumerate() {
            let cam = i + 1;
            if view.camera_id != cam {
                return Err(Error::DegenerateCamera(format!(
                    "camera at position {i} has id {}",
                    view.camera_id
                )));
            }
            if view.num_identities == 0 || view.samples.is_empty() {
                return Err(Error::DegenerateCamera(format!("camera {cam} is empty")));
            }
            let mut seen_labels = BTreeSet::new();
            let mut label_to_global: BTreeMap<usize, usize> = BTreeMap::new();
            for s in &view.samples {
                if s.camera_id != cam {
                    return Err(Error::InvalidSample(format!(
                        "sample in camera {cam} carries camera_id {}",
                        s.camera_id
                    )));
                }
                if s.person_label >= view.num_identities {
                    return Err(Error::InvalidSample(format!(
                        "label {} out of range for camera {cam} with {} identities",
                        s.person_label, view.num_identities
                    )));
                }
                if s.features.len() != self.feature_dim {
                    return Err(Error::InvalidSample(format!(
                        "feature length {} != {}",
                        s.features.len(),
                        self.feature_dim
                    )));
                }
                if s.features.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidSample(format!(
                        "non-finite feature in camera {cam} label {}",
                        s.person_label
                    )));
                }
                seen_labels.insert(s.person_label);
                if let Some(g) = s.global_id {
                    match label_to_global.get(&s.person_label) {
                        Some(&prev) if prev != g => {
                            return Err(Error::InvalidSample(format!(
                                "camera {cam} label {} maps to global ids {prev} and {g}",
                                s.person_label
                            )));
                        }
                        _ => {
                            label_to_global.insert(s.person_label, g);
                        }
                    }
                }
            }
            if seen_labels.len() != view.num_identities {
                return Err(Error::InvalidSample(format!(
                    "camera {cam} labels are not dense: {} of {} used",
                    seen_labels.len(),
                    view.num_identities
                )));
            }
            // Same global id may not hide under two different labels of one camera.
            let mut globals_seen: BTreeMap<usize, usize> = BTreeMap::new();
            for (&label, &g) in &label_to_global {
                if let Some(&other) = globals_seen.get(&g) {
                    return Err(Error::InvalidSample(format!(
                        "camera {cam} global id {g} appears under labels {other} and {label}"
                    )));
                }
                globals_seen.insert(g, label);
            }
        }
        if let Some(gt) = &self.ground_truth {
            for (&(cam, label), &g) in gt {
                let view = self.camera(cam)?;
                let found = view
                    .samples
                    .iter()
                    .any(|s| s.person_label == label && s.global_id == Some(g));
                if !found {
                    return Err(Error::InvalidSample(format!(
                        "ground truth entry ({cam}, {label}) -> {g} has no matching sample"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Rebuild the `(camera_id, person_label) -> global_id` map from samples.
    /// Returns `None` unless every sample carries a hidden identity.
    pub(crate) fn ground_truth_from_samples(
        cameras: &[CameraView],
    ) -> Option<BTreeMap<(usize, usize), usize>> {
        let mut map = BTreeMap::new();
        for view in cameras {
            for s in &view.samples {
                let g = s.global_id?;
                map.insert((view.camera_id, s.person_label), g);
            }
        }
        Some(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_sample(camera_id: usize, person_label: usize, global_id: Option<usize>) -> Sample {
        Sample {
            features: vec![0.0, 1.0],
            person_label,
            camera_id,
            global_id,
        }
    }

    fn tiny_dataset() -> IcsDataset {
        let cameras = vec![
            CameraView {
                camera_id: 1,
                num_identities: 2,
                samples: vec![tiny_sample(1, 0, Some(10)), tiny_sample(1, 1, Some(11))],
            },
            CameraView {
                camera_id: 2,
                num_identities: 1,
                samples: vec![tiny_sample(2, 0, Some(10))],
            },
        ];
        let ground_truth = IcsDataset::ground_truth_from_samples(&cameras);
        IcsDataset {
            num_cameras: 2,
            feature_dim: 2,
            cameras,
            ground_truth,
        }
    }

    #[test]
    fn valid_dataset_passes() {
        tiny_dataset().validate().unwrap();
    }

    #[test]
    fn label_out_of_range_rejected() {
        let mut d = tiny_dataset();
        d.cameras[0].samples[1].person_label = 5;
        assert!(matches!(d.validate(), Err(Error::InvalidSample(_))));
    }

    #[test]
    fn conflicting_global_ids_rejected() {
        let mut d = tiny_dataset();
        d.cameras[0].samples.push(tiny_sample(1, 0, Some(99)));
        assert!(matches!(d.validate(), Err(Error::InvalidSample(_))));
    }

    #[test]
    fn non_finite_feature_rejected() {
        let mut d = tiny_dataset();
        d.cameras[1].samples[0].features[0] = f64::NAN;
        assert!(matches!(d.validate(), Err(Error::InvalidSample(_))));
    }

    #[test]
    fn sparse_labels_rejected() {
        let mut d = tiny_dataset();
        d.cameras[0].num_identities = 3;
        assert!(matches!(d.validate(), Err(Error::InvalidSample(_))));
    }

    #[test]
    fn images_of_filters_by_label() {
        let d = tiny_dataset();
        assert_eq!(d.cameras[0].images_of(0), vec![0]);
        assert_eq!(d.cameras[0].images_of(1), vec![1]);
        assert!(d.cameras[1].images_of(1).is_empty());
    }
}
