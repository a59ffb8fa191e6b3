//! Self-discovery of cross-camera identity correspondences.
//!
//! For an identity in camera `p`, every one of its images is pushed through
//! camera `q`'s classifier and the softmax outputs are averaged. The argmax
//! of that averaged prediction nominates a candidate in `q`; the candidate
//! then nominates back into `p` the same way, and the pair is kept only if
//! it returns to the original identity. Verified pairs attach each side's
//! label to the other side's images as additional training targets.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::IcsDataset;
use crate::error::{Error, Result};
use crate::model::{self, ModelParams};

/// Mean softmax output of camera `target_camera`'s head over all images of
/// one identity from `source_camera`.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedPrediction {
    pub source_camera: usize,
    pub source_identity: usize,
    pub target_camera: usize,
    pub probs: Vec<f64>,
}

/// Outcome of one forward-and-back nomination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchPair {
    pub camera_a: usize,
    pub identity_a: usize,
    pub camera_b: usize,
    /// Forward nomination: argmax of the a->b averaged prediction.
    pub identity_b: usize,
    /// Backward nomination: argmax of the b->a averaged prediction.
    pub backward_argmax: usize,
    /// True exactly when the backward nomination returns to `identity_a`.
    pub verified: bool,
}

/// Mutual label assignments: `(camera, label)` gains the labels of every
/// verified partner identity in other cameras.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MultiLabelSet {
    assignments: BTreeMap<(usize, usize), BTreeSet<(usize, usize)>>,
}

impl MultiLabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a verified pair in both directions. The two sides must live in
    /// different cameras.
    pub fn insert_pair(&mut self, a: (usize, usize), b: (usize, usize)) {
        assert_ne!(a.0, b.0, "pairs link different cameras");
        self.assignments.entry(a).or_default().insert(b);
        self.assignments.entry(b).or_default().insert(a);
    }

    /// Assigned foreign labels of one identity, sorted by (camera, label).
    pub fn assignments_of(&self, camera_id: usize, person_label: usize) -> Vec<(usize, usize)> {
        self.assignments
            .get(&(camera_id, person_label))
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }

    /// Number of distinct verified pairs (each mutual link counted once).
    pub fn pair_count(&self) -> usize {
        self.assignments.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Every pair exactly once, as ((camera_a, id_a), (camera_b, id_b)) with
    /// camera_a < camera_b.
    pub fn pairs(&self) -> Vec<((usize, usize), (usize, usize))> {
        let mut out = Vec::new();
        for (&a, partners) in &self.assignments {
            for &b in partners {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Per-sample extra labels for a batch, aligned with `samples`.
    pub fn batch_extra_labels(&self, samples: &[crate::data::Sample]) -> Vec<Vec<(usize, usize)>> {
        samples
            .iter()
            .map(|s| self.assignments_of(s.camera_id, s.person_label))
            .collect()
    }
}

/// Average the target head's softmax over all images of one identity.
pub fn average_prediction(
    params: &ModelParams,
    dataset: &IcsDataset,
    identity: usize,
    source_camera: usize,
    target_camera: usize,
) -> Result<AveragedPrediction> {
    let view = dataset.camera(source_camera)?;
    let images = view.images_of(identity);
    if images.is_empty() {
        return Err(Error::EmptyIdentity {
            camera_id: source_camera,
            label: identity,
        });
    }
    let mut sum: Option<Vec<f64>> = None;
    for &idx in &images {
        let v = model::forward_shared(params, &view.samples[idx].features)?;
        let probs = model::softmax(&model::head_logits(params, &v, target_camera)?);
        match &mut sum {
            None => sum = Some(probs),
            Some(acc) => {
                for (a, p) in acc.iter_mut().zip(&probs) {
                    *a += p;
                }
            }
        }
    }
    let mut probs = sum.expect("at least one image");
    let n = images.len() as f64;
    for p in probs.iter_mut() {
        *p /= n;
    }
    Ok(AveragedPrediction {
        source_camera,
        source_identity: identity,
        target_camera,
        probs,
    })
}

/// Argmax of an averaged prediction; ties go to the lowest index.
pub fn nominate(avg: &AveragedPrediction) -> usize {
    argmax(&avg.probs)
}

fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Nominate forward into the target camera, nominate back, and verify that
/// the round trip returns to the source identity.
pub fn cyclic_match(
    params: &ModelParams,
    dataset: &IcsDataset,
    identity: usize,
    source_camera: usize,
    target_camera: usize,
) -> Result<MatchPair> {
    let forward = average_prediction(params, dataset, identity, source_camera, target_camera)?;
    let candidate = nominate(&forward);
    let backward = average_prediction(params, dataset, candidate, target_camera, source_camera)?;
    let returned = nominate(&backward);
    Ok(MatchPair {
        camera_a: source_camera,
        identity_a: identity,
        camera_b: target_camera,
        identity_b: candidate,
        backward_argmax: returned,
        verified: returned == identity,
    })
}

/// Run the cyclic check for every identity of every ordered camera pair and
/// collect the verified pairs. The result replaces any earlier set; nothing
/// accumulates across rounds.
pub fn discover_all(params: &ModelParams, dataset: &IcsDataset) -> Result<MultiLabelSet> {
    // One forward pass per image, then averaged softmax per
    // (source camera, identity, target camera).
    let m = dataset.num_cameras;
    let mut tables: Vec<Vec<Vec<Vec<f64>>>> = Vec::with_capacity(m);
    for view in &dataset.cameras {
        let mut per_identity: Vec<Vec<Vec<f64>>> = vec![Vec::new(); view.num_identities];
        let mut counts = vec![0usize; view.num_identities];
        for s in &view.samples {
            let v = model::forward_shared(params, &s.features)?;
            let row = &mut per_identity[s.person_label];
            if row.is_empty() {
                for q in 1..=m {
                    row.push(model::softmax(&model::head_logits(params, &v, q)?));
                }
            } else {
                for (q, acc) in row.iter_mut().enumerate() {
                    let probs = model::softmax(&model::head_logits(params, &v, q + 1)?);
                    for (a, p) in acc.iter_mut().zip(&probs) {
                        *a += p;
                    }
                }
            }
            counts[s.person_label] += 1;
        }
        for (row, &n) in per_identity.iter_mut().zip(&counts) {
            for acc in row.iter_mut() {
                for a in acc.iter_mut() {
                    *a /= n as f64;
                }
            }
        }
        tables.push(per_identity);
    }

    let mut set = MultiLabelSet::new();
    for p in 1..=m {
        for q in 1..=m {
            if p == q {
                continue;
            }
            for identity in 0..dataset.cameras[p - 1].num_identities {
                let candidate = argmax(&tables[p - 1][identity][q - 1]);
                let returned = argmax(&tables[q - 1][candidate][p - 1]);
                if returned == identity {
                    set.insert_pair((p, identity), (q, candidate));
                }
            }
        }
    }
    Ok(set)
}

/// Validate a label set against a dataset and hand it back for training use.
/// Every image of an assigned identity then carries the partner labels in
/// addition to its native one.
pub fn apply_multilabels(dataset: &IcsDataset, set: &MultiLabelSet) -> Result<MultiLabelSet> {
    let in_dataset = |(camera_id, label): (usize, usize)| -> Result<()> {
        let view = dataset
            .camera(camera_id)
            .map_err(|_| Error::StaleAssignment { camera_id, label })?;
        if label >= view.num_identities {
            return Err(Error::StaleAssignment { camera_id, label });
        }
        Ok(())
    };
    for (&key, partners) in &set.assignments {
        in_dataset(key)?;
        for &partner in partners {
            in_dataset(partner)?;
        }
    }
    Ok(set.clone())
}

/// Images whose assigned labels land in each camera's label space, counting
/// the whole dataset as one batch.
pub fn multilabeled_counts(dataset: &IcsDataset, set: &MultiLabelSet) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for view in &dataset.cameras {
        for s in &view.samples {
            for (q, _) in set.assignments_of(s.camera_id, s.person_label) {
                *counts.entry(q).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Fraction of verified pairs whose hidden identities agree. `None` without
/// ground truth or without pairs.
pub fn association_precision(dataset: &IcsDataset, set: &MultiLabelSet) -> Option<f64> {
    let gt = dataset.ground_truth.as_ref()?;
    let pairs = set.pairs();
    if pairs.is_empty() {
        return None;
    }
    let correct = pairs
        .iter()
        .filter(|(a, b)| gt.get(a).is_some() && gt.get(a) == gt.get(b))
        .count();
    Some(correct as f64 / pairs.len() as f64)
}

/// One row of the association dump file.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationRow {
    pub round: usize,
    pub camera_a: usize,
    pub identity_a: usize,
    pub camera_b: usize,
    pub identity_b: usize,
    /// `Some(true/false)` when ground truth decides, `None` when unknown.
    pub correct: Option<bool>,
}

pub const ASSOCIATION_DUMP_HEADER: &str = "round,camera_a,identity_a,camera_b,identity_b,correct";

/// Rows for one association round, ordered by pair key.
pub fn dump_rows(round: usize, dataset: &IcsDataset, set: &MultiLabelSet) -> Vec<AssociationRow> {
    let gt = dataset.ground_truth.as_ref();
    set.pairs()
        .into_iter()
        .map(|(a, b)| AssociationRow {
            round,
            camera_a: a.0,
            identity_a: a.1,
            camera_b: b.0,
            identity_b: b.1,
            correct: gt.map(|g| g.get(&a).is_some() && g.get(&a) == g.get(&b)),
        })
        .collect()
}

pub fn write_association_dump(rows: &[AssociationRow], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# mtml-associations v1")?;
    writeln!(w, "{ASSOCIATION_DUMP_HEADER}")?;
    for r in rows {
        let correct = match r.correct {
            Some(true) => "true",
            Some(false) => "false",
            None => "unknown",
        };
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.round, r.camera_a, r.identity_a, r.camera_b, r.identity_b, correct
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_association_dump(path: &Path) -> Result<Vec<AssociationRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed == ASSOCIATION_DUMP_HEADER {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let int = |i: usize| -> Result<usize> {
            fields[i].trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad integer `{}`", fields[i]),
            })
        };
        let correct = match fields[5].trim() {
            "true" => Some(true),
            "false" => Some(false),
            "unknown" => None,
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("bad correctness flag `{other}`"),
                })
            }
        };
        rows.push(AssociationRow {
            round: int(0)?,
            camera_a: int(1)?,
            identity_a: int(2)?,
            camera_b: int(3)?,
            identity_b: int(4)?,
            correct,
        });
    }
    Ok(rows)
}
