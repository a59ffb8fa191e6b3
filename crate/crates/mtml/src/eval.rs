//! Retrieval evaluation and reporting.
//!
//! Probe features are ranked against gallery features by Euclidean distance.
//! Gallery entries sharing both identity and camera with the probe are
//! excluded, so every hit is a cross-camera match. Ties break by gallery
//! index.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::association::AssociationRow;
use crate::data::{IcsDataset, Sample};
use crate::error::{Error, Result};
use crate::model::{self, ModelParams};

/// One retrieval entry: a shared feature vector plus scoring metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalItem {
    pub feature: Vec<f64>,
    pub global_id: usize,
    pub camera_id: usize,
}

/// A probe set and a gallery set over the same feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalProblem {
    pub probe: Vec<RetrievalItem>,
    pub gallery: Vec<RetrievalItem>,
}

/// Retrieval quality at the conventional ranks plus mean average precision.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cmc: BTreeMap<usize, f64>,
    pub map_score: f64,
    pub num_probes_evaluated: usize,
    /// Probes without any valid cross-camera match, left out of the rates.
    pub num_probes_skipped: usize,
}

pub const DEFAULT_CMC_RANKS: [usize; 4] = [1, 5, 10, 20];

/// Shared features of a sample list, in order.
pub fn extract_features(params: &ModelParams, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
    samples
        .iter()
        .map(|s| model::forward_shared(params, &s.features))
        .collect()
}

/// Pairwise Euclidean distances, row = probe, column = gallery.
pub fn distance_matrix(probe: &[Vec<f64>], gallery: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let dim = probe
        .first()
        .or_else(|| gallery.first())
        .map(Vec::len)
        .unwrap_or(0);
    for v in probe.iter().chain(gallery) {
        if v.len() != dim {
            return Err(Error::Shape(format!("feature length {} != {dim}", v.len())));
        }
    }
    Ok(probe
        .iter()
        .map(|p| {
            gallery
                .iter()
                .map(|g| {
                    p.iter()
                        .zip(g)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect())
}

/// Gallery indices ranked for one probe, same-camera copies of the probe
/// identity removed, ties broken by gallery index.
fn ranked_candidates(
    probe_id: usize,
    probe_camera: usize,
    row: &[f64],
    gallery: &[(usize, usize)],
) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..gallery.len())
        .filter(|&j| !(gallery[j].0 == probe_id && gallery[j].1 == probe_camera))
        .collect();
    candidates.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    candidates
}

/// Cumulative match rates at the requested ranks.
///
/// `probe_meta` and `gallery_meta` carry `(global_id, camera_id)` per item.
/// A probe whose identity never appears in another camera is skipped and
/// counted in the report's exclusion tally.
pub fn cmc(
    dist: &[Vec<f64>],
    probe_meta: &[(usize, usize)],
    gallery_meta: &[(usize, usize)],
    ranks: &[usize],
) -> Result<(BTreeMap<usize, f64>, usize, usize)> {
    if dist.len() != probe_meta.len() {
        return Err(Error::Shape("distance rows != probes".into()));
    }
    let mut hits: BTreeMap<usize, usize> = ranks.iter().map(|&r| (r, 0)).collect();
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for (i, &(pid, pcam)) in probe_meta.iter().enumerate() {
        let candidates = ranked_candidates(pid, pcam, &dist[i], gallery_meta);
        let first_correct = candidates.iter().position(|&j| gallery_meta[j].0 == pid);
        match first_correct {
            None => skipped += 1,
            Some(pos) => {
                evaluated += 1;
                let rank = pos + 1;
                for (&r, count) in hits.iter_mut() {
                    if rank <= r {
                        *count += 1;
                    }
                }
            }
        }
    }
    if evaluated == 0 {
        return Err(Error::MissingGroundTruth(
            "no probe has a valid cross-camera match".into(),
        ));
    }
    let rates = hits
        .into_iter()
        .map(|(r, c)| (r, c as f64 / evaluated as f64))
        .collect();
    Ok((rates, evaluated, skipped))
}

/// Mean average precision under the same candidate filtering as [`cmc`].
pub fn mean_average_precision(
    dist: &[Vec<f64>],
    probe_meta: &[(usize, usize)],
    gallery_meta: &[(usize, usize)],
) -> Result<f64> {
    if dist.len() != probe_meta.len() {
        return Err(Error::Shape("distance rows != probes".into()));
    }
    let mut ap_sum = 0.0;
    let mut evaluated = 0usize;
    for (i, &(pid, pcam)) in probe_meta.iter().enumerate() {
        let candidates = ranked_candidates(pid, pcam, &dist[i], gallery_meta);
        let mut relevant_seen = 0usize;
        let mut precision_sum = 0.0;
        for (pos, &j) in candidates.iter().enumerate() {
            if gallery_meta[j].0 == pid {
                relevant_seen += 1;
                precision_sum += relevant_seen as f64 / (pos + 1) as f64;
            }
        }
        if relevant_seen > 0 {
            ap_sum += precision_sum / relevant_seen as f64;
            evaluated += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::MissingGroundTruth(
            "no probe has a valid cross-camera match".into(),
        ));
    }
    Ok(ap_sum / evaluated as f64)
}

/// Run the full retrieval protocol over a problem.
pub fn evaluate(problem: &RetrievalProblem, ranks: &[usize]) -> Result<EvalReport> {
    if problem.probe.is_empty() || problem.gallery.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let probe_features: Vec<Vec<f64>> = problem.probe.iter().map(|i| i.feature.clone()).collect();
    let gallery_features: Vec<Vec<f64>> =
        problem.gallery.iter().map(|i| i.feature.clone()).collect();
    let probe_meta: Vec<(usize, usize)> = problem
        .probe
        .iter()
        .map(|i| (i.global_id, i.camera_id))
        .collect();
    let gallery_meta: Vec<(usize, usize)> = problem
        .gallery
        .iter()
        .map(|i| (i.global_id, i.camera_id))
        .collect();
    let dist = distance_matrix(&probe_features, &gallery_features)?;
    let (cmc_rates, evaluated, skipped) = cmc(&dist, &probe_meta, &gallery_meta, ranks)?;
    let map_score = mean_average_precision(&dist, &probe_meta, &gallery_meta)?;
    Ok(EvalReport {
        cmc: cmc_rates,
        map_score,
        num_probes_evaluated: evaluated,
        num_probes_skipped: skipped,
    })
}

/// Stratified probe/gallery split: around `probe_fraction` of each
/// identity's images in each camera become probes, always leaving at least
/// one gallery image. Single-image groups stay gallery-only.
pub fn split_probe_gallery(
    dataset: &IcsDataset,
    params: &ModelParams,
    probe_fraction: f64,
    seed: u64,
) -> Result<RetrievalProblem> {
    if !(0.0..1.0).contains(&probe_fraction) {
        return Err(Error::InvalidConfig(
            "probe_fraction must lie in [0, 1)".into(),
        ));
    }
    if dataset.ground_truth.is_none() {
        return Err(Error::MissingGroundTruth(
            "retrieval scoring needs hidden identities".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = Vec::new();
    let mut gallery = Vec::new();
    for view in &dataset.cameras {
        for label in 0..view.num_identities {
            let mut images = view.images_of(label);
            // Deterministic partial shuffle.
            for i in 0..images.len() {
                let j = i + (rng.next_u64() as usize) % (images.len() - i);
                images.swap(i, j);
            }
            let mut n_probe = (probe_fraction * images.len() as f64).round() as usize;
            if images.len() < 2 {
                n_probe = 0;
            } else {
                n_probe = n_probe.clamp(1, images.len() - 1);
            }
            for (k, &idx) in images.iter().enumerate() {
                let s = &view.samples[idx];
                let item = RetrievalItem {
                    feature: model::forward_shared(params, &s.features)?,
                    global_id: s.global_id.expect("checked ground truth"),
                    camera_id: s.camera_id,
                };
                if k < n_probe {
                    probe.push(item);
                } else {
                    gallery.push(item);
                }
            }
        }
    }
    Ok(RetrievalProblem { probe, gallery })
}

/// Per-camera training accuracy: argmax of each sample's own head.
pub fn classification_accuracy(
    params: &ModelParams,
    dataset: &IcsDataset,
) -> Result<BTreeMap<usize, f64>> {
    let mut out = BTreeMap::new();
    for view in &dataset.cameras {
        let mut correct = 0usize;
        for s in &view.samples {
            let v = model::forward_shared(params, &s.features)?;
            let logits = model::head_logits(params, &v, view.camera_id)?;
            let pred = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            if pred == s.person_label {
                correct += 1;
            }
        }
        out.insert(view.camera_id, correct as f64 / view.samples.len() as f64);
    }
    Ok(out)
}

/// Pair count and precision of one association round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub round: usize,
    pub pair_count: usize,
    /// `None` when no row of the round carries ground truth.
    pub precision: Option<f64>,
}

/// Aggregate dump rows into one summary per round, in round order. Rounds
/// up to the highest index that produced no rows are reported as empty.
pub fn association_dynamics_report(rows: &[AssociationRow]) -> Vec<RoundSummary> {
    let mut per_round: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    for r in rows {
        let e = per_round.entry(r.round).or_insert((0, 0, 0));
        e.0 += 1;
        match r.correct {
            Some(true) => {
                e.1 += 1;
                e.2 += 1;
            }
            Some(false) => e.2 += 1,
            None => {}
        }
    }
    let Some((&first, _)) = per_round.first_key_value() else {
        return Vec::new();
    };
    let &last = per_round.last_key_value().map(|(k, _)| k).unwrap();
    (first.min(1)..=last)
        .map(|round| {
            let (count, correct, known) = per_round.get(&round).copied().unwrap_or((0, 0, 0));
            RoundSummary {
                round,
                pair_count: count,
                precision: (known > 0).then(|| correct as f64 / known as f64),
            }
        })
        .collect()
}

/// CSV form of the dynamics report.
pub fn write_dynamics_csv(summaries: &[RoundSummary], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# mtml-dynamics v1")?;
    writeln!(w, "round,pairs,precision")?;
    for s in summaries {
        let precision = match s.precision {
            Some(p) => p.to_string(),
            None => "-".to_string(),
        };
        writeln!(w, "{},{},{}", s.round, s.pair_count, precision)?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width text table of the dynamics report.
pub fn dynamics_table(summaries: &[RoundSummary]) -> String {
    let mut out = String::from("round  pairs  precision\n");
    for s in summaries {
        let precision = match s.precision {
            Some(p) => format!("{p:.4}"),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{:>5}  {:>5}  {:>9}\n",
            s.round, s.pair_count, precision
        ));
    }
    out
}

/// CSV form of an evaluation report.
pub fn write_eval_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# mtml-eval v1")?;
    writeln!(w, "metric,value")?;
    for (&rank, &rate) in &report.cmc {
        writeln!(w, "cmc_rank{rank},{rate}")?;
    }
    writeln!(w, "map,{}", report.map_score)?;
    writeln!(w, "probes_evaluated,{}", report.num_probes_evaluated)?;
    writeln!(w, "probes_skipped,{}", report.num_probes_skipped)?;
    w.flush()?;
    Ok(())
}

/// Human-readable form of an evaluation report.
pub fn eval_table(report: &EvalReport) -> String {
    let mut out = String::new();
    for (&rank, &rate) in &report.cmc {
        out.push_str(&format!("R{rank:<3} {:.4}\n", rate));
    }
    out.push_str(&format!("mAP  {:.4}\n", report.map_score));
    out.push_str(&format!(
        "probes evaluated {} / skipped {}\n",
        report.num_probes_evaluated, report.num_probes_skipped
    ));
    out
}
