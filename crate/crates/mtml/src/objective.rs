//! Loss functions.
//!
//! Two cross-entropy families share one kernel: the per-camera task loss on
//! native labels, averaged flat over the batch, and the multi-label loss on
//! assigned foreign labels, averaged per camera first and then over cameras.
//! The total objective is `L = L_mt + lambda * L_ml`.

use std::collections::BTreeMap;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{self, ModelParams};

/// Which terms of the objective are active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    /// Native per-camera classification only.
    MtOnly,
    /// Native classification plus assigned-label terms weighted by `lambda`.
    MtMl { lambda: f64 },
}

impl LossSpec {
    pub fn lambda(&self) -> f64 {
        match self {
            LossSpec::MtOnly => 0.0,
            LossSpec::MtMl { lambda } => *lambda,
        }
    }

    pub fn includes_ml(&self) -> bool {
        matches!(self, LossSpec::MtMl { .. })
    }
}

/// Loss values of one batch (or one epoch when averaged).
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub mt_loss: f64,
    pub ml_loss: f64,
    pub total: f64,
    /// Camera -> summed native-label loss of its in-batch images.
    pub per_camera_mt: BTreeMap<usize, f64>,
    /// Camera -> (mean assigned-label loss, count of images with assigned
    /// labels in that camera's label space).
    pub per_camera_ml: BTreeMap<usize, (f64, usize)>,
    pub lambda: f64,
}

impl LossReport {
    pub fn zero(lambda: f64) -> Self {
        Self {
            mt_loss: 0.0,
            ml_loss: 0.0,
            total: 0.0,
            per_camera_mt: BTreeMap::new(),
            per_camera_ml: BTreeMap::new(),
            lambda,
        }
    }

    /// Assemble a report from per-sample losses grouped by camera.
    pub fn compose(
        mt_groups: &BTreeMap<usize, Vec<f64>>,
        ml_groups: &BTreeMap<usize, Vec<f64>>,
        batch_size: usize,
        num_cameras: usize,
        lambda: f64,
    ) -> Result<Self> {
        let mt_loss = mt_loss_batch(mt_groups, batch_size)?;
        let ml_loss = ml_loss_batch(ml_groups, num_cameras);
        let per_camera_mt = mt_groups
            .iter()
            .map(|(&p, losses)| (p, losses.iter().sum()))
            .collect();
        let per_camera_ml = ml_groups
            .iter()
            .filter(|(_, losses)| !losses.is_empty())
            .map(|(&q, losses)| {
                (
                    q,
                    (
                        losses.iter().sum::<f64>() / losses.len() as f64,
                        losses.len(),
                    ),
                )
            })
            .collect();
        Ok(Self {
            mt_loss,
            ml_loss,
            total: total_loss(mt_loss, ml_loss, lambda),
            per_camera_mt,
            per_camera_ml,
            lambda,
        })
    }

    /// Arithmetic mean of scalar fields, used for per-epoch aggregation.
    /// Per-camera maps are averaged over the reports that mention each camera.
    pub fn mean_of(reports: &[LossReport]) -> Option<LossReport> {
        let first = reports.first()?;
        let lambda = first.lambda;
        let n = reports.len() as f64;
        let mt_loss = reports.iter().map(|r| r.mt_loss).sum::<f64>() / n;
        let ml_loss = reports.iter().map(|r| r.ml_loss).sum::<f64>() / n;
        let mut mt_acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        let mut ml_acc: BTreeMap<usize, (f64, usize, usize)> = BTreeMap::new();
        for r in reports {
            for (&p, &x) in &r.per_camera_mt {
                let e = mt_acc.entry(p).or_insert((0.0, 0));
                e.0 += x;
                e.1 += 1;
            }
            for (&q, &(x, b)) in &r.per_camera_ml {
                let e = ml_acc.entry(q).or_insert((0.0, 0, 0));
                e.0 += x;
                e.1 += 1;
                e.2 += b;
            }
        }
        Some(LossReport {
            mt_loss,
            ml_loss,
            total: total_loss(mt_loss, ml_loss, lambda),
            per_camera_mt: mt_acc
                .into_iter()
                .map(|(p, (x, c))| (p, x / c as f64))
                .collect(),
            per_camera_ml: ml_acc
                .into_iter()
                .map(|(q, (x, c, b))| (q, (x / c as f64, b)))
                .collect(),
            lambda,
        })
    }
}

/// `log(sum(exp(xs)))` with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn cross_entropy_from_logits(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label: target,
            classes: logits.len(),
        });
    }
    Ok(log_sum_exp(logits) - logits[target])
}

/// Cross entropy of a sample against its native camera label. Takes raw
/// classifier scores, never probabilities, so small targets cost
/// `lse(logits) - logits[y]` instead of `-log(tiny)`.
pub fn mt_loss_sample(logits: &[f64], true_label: usize) -> Result<f64> {
    cross_entropy_from_logits(logits, true_label)
}

/// Cross entropy of a sample against an assigned foreign-camera label.
pub fn ml_loss_sample(logits: &[f64], assigned_label: usize) -> Result<f64> {
    cross_entropy_from_logits(logits, assigned_label)
}

/// Flat batch mean of native-label losses, written as a per-camera sum:
/// `(1/B) * sum_p sum_i loss_i^p`.
pub fn mt_loss_batch(per_camera: &BTreeMap<usize, Vec<f64>>, batch_size: usize) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::EmptyBatch);
    }
    let count: usize = per_camera.values().map(Vec::len).sum();
    if count != batch_size {
        return Err(Error::InvalidConfig(format!(
            "batch size {batch_size} but {count} per-sample losses"
        )));
    }
    let sum: f64 = per_camera.values().map(|v| v.iter().sum::<f64>()).sum();
    Ok(sum / batch_size as f64)
}

/// Camera-balanced mean of assigned-label losses:
/// `(1/M) * sum_q mean(losses in q)`, a camera without assigned labels
/// contributing zero while the divisor stays `M`.
pub fn ml_loss_batch(per_camera: &BTreeMap<usize, Vec<f64>>, num_cameras: usize) -> f64 {
    debug_assert!(num_cameras >= 1);
    let sum: f64 = per_camera
        .values()
        .filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .sum();
    // The empty sum is IEEE -0.0; report plain zero.
    let sum = if sum == 0.0 { 0.0 } else { sum };
    sum / num_cameras as f64
}

/// `L = L_mt + lambda * L_ml`.
pub fn total_loss(mt: f64, ml: f64, lambda: f64) -> f64 {
    mt + lambda * ml
}

/// Evaluate the objective of a batch by plain forward passes.
///
/// `extra_labels[i]` lists the `(camera, label)` assignments of sample `i`;
/// pass `&[]` when nothing is assigned. This is the forward-only twin of
/// [`crate::model::backward`] and is what derivative checks difference.
pub fn evaluate_batch(
    params: &ModelParams,
    samples: &[Sample],
    extra_labels: &[Vec<(usize, usize)>],
    spec: LossSpec,
) -> Result<LossReport> {
    if !extra_labels.is_empty() && extra_labels.len() != samples.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} extra-label rows",
            samples.len(),
            extra_labels.len()
        )));
    }
    let mut mt_groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut ml_groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let v = model::forward_shared(params, &s.features)?;
        let logits = model::head_logits(params, &v, s.camera_id)?;
        mt_groups
            .entry(s.camera_id)
            .or_default()
            .push(mt_loss_sample(&logits, s.person_label)?);
        if spec.includes_ml() {
            if let Some(extras) = extra_labels.get(i) {
                for &(q, label) in extras {
                    let foreign = model::head_logits(params, &v, q)?;
                    ml_groups
                        .entry(q)
                        .or_default()
                        .push(ml_loss_sample(&foreign, label)?);
                }
            }
        }
    }
    LossReport::compose(
        &mt_groups,
        &ml_groups,
        samples.len(),
        params.num_heads(),
        spec.lambda(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn uniform_logits_cost_ln_n() {
        for n in 1..6 {
            let logits = vec![0.25; n];
            close(mt_loss_sample(&logits, 0).unwrap(), (n as f64).ln(), 1e-12);
        }
    }

    #[test]
    fn two_class_closed_forms() {
        close(
            mt_loss_sample(&[2.0, 0.0], 0).unwrap(),
            (1.0 + (-2.0f64).exp()).ln(),
            1e-12,
        );
        close(
            mt_loss_sample(&[10.0, 0.0], 1).unwrap(),
            10.0 + (1.0 + (-10.0f64).exp()).ln(),
            1e-12,
        );
    }

    #[test]
    fn extreme_logits_do_not_overflow() {
        let loss = mt_loss_sample(&[1000.0, 0.0], 0).unwrap();
        assert!(loss.is_finite());
        close(loss, 0.0, 1e-12);
    }

    #[test]
    fn assigned_label_loss_closed_forms() {
        close(ml_loss_sample(&[0.0, 0.0], 1).unwrap(), 2f64.ln(), 1e-12);
        // Scores whose softmax is [0.9, 0.1], assigned label at the argmax.
        let logits = [0.9f64.ln(), 0.1f64.ln()];
        close(
            ml_loss_sample(&logits, 0).unwrap(),
            (1.0f64 / 0.9).ln(),
            1e-12,
        );
    }

    #[test]
    fn label_out_of_range_is_reported() {
        assert!(matches!(
            mt_loss_sample(&[0.0, 0.0], 2),
            Err(Error::LabelOutOfRange {
                label: 2,
                classes: 2
            })
        ));
        assert!(matches!(
            ml_loss_sample(&[0.0], 1),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn batch_mean_sums_groups_then_divides() {
        let mut groups = BTreeMap::new();
        groups.insert(1, vec![1.0, 2.0]);
        groups.insert(2, vec![3.0, 5.0]);
        close(mt_loss_batch(&groups, 4).unwrap(), 2.75, 1e-12);
    }

    #[test]
    fn single_sample_batch_is_identity() {
        let mut groups = BTreeMap::new();
        groups.insert(1, vec![0.7]);
        close(mt_loss_batch(&groups, 1).unwrap(), 0.7, 1e-12);
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(matches!(
            mt_loss_batch(&BTreeMap::new(), 0),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn camera_balanced_mean_differs_from_flat_mean() {
        let mut groups = BTreeMap::new();
        groups.insert(1, vec![1.0, 3.0]);
        groups.insert(2, vec![4.0]);
        let nested = ml_loss_batch(&groups, 2);
        close(nested, 3.0, 1e-12);
        let flat = (1.0 + 3.0 + 4.0) / 3.0;
        assert!((nested - flat).abs() > 0.3);
    }

    #[test]
    fn camera_without_assignments_contributes_zero() {
        let mut groups = BTreeMap::new();
        groups.insert(1, vec![1.0, 3.0]);
        close(ml_loss_batch(&groups, 2), 1.0, 1e-12);
    }

    #[test]
    fn total_is_affine_in_ml() {
        close(total_loss(2.0, 1.0, 0.5), 2.5, 1e-12);
        close(total_loss(2.0, 123.0, 0.0), 2.0, 1e-12);
        close(total_loss(0.0, 0.0, 0.5), 0.0, 1e-12);
    }

    #[test]
    fn ml_batch_matches_brute_force_nested_mean() {
        use rand::Rng as _;
        use rand::SeedableRng as _;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m = rng.random_range(1..5usize);
            let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for q in 1..=m {
                let b = rng.random_range(0..4usize);
                if b > 0 {
                    groups.insert(q, (0..b).map(|_| rng.random_range(0.0..5.0)).collect());
                }
            }
            let mut expected = 0.0;
            for q in 1..=m {
                if let Some(losses) = groups.get(&q) {
                    let mean: f64 = losses.iter().sum::<f64>() / losses.len() as f64;
                    expected += mean;
                }
            }
            expected /= m as f64;
            close(ml_loss_batch(&groups, m), expected, 1e-12);
        }
    }

    #[test]
    fn report_total_invariant_holds() {
        let mut mt = BTreeMap::new();
        mt.insert(1, vec![1.0, 2.0]);
        let mut ml = BTreeMap::new();
        ml.insert(2, vec![0.5]);
        let r = LossReport::compose(&mt, &ml, 2, 2, 0.5).unwrap();
        close(r.total, r.mt_loss + r.lambda * r.ml_loss, 1e-12);
        assert_eq!(r.per_camera_ml[&2], (0.5, 1));
        close(r.per_camera_mt[&1], 3.0, 1e-12);
    }
}
