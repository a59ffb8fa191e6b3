//! The trainable network: shared encoder, shared feature layer, and one
//! classifier head per camera.
//!
//! Everything is dense f64 math written out explicitly so the backward pass
//! stays checkable against finite differences to tight tolerances. Encoder
//! layers apply an affine map followed by a rectifier, except the final
//! feature layer which stays affine so Euclidean distances on the feature
//! vector are unconstrained.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use std::collections::BTreeMap;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::objective::{self, LossReport, LossSpec};

/// Dense row-major matrix, `rows` = fan-in, `cols` = fan-out.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// One affine map: `out = input * weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Mat::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols
    }

    fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.weight.rows {
            return Err(Error::Shape(format!(
                "affine expects {} inputs, got {}",
                self.weight.rows,
                input.len()
            )));
        }
        let mut out = self.bias.clone();
        for (i, &x) in input.iter().enumerate() {
            let row = &self.weight.data[i * self.weight.cols..(i + 1) * self.weight.cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        Ok(out)
    }
}

/// Architecture and initialization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Encoder widths before the feature layer; may be empty.
    pub hidden_dims: Vec<usize>,
    /// Dimension of the camera-shared feature vector.
    pub feature_dim: usize,
    /// Identity count per camera, one entry per head.
    pub heads: Vec<usize>,
    pub init_scale: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidConfig("dimensions must be >= 1".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be >= 1".into()));
        }
        if self.heads.is_empty() || self.heads.contains(&0) {
            return Err(Error::InvalidConfig("each head needs >= 1 class".into()));
        }
        if !self.init_scale.is_finite() || self.init_scale < 0.0 {
            return Err(Error::InvalidConfig(
                "init_scale must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Encoder layer shapes including the final feature layer.
    fn encoder_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.feature_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Encoder layers; the last one is the feature layer and is not rectified.
    pub encoder: Vec<Affine>,
    /// One classifier per camera, fan-in `feature_dim`, fan-out `heads[p-1]`.
    pub heads: Vec<Affine>,
}

impl ModelParams {
    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.encoder
            .iter()
            .chain(&self.heads)
            .map(|a| a.weight.data.len() + a.bias.len())
            .sum()
    }

    fn head(&self, camera_id: usize) -> Result<&Affine> {
        if camera_id == 0 || camera_id > self.heads.len() {
            return Err(Error::NoSuchHead(camera_id));
        }
        Ok(&self.heads[camera_id - 1])
    }
}

/// Gradients of a scalar loss, shape-congruent with [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub encoder: Vec<Affine>,
    pub heads: Vec<Affine>,
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            encoder: params
                .encoder
                .iter()
                .map(|a| Affine::zeros(a.fan_in(), a.fan_out()))
                .collect(),
            heads: params
                .heads
                .iter()
                .map(|a| Affine::zeros(a.fan_in(), a.fan_out()))
                .collect(),
        }
    }

    /// First non-finite entry, reported as a layer name.
    pub fn find_non_finite(&self) -> Option<String> {
        let scan = |a: &Affine, name: String| -> Option<String> {
            if a.weight.data.iter().chain(&a.bias).any(|x| !x.is_finite()) {
                Some(name)
            } else {
                None
            }
        };
        for (l, a) in self.encoder.iter().enumerate() {
            if let Some(n) = scan(a, format!("encoder layer {l}")) {
                return Some(n);
            }
        }
        for (p, a) in self.heads.iter().enumerate() {
            if let Some(n) = scan(a, format!("head {}", p + 1)) {
                return Some(n);
            }
        }
        None
    }
}

/// Draw fresh parameters: zero-mean normal weights scaled by
/// `init_scale / sqrt(fan_in)`, zero biases. Deterministic for a given seed.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let standard = Normal::new(0.0, 1.0).expect("unit normal");
    let mut draw = |fan_in: usize, fan_out: usize| -> Affine {
        let scale = config.init_scale / (fan_in as f64).sqrt();
        let mut a = Affine::zeros(fan_in, fan_out);
        for w in a.weight.data.iter_mut() {
            *w = standard.sample(&mut rng) * scale;
        }
        a
    };
    let encoder = config
        .encoder_shapes()
        .into_iter()
        .map(|(fi, fo)| draw(fi, fo))
        .collect();
    let heads = config
        .heads
        .iter()
        .map(|&n| draw(config.feature_dim, n))
        .collect();
    Ok(ModelParams {
        config: config.clone(),
        encoder,
        heads,
    })
}

/// Activations cached by a traced forward pass, one entry per encoder layer.
struct ForwardTrace {
    /// Input to each layer (index 0 is the raw features).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    preacts: Vec<Vec<f64>>,
    /// The shared feature vector.
    v: Vec<f64>,
}

fn forward_trace(params: &ModelParams, features: &[f64]) -> Result<ForwardTrace> {
    let last = params.encoder.len() - 1;
    let mut inputs = Vec::with_capacity(params.encoder.len());
    let mut preacts = Vec::with_capacity(params.encoder.len());
    let mut a = features.to_vec();
    for (l, layer) in params.encoder.iter().enumerate() {
        let z = layer.apply(&a)?;
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericFailure(format!("encoder layer {l}")));
        }
        inputs.push(a);
        a = if l < last {
            z.iter().map(|&x| x.max(0.0)).collect()
        } else {
            z.clone()
        };
        preacts.push(z);
    }
    Ok(ForwardTrace {
        inputs,
        preacts,
        v: a,
    })
}

/// Map raw features to the camera-shared feature vector.
pub fn forward_shared(params: &ModelParams, features: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_trace(params, features)?.v)
}

/// Raw classifier scores of camera `camera_id` for a shared feature vector.
pub fn head_logits(params: &ModelParams, v: &[f64], camera_id: usize) -> Result<Vec<f64>> {
    params.head(camera_id)?.apply(v)
}

/// Probabilities from raw scores, with max subtraction so huge logits stay
/// finite. Entries are positive and sum to 1.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gradients plus the loss values they belong to.
#[derive(Debug, Clone)]
pub struct BackwardResult {
    pub grads: GradientSet,
    pub loss: LossReport,
}

/// Analytic gradient of the batch objective.
///
/// `extra_labels[i]` lists the assigned `(camera, label)` pairs of sample
/// `i`; pass `&[]` when no assignments exist. Each sample's gradient flows
/// through the shared encoder and through every head it is scored against:
/// its own camera's head for the native term, the assigned cameras' heads
/// for the multi-label terms.
pub fn backward(
    params: &ModelParams,
    samples: &[Sample],
    extra_labels: &[Vec<(usize, usize)>],
    spec: LossSpec,
) -> Result<BackwardResult> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !extra_labels.is_empty() && extra_labels.len() != samples.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} extra-label rows",
            samples.len(),
            extra_labels.len()
        )));
    }
    let batch_size = samples.len();
    let num_cameras = params.num_heads();
    let lambda = spec.lambda();

    // Pass 1: count images per assigned camera so every multi-label term
    // knows its group size up front.
    let mut group_sizes: BTreeMap<usize, usize> = BTreeMap::new();
    if spec.includes_ml() {
        for extras in extra_labels {
            for &(q, _) in extras {
                *group_sizes.entry(q).or_insert(0) += 1;
            }
        }
    }

    let mut grads = GradientSet::zeros_like(params);
    let mut mt_groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut ml_groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();

    for (i, sample) in samples.iter().enumerate() {
        let trace = forward_trace(params, &sample.features)?;

        // Native term weight 1/B, assigned terms lambda / (M * b_q).
        let mut terms: Vec<(usize, usize, f64)> = Vec::with_capacity(4);
        terms.push((
            sample.camera_id,
            sample.person_label,
            1.0 / batch_size as f64,
        ));
        if spec.includes_ml() {
            if let Some(extras) = extra_labels.get(i) {
                for &(q, label) in extras {
                    let b_q = group_sizes[&q] as f64;
                    terms.push((q, label, lambda / (num_cameras as f64 * b_q)));
                }
            }
        }

        let mut dv = vec![0.0; trace.v.len()];
        for (term_index, &(camera, label, weight)) in terms.iter().enumerate() {
            let head = params.head(camera)?;
            let logits = head.apply(&trace.v)?;
            if logits.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericFailure(format!("head {camera}")));
            }
            let loss = if term_index == 0 {
                let l = objective::mt_loss_sample(&logits, label)?;
                mt_groups.entry(camera).or_default().push(l);
                l
            } else {
                let l = objective::ml_loss_sample(&logits, label)?;
                ml_groups.entry(camera).or_default().push(l);
                l
            };
            if !loss.is_finite() {
                return Err(Error::NumericFailure(format!("loss at head {camera}")));
            }

            let probs = softmax(&logits);
            let head_grad = &mut grads.heads[camera - 1];
            for (j, &p) in probs.iter().enumerate() {
                let d = weight * (p - if j == label { 1.0 } else { 0.0 });
                for (k, &vk) in trace.v.iter().enumerate() {
                    *head_grad.weight.at_mut(k, j) += vk * d;
                }
                head_grad.bias[j] += d;
                for (k, dvk) in dv.iter_mut().enumerate() {
                    *dvk += head.weight.at(k, j) * d;
                }
            }
        }

        // Encoder backprop; the feature layer is affine, earlier layers gate
        // through the rectifier.
        let last = params.encoder.len() - 1;
        let mut da = dv;
        for l in (0..params.encoder.len()).rev() {
            let dz: Vec<f64> = if l < last {
                da.iter()
                    .zip(&trace.preacts[l])
                    .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                    .collect()
            } else {
                da
            };
            let layer = &params.encoder[l];
            let grad = &mut grads.encoder[l];
            let input = &trace.inputs[l];
            for (k, &xk) in input.iter().enumerate() {
                for (j, &dzj) in dz.iter().enumerate() {
                    *grad.weight.at_mut(k, j) += xk * dzj;
                }
            }
            for (j, &dzj) in dz.iter().enumerate() {
                grad.bias[j] += dzj;
            }
            let mut prev = vec![0.0; layer.fan_in()];
            for (k, pk) in prev.iter_mut().enumerate() {
                for (j, &dzj) in dz.iter().enumerate() {
                    *pk += layer.weight.at(k, j) * dzj;
                }
            }
            da = prev;
        }
    }

    if let Some(layer) = grads.find_non_finite() {
        return Err(Error::NumericFailure(layer));
    }
    let loss = LossReport::compose(&mt_groups, &ml_groups, batch_size, num_cameras, lambda)?;
    Ok(BackwardResult { grads, loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn small_config() -> ModelConfig {
        ModelConfig {
            input_dim: 16,
            hidden_dims: vec![32],
            feature_dim: 8,
            heads: vec![5, 7],
            init_scale: 1.0,
            seed: 42,
        }
    }

    #[test]
    fn init_shapes_follow_config() {
        let p = init_params(&small_config()).unwrap();
        assert_eq!(p.encoder.len(), 2);
        assert_eq!((p.encoder[0].fan_in(), p.encoder[0].fan_out()), (16, 32));
        assert_eq!((p.encoder[1].fan_in(), p.encoder[1].fan_out()), (32, 8));
        assert_eq!((p.heads[0].fan_in(), p.heads[0].fan_out()), (8, 5));
        assert_eq!((p.heads[1].fan_in(), p.heads[1].fan_out()), (8, 7));
        assert!(p.encoder[0].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&small_config()).unwrap();
        let b = init_params(&small_config()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_init_scale_means_zero_output() {
        let config = ModelConfig {
            init_scale: 0.0,
            ..small_config()
        };
        let p = init_params(&config).unwrap();
        let v = forward_shared(&p, &[1.0; 16]).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_single_layer_passes_features_through() {
        let config = ModelConfig {
            input_dim: 3,
            hidden_dims: vec![],
            feature_dim: 3,
            heads: vec![2],
            init_scale: 0.0,
            seed: 0,
        };
        let mut p = init_params(&config).unwrap();
        for i in 0..3 {
            *p.encoder[0].weight.at_mut(i, i) = 1.0;
        }
        let x = vec![0.3, -1.2, 2.5];
        assert_eq!(forward_shared(&p, &x).unwrap(), x);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn forward_matches_plain_affine_chain() {
        // Straightforward re-evaluation with untyped nested loops.
        let p = init_params(&small_config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = forward_shared(&p, &x).unwrap();

        let mut a = x.clone();
        for (l, layer) in p.encoder.iter().enumerate() {
            let mut z = vec![0.0; layer.fan_out()];
            for j in 0..layer.fan_out() {
                let mut acc = layer.bias[j];
                for i in 0..layer.fan_in() {
                    acc += a[i] * layer.weight.at(i, j);
                }
                z[j] = acc;
            }
            if l + 1 < p.encoder.len() {
                for zj in z.iter_mut() {
                    if *zj < 0.0 {
                        *zj = 0.0;
                    }
                }
            }
            a = z;
        }
        for (got, want) in v.iter().zip(&a) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn head_logits_hand_case() {
        let config = ModelConfig {
            input_dim: 1,
            hidden_dims: vec![],
            feature_dim: 1,
            heads: vec![2],
            init_scale: 0.0,
            seed: 0,
        };
        let mut p = init_params(&config).unwrap();
        *p.heads[0].weight.at_mut(0, 0) = 2.0;
        *p.heads[0].weight.at_mut(0, 1) = -1.0;
        p.heads[0].bias = vec![0.0, 1.0];
        let logits = head_logits(&p, &[3.0], 1).unwrap();
        assert_eq!(logits, vec![6.0, -2.0]);
    }

    #[test]
    fn unknown_head_is_an_error() {
        let p = init_params(&small_config()).unwrap();
        assert!(matches!(
            head_logits(&p, &[0.0; 8], 3),
            Err(Error::NoSuchHead(3))
        ));
        assert!(matches!(
            head_logits(&p, &[0.0; 8], 0),
            Err(Error::NoSuchHead(0))
        ));
    }

    #[test]
    fn softmax_basics() {
        let p = softmax(&[0.0, 0.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);

        let p = softmax(&[1000.0, 0.0]);
        assert!(p[0] > 0.999999 && p[1] < 1e-6 && p.iter().all(|x| x.is_finite()));

        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]);
        for (got, want) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let logits = [0.3, -2.0, 1.7, 0.0];
        let a = softmax(&logits);
        let shifted: Vec<f64> = logits.iter().map(|x| x + 123.456).collect();
        let b = softmax(&shifted);
        let sum: f64 = a.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    fn sample(features: Vec<f64>, person_label: usize, camera_id: usize) -> Sample {
        Sample {
            features,
            person_label,
            camera_id,
            global_id: None,
        }
    }

    #[test]
    fn single_class_head_has_zero_gradient() {
        let config = ModelConfig {
            input_dim: 2,
            hidden_dims: vec![3],
            feature_dim: 2,
            heads: vec![1],
            init_scale: 0.7,
            seed: 3,
        };
        let p = init_params(&config).unwrap();
        let batch = vec![sample(vec![0.5, -0.25], 0, 1)];
        let out = backward(&p, &batch, &[], LossSpec::MtOnly).unwrap();
        assert_eq!(out.loss.mt_loss, 0.0);
        let all_zero = |a: &Affine| a.weight.data.iter().chain(&a.bias).all(|&g| g == 0.0);
        assert!(out.grads.encoder.iter().all(all_zero));
        assert!(out.grads.heads.iter().all(all_zero));
    }

    #[test]
    fn softmax_ce_gradient_closed_form_at_uniform() {
        // Two classes, zero logits, true class 2: dlogits = [0.5, -0.5].
        let config = ModelConfig {
            input_dim: 1,
            hidden_dims: vec![],
            feature_dim: 1,
            heads: vec![2],
            init_scale: 0.0,
            seed: 0,
        };
        let mut p = init_params(&config).unwrap();
        *p.encoder[0].weight.at_mut(0, 0) = 1.0;
        let batch = vec![sample(vec![1.0], 1, 1)];
        let out = backward(&p, &batch, &[], LossSpec::MtOnly).unwrap();
        // v = 1, so head weight grads equal the logit grads.
        assert!((out.grads.heads[0].weight.at(0, 0) - 0.5).abs() < 1e-15);
        assert!((out.grads.heads[0].weight.at(0, 1) + 0.5).abs() < 1e-15);
        assert!((out.grads.heads[0].bias[0] - 0.5).abs() < 1e-15);
        assert!((out.grads.heads[0].bias[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn batch_without_camera_two_leaves_its_head_untouched() {
        let p = init_params(&small_config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch: Vec<Sample> = (0..4)
            .map(|k| {
                sample(
                    (0..16).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    k % 5,
                    1,
                )
            })
            .collect();
        let out = backward(&p, &batch, &[], LossSpec::MtOnly).unwrap();
        assert!(out.grads.heads[1]
            .weight
            .data
            .iter()
            .chain(&out.grads.heads[1].bias)
            .all(|&g| g == 0.0));
        assert!(out.grads.heads[0].weight.data.iter().any(|&g| g != 0.0));
    }

    fn param_at(
        p: &mut ModelParams,
        is_encoder: bool,
        l: usize,
        idx: usize,
        n_weights: usize,
    ) -> &mut f64 {
        let a = if is_encoder {
            &mut p.encoder[l]
        } else {
            &mut p.heads[l]
        };
        if idx < n_weights {
            &mut a.weight.data[idx]
        } else {
            &mut a.bias[idx - n_weights]
        }
    }

    /// Central finite differences over every parameter of a tiny model.
    #[test]
    fn gradients_match_finite_differences() {
        let config = ModelConfig {
            input_dim: 4,
            hidden_dims: vec![5],
            feature_dim: 3,
            heads: vec![3, 2],
            init_scale: 0.9,
            seed: 17,
        };
        let params = init_params(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut batch = Vec::new();
        for i in 0..6 {
            let camera_id = 1 + (i % 2);
            let classes = config.heads[camera_id - 1];
            batch.push(sample(
                (0..4).map(|_| rng.random_range(-1.5..1.5)).collect(),
                i % classes,
                camera_id,
            ));
        }
        // A couple of cross-camera assignments to exercise the ML path.
        let mut extras: Vec<Vec<(usize, usize)>> = vec![Vec::new(); 6];
        extras[0] = vec![(2, 1)];
        extras[3] = vec![(1, 2)];
        let spec = LossSpec::MtMl { lambda: 0.5 };

        let analytic = backward(&params, &batch, &extras, spec).unwrap().grads;

        let f = |p: &ModelParams| {
            objective::evaluate_batch(p, &batch, &extras, spec)
                .unwrap()
                .total
        };
        let h = 1e-5;
        let mut worst = 0.0f64;
        let mut perturbed = params.clone();
        let layers: Vec<(bool, usize)> = (0..params.encoder.len())
            .map(|l| (true, l))
            .chain((0..params.heads.len()).map(|p| (false, p)))
            .collect();
        for &(is_encoder, l) in &layers {
            let n_weights = if is_encoder {
                params.encoder[l].weight.data.len()
            } else {
                params.heads[l].weight.data.len()
            };
            let n_bias = if is_encoder {
                params.encoder[l].bias.len()
            } else {
                params.heads[l].bias.len()
            };
            for idx in 0..n_weights + n_bias {
                let orig = *param_at(&mut perturbed, is_encoder, l, idx, n_weights);
                *param_at(&mut perturbed, is_encoder, l, idx, n_weights) = orig + h;
                let up = f(&perturbed);
                *param_at(&mut perturbed, is_encoder, l, idx, n_weights) = orig - h;
                let down = f(&perturbed);
                *param_at(&mut perturbed, is_encoder, l, idx, n_weights) = orig;
                let fd = (up - down) / (2.0 * h);
                let an = {
                    let a = if is_encoder {
                        &analytic.encoder[l]
                    } else {
                        &analytic.heads[l]
                    };
                    if idx < n_weights {
                        a.weight.data[idx]
                    } else {
                        a.bias[idx - n_weights]
                    }
                };
                let denom = an.abs().max(fd.abs()).max(1e-8);
                worst = worst.max((an - fd).abs() / denom);
            }
        }
        assert!(worst <= 1e-4, "max relative error {worst}");
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let p = init_params(&small_config()).unwrap();
        assert!(matches!(
            forward_shared(&p, &[1.0, 2.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn forward_is_bitwise_pure() {
        let p = init_params(&small_config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = forward_shared(&p, &x).unwrap();
        let b = forward_shared(&p, &x).unwrap();
        assert_eq!(a, b);
    }

    /// Combined gradient decomposes as grad(mt) + lambda * grad(ml).
    #[test]
    fn gradient_is_linear_in_lambda() {
        let config = ModelConfig {
            input_dim: 4,
            hidden_dims: vec![6],
            feature_dim: 3,
            heads: vec![3, 2],
            init_scale: 0.8,
            seed: 23,
        };
        let params = init_params(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let batch: Vec<Sample> = (0..4)
            .map(|i| {
                let camera_id = 1 + (i % 2);
                sample(
                    (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    i % config.heads[camera_id - 1],
                    camera_id,
                )
            })
            .collect();
        let mut extras = vec![Vec::new(); 4];
        extras[0] = vec![(2, 1)];
        extras[3] = vec![(1, 2)];

        let mt = backward(&params, &batch, &extras, LossSpec::MtOnly)
            .unwrap()
            .grads;
        let full = backward(&params, &batch, &extras, LossSpec::MtMl { lambda: 1.0 })
            .unwrap()
            .grads;
        let half = backward(&params, &batch, &extras, LossSpec::MtMl { lambda: 0.5 })
            .unwrap()
            .grads;

        let flat = |g: &GradientSet| -> Vec<f64> {
            g.encoder
                .iter()
                .chain(&g.heads)
                .flat_map(|a| a.weight.data.iter().chain(&a.bias).copied())
                .collect()
        };
        let (mt, full, half) = (flat(&mt), flat(&full), flat(&half));
        for ((m, f), h) in mt.iter().zip(&full).zip(&half) {
            let ml_part = f - m;
            assert!((h - (m + 0.5 * ml_part)).abs() <= 1e-12);
        }
    }
}
