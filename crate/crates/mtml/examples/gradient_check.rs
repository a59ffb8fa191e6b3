//! Check the analytic backward pass against central finite differences on a
//! small model with both loss terms active.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mtml::data::Sample;
use mtml::model::{backward, init_params, GradientSet, ModelConfig, ModelParams};
use mtml::objective::{evaluate_batch, LossSpec};

/// Mutable access to the i-th scalar parameter, counted layer by layer.
fn param_mut(params: &mut ModelParams, flat_index: usize) -> &mut f64 {
    let mut i = flat_index;
    for a in params.encoder.iter_mut().chain(params.heads.iter_mut()) {
        if i < a.weight.data.len() {
            return &mut a.weight.data[i];
        }
        i -= a.weight.data.len();
        if i < a.bias.len() {
            return &mut a.bias[i];
        }
        i -= a.bias.len();
    }
    panic!("parameter index out of range");
}

fn grad_at(grads: &GradientSet, flat_index: usize) -> f64 {
    let mut i = flat_index;
    for a in grads.encoder.iter().chain(grads.heads.iter()) {
        if i < a.weight.data.len() {
            return a.weight.data[i];
        }
        i -= a.weight.data.len();
        if i < a.bias.len() {
            return a.bias[i];
        }
        i -= a.bias.len();
    }
    panic!("parameter index out of range");
}

fn main() -> mtml::Result<()> {
    let config = ModelConfig {
        input_dim: 6,
        hidden_dims: vec![8],
        feature_dim: 5,
        heads: vec![4, 3],
        init_scale: 0.9,
        seed: 12,
    };
    let params = init_params(&config)?;
    let n = params.parameter_count();
    println!("model with {n} parameters");

    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let mut batch = Vec::new();
    for i in 0..8 {
        let camera_id = 1 + (i % 2);
        batch.push(Sample {
            features: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
            person_label: i % config.heads[camera_id - 1],
            camera_id,
            global_id: None,
        });
    }
    // Two samples carry assigned labels from the other camera.
    let mut extras = vec![Vec::new(); batch.len()];
    extras[1] = vec![(2, 0)];
    extras[4] = vec![(1, 3)];
    let spec = LossSpec::MtMl { lambda: 0.5 };

    let analytic = backward(&params, &batch, &extras, spec)?;
    println!(
        "batch loss: total {:.6} = mt {:.6} + 0.5 * ml {:.6}",
        analytic.loss.total, analytic.loss.mt_loss, analytic.loss.ml_loss
    );

    // Differentiate the forward-only evaluation numerically.
    let h = 1e-5;
    let loss_of = |p: &ModelParams| evaluate_batch(p, &batch, &extras, spec).unwrap().total;
    let mut worst = 0.0f64;
    let mut perturbed = params.clone();
    for i in 0..n {
        let orig = *param_mut(&mut perturbed, i);
        *param_mut(&mut perturbed, i) = orig + h;
        let up = loss_of(&perturbed);
        *param_mut(&mut perturbed, i) = orig - h;
        let down = loss_of(&perturbed);
        *param_mut(&mut perturbed, i) = orig;
        let fd = (up - down) / (2.0 * h);
        let an = grad_at(&analytic.grads, i);
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    println!("checked {n} parameters, max relative error {worst:.3e}");
    assert!(worst <= 1e-4);
    println!("analytic gradients agree with finite differences");
    Ok(())
}
