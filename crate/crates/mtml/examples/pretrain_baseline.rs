//! Phase one on its own: train per-camera classifiers over a shared encoder
//! using only the native labels, and watch the step-decayed schedule work.
//!
//! ```bash
//! cargo run --release --example pretrain_baseline
//! ```

use mtml::data::{generate_synthetic, SynthConfig};
use mtml::eval::classification_accuracy;
use mtml::model::{init_params, ModelConfig};
use mtml::trainer::{pretrain_mt, TrainConfig};

fn main() -> mtml::Result<()> {
    let dataset = generate_synthetic(&SynthConfig {
        num_global_identities: 20,
        num_cameras: 3,
        feature_dim: 16,
        images_per_identity_per_camera: 4,
        camera_presence_probability: 1.0,
        cluster_spread: 0.15,
        camera_shift_scale: 0.5,
        seed: 7,
    })?;
    let params = init_params(&ModelConfig {
        input_dim: dataset.feature_dim,
        hidden_dims: vec![32],
        feature_dim: 16,
        heads: dataset.head_sizes(),
        init_scale: 0.8,
        seed: 3,
    })?;

    let config = TrainConfig::default();
    let state = pretrain_mt(&dataset, params, &config)?;

    println!("epoch  lr       mt_loss");
    for r in state.history.iter().step_by(10) {
        println!("{:>5}  {:<7}  {:.4}", r.epoch, r.lr, r.loss.mt_loss);
    }
    let last = state.history.last().unwrap();
    println!(
        "{:>5}  {:<7}  {:.4}",
        last.epoch, last.lr, last.loss.mt_loss
    );

    let accuracy = classification_accuracy(&state.params, &dataset)?;
    for (camera, acc) in &accuracy {
        println!("camera {camera}: training accuracy {acc:.4}");
    }
    Ok(())
}
