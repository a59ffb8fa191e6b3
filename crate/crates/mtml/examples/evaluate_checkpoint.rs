//! Save a trained model to a checkpoint file, load it back, and score
//! cross-camera retrieval with CMC and mAP.
//!
//! ```bash
//! cargo run --release --example evaluate_checkpoint
//! ```

use mtml::data::{generate_synthetic, SynthConfig};
use mtml::eval::{eval_table, evaluate, extract_features, split_probe_gallery, DEFAULT_CMC_RANKS};
use mtml::model::{init_params, load_checkpoint, save_checkpoint, ModelConfig};
use mtml::trainer::{pretrain_mt, train_mtml, TrainConfig};

fn main() -> mtml::Result<()> {
    let dataset = generate_synthetic(&SynthConfig {
        num_global_identities: 14,
        num_cameras: 3,
        feature_dim: 12,
        images_per_identity_per_camera: 4,
        camera_presence_probability: 1.0,
        cluster_spread: 0.2,
        camera_shift_scale: 0.6,
        seed: 19,
    })?;
    let params = init_params(&ModelConfig {
        input_dim: dataset.feature_dim,
        hidden_dims: vec![24],
        feature_dim: 12,
        heads: dataset.head_sizes(),
        init_scale: 0.8,
        seed: 4,
    })?;
    let config = TrainConfig {
        pretrain_epochs: 60,
        ml_iterations: 4,
        ..TrainConfig::default()
    };
    let state = pretrain_mt(&dataset, params, &config)?;
    let state = train_mtml(&dataset, state, &config)?;

    let dir = tempfile::tempdir().map_err(mtml::Error::Io)?;
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&state.params, &path)?;
    let loaded = load_checkpoint(&path)?;
    println!(
        "checkpoint round trip: identical = {}",
        loaded == state.params
    );

    // Inference uses the shared features only; heads never run here.
    let features = extract_features(&loaded, &dataset.cameras[0].samples)?;
    println!(
        "extracted {} features of dimension {}",
        features.len(),
        features[0].len()
    );

    let problem = split_probe_gallery(&dataset, &loaded, 0.25, 99)?;
    println!(
        "probe {} / gallery {} split:",
        problem.probe.len(),
        problem.gallery.len()
    );
    let report = evaluate(&problem, &DEFAULT_CMC_RANKS)?;
    print!("{}", eval_table(&report));
    Ok(())
}
