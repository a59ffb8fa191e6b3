//! Watch the cyclic nomination at work: average a pretrained model's
//! cross-camera predictions, nominate candidates, and keep only the pairs
//! whose nomination survives the round trip.
//!
//! ```bash
//! cargo run --release --example cyclic_association
//! ```

use mtml::association::{
    association_precision, average_prediction, cyclic_match, discover_all, multilabeled_counts,
    nominate,
};
use mtml::data::{generate_synthetic, SynthConfig};
use mtml::model::{init_params, ModelConfig};
use mtml::trainer::{pretrain_mt, TrainConfig};

fn main() -> mtml::Result<()> {
    let dataset = generate_synthetic(&SynthConfig {
        num_global_identities: 8,
        num_cameras: 3,
        feature_dim: 12,
        images_per_identity_per_camera: 4,
        camera_presence_probability: 1.0,
        cluster_spread: 0.15,
        camera_shift_scale: 0.8,
        seed: 5,
    })?;
    let params = init_params(&ModelConfig {
        input_dim: dataset.feature_dim,
        hidden_dims: vec![24],
        feature_dim: 12,
        heads: dataset.head_sizes(),
        init_scale: 0.8,
        seed: 2,
    })?;
    let state = pretrain_mt(&dataset, params, &TrainConfig::default())?;

    // One identity in detail: its averaged prediction in camera 2 and the
    // nomination chain.
    let avg = average_prediction(&state.params, &dataset, 0, 1, 2)?;
    let rounded: Vec<f64> = avg.probs.iter().map(|p| (p * 1e3).round() / 1e3).collect();
    println!("averaged prediction of (camera 1, identity 0) in camera 2: {rounded:?}");
    let pair = cyclic_match(&state.params, &dataset, 0, 1, 2)?;
    println!(
        "nomination {} -> back {} => verified = {}",
        nominate(&avg),
        pair.backward_argmax,
        pair.verified
    );

    // The full sweep over every camera pair and identity.
    let set = discover_all(&state.params, &dataset)?;
    println!("\n{} verified pairs:", set.pair_count());
    let gt = dataset.ground_truth.as_ref().unwrap();
    for (a, b) in set.pairs() {
        let hit = gt[&a] == gt[&b];
        println!(
            "  (camera {}, id {}) <-> (camera {}, id {})  {}",
            a.0,
            a.1,
            b.0,
            b.1,
            if hit { "correct" } else { "WRONG" }
        );
    }
    if let Some(p) = association_precision(&dataset, &set) {
        println!("precision against hidden ground truth: {p:.4}");
    }

    // How many images gain a label from each camera's label space.
    for (camera, count) in multilabeled_counts(&dataset, &set) {
        println!("camera {camera}: {count} images gain an assigned label");
    }
    Ok(())
}
