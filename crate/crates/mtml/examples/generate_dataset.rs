//! Generate a synthetic multi-camera dataset, inspect its structure, and
//! round-trip it through the dataset file format.
//!
//! ```bash
//! cargo run --example generate_dataset
//! ```

use mtml::data::{generate_synthetic, load_dataset, save_dataset, SynthConfig};

fn main() -> mtml::Result<()> {
    let config = SynthConfig {
        num_global_identities: 12,
        num_cameras: 3,
        feature_dim: 8,
        images_per_identity_per_camera: 4,
        camera_presence_probability: 0.75,
        cluster_spread: 0.2,
        camera_shift_scale: 0.6,
        seed: 42,
    };
    let dataset = generate_synthetic(&config)?;

    println!(
        "dataset: {} cameras, feature dim {}, {} samples total",
        dataset.num_cameras,
        dataset.feature_dim,
        dataset.total_samples()
    );
    for view in &dataset.cameras {
        println!(
            "  camera {}: {} identities, {} samples",
            view.camera_id,
            view.num_identities,
            view.samples.len()
        );
    }

    // The per-camera label spaces are independent: the same hidden person
    // can wear a different label in every camera.
    let gt = dataset
        .ground_truth
        .as_ref()
        .expect("synthetic data has ground truth");
    let global = gt[&(1, 0)];
    print!("hidden identity {global} appears as:");
    for ((camera, label), g) in gt.iter() {
        if g == &global {
            print!(" (camera {camera}, label {label})");
        }
    }
    println!();

    let dir = tempfile::tempdir().map_err(mtml::Error::Io)?;
    let path = dir.path().join("example.icsd");
    save_dataset(&dataset, &path)?;
    let reloaded = load_dataset(&path)?;
    println!(
        "round trip through {}: identical = {}",
        path.display(),
        reloaded == dataset
    );
    Ok(())
}
