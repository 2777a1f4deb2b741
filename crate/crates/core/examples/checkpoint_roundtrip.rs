//! Saves a briefly trained model, reloads it, and confirms the bytes and
//! the predictions survive.
//!
//! ```text
//! cargo run --example checkpoint_roundtrip
//! ```

use xray::checkpoint::Checkpoint;
use xray::config::TrainConfig;
use xray::dataset::prepare;
use xray::datagen::{generate_images, SyntheticSpec};
use xray::pipeline::run;
use xray::preprocess::PreprocessMode;
use xray::training::predict_all;

fn main() -> xray::Result<()> {
    let images = generate_images(&SyntheticSpec {
        n_images: 60,
        image_size: 16,
        ..SyntheticSpec::default()
    })?;
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 10,
        image_size: 16,
        conv_filters: [4, 8, 8],
        hidden_units: 16,
        preprocess_mode: PreprocessMode::Expanded,
        ..TrainConfig::default()
    };
    let trained = run(&images, &cfg, |_| {})?;

    let path = std::env::temp_dir().join("xray-roundtrip.xrnet");
    trained.checkpoint.save(&path)?;
    let bytes = std::fs::read(&path)?;
    let loaded = Checkpoint::load(&path)?;
    println!("{} bytes; header:", bytes.len());
    let header_end = bytes.windows(5).position(|w| w == b"\nend\n").unwrap() + 5;
    for line in String::from_utf8_lossy(&bytes[..header_end]).lines().filter(|l| !l.starts_with("config")) {
        println!("  {line}");
    }
    assert_eq!(loaded.to_bytes(), bytes, "save -> load -> save changed the file");

    // the stored averages reproduce the training-time preprocessing
    let data = prepare(&images, &[], &loaded.config, loaded.averages)?;
    let before = predict_all(&mut trained.checkpoint.model.clone(), &data.train)?;
    let after = predict_all(&mut loaded.model.clone(), &data.train)?;
    assert_eq!(before, after);
    println!("reloaded model reproduces all {} predictions exactly", after.len());
    Ok(())
}
