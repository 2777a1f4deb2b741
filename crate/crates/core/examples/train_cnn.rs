//! Trains the plain CNN on a synthetic corpus and scores the held-out part.
//!
//! ```text
//! cargo run --release --example train_cnn -- [epochs] [images]
//! ```

use xray::config::TrainConfig;
use xray::datagen::{generate_images, SyntheticSpec};
use xray::model::Arch;
use xray::pipeline::run;
use xray::training::EpochRecord;

fn main() -> xray::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let epochs = args.next().flatten().unwrap_or(10);
    let n_images = args.next().flatten().unwrap_or(500);

    let images = generate_images(&SyntheticSpec {
        n_images,
        image_size: 32,
        seed: 7,
        ..SyntheticSpec::default()
    })?;
    let cfg = TrainConfig {
        arch: Arch::Cnn,
        epochs,
        image_size: 32,
        test_fraction: 0.2,
        ..TrainConfig::default()
    };
    println!("{}", EpochRecord::CSV_HEADER);
    let result = run(&images, &cfg, |rec| println!("{}", rec.csv_line()))?;
    println!("\n{} train / {} test, {} parameters", result.train_n, result.test_n, result.checkpoint.model.parameter_count());
    if let Some(m) = result.test_metrics {
        println!("{m}");
    }
    Ok(())
}
