//! The five-row preprocessing/architecture comparison on a synthetic corpus.
//! Short runs leave the saturating contrast modes stuck on the majority
//! class; they need more epochs than raw input.
//!
//! ```text
//! cargo run --release --example ablation -- [epochs] [report.csv]
//! ```

use xray::config::TrainConfig;
use xray::datagen::{generate_images, SyntheticSpec};
use xray::pipeline::run_experiment;

fn main() -> xray::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);
    let report_path = args.next();

    let images = generate_images(&SyntheticSpec {
        n_images: 300,
        image_size: 32,
        ..SyntheticSpec::default()
    })?;
    let cfg = TrainConfig {
        epochs,
        image_size: 32,
        conv_filters: [8, 16, 16],
        hidden_units: 32,
        ..TrainConfig::default()
    };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let report = run_experiment(&images, &cfg, jobs);
    print!("{report}");
    match report_path {
        Some(path) => std::fs::write(path, report.to_csv())?,
        None => print!("\n{}", report.to_csv()),
    }
    Ok(())
}
