//! The four preprocessing variants applied to one synthetic scan.
//!
//! ```text
//! cargo run --example preprocess_pipeline [out_dir]
//! ```
//! With `out_dir`, each variant is also written as a PPM.

use std::path::PathBuf;

use xray::datagen::{generate_images, SyntheticSpec};
use xray::preprocess::{compute_channel_averages, pipeline_apply, Image, PreprocessConfig, PreprocessMode};

fn stats(img: &Image) -> (u8, u8, f64) {
    let px = img.pixels();
    let min = *px.iter().min().unwrap();
    let max = *px.iter().max().unwrap();
    let mean = px.iter().map(|&v| v as f64).sum::<f64>() / px.len() as f64;
    (min, max, mean)
}

fn main() -> xray::Result<()> {
    let out_dir = std::env::args().nth(1).map(PathBuf::from);
    let corpus = generate_images(&SyntheticSpec {
        n_images: 20,
        image_size: 64,
        ..SyntheticSpec::default()
    })?;
    let (scan, label) = corpus.iter().find(|(_, l)| *l == 1).unwrap();

    let mut cfg = PreprocessConfig::default();
    cfg.averages = Some(compute_channel_averages(corpus.iter().map(|(img, _)| img))?);
    println!("corpus channel averages: {:?}", cfg.averages.unwrap().as_array());
    println!("label {label}; alpha {} beta {} delta {}", cfg.alpha, cfg.beta, cfg.brightness_delta);
    println!("{:<16}{:>5}{:>5}{:>9}", "mode", "min", "max", "mean");
    for mode in PreprocessMode::ALL {
        let img = pipeline_apply(scan, &cfg, mode)?;
        let (min, max, mean) = stats(&img);
        println!("{:<16}{min:>5}{max:>5}{mean:>9.2}", mode.as_str());
        if let Some(dir) = &out_dir {
            std::fs::create_dir_all(dir)?;
            img.write_ppm(&dir.join(format!("{}.ppm", mode.as_str())))?;
        }
    }
    Ok(())
}
