//! Writes a labelled synthetic corpus and reports how far apart the
//! classes sit in mean intensity.
//!
//! ```text
//! cargo run --example synthetic_corpus -- out/corpus 500
//! ```

use std::path::PathBuf;

use xray::datagen::{generate, SyntheticSpec};
use xray::preprocess::Image;

fn main() -> xray::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("xray-corpus"));
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let spec = SyntheticSpec {
        n_images: n,
        ..SyntheticSpec::default()
    };
    let manifest = generate(&spec, &dir)?;

    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for entry in manifest.entries() {
        let img = Image::read(&manifest.resolve(entry))?;
        let mean = img.pixels().iter().map(|&p| p as f64).sum::<f64>() / img.pixels().len() as f64;
        sums[entry.label as usize] += mean;
        counts[entry.label as usize] += 1;
    }
    println!("wrote {} images to {}", manifest.len(), dir.display());
    for label in 0..2 {
        println!("label {label}: {:>4} images, mean intensity {:.1}", counts[label], sums[label] / counts[label] as f64);
    }
    Ok(())
}
