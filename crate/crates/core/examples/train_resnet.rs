//! Trains the residual network (batch norm, tanh, one residual block) on
//! contrast-and-brightness preprocessed synthetic scans.
//!
//! ```text
//! cargo run --release --example train_resnet -- [epochs] [images]
//! ```

use xray::config::TrainConfig;
use xray::datagen::{generate_images, SyntheticSpec};
use xray::layers::Layer;
use xray::model::Arch;
use xray::pipeline::run;

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
        arch: Arch::Resnet,
        epochs,
        image_size: 32,
        test_fraction: 0.2,
        ..TrainConfig::default()
    };
    let result = run(&images, &cfg, |rec| {
        let test = rec.test_acc.map_or("-".into(), |a| format!("{:.1}%", 100.0 * a));
        println!("epoch {:>3}  loss {:.4}  train {:.1}%  test {test}", rec.epoch, rec.train_loss, 100.0 * rec.train_acc);
    })?;

    let layers: Vec<&str> = result.checkpoint.model.layers().iter().map(Layer::name).collect();
    println!("\nlayers: {}", layers.join(" > "));
    if let Some(m) = result.test_metrics {
        println!("{m}");
    }
    Ok(())
}
