//! Finite-difference verification of every parameter in both networks.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use xray::layers::Mode;
use xray::model::{Arch, ArchConfig, Head, Model};
use xray::tensor::rand_uniform;
use xray::training::{grad_check, GradCheckOptions};
use xray::Rng;

fn main() -> xray::Result<()> {
    let x = rand_uniform(&mut Rng::new(1), &[3, 16, 16], 0.0, 1.0)?;
    let batch = rand_uniform(&mut Rng::new(2), &[4, 3, 16, 16], 0.0, 1.0)?;
    for arch in [Arch::Cnn, Arch::Resnet] {
        for head in [Head::Sigmoid, Head::Softmax] {
            let cfg = ArchConfig {
                arch,
                head,
                image_size: 16,
                conv_filters: [4, 8, 8],
                hidden_units: 16,
                ..ArchConfig::default()
            };
            let mut model = Model::build(&cfg, &mut Rng::new(3))?;
            model.forward(&batch, Mode::Train, &mut Rng::new(4))?;
            let report = grad_check(&model, &x, 1, &GradCheckOptions::default())?;
            println!("== {arch} / {head} head, {} parameters", model.parameter_count());
            println!("{report}");
        }
    }
    Ok(())
}
