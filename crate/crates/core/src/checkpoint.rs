//! `XRNET1` checkpoint files.
//!
//! A text header followed by the raw state payload:
//!
//! ```text
//! XRNET1
//! arch cnn
//! head sigmoid
//! seed 42
//! config epochs = 120
//! ...
//! averages none
//! layer conv2d 3 16 3 0
//! layer activation relu
//! ...
//! params 212433
//! end
//! <params × f64 little-endian>
//! ```
//!
//! Layer state tensors are written in [`Model::state`] order. Loading
//! rebuilds the stack from the `layer` lines alone, so the config echo is
//! informational and eval never needs the original config file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::{parse_config, TrainConfig};
use crate::error::{Error, Result};
use crate::layers::{
    ActivationKind, ActivationLayer, BatchNormLayer, Conv2dLayer, DenseLayer, DropoutLayer,
    FlattenLayer, Layer, MaxPoolLayer, ResidualBlock, SoftmaxLayer,
};
use crate::model::Model;
use crate::preprocess::ChannelAverages;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const MAGIC: &str = "XRNET1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub config: TrainConfig,
    /// Channel averages the expanded preprocessing was fitted with.
    pub averages: Option<ChannelAverages>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn descriptor(layer: &Layer) -> String {
    match layer {
        Layer::Conv2d(c) => format!(
            "conv2d {} {} {} {}",
            c.in_channels(),
            c.out_channels(),
            c.kernel_size(),
            c.padding()
        ),
        Layer::MaxPool(_) => "maxpool".into(),
        Layer::Activation(a) => format!("activation {}", a.kind().as_str()),
        Layer::BatchNorm(b) => format!("batchnorm {} {} {}", b.features(), b.epsilon(), b.momentum()),
        Layer::Dropout(d) => format!("dropout {}", d.rate()),
        Layer::Flatten(_) => "flatten".into(),
        Layer::Dense(d) => format!(
            "dense {} {} {}",
            d.inputs(),
            d.outputs(),
            d.activation().as_str()
        ),
        Layer::Residual(r) => {
            let (eps, mom) = r.batch_norm_params();
            format!("residual {} {} {eps} {mom}", r.in_channels(), r.out_channels())
        }
        Layer::Softmax(_) => "softmax".into(),
    }
}

fn field<T: std::str::FromStr>(parts: &[&str], i: usize, line: &str) -> Result<T> {
    parts
        .get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("malformed layer descriptor {line:?}")))
}

/// A layer with the right shapes; values are overwritten from the payload.
fn skeleton(line: &str) -> Result<Layer> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    let arity = |n: usize| {
        if parts.len() == n {
            Ok(())
        } else {
            Err(bad(format!("malformed layer descriptor {line:?}")))
        }
    };
    let layer = match parts.first().copied() {
        Some("conv2d") => {
            arity(5)?;
            let (c, o, k, p): (usize, usize, usize, usize) = (
                field(&parts, 1, line)?,
                field(&parts, 2, line)?,
                field(&parts, 3, line)?,
                field(&parts, 4, line)?,
            );
            Layer::Conv2d(Conv2dLayer::from_parts(
                Tensor::zeros(&[o, c, k, k]),
                Tensor::zeros(&[o]),
                p,
            )?)
        }
        Some("maxpool") => {
            arity(1)?;
            Layer::MaxPool(MaxPoolLayer::new())
        }
        Some("activation") => {
            arity(2)?;
            let kind: ActivationKind = parts[1].parse()?;
            Layer::Activation(ActivationLayer::new(kind))
        }
        Some("batchnorm") => {
            arity(4)?;
            Layer::BatchNorm(BatchNormLayer::new(
                field(&parts, 1, line)?,
                field(&parts, 2, line)?,
                field(&parts, 3, line)?,
            )?)
        }
        Some("dropout") => {
            arity(2)?;
            Layer::Dropout(DropoutLayer::new(field(&parts, 1, line)?)?)
        }
        Some("flatten") => {
            arity(1)?;
            Layer::Flatten(FlattenLayer::new())
        }
        Some("dense") => {
            arity(4)?;
            let (i, o): (usize, usize) = (field(&parts, 1, line)?, field(&parts, 2, line)?);
            let kind: ActivationKind = parts[3].parse()?;
            Layer::Dense(DenseLayer::from_parts(Tensor::zeros(&[o, i]), Tensor::zeros(&[o]), kind)?)
        }
        Some("residual") => {
            arity(5)?;
            Layer::Residual(ResidualBlock::init_with_norm(
                &mut Rng::new(0),
                field(&parts, 1, line)?,
                field(&parts, 2, line)?,
                field(&parts, 3, line)?,
                field(&parts, 4, line)?,
            )?)
        }
        Some("softmax") => {
            arity(1)?;
            Layer::Softmax(SoftmaxLayer::new())
        }
        _ => return Err(bad(format!("unknown layer descriptor {line:?}"))),
    };
    Ok(layer)
}

impl Checkpoint {
    pub fn new(model: Model, config: TrainConfig, averages: Option<ChannelAverages>) -> Self {
        Checkpoint {
            model,
            config,
            averages,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = String::new();
        let _ = writeln!(head, "{MAGIC}");
        let _ = writeln!(head, "arch {}", self.model.arch());
        let _ = writeln!(head, "head {}", self.model.head());
        let _ = writeln!(head, "seed {}", self.config.seed);
        for line in self.config.to_text().lines() {
            let _ = writeln!(head, "config {line}");
        }
        match &self.averages {
            None => head.push_str("averages none\n"),
            Some(a) => {
                let [r, g, b] = a.as_array();
                let _ = writeln!(head, "averages {r} {g} {b}");
            }
        }
        for layer in self.model.layers() {
            let _ = writeln!(head, "layer {}", descriptor(layer));
        }
        let state = self.model.state();
        let count: usize = state.iter().map(|t| t.len()).sum();
        let _ = writeln!(head, "params {count}");
        head.push_str("end\n");

        let mut out = head.into_bytes();
        out.reserve(count * 8);
        for t in state {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let end = bytes
            .windows(5)
            .position(|w| w == b"\nend\n")
            .ok_or_else(|| bad("header is not terminated by `end`"))?;
        let header = std::str::from_utf8(&bytes[..end + 1]).map_err(|_| bad("header is not UTF-8"))?;
        let payload = &bytes[end + 5..];

        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad(format!("missing {MAGIC} magic")));
        }
        let mut arch = None;
        let mut head = None;
        let mut seed = None;
        let mut config_text = String::new();
        let mut averages = None;
        let mut layers = Vec::new();
        let mut count = None;
        for line in lines {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "arch" => arch = Some(rest.parse()?),
                "head" => head = Some(rest.parse()?),
                "seed" => seed = Some(rest.parse::<u64>().map_err(|_| bad("bad seed"))?),
                "config" => {
                    config_text.push_str(rest);
                    config_text.push('\n');
                }
                "averages" => {
                    averages = Some(if rest == "none" {
                        None
                    } else {
                        let v: Vec<f64> = rest
                            .split_whitespace()
                            .map(str::parse)
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| bad("bad averages line"))?;
                        match v[..] {
                            [r, g, b] => Some(ChannelAverages::new(r, g, b)?),
                            _ => return Err(bad("averages needs three values")),
                        }
                    })
                }
                "layer" => layers.push(skeleton(rest)?),
                "params" => count = Some(rest.parse::<usize>().map_err(|_| bad("bad params count"))?),
                _ => return Err(bad(format!("unexpected header line {line:?}"))),
            }
        }
        let missing = |what: &str| bad(format!("header lacks `{what}`"));
        let arch = arch.ok_or_else(|| missing("arch"))?;
        let head = head.ok_or_else(|| missing("head"))?;
        let seed = seed.ok_or_else(|| missing("seed"))?;
        let averages = averages.ok_or_else(|| missing("averages"))?;
        let count = count.ok_or_else(|| missing("params"))?;
        let config = parse_config(&config_text).map_err(|e| bad(format!("config echo: {e}")))?;
        if config.seed != seed || config.arch != arch || config.head != head {
            return Err(bad("config echo disagrees with the header"));
        }

        let mut model = Model::from_layers(arch, head, layers)?;
        let mut state = model.state_mut();
        let expected: usize = state.iter().map(|t| t.len()).sum();
        if expected != count || payload.len() != count * 8 {
            return Err(bad(format!(
                "layers hold {expected} values, header says {count}, payload has {} bytes",
                payload.len()
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        for t in state.iter_mut() {
            for v in t.data_mut() {
                *v = values.next().expect("length checked");
            }
        }
        Ok(Checkpoint {
            model,
            config,
            averages,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::model::{Arch, Head};
    use crate::tensor::rand_uniform;

    fn trained_like(arch: Arch, head: Head) -> Checkpoint {
        let config = TrainConfig {
            arch,
            head,
            image_size: 16,
            conv_filters: [3, 4, 5],
            hidden_units: 6,
            ..TrainConfig::default()
        };
        let mut model = Model::build(&config.arch_config(), &mut Rng::new(5)).unwrap();
        // move running statistics away from their initial values
        let x = rand_uniform(&mut Rng::new(6), &[4, 3, 16, 16], 0.0, 1.0).unwrap();
        model.forward(&x, Mode::Train, &mut Rng::new(7)).unwrap();
        Checkpoint::new(model, config, Some(ChannelAverages::new(12.5, 100.0, 0.1).unwrap()))
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for arch in [Arch::Cnn, Arch::Resnet] {
            for head in [Head::Sigmoid, Head::Softmax] {
                let ck = trained_like(arch, head);
                let bytes = ck.to_bytes();
                let back = Checkpoint::from_bytes(&bytes).unwrap();
                assert_eq!(back.to_bytes(), bytes);
                assert_eq!(back.config, ck.config);
                assert_eq!(back.averages, ck.averages);
                let x = rand_uniform(&mut Rng::new(8), &[2, 3, 16, 16], 0.0, 1.0).unwrap();
                let mut a = ck.model.clone();
                let mut b = back.model;
                assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
            }
        }
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = trained_like(Arch::Resnet, Head::Sigmoid).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[1..]).is_err());
        let split = bytes.windows(5).position(|w| w == b"\nend\n").unwrap() + 5;
        let header = std::str::from_utf8(&bytes[..split]).unwrap().replace("arch resnet", "arch cnn");
        let mut swapped = header.into_bytes();
        swapped.extend_from_slice(&bytes[split..]);
        assert!(Checkpoint::from_bytes(&swapped).is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 8]);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
