//! Line-oriented `key = value` training configuration.
//!
//! `#` starts a comment; blank lines are ignored; unknown keys are errors.
//! Absent keys keep their defaults (120 epochs, batch 40, learning rate
//! 0.001, dropout 0.4). [`TrainConfig::to_text`] writes every key in a
//! fixed order, and parsing that text yields the same config.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{Arch, ArchConfig, Head};
use crate::preprocess::{PreprocessConfig, PreprocessMode};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub arch: Arch,
    pub head: Head,
    pub preprocess_mode: PreprocessMode,
    pub image_size: usize,
    pub seed: u64,
    pub threshold: f64,
    pub test_fraction: f64,
    pub alpha: f64,
    pub beta: f64,
    pub brightness_delta: f64,
    pub expansion_denom: f64,
    pub conv_filters: [usize; 3],
    pub hidden_units: usize,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = ArchConfig::default();
        let pre = PreprocessConfig::default();
        TrainConfig {
            epochs: 120,
            batch_size: 40,
            learning_rate: 0.001,
            dropout_rate: arch.dropout_rate,
            arch: arch.arch,
            head: arch.head,
            preprocess_mode: PreprocessMode::ContrastLight,
            image_size: arch.image_size,
            seed: 42,
            threshold: 0.5,
            test_fraction: 0.25,
            alpha: pre.alpha,
            beta: pre.beta,
            brightness_delta: pre.brightness_delta,
            expansion_denom: pre.expansion_denom,
            conv_filters: arch.conv_filters,
            hidden_units: arch.hidden_units,
            bn_epsilon: arch.bn_epsilon,
            bn_momentum: arch.bn_momentum,
        }
    }
}

const KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "learning_rate",
    "dropout_rate",
    "arch",
    "head",
    "preprocess_mode",
    "image_size",
    "seed",
    "threshold",
    "test_fraction",
    "alpha",
    "beta",
    "brightness_delta",
    "expansion_denom",
    "conv_filters",
    "hidden_units",
    "bn_epsilon",
    "bn_momentum",
];

fn parse_value<T: FromStr>(value: &str, what: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse {value:?} as {what}"))
}

fn positive(v: usize, key: &str) -> std::result::Result<usize, String> {
    if v == 0 {
        Err(format!("{key} must be positive"))
    } else {
        Ok(v)
    }
}

fn finite(v: f64, key: &str) -> std::result::Result<f64, String> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{key} must be finite"))
    }
}

impl TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "epochs" => self.epochs = positive(parse_value(value, "a count")?, key)?,
            "batch_size" => self.batch_size = positive(parse_value(value, "a count")?, key)?,
            "learning_rate" => {
                let lr: f64 = parse_value(value, "a number")?;
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err("learning_rate must be > 0".into());
                }
                self.learning_rate = lr;
            }
            "dropout_rate" => {
                let r: f64 = parse_value(value, "a number")?;
                if !(0.0..1.0).contains(&r) {
                    return Err("dropout_rate must be in [0, 1)".into());
                }
                self.dropout_rate = r;
            }
            "arch" => self.arch = value.parse().map_err(|e: Error| e.to_string())?,
            "head" => self.head = value.parse().map_err(|e: Error| e.to_string())?,
            "preprocess_mode" => {
                self.preprocess_mode = value.parse().map_err(|e: Error| e.to_string())?
            }
            "image_size" => self.image_size = positive(parse_value(value, "a count")?, key)?,
            "seed" => self.seed = parse_value(value, "an unsigned integer")?,
            "threshold" => {
                let t: f64 = parse_value(value, "a number")?;
                if !(0.0..=1.0).contains(&t) {
                    return Err("threshold must be in [0, 1]".into());
                }
                self.threshold = t;
            }
            "test_fraction" => {
                let f: f64 = parse_value(value, "a number")?;
                if !(0.0..1.0).contains(&f) {
                    return Err("test_fraction must be in [0, 1)".into());
                }
                self.test_fraction = f;
            }
            "alpha" => {
                let a: f64 = parse_value(value, "a number")?;
                if !(a > 0.0 && a.is_finite()) {
                    return Err("alpha must be > 0".into());
                }
                self.alpha = a;
            }
            "beta" => self.beta = finite(parse_value(value, "a number")?, key)?,
            "brightness_delta" => {
                self.brightness_delta = finite(parse_value(value, "a number")?, key)?
            }
            "expansion_denom" => {
                let d: f64 = parse_value(value, "a number")?;
                if !(d > 0.0 && d.is_finite()) {
                    return Err("expansion_denom must be > 0".into());
                }
                self.expansion_denom = d;
            }
            "conv_filters" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                let [a, b, c] = parts[..] else {
                    return Err("conv_filters needs three comma-separated counts".into());
                };
                self.conv_filters = [
                    positive(parse_value(a, "a count")?, key)?,
                    positive(parse_value(b, "a count")?, key)?,
                    positive(parse_value(c, "a count")?, key)?,
                ];
            }
            "hidden_units" => self.hidden_units = positive(parse_value(value, "a count")?, key)?,
            "bn_epsilon" => {
                let e: f64 = parse_value(value, "a number")?;
                if !(e > 0.0 && e.is_finite()) {
                    return Err("bn_epsilon must be > 0".into());
                }
                self.bn_epsilon = e;
            }
            "bn_momentum" => {
                let m: f64 = parse_value(value, "a number")?;
                if !(m > 0.0 && m < 1.0) {
                    return Err("bn_momentum must be in (0, 1)".into());
                }
                self.bn_momentum = m;
            }
            other => {
                return Err(format!(
                    "unknown key {other:?} (known keys: {})",
                    KEYS.join(", ")
                ))
            }
        }
        Ok(())
    }

    /// Applies a single override, e.g. from a command-line flag.
    pub fn set_value(&mut self, key: &str, value: &str) -> Result<()> {
        self.set(key, value)
            .map_err(|message| Error::Config { line: 0, message })
    }

    pub fn validate(&self) -> Result<()> {
        let text = self.to_text();
        parse_config(&text).map(|_| ())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = match *key {
                "epochs" => self.epochs.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "learning_rate" => self.learning_rate.to_string(),
                "dropout_rate" => self.dropout_rate.to_string(),
                "arch" => self.arch.to_string(),
                "head" => self.head.to_string(),
                "preprocess_mode" => self.preprocess_mode.to_string(),
                "image_size" => self.image_size.to_string(),
                "seed" => self.seed.to_string(),
                "threshold" => self.threshold.to_string(),
                "test_fraction" => self.test_fraction.to_string(),
                "alpha" => self.alpha.to_string(),
                "beta" => self.beta.to_string(),
                "brightness_delta" => self.brightness_delta.to_string(),
                "expansion_denom" => self.expansion_denom.to_string(),
                "conv_filters" => {
                    let [a, b, c] = self.conv_filters;
                    format!("{a},{b},{c}")
                }
                "hidden_units" => self.hidden_units.to_string(),
                "bn_epsilon" => self.bn_epsilon.to_string(),
                "bn_momentum" => self.bn_momentum.to_string(),
                _ => unreachable!(),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn arch_config(&self) -> ArchConfig {
        ArchConfig {
            arch: self.arch,
            head: self.head,
            image_size: self.image_size,
            conv_filters: self.conv_filters,
            hidden_units: self.hidden_units,
            dropout_rate: self.dropout_rate,
            bn_epsilon: self.bn_epsilon,
            bn_momentum: self.bn_momentum,
        }
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            alpha: self.alpha,
            beta: self.beta,
            brightness_delta: self.brightness_delta,
            expansion_denom: self.expansion_denom,
            averages: None,
        }
    }
}

pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config {
                line: line_no,
                message: format!("expected `key = value`, got {line:?}"),
            });
        };
        cfg.set(key.trim(), value.trim())
            .map_err(|message| Error::Config {
                line: line_no,
                message,
            })?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.epochs, 120);
        assert_eq!(cfg.batch_size, 40);
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.dropout_rate, 0.4);
        assert_eq!(cfg, TrainConfig::default());
    }

    #[test]
    fn override_one_field() {
        let cfg = parse_config("# tuned\n\nlearning_rate = 0.01  # faster\n").unwrap();
        assert_eq!(
            cfg,
            TrainConfig {
                learning_rate: 0.01,
                ..TrainConfig::default()
            }
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse_config("epochs = abc") {
            Err(Error::Config { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        match parse_config("epochs = 3\n\nwarmup = 2") {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("unknown key"));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_config("epochs 3").is_err());
        assert!(parse_config("dropout_rate = 1.0").is_err());
        assert!(parse_config("learning_rate = 0").is_err());
        assert!(parse_config("conv_filters = 1,2").is_err());
        assert!(parse_config("arch = vgg").is_err());
    }

    #[test]
    fn text_round_trip() {
        let cfg = parse_config(
            "arch = resnet\nhead = softmax\npreprocess_mode = expanded\nbn_epsilon = 1e-7\nconv_filters = 4, 5, 6\nseed = 18446744073709551615",
        )
        .unwrap();
        let text = cfg.to_text();
        assert_eq!(parse_config(&text).unwrap(), cfg);
        assert_eq!(parse_config(&text).unwrap().to_text(), text);
    }
}
