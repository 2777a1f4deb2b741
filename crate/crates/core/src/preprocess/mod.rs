//! Pixel-level enhancement of X-ray rasters: brightness, contrast, color
//! expansion and their fixed composition, plus conversion to network input.
//!
//! Every transform clamps to `[0, 255]` after rounding half away from zero.
//! All functions are pure; input images are never modified.

mod image;

use std::fmt;
use std::str::FromStr;

pub use self::image::Image;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn to_channel(v: f64) -> u8 {
    // f64::round is half-away-from-zero; NaN saturates to 0 in the cast
    v.round().clamp(0.0, 255.0) as u8
}

/// `out = clamp(in + delta, 0, 255)` on every channel value.
pub fn adjust_brightness(img: &Image, delta: f64) -> Image {
    img.map_channels(|_, v| to_channel(v as f64 + delta))
}

/// Linear contrast `g = alpha * f + beta`, clamped to the 8-bit range.
pub fn adjust_contrast(img: &Image, alpha: f64, beta: f64) -> Result<Image> {
    if !(alpha > 0.0) {
        return Err(Error::param(format!("contrast gain must be > 0, got {alpha}")));
    }
    Ok(img.map_channels(|_, v| to_channel(alpha * v as f64 + beta)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelAverages {
    pub r_mean: f64,
    pub g_mean: f64,
    pub b_mean: f64,
}

impl ChannelAverages {
    pub fn new(r_mean: f64, g_mean: f64, b_mean: f64) -> Result<Self> {
        for m in [r_mean, g_mean, b_mean] {
            if !(0.0..=255.0).contains(&m) {
                return Err(Error::param(format!("channel mean {m} outside [0, 255]")));
            }
        }
        Ok(ChannelAverages {
            r_mean,
            g_mean,
            b_mean,
        })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.r_mean, self.g_mean, self.b_mean]
    }
}

/// Mean of each channel over every pixel of every image.
pub fn compute_channel_averages<'a, I>(imgs: I) -> Result<ChannelAverages>
where
    I: IntoIterator<Item = &'a Image>,
{
    let mut sums = [0u64; 3];
    let mut count = 0u64;
    for img in imgs {
        for px in img.pixels().chunks_exact(Image::CHANNELS) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v as u64;
            }
        }
        count += (img.width() * img.height()) as u64;
    }
    if count == 0 {
        return Err(Error::param("channel averages need at least one image"));
    }
    let n = count as f64;
    ChannelAverages::new(sums[0] as f64 / n, sums[1] as f64 / n, sums[2] as f64 / n)
}

/// Scales channel `c` by `avg_c / denom`.
///
/// Multiplying by the raw average would push almost every value past 255,
/// so the average is taken relative to `denom` (128 by default).
pub fn expand_color_scheme(img: &Image, avgs: &ChannelAverages, denom: f64) -> Result<Image> {
    if !(denom > 0.0) {
        return Err(Error::param(format!(
            "expansion denominator must be > 0, got {denom}"
        )));
    }
    let scale = avgs.as_array().map(|a| a / denom);
    Ok(img.map_channels(|c, v| to_channel(v as f64 * scale[c])))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PreprocessMode {
    Raw,
    Expanded,
    Contrast,
    ContrastLight,
}

impl PreprocessMode {
    pub const ALL: [PreprocessMode; 4] = [
        PreprocessMode::Raw,
        PreprocessMode::Expanded,
        PreprocessMode::Contrast,
        PreprocessMode::ContrastLight,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PreprocessMode::Raw => "raw",
            PreprocessMode::Expanded => "expanded",
            PreprocessMode::Contrast => "contrast",
            PreprocessMode::ContrastLight => "contrast-light",
        }
    }
}

impl fmt::Display for PreprocessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PreprocessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(PreprocessMode::Raw),
            "expanded" => Ok(PreprocessMode::Expanded),
            "contrast" => Ok(PreprocessMode::Contrast),
            "contrast-light" | "contrast+light" => Ok(PreprocessMode::ContrastLight),
            other => Err(Error::param(format!(
                "unknown preprocess mode {other:?} (expected raw, expanded, contrast, contrast-light)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub alpha: f64,
    pub beta: f64,
    pub brightness_delta: f64,
    pub expansion_denom: f64,
    /// Dataset averages for [`PreprocessMode::Expanded`].
    pub averages: Option<ChannelAverages>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            alpha: 1.5,
            beta: 0.0,
            brightness_delta: 40.0,
            expansion_denom: 128.0,
            averages: None,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::param(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.expansion_denom > 0.0) {
            return Err(Error::param(format!(
                "expansion denominator must be > 0, got {}",
                self.expansion_denom
            )));
        }
        Ok(())
    }
}

/// Applies one of the four preprocessing variants.
///
/// `ContrastLight` always runs contrast first and brightness second.
pub fn pipeline_apply(img: &Image, cfg: &PreprocessConfig, mode: PreprocessMode) -> Result<Image> {
    match mode {
        PreprocessMode::Raw => Ok(img.clone()),
        PreprocessMode::Expanded => {
            let avgs = cfg.averages.as_ref().ok_or_else(|| {
                Error::param("expanded mode requires dataset channel averages")
            })?;
            expand_color_scheme(img, avgs, cfg.expansion_denom)
        }
        PreprocessMode::Contrast => adjust_contrast(img, cfg.alpha, cfg.beta),
        PreprocessMode::ContrastLight => {
            let contrasted = adjust_contrast(img, cfg.alpha, cfg.beta)?;
            Ok(adjust_brightness(&contrasted, cfg.brightness_delta))
        }
    }
}

/// Nearest-neighbor resize to `target × target`, scaled to `[0, 1]`,
/// channels-first `[3, target, target]`.
///
/// Destination pixel `(x, y)` samples source `(floor(x·w/target), floor(y·h/target))`,
/// so downscaling 2×2 to 1×1 keeps the top-left pixel.
pub fn to_tensor(img: &Image, target: usize) -> Result<Tensor> {
    if target == 0 {
        return Err(Error::param("target size must be positive"));
    }
    let (w, h) = (img.width(), img.height());
    let plane = target * target;
    let mut data = vec![0.0; Image::CHANNELS * plane];
    for y in 0..target {
        let sy = y * h / target;
        for x in 0..target {
            let sx = x * w / target;
            let px = img.pixel(sx, sy);
            for c in 0..Image::CHANNELS {
                data[c * plane + y * target + x] = px[c] as f64 / 255.0;
            }
        }
    }
    Tensor::new(vec![Image::CHANNELS, target, target], data)
}
