//! Synthetic two-class corpus: dark gradient fields, with bright soft
//! elliptical blobs on the positives.
//!
//! Every draw comes from one sequential [`Rng`] seeded by the spec, so a
//! spec reproduces its corpus byte for byte.

use std::fs;
use std::path::Path;

use crate::dataset::{Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::preprocess::Image;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_images: usize,
    pub image_size: usize,
    pub positive_fraction: f64,
    /// Inclusive range of blobs per positive image.
    pub blob_count: (usize, usize),
    /// Peak brightness added at a blob centre.
    pub blob_intensity: (f64, f64),
    /// Semi-axis length as a fraction of the image side.
    pub blob_radius: (f64, f64),
    /// Background value range for the top row.
    pub background_top: (f64, f64),
    /// Background value range for the bottom row.
    pub background_bottom: (f64, f64),
    /// Uniform per-pixel noise amplitude.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_images: 500,
            image_size: 32,
            positive_fraction: 0.5,
            blob_count: (1, 4),
            blob_intensity: (90.0, 160.0),
            blob_radius: (0.12, 0.28),
            background_top: (10.0, 25.0),
            background_bottom: (45.0, 60.0),
            noise: 8.0,
            seed: 7,
        }
    }
}

/// Background values are kept inside this band.
pub const FIELD_RANGE: (f64, f64) = (10.0, 60.0);

fn ordered(r: (f64, f64), what: &str) -> Result<()> {
    if r.0.is_finite() && r.1.is_finite() && r.0 <= r.1 {
        Ok(())
    } else {
        Err(Error::param(format!("{what} range {r:?} is not ordered")))
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_images < 2 {
            return Err(Error::param("a corpus needs at least 2 images"));
        }
        if self.image_size == 0 {
            return Err(Error::param("image_size must be positive"));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::param("positive_fraction must lie in (0, 1)"));
        }
        let (lo, hi) = self.blob_count;
        if lo == 0 || lo > hi {
            return Err(Error::param("blob_count range must be positive and ordered"));
        }
        ordered(self.blob_intensity, "blob_intensity")?;
        ordered(self.blob_radius, "blob_radius")?;
        ordered(self.background_top, "background_top")?;
        ordered(self.background_bottom, "background_bottom")?;
        if self.blob_radius.0 <= 0.0 {
            return Err(Error::param("blob radius must be positive"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::param("noise must be non-negative"));
        }
        Ok(())
    }

    pub fn positives(&self) -> usize {
        (self.n_images as f64 * self.positive_fraction).round() as usize
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    peak: f64,
}

fn draw_image(spec: &SyntheticSpec, positive: bool, rng: &mut Rng) -> Image {
    let s = spec.image_size;
    let side = s as f64;
    let top = rng.uniform(spec.background_top.0, spec.background_top.1);
    let bottom = rng.uniform(spec.background_bottom.0, spec.background_bottom.1);
    let blobs: Vec<Blob> = if positive {
        let (lo, hi) = spec.blob_count;
        let n = lo + rng.below(hi - lo + 1);
        (0..n)
            .map(|_| Blob {
                cx: rng.uniform(0.15, 0.85) * side,
                cy: rng.uniform(0.15, 0.85) * side,
                rx: rng.uniform(spec.blob_radius.0, spec.blob_radius.1) * side,
                ry: rng.uniform(spec.blob_radius.0, spec.blob_radius.1) * side,
                peak: rng.uniform(spec.blob_intensity.0, spec.blob_intensity.1),
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut gray = Vec::with_capacity(s * s);
    for y in 0..s {
        let t = if s > 1 { y as f64 / (side - 1.0) } else { 0.0 };
        let base = top + (bottom - top) * t;
        for x in 0..s {
            let noise = if spec.noise > 0.0 {
                rng.uniform(-spec.noise, spec.noise)
            } else {
                0.0
            };
            let mut v = (base + noise).clamp(FIELD_RANGE.0, FIELD_RANGE.1);
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            for b in &blobs {
                let d2 = ((px - b.cx) / b.rx).powi(2) + ((py - b.cy) / b.ry).powi(2);
                if d2 < 1.0 {
                    v += b.peak * (1.0 - d2);
                }
            }
            gray.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Image::from_gray(s, s, &gray).expect("square buffer")
}

/// Draws the corpus in memory; labels are shuffled so classes interleave.
pub fn generate_images(spec: &SyntheticSpec) -> Result<Vec<(Image, u8)>> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let pos = spec.positives();
    let mut labels: Vec<u8> = (0..spec.n_images).map(|i| u8::from(i < pos)).collect();
    rng.shuffle(&mut labels);
    Ok(labels
        .into_iter()
        .map(|label| (draw_image(spec, label == 1, &mut rng), label))
        .collect())
}

/// Writes `img_<i>.ppm` files and `manifest.csv` into `out_dir`.
pub fn generate(spec: &SyntheticSpec, out_dir: &Path) -> Result<Manifest> {
    let images = generate_images(spec)?;
    fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(images.len());
    for (i, (img, label)) in images.iter().enumerate() {
        let name = format!("img_{i}.ppm");
        img.write_ppm(&out_dir.join(&name))?;
        entries.push(ManifestEntry {
            path: name.into(),
            label: *label,
        });
    }
    let manifest = Manifest::new(out_dir, entries);
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
