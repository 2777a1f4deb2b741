//! 8-bit RGB rasters and the binary Netpbm codec (P6 read/write, P5 read).
//!
//! No color management or gamma handling: bytes in are bytes out.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height * Self::CHANNELS {
            return Err(Error::shape(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * Self::CHANNELS,
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * Self::CHANNELS)
            .collect();
        Image::new(width, height, pixels)
    }

    /// Replicates each gray value into R, G and B.
    pub fn from_gray(width: usize, height: usize, gray: &[u8]) -> Result<Self> {
        if gray.len() != width * height {
            return Err(Error::shape(format!(
                "{width}x{height} gray image needs {} bytes, got {}",
                width * height,
                gray.len()
            )));
        }
        Image::new(
            width,
            height,
            gray.iter().flat_map(|&g| [g, g, g]).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * Self::CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Applies `f(channel_index, value)` to every channel value.
    pub(crate) fn map_channels(&self, f: impl Fn(usize, u8) -> u8) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .enumerate()
                .map(|(i, &v)| f(i % Self::CHANNELS, v))
                .collect(),
        }
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Decodes binary PPM (`P6`) or PGM (`P5`, replicated to RGB).
    pub fn decode(bytes: &[u8]) -> std::result::Result<Image, String> {
        let mut header = HeaderReader { bytes, pos: 0 };
        let magic = header.token()?;
        let gray = match magic.as_str() {
            "P6" => false,
            "P5" => true,
            other => return Err(format!("unsupported magic {other:?}")),
        };
        let width = header.number("width")?;
        let height = header.number("height")?;
        let maxval = header.number("maxval")?;
        if width == 0 || height == 0 {
            return Err(format!("zero dimension {width}x{height}"));
        }
        if gray {
            if maxval == 0 || maxval > 255 {
                return Err(format!("unsupported PGM maxval {maxval}"));
            }
        } else if maxval != 255 {
            return Err(format!("unsupported PPM maxval {maxval}, expected 255"));
        }
        // exactly one whitespace byte separates the header from the raster
        match bytes.get(header.pos) {
            Some(b) if b.is_ascii_whitespace() => header.pos += 1,
            _ => return Err("missing separator before raster".into()),
        }
        let raster = &bytes[header.pos..];
        let expected = width * height * if gray { 1 } else { 3 };
        if raster.len() < expected {
            return Err(format!(
                "truncated raster: expected {expected} bytes, found {}",
                raster.len()
            ));
        }
        let raster = &raster[..expected];
        let image = if gray {
            let scaled: Vec<u8> = if maxval == 255 {
                raster.to_vec()
            } else {
                raster
                    .iter()
                    .map(|&v| {
                        ((v.min(maxval as u8) as f64) * 255.0 / maxval as f64).round() as u8
                    })
                    .collect()
            };
            Image::from_gray(width, height, &scaled)
        } else {
            Image::new(width, height, raster.to_vec())
        };
        image.map_err(|e| e.to_string())
    }

    pub fn read(path: &Path) -> Result<Image> {
        let bytes = std::fs::read(path)?;
        Image::decode(&bytes).map_err(|message| Error::Decode {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_ppm())?;
        Ok(())
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    if c == b'\n' {
                        break;
                    }
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> std::result::Result<String, String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, String> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| format!("bad {what} {tok:?} in header"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_header_with_comments() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = Image::decode(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert_eq!(img.pixel(1, 0), [4, 5, 6]);
    }

    #[test]
    fn pgm_replicates_gray() {
        let mut bytes = b"P5 2 1 255\n".to_vec();
        bytes.extend_from_slice(&[7, 200]);
        let img = Image::decode(&bytes).unwrap();
        assert_eq!(img.pixels(), &[7, 7, 7, 200, 200, 200]);
    }

    #[test]
    fn pgm_small_maxval_rescales() {
        let mut bytes = b"P5 2 1 15\n".to_vec();
        bytes.extend_from_slice(&[0, 15]);
        let img = Image::decode(&bytes).unwrap();
        assert_eq!(img.pixels(), &[0, 0, 0, 255, 255, 255]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Image::decode(b"P3 1 1 255\n1 2 3").is_err());
        assert!(Image::decode(b"P6 2 2 255\n\x00\x01").is_err());
        assert!(Image::decode(b"P6 1 1 65535\n\x00\x00\x00\x00\x00\x00").is_err());
        assert!(Image::decode(b"not an image").is_err());
        assert!(Image::decode(b"").is_err());
    }

    #[test]
    fn constructor_invariants() {
        assert!(Image::new(2, 2, vec![0; 11]).is_err());
        assert!(Image::new(0, 2, vec![]).is_err());
    }

    proptest! {
        #[test]
        fn ppm_round_trip(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
            let mut rng = crate::rng::Rng::new(seed);
            let pixels = (0..w * h * 3).map(|_| rng.below(256) as u8).collect();
            let img = Image::new(w, h, pixels).unwrap();
            let encoded = img.encode_ppm();
            let back = Image::decode(&encoded).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(back.encode_ppm(), encoded);
        }
    }
}
