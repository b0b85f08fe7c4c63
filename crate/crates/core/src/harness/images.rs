//! Procedural test images and binary PPM (P6) I/O.

use crate::numerics::{SplitMix64, Tensor};
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PpmError {
    #[error("bad magic at byte {offset}: expected P6, found {found:?}")]
    BadMagic { offset: usize, found: String },
    #[error("malformed header at byte {offset}: {reason}")]
    Header { offset: usize, reason: String },
    #[error("truncated pixel data at byte {offset}: expected {expected} bytes, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("image must have 3 channels, got {0}")]
    Channels(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImageKind {
    Gradient,
    Checkerboard,
    GaussianBlobs,
}

impl ImageKind {
    pub const ALL: [ImageKind; 3] = [
        ImageKind::Gradient,
        ImageKind::Checkerboard,
        ImageKind::GaussianBlobs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ImageKind::Gradient => "gradient",
            ImageKind::Checkerboard => "checkerboard",
            ImageKind::GaussianBlobs => "gaussian_blobs",
        }
    }
}

impl FromStr for ImageKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gradient" => Ok(ImageKind::Gradient),
            "checkerboard" => Ok(ImageKind::Checkerboard),
            "gaussian_blobs" | "blobs" => Ok(ImageKind::GaussianBlobs),
            _ => Err(format!("unknown image kind {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProceduralImage {
    pub kind: ImageKind,
    pub seed: u64,
    pub size: usize,
}

impl ProceduralImage {
    pub fn new(kind: ImageKind, seed: u64, size: usize) -> Self {
        Self { kind, seed, size }
    }

    pub fn render(&self) -> Tensor {
        // Mix the kind into the stream so equal seeds give unrelated images.
        let tag = self.kind as u64 + 1;
        let mut rng = SplitMix64::new(self.seed ^ tag.wrapping_mul(0xA076_1D64_78BD_642F));
        let n = self.size;
        let color = |rng: &mut SplitMix64| [rng.next_f64(), rng.next_f64(), rng.next_f64()];

        match self.kind {
            ImageKind::Gradient => {
                let a = color(&mut rng);
                let b = color(&mut rng);
                let theta = rng.uniform(0.0, std::f64::consts::TAU);
                let (dx, dy) = (theta.cos(), theta.sin());
                Tensor::from_fn(n, n, 3, |x, y, c| {
                    let u = (x as f64 + 0.5) / n as f64 - 0.5;
                    let v = (y as f64 + 0.5) / n as f64 - 0.5;
                    let t = ((u * dx + v * dy) / std::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0);
                    a[c] * (1.0 - t) + b[c] * t
                })
            }
            ImageKind::Checkerboard => {
                let a = color(&mut rng);
                let b = color(&mut rng);
                let period = 2 + (rng.next_u64() % 7) as usize;
                let (ox, oy) = (
                    (rng.next_u64() % period as u64) as usize,
                    (rng.next_u64() % period as u64) as usize,
                );
                Tensor::from_fn(n, n, 3, |x, y, c| {
                    if ((x + ox) / period + (y + oy) / period).is_multiple_of(2) {
                        a[c]
                    } else {
                        b[c]
                    }
                })
            }
            ImageKind::GaussianBlobs => {
                let bg = color(&mut rng);
                let count = 2 + (rng.next_u64() % 4) as usize;
                let blobs: Vec<_> = (0..count)
                    .map(|_| {
                        let cx = rng.uniform(0.0, n as f64);
                        let cy = rng.uniform(0.0, n as f64);
                        let sigma = rng.uniform(0.08, 0.25) * n as f64;
                        (cx, cy, sigma, color(&mut rng))
                    })
                    .collect();
                Tensor::from_fn(n, n, 3, |x, y, c| {
                    let mut v = bg[c];
                    for &(cx, cy, sigma, col) in &blobs {
                        let r2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                        let w = (-r2 / (2.0 * sigma * sigma)).exp();
                        v = v * (1.0 - w) + col[c] * w;
                    }
                    v.clamp(0.0, 1.0)
                })
            }
        }
    }
}

pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>, PpmError> {
    if image.channels() != 3 {
        return Err(PpmError::Channels(image.channels()));
    }
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, PpmError> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PpmError::Header {
                offset: start,
                reason: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PpmError::Header {
                offset: start,
                reason: format!("{what} out of range"),
            })
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor, PpmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(PpmError::BadMagic { offset: 0, found });
    }
    let mut r = HeaderReader { bytes, pos: 2 };
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval_at = r.pos;
    let maxval = r.number("maxval")?;
    if maxval != 255 {
        return Err(PpmError::Header {
            offset: maxval_at,
            reason: format!("maxval must be 255, got {maxval}"),
        });
    }
    if width == 0 || height == 0 {
        return Err(PpmError::Header {
            offset: 2,
            reason: "zero image dimension".into(),
        });
    }
    match bytes.get(r.pos) {
        Some(b' ' | b'\t' | b'\n' | b'\r') => r.pos += 1,
        _ => {
            return Err(PpmError::Header {
                offset: r.pos,
                reason: "expected a single whitespace byte after maxval".into(),
            })
        }
    }
    let expected = width * height * 3;
    let body = &bytes[r.pos..];
    if body.len() < expected {
        return Err(PpmError::Truncated {
            offset: r.pos,
            expected,
            found: body.len(),
        });
    }
    let data = body[..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Tensor::from_vec(width, height, 3, data).expect("shape checked above"))
}

pub fn save_ppm(image: &Tensor, path: impl AsRef<Path>) -> Result<(), PpmError> {
    std::fs::write(path, encode_ppm(image)?)?;
    Ok(())
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Tensor, PpmError> {
    decode_ppm(&std::fs::read(path)?)
}
