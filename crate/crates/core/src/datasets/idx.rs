//! IDX image/label files (the MNIST container format) and a synthetic
//! digit generator producing the same raw layout.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw 8-bit images, row-major per image, with one label byte each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawImages {
    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn pixel_dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let d = self.pixel_dim();
        &self.pixels[i * d..(i + 1) * d]
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::TruncatedFile {
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

/// Parses an images file; returns `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Overflow("IDX payload size".into()))?;
    let payload = &bytes[16..];
    if payload.len() < len {
        return Err(Error::TruncatedFile {
            expected: len,
            found: payload.len(),
        });
    }
    Ok((count, rows, cols, payload[..len].to_vec()))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::TruncatedFile {
            expected: count,
            found: payload.len(),
        });
    }
    Ok(payload[..count].to_vec())
}

/// Reads a pair of IDX files.
pub fn load_idx(path_images: impl AsRef<Path>, path_labels: impl AsRef<Path>) -> Result<RawImages> {
    let (count, rows, cols, pixels) = parse_images(&fs::read(path_images)?)?;
    let labels = parse_labels(&fs::read(path_labels)?)?;
    if labels.len() != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    Ok(RawImages {
        rows,
        cols,
        pixels,
        labels,
    })
}

pub fn encode_images(raw: &RawImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + raw.pixels.len());
    for v in [
        IMAGES_MAGIC,
        raw.count() as u32,
        raw.rows as u32,
        raw.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&raw.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx(
    raw: &RawImages,
    path_images: impl AsRef<Path>,
    path_labels: impl AsRef<Path>,
) -> Result<()> {
    fs::write(path_images, encode_images(raw))?;
    fs::write(path_labels, encode_labels(&raw.labels))?;
    Ok(())
}

// Stroke skeletons on a 7x7 grid, one per digit; endpoints of line segments.
const STROKES: [&[(u8, u8, u8, u8)]; 10] = [
    &[(1, 1, 5, 1), (5, 1, 5, 6), (5, 6, 1, 6), (1, 6, 1, 1)],
    &[(3, 0, 3, 6), (2, 1, 3, 0)],
    &[(1, 1, 5, 1), (5, 1, 5, 3), (5, 3, 1, 6), (1, 6, 5, 6)],
    &[(1, 0, 5, 0), (5, 0, 3, 3), (3, 3, 5, 5), (5, 5, 1, 6)],
    &[(4, 0, 1, 4), (1, 4, 5, 4), (4, 0, 4, 6)],
    &[(5, 0, 1, 0), (1, 0, 1, 3), (1, 3, 5, 4), (5, 4, 1, 6)],
    &[
        (4, 0, 1, 3),
        (1, 3, 1, 6),
        (1, 6, 5, 6),
        (5, 6, 5, 3),
        (5, 3, 1, 3),
    ],
    &[(1, 0, 5, 0), (5, 0, 2, 6)],
    &[(1, 0, 5, 0), (5, 0, 1, 6), (1, 6, 5, 6), (5, 6, 1, 0)],
    &[(5, 3, 1, 3), (1, 3, 1, 0), (1, 0, 5, 0), (5, 0, 5, 6)],
];

/// Deterministic 28×28 stand-in for handwritten digits: per-digit stroke
/// prototypes with random shifts, slants, stroke widths and pixel noise.
/// Labels cycle through 0–9 so every class is equally represented.
pub fn synthetic_digits(count: usize, seed: u64) -> RawImages {
    const SIDE: usize = 28;
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, 18.0).expect("valid normal");
    let mut pixels = vec![0u8; count * SIDE * SIDE];
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let digit = (i % 10) as u8;
        labels.push(digit);
        let dx = rng.random_range(-2.0..2.0);
        let dy = rng.random_range(-2.0..2.0);
        let slant = rng.random_range(-0.25..0.25);
        let scale = rng.random_range(2.6..3.4);
        let width = rng.random_range(0.9..1.8);
        let img = &mut pixels[i * SIDE * SIDE..(i + 1) * SIDE * SIDE];
        for r in 0..SIDE {
            for c in 0..SIDE {
                let (px, py) = (c as f64, r as f64);
                let mut best = f64::INFINITY;
                for &(x0, y0, x1, y1) in STROKES[digit as usize] {
                    let map = |x: u8, y: u8| {
                        let y = y as f64 * scale + 4.0 + dy;
                        (x as f64 * scale + 4.0 + dx + slant * (14.0 - y), y)
                    };
                    let (ax, ay) = map(x0, y0);
                    let (bx, by) = map(x1, y1);
                    best = best.min(segment_distance(px, py, ax, ay, bx, by));
                }
                let ink = 255.0 * (1.0 - ((best - width) / 1.2).clamp(0.0, 1.0));
                let v: f64 = ink + noise.sample(&mut rng);
                img[r * SIDE + c] = v.clamp(0.0, 255.0).round() as u8;
            }
        }
    }
    RawImages {
        rows: SIDE,
        cols: SIDE,
        pixels,
        labels,
    }
}

fn segment_distance(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (vx, vy) = (bx - ax, by - ay);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        (((px - ax) * vx + (py - ay) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (ax + t * vx - px, ay + t * vy - py);
    (qx * qx + qy * qy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        let images = vec![
            0, 0, 8, 3, // magic
            0, 0, 0, 2, // count
            0, 0, 0, 2, // rows
            0, 0, 0, 2, // cols
            0, 127, 128, 255, // image 0
            1, 2, 3, 4, // image 1
        ];
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        (images, labels)
    }

    #[test]
    fn parses_hand_written_fixture() {
        let (images, labels) = fixture();
        let (count, rows, cols, pixels) = parse_images(&images).unwrap();
        assert_eq!((count, rows, cols), (2, 2, 2));
        assert_eq!(pixels, vec![0, 127, 128, 255, 1, 2, 3, 4]);
        assert_eq!(parse_labels(&labels).unwrap(), vec![7, 3]);
    }

    #[test]
    fn rejects_malformed_headers() {
        let (mut images, labels) = fixture();
        assert!(matches!(
            parse_labels(&images),
            Err(Error::BadMagic {
                expected: LABELS_MAGIC,
                ..
            })
        ));
        images[7] = 3;
        assert!(matches!(
            parse_images(&images),
            Err(Error::TruncatedFile {
                expected: 12,
                found: 8
            })
        ));
        assert!(matches!(
            parse_labels(&labels[..9]),
            Err(Error::TruncatedFile { .. })
        ));
        assert!(matches!(
            parse_images(&[0, 0, 8]),
            Err(Error::TruncatedFile { .. })
        ));
    }

    #[test]
    fn synthetic_digits_round_trip_through_encoding() {
        let raw = synthetic_digits(20, 3);
        assert_eq!(raw.pixel_dim(), 784);
        let (count, rows, cols, pixels) = parse_images(&encode_images(&raw)).unwrap();
        assert_eq!((count, rows, cols), (20, 28, 28));
        assert_eq!(pixels, raw.pixels);
        assert_eq!(
            parse_labels(&encode_labels(&raw.labels)).unwrap(),
            raw.labels
        );
        assert_eq!(synthetic_digits(20, 3), raw);
        // digits differ from each other on average
        let d: i64 = raw
            .image(0)
            .iter()
            .zip(raw.image(1))
            .map(|(&a, &b)| (a as i64 - b as i64).abs())
            .sum();
        assert!(d > 1000);
    }
}
