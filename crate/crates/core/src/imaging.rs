//! Image loading and the per-sample preprocessing chain.
//!
//! Raw samples come in as binary PGM (`P5`) or PPM (`P6`) with a max value of
//! 255. Preprocessing turns them into an [`ImageMatrix`] of the canonical size:
//!
//! ```text
//! RawImage -> grayscale -> bilinear resize -> [palm only: equalize -> standardize]
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::Modality;

pub const DEFAULT_CANONICAL_SIZE: (usize, usize) = (32, 32);

/// ITU-R BT.601 luma weights.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
const HISTOGRAM_BINS: usize = 256;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(u8),
    #[error("pixel buffer has {found} bytes, expected {expected}")]
    BufferSize { expected: usize, found: usize },
    #[error("image dimensions must be positive, got {rows}x{cols}")]
    ZeroDimension { rows: usize, cols: usize },
    #[error("intensity {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("malformed netpbm header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("netpbm payload truncated: expected {expected} bytes after header, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("image is {found:?}, expected {expected:?}")]
    SizeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// An 8-bit image as read from disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    width: usize,
    height: usize,
    channels: u8,
    data: Vec<u8>,
}

impl RawImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: u8,
        data: Vec<u8>,
    ) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::UnsupportedChannels(channels));
        }
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension {
                rows: height,
                cols: width,
            });
        }
        let expected = width * height * channels as usize;
        if data.len() != expected {
            return Err(ImageError::BufferSize {
                expected,
                found: data.len(),
            });
        }
        Ok(RawImage {
            width,
            height,
            channels,
            data,
        })
    }

    /// Quantizes a `[0, 1]` matrix to a single-channel 8-bit image.
    pub fn from_matrix(m: &ImageMatrix) -> Self {
        let data = m
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        RawImage {
            width: m.cols,
            height: m.rows,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Parses a binary PGM (`P5`) or PPM (`P6`) image with max value 255.
    pub fn decode_netpbm(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut cursor = HeaderCursor { bytes, pos: 0 };
        let magic = cursor.token()?;
        let channels = match magic.as_slice() {
            b"P5" => 1,
            b"P6" => 3,
            _ => {
                return Err(ImageError::MalformedHeader {
                    offset: 0,
                    reason: format!("unknown magic {:?}", String::from_utf8_lossy(&magic)),
                })
            }
        };
        let width = cursor.number("width")?;
        let height = cursor.number("height")?;
        cursor.skip_whitespace_and_comments();
        let maxval_offset = cursor.pos;
        let maxval = cursor.number("max value")?;
        if maxval != 255 {
            return Err(ImageError::MalformedHeader {
                offset: maxval_offset,
                reason: format!("max value {maxval} unsupported (expected 255)"),
            });
        }
        // exactly one whitespace byte separates the header from the raster
        match bytes.get(cursor.pos) {
            Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
            _ => {
                return Err(ImageError::MalformedHeader {
                    offset: cursor.pos,
                    reason: "expected whitespace before raster".into(),
                })
            }
        }
        if width == 0 || height == 0 {
            return Err(ImageError::MalformedHeader {
                offset: 2,
                reason: format!("zero dimension {width}x{height}"),
            });
        }
        let expected = width * height * channels as usize;
        let payload = &bytes[cursor.pos..];
        if payload.len() < expected {
            return Err(ImageError::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        RawImage::new(width, height, channels, payload[..expected].to_vec())
    }

    pub fn encode_netpbm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode_netpbm(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        let io_err = |source| ImageError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut file = fs::File::create(path).map_err(io_err)?;
        file.write_all(&self.encode_netpbm()).map_err(io_err)
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<Vec<u8>, ImageError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::MalformedHeader {
                offset: start,
                reason: "unexpected end of header".into(),
            });
        }
        Ok(self.bytes[start..self.pos].to_vec())
    }

    fn number(&mut self, what: &str) -> Result<usize, ImageError> {
        self.skip_whitespace_and_comments();
        let offset = self.pos;
        let tok = self.token()?;
        std::str::from_utf8(&tok)
            .ok()
            .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::MalformedHeader {
                offset,
                reason: format!("invalid {what} {:?}", String::from_utf8_lossy(&tok)),
            })
    }
}

/// Row-major grayscale intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ImageMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if rows == 0 || cols == 0 {
            return Err(ImageError::ZeroDimension { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(ImageError::BufferSize {
                expected: rows * cols,
                found: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImageError::OutOfRange { index, value });
        }
        Ok(ImageMatrix { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

pub fn to_grayscale(img: &RawImage) -> ImageMatrix {
    let data = match img.channels {
        1 => img.data.iter().map(|&b| b as f64 / 255.0).collect(),
        _ => img
            .data
            .chunks_exact(3)
            .map(|px| {
                let y = LUMA[0] * px[0] as f64 + LUMA[1] * px[1] as f64 + LUMA[2] * px[2] as f64;
                (y / 255.0).clamp(0.0, 1.0)
            })
            .collect(),
    };
    ImageMatrix {
        rows: img.height,
        cols: img.width,
        data,
    }
}

/// Bilinear resampling with pixel-center alignment: output pixel `i` samples
/// the source at `(i + 0.5) * in / out - 0.5`, clamped to the border.
pub fn resize(
    img: &ImageMatrix,
    out_rows: usize,
    out_cols: usize,
) -> Result<ImageMatrix, ImageError> {
    if out_rows == 0 || out_cols == 0 {
        return Err(ImageError::ZeroDimension {
            rows: out_rows,
            cols: out_cols,
        });
    }
    if img.shape() == (out_rows, out_cols) {
        return Ok(img.clone());
    }
    let axis = |out: usize, len: usize| -> Vec<(usize, usize, f64)> {
        let scale = len as f64 / out as f64;
        (0..out)
            .map(|i| {
                let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(len - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ys = axis(out_rows, img.rows);
    let xs = axis(out_cols, img.cols);
    let mut data = Vec::with_capacity(out_rows * out_cols);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = img.get(y0, x0) * (1.0 - fx) + img.get(y0, x1) * fx;
            let bottom = img.get(y1, x0) * (1.0 - fx) + img.get(y1, x1) * fx;
            data.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    Ok(ImageMatrix {
        rows: out_rows,
        cols: out_cols,
        data,
    })
}

/// Maps each intensity to the cumulative fraction of pixels at or below its
/// 256-level bin.
pub fn equalize_histogram(img: &ImageMatrix) -> ImageMatrix {
    let bin = |v: f64| ((v * (HISTOGRAM_BINS - 1) as f64).round() as usize).min(HISTOGRAM_BINS - 1);
    let mut histogram = [0usize; HISTOGRAM_BINS];
    for &v in &img.data {
        histogram[bin(v)] += 1;
    }
    let total = img.data.len() as f64;
    let mut cdf = [0.0; HISTOGRAM_BINS];
    let mut running = 0usize;
    for (c, h) in cdf.iter_mut().zip(histogram) {
        running += h;
        *c = running as f64 / total;
    }
    ImageMatrix {
        rows: img.rows,
        cols: img.cols,
        data: img.data.iter().map(|&v| cdf[bin(v)]).collect(),
    }
}

/// Zero-mean, unit-variance standardization followed by min-max rescaling to
/// `[0, 1]`. Returns `None` for a constant image.
pub fn standardize(img: &ImageMatrix) -> Option<ImageMatrix> {
    let n = img.data.len() as f64;
    let mean = img.data.iter().sum::<f64>() / n;
    let var = img
        .data
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    if var <= 0.0 {
        return None;
    }
    let sd = var.sqrt();
    let z: Vec<f64> = img.data.iter().map(|v| (v - mean) / sd).collect();
    let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return None;
    }
    Some(ImageMatrix {
        rows: img.rows,
        cols: img.cols,
        data: z
            .iter()
            .map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessConfig {
    pub canonical_size: (usize, usize),
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            canonical_size: DEFAULT_CANONICAL_SIZE,
        }
    }
}

pub fn preprocess(
    img: &RawImage,
    modality: Modality,
    config: &PreprocessConfig,
) -> Result<ImageMatrix, ImageError> {
    let (rows, cols) = config.canonical_size;
    let resized = resize(&to_grayscale(img), rows, cols)?;
    Ok(match modality {
        Modality::Face => resized,
        Modality::Palm => {
            let equalized = equalize_histogram(&resized);
            standardize(&equalized).unwrap_or(equalized)
        }
    })
}

pub fn flatten(img: &ImageMatrix) -> Vec<f64> {
    img.data.clone()
}

pub fn unflatten(values: &[f64], rows: usize, cols: usize) -> Result<ImageMatrix, ImageError> {
    ImageMatrix::new(rows, cols, values.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(width: usize, height: usize, px: [u8; 3]) -> RawImage {
        RawImage::new(width, height, 3, px.repeat(width * height)).unwrap()
    }

    #[test]
    fn grayscale_examples() {
        let black = to_grayscale(&rgb(4, 3, [0, 0, 0]));
        assert!(black.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(black.shape(), (3, 4));

        let white = to_grayscale(&rgb(2, 2, [255, 255, 255]));
        assert!(white.as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-12));

        let red = to_grayscale(&rgb(2, 2, [255, 0, 0]));
        assert!(red.as_slice().iter().all(|&v| (v - 0.299).abs() < 1e-12));

        let gray = to_grayscale(&RawImage::new(1, 1, 1, vec![51]).unwrap());
        assert_eq!(gray.as_slice(), &[0.2]);
    }

    #[test]
    fn raw_image_validation() {
        assert!(matches!(
            RawImage::new(2, 2, 4, vec![0; 16]),
            Err(ImageError::UnsupportedChannels(4))
        ));
        assert!(matches!(
            RawImage::new(2, 2, 1, vec![0; 3]),
            Err(ImageError::BufferSize {
                expected: 4,
                found: 3
            })
        ));
    }

    #[test]
    fn resize_identity_is_bit_exact() {
        let data: Vec<f64> = (0..64 * 64).map(|i| (i % 97) as f64 / 96.0).collect();
        let img = ImageMatrix::new(64, 64, data).unwrap();
        assert_eq!(resize(&img, 64, 64).unwrap(), img);
    }

    #[test]
    fn resize_preserves_constant_field() {
        let img = ImageMatrix::filled(7, 5, 0.5).unwrap();
        for (r, c) in [(1, 1), (3, 9), (32, 32), (13, 2)] {
            let out = resize(&img, r, c).unwrap();
            assert!(out.as_slice().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        }
        assert!(matches!(
            resize(&img, 0, 3),
            Err(ImageError::ZeroDimension { .. })
        ));
    }

    #[test]
    fn resize_checkerboard_midpoints() {
        // f(x, y) = x(1-y) + y(1-x) over the 2x2 checkerboard, x,y in [0,1]
        let board = ImageMatrix::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let up = resize(&board, 4, 4).unwrap();
        // interior samples land at 0.25 / 0.75: f = 0.375 on the diagonal, 0.625 off it
        assert!((up.get(1, 1) - 0.375).abs() < 1e-12);
        assert!((up.get(1, 2) - 0.625).abs() < 1e-12);
        assert!((up.get(2, 1) - 0.625).abs() < 1e-12);
        assert!((up.get(2, 2) - 0.375).abs() < 1e-12);
        let centre_mean = (up.get(1, 1) + up.get(1, 2) + up.get(2, 1) + up.get(2, 2)) / 4.0;
        assert!((centre_mean - 0.5).abs() < 1e-12);
        // 2 -> 3 puts the middle sample exactly on the source midpoint
        let mid = resize(&board, 3, 3).unwrap();
        assert!((mid.get(1, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn preprocess_constant_images() {
        let config = PreprocessConfig::default();
        let raw = RawImage::new(10, 12, 1, vec![77; 120]).unwrap();
        let face = preprocess(&raw, Modality::Face, &config).unwrap();
        assert_eq!(face.shape(), (32, 32));
        let v = face.get(0, 0);
        assert!(face.as_slice().iter().all(|&x| x == v));

        let palm = preprocess(&raw, Modality::Palm, &config).unwrap();
        assert_eq!(palm.shape(), (32, 32));
        assert!(palm.as_slice().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn two_level_palm_becomes_binary() {
        // 0.2 -> cdf 0.5, 0.8 -> cdf 1.0; standardization + rescale -> {0, 1}
        let half = |v: u8| vec![v; 32 * 16];
        let mut data = half(51);
        data.extend(half(204));
        let raw = RawImage::new(32, 32, 1, data).unwrap();
        let palm = preprocess(&raw, Modality::Palm, &PreprocessConfig::default()).unwrap();
        let zeros = palm.as_slice().iter().filter(|&&v| v == 0.0).count();
        let ones = palm.as_slice().iter().filter(|&&v| v == 1.0).count();
        assert_eq!((zeros, ones), (512, 512));
    }

    #[test]
    fn preprocess_shape_contract() {
        let config = PreprocessConfig {
            canonical_size: (16, 8),
        };
        for (w, h) in [(3, 5), (40, 17), (16, 8)] {
            let data: Vec<u8> = (0..w * h * 3).map(|i| (i * 37 % 256) as u8).collect();
            let raw = RawImage::new(w, h, 3, data).unwrap();
            for m in Modality::ALL {
                let out = preprocess(&raw, m, &config).unwrap();
                assert_eq!(out.shape(), (16, 8));
                assert!(out.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn flatten_examples() {
        let m = ImageMatrix::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(flatten(&m), vec![0.1, 0.2, 0.3, 0.4]);
        let one = ImageMatrix::new(1, 1, vec![0.7]).unwrap();
        assert_eq!(flatten(&one), vec![0.7]);
        assert_eq!(unflatten(&flatten(&m), 2, 2).unwrap(), m);
    }

    #[test]
    fn image_matrix_rejects_out_of_range() {
        assert!(matches!(
            ImageMatrix::new(1, 2, vec![0.5, 1.5]),
            Err(ImageError::OutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn netpbm_round_trip_and_comments() {
        let raw = RawImage::new(3, 2, 3, (0..18).collect()).unwrap();
        assert_eq!(RawImage::decode_netpbm(&raw.encode_netpbm()).unwrap(), raw);

        let mut bytes = b"P5\n# a comment\n2 # trailing\n1\n255\n".to_vec();
        bytes.extend([10, 200]);
        let img = RawImage::decode_netpbm(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 1, 1));
        assert_eq!(img.data(), &[10, 200]);
    }

    #[test]
    fn netpbm_errors_report_offsets() {
        match RawImage::decode_netpbm(b"P3\n1 1\n255\n0 0 0") {
            Err(ImageError::MalformedHeader { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        match RawImage::decode_netpbm(b"P5\n4 x\n255\n") {
            Err(ImageError::MalformedHeader { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        match RawImage::decode_netpbm(b"P5\n1 1\n65535\n\0\0") {
            Err(ImageError::MalformedHeader { offset, .. }) => assert_eq!(offset, 7),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            RawImage::decode_netpbm(b"P5\n2 2\n255\n\0"),
            Err(ImageError::TruncatedPayload {
                expected: 4,
                found: 1
            })
        ));
        assert!(matches!(
            RawImage::decode_netpbm(b"P5\n2"),
            Err(ImageError::MalformedHeader { .. })
        ));
    }

    #[test]
    fn preprocessing_is_deterministic() {
        let data: Vec<u8> = (0..50 * 40).map(|i| ((i * 7919) % 251) as u8).collect();
        let raw = RawImage::new(50, 40, 1, data).unwrap();
        let config = PreprocessConfig::default();
        for m in Modality::ALL {
            assert_eq!(
                preprocess(&raw, m, &config).unwrap(),
                preprocess(&raw, m, &config).unwrap()
            );
        }
    }
}
