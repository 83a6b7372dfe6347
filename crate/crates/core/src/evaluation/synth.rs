//! Synthetic paired face/palm datasets.
//!
//! Each subject gets an independent face prototype and palm prototype: a
//! smooth pattern built from a few random low-frequency 2-D cosines, centred at
//! mid-gray with peak deviation `contrast / 2`. A prototype blends a pattern
//! shared by every subject of that modality with the subject's own pattern, so
//! subjects resemble each other the way real faces (or palms) do. Samples add
//! i.i.d. Gaussian pixel noise, are clamped to `[0, 1]` and quantized to 8
//! bits.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::EvalError;
use crate::imaging::{ImageMatrix, RawImage};
use crate::Modality;

const WAVES: usize = 4;
/// Weight of the subject-specific pattern against the shared modality pattern.
const IDENTITY_SHARE: f64 = 0.5;
const MAX_FREQUENCY: i32 = 3;
const FACE_NOISE_STREAM: u64 = 1;
const PALM_NOISE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub subjects: usize,
    pub samples_per_subject: usize,
    /// `(rows, cols)`.
    pub image_size: (usize, usize),
    pub contrast: f64,
    /// Per-pixel noise standard deviation.
    pub sigma: f64,
    /// Draw palm noise independently of face noise. When false both
    /// modalities of a sample share one noise field.
    pub independent_noise: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            subjects: 40,
            samples_per_subject: 6,
            image_size: (32, 32),
            contrast: 0.5,
            sigma: 0.08,
            independent_noise: true,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let fail = |msg: String| Err(EvalError::InvalidSpec(msg));
        if self.subjects < 2 {
            return fail(format!("need at least 2 subjects, got {}", self.subjects));
        }
        if self.samples_per_subject < 2 {
            return fail(format!(
                "need at least 2 samples per subject, got {}",
                self.samples_per_subject
            ));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return fail(format!("image size {:?} has a zero side", self.image_size));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return fail(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(0.0..=1.0).contains(&self.contrast) {
            return fail(format!("contrast {} outside [0, 1]", self.contrast));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    /// Face and palm samples are paired by index.
    pub face: Vec<RawImage>,
    pub palm: Vec<RawImage>,
}

impl Subject {
    pub fn samples(&self, modality: Modality) -> &[RawImage] {
        match modality {
            Modality::Face => &self.face,
            Modality::Palm => &self.palm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub subjects: Vec<Subject>,
}

impl Dataset {
    pub fn sample_count(&self) -> usize {
        self.subjects
            .iter()
            .map(|s| s.face.len() + s.palm.len())
            .sum()
    }
}

struct Wave {
    amplitude: f64,
    fy: f64,
    fx: f64,
    phase: f64,
}

fn draw_waves(rng: &mut ChaCha8Rng) -> Vec<Wave> {
    (0..WAVES)
        .map(|_| {
            let (fy, fx) = loop {
                let fy = rng.random_range(-MAX_FREQUENCY..=MAX_FREQUENCY);
                let fx = rng.random_range(0..=MAX_FREQUENCY);
                if fy != 0 || fx != 0 {
                    break (fy, fx);
                }
            };
            Wave {
                amplitude: rng.random_range(0.5..1.0),
                fy: fy as f64,
                fx: fx as f64,
                phase: rng.random_range(0.0..TAU),
            }
        })
        .collect()
}

/// Sum of the waves on the pixel grid, scaled so its peak magnitude is at most 1.
fn wave_field(waves: &[Wave], rows: usize, cols: usize) -> Vec<f64> {
    let norm: f64 = waves.iter().map(|w| w.amplitude).sum();
    let mut field = Vec::with_capacity(rows * cols);
    for y in 0..rows {
        for x in 0..cols {
            let v: f64 = waves
                .iter()
                .map(|w| {
                    w.amplitude
                        * (TAU * (w.fy * y as f64 / rows as f64 + w.fx * x as f64 / cols as f64)
                            + w.phase)
                            .cos()
                })
                .sum();
            field.push(v / norm);
        }
    }
    field
}

/// Mixes the modality's shared pattern with a subject-specific one.
fn prototype(
    shared: &[f64],
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    contrast: f64,
) -> Vec<f64> {
    let own = wave_field(&draw_waves(rng), rows, cols);
    shared
        .iter()
        .zip(&own)
        .map(|(s, o)| 0.5 + 0.5 * contrast * ((1.0 - IDENTITY_SHARE) * s + IDENTITY_SHARE * o))
        .collect()
}

fn render(proto: &[f64], noise: &[f64], rows: usize, cols: usize) -> RawImage {
    let data = proto
        .iter()
        .zip(noise)
        .map(|(p, n)| (p + n).clamp(0.0, 1.0))
        .collect();
    let m = ImageMatrix::new(rows, cols, data).expect("clamped values lie in [0, 1]");
    RawImage::from_matrix(&m)
}

/// Deterministic in `spec.seed`.
pub fn synthesize_dataset(spec: &SynthSpec) -> Result<Dataset, EvalError> {
    spec.validate()?;
    let (rows, cols) = spec.image_size;
    let pixels = rows * cols;
    let normal = Normal::new(0.0, spec.sigma).map_err(|e| EvalError::InvalidSpec(e.to_string()))?;

    let mut proto_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut face_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    face_rng.set_stream(FACE_NOISE_STREAM);
    let mut palm_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    palm_rng.set_stream(PALM_NOISE_STREAM);

    let shared_face = wave_field(&draw_waves(&mut proto_rng), rows, cols);
    let shared_palm = wave_field(&draw_waves(&mut proto_rng), rows, cols);

    let width = (spec.subjects - 1).to_string().len().max(3);
    let mut subjects = Vec::with_capacity(spec.subjects);
    for s in 0..spec.subjects {
        let face_proto = prototype(&shared_face, &mut proto_rng, rows, cols, spec.contrast);
        let palm_proto = prototype(&shared_palm, &mut proto_rng, rows, cols, spec.contrast);
        let mut face = Vec::with_capacity(spec.samples_per_subject);
        let mut palm = Vec::with_capacity(spec.samples_per_subject);
        for _ in 0..spec.samples_per_subject {
            let face_noise: Vec<f64> = (0..pixels).map(|_| normal.sample(&mut face_rng)).collect();
            let palm_noise: Vec<f64> = if spec.independent_noise {
                (0..pixels).map(|_| normal.sample(&mut palm_rng)).collect()
            } else {
                face_noise.clone()
            };
            face.push(render(&face_proto, &face_noise, rows, cols));
            palm.push(render(&palm_proto, &palm_noise, rows, cols));
        }
        subjects.push(Subject {
            id: format!("s{s:0width$}"),
            face,
            palm,
        });
    }
    Ok(Dataset { subjects })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            subjects: 3,
            samples_per_subject: 2,
            image_size: (8, 8),
            ..SynthSpec::default()
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(
            synthesize_dataset(&small()).unwrap(),
            synthesize_dataset(&small()).unwrap()
        );
        let other = SynthSpec { seed: 2, ..small() };
        assert_ne!(
            synthesize_dataset(&small()).unwrap(),
            synthesize_dataset(&other).unwrap()
        );
    }

    #[test]
    fn noiseless_limit_reproduces_prototype() {
        let spec = SynthSpec {
            sigma: 1e-12,
            ..small()
        };
        let ds = synthesize_dataset(&spec).unwrap();
        for subject in &ds.subjects {
            for samples in [&subject.face, &subject.palm] {
                assert!(samples.iter().all(|s| s == &samples[0]));
            }
        }
        assert_ne!(ds.subjects[0].face[0], ds.subjects[1].face[0]);
        assert_ne!(ds.subjects[0].face[0], ds.subjects[0].palm[0]);
    }

    #[test]
    fn shape_and_labels() {
        let ds = synthesize_dataset(&SynthSpec {
            subjects: 12,
            ..small()
        })
        .unwrap();
        assert_eq!(ds.subjects.len(), 12);
        assert_eq!(ds.subjects[0].id, "s000");
        assert_eq!(ds.subjects[11].id, "s011");
        assert_eq!(ds.sample_count(), 12 * 2 * 2);
        let img = &ds.subjects[3].palm[1];
        assert_eq!((img.height(), img.width(), img.channels()), (8, 8, 1));
    }

    #[test]
    fn shared_noise_flag() {
        // identical prototypes are not guaranteed, but the noise field is shared:
        // differences between two samples of a subject match across modalities
        // wherever no clamping occurred
        let spec = SynthSpec {
            independent_noise: false,
            contrast: 0.2,
            sigma: 0.01,
            ..small()
        };
        let ds = synthesize_dataset(&spec).unwrap();
        let s = &ds.subjects[0];
        let diff = |a: &RawImage, b: &RawImage| -> Vec<i32> {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| *x as i32 - *y as i32)
                .collect()
        };
        let df = diff(&s.face[0], &s.face[1]);
        let dp = diff(&s.palm[0], &s.palm[1]);
        let close = df
            .iter()
            .zip(&dp)
            .filter(|(a, b)| (*a - *b).abs() <= 1)
            .count();
        assert_eq!(close, df.len());
    }

    #[test]
    fn spec_validation() {
        for bad in [
            SynthSpec {
                subjects: 1,
                ..small()
            },
            SynthSpec {
                samples_per_subject: 1,
                ..small()
            },
            SynthSpec {
                sigma: 0.0,
                ..small()
            },
            SynthSpec {
                image_size: (0, 4),
                ..small()
            },
        ] {
            assert!(matches!(
                synthesize_dataset(&bad),
                Err(EvalError::InvalidSpec(_))
            ));
        }
    }
}
