//! Per-modality eigen-subspace training and projection.
//!
//! Training follows the eigenface recipe: take the mean image, center every
//! sample, and find the leading eigenvectors of the covariance
//! `C = (1/N) * A * A^T` with `A = [phi_1 .. phi_N]`. The eigenvectors come
//! from the `N x N` Gram matrix (see [`snapshot_eigenvectors`]), so training
//! cost scales with the number of samples rather than the pixel count.
//!
//! A sample's feature vector is its coordinates in that eigenbasis,
//! `basis^T * (x - mean)`. In those coordinates the covariance quadratic form
//! is diagonal, and [`canonical_energy`] evaluates it as a weighted sum of
//! squares.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::eigencore::{snapshot_eigenvectors, EigenError};
use crate::imaging::{flatten, ImageMatrix};
use crate::Modality;

pub const DEFAULT_ENERGY: f64 = 0.95;
const ORTHONORMALITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubspaceError {
    #[error("need at least {needed} images, got {found}")]
    TooFewImages { needed: usize, found: usize },
    #[error("training images have zero covariance; no usable eigenvectors")]
    NoVariance,
    #[error("vector length {found} does not match expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("image is {found:?}, model expects {expected:?}")]
    SizeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("feature is tagged {found}, model is {expected}")]
    ModalityMismatch { expected: Modality, found: Modality },
    #[error("invalid component policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

/// How many eigenvectors to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComponentPolicy {
    /// Keep exactly this many (capped at the available rank).
    Fixed(usize),
    /// Keep the smallest prefix whose eigenvalues reach this fraction of the total.
    Energy(f64),
}

impl Default for ComponentPolicy {
    fn default() -> Self {
        ComponentPolicy::Energy(DEFAULT_ENERGY)
    }
}

impl ComponentPolicy {
    fn validate(self) -> Result<(), SubspaceError> {
        match self {
            ComponentPolicy::Fixed(0) => Err(SubspaceError::InvalidPolicy(
                "fixed K must be at least 1".into(),
            )),
            ComponentPolicy::Energy(f) if !(f > 0.0 && f <= 1.0) => Err(
                SubspaceError::InvalidPolicy(format!("energy fraction {f} outside (0, 1]")),
            ),
            _ => Ok(()),
        }
    }

    fn select(self, eigenvalues: &[f64]) -> usize {
        match self {
            ComponentPolicy::Fixed(k) => k.min(eigenvalues.len()),
            ComponentPolicy::Energy(fraction) => {
                let total: f64 = eigenvalues.iter().sum();
                let mut running = 0.0;
                for (i, l) in eigenvalues.iter().enumerate() {
                    running += l;
                    if running >= fraction * total {
                        return i + 1;
                    }
                }
                eigenvalues.len()
            }
        }
    }
}

/// Projection coefficients of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub modality: Modality,
    pub coords: Vec<f64>,
}

impl FeatureVector {
    pub fn new(modality: Modality, coords: Vec<f64>) -> Self {
        FeatureVector { modality, coords }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    modality: Modality,
    mean: Vec<f64>,
    eigenvalues: Vec<f64>,
    basis: DMatrix<f64>,
    canonical_size: (usize, usize),
}

impl SubspaceModel {
    /// Assembles a model from its parts, checking every structural invariant.
    pub fn new(
        modality: Modality,
        mean: Vec<f64>,
        eigenvalues: Vec<f64>,
        basis: DMatrix<f64>,
        canonical_size: (usize, usize),
    ) -> Result<Self, SubspaceError> {
        let n = canonical_size.0 * canonical_size.1;
        if n == 0 {
            return Err(SubspaceError::InvalidModel(
                "canonical size has a zero side".into(),
            ));
        }
        if mean.len() != n {
            return Err(SubspaceError::LengthMismatch {
                expected: n,
                found: mean.len(),
            });
        }
        let k = eigenvalues.len();
        if k == 0 {
            return Err(SubspaceError::InvalidModel(
                "model has no components".into(),
            ));
        }
        if basis.shape() != (n, k) {
            return Err(SubspaceError::InvalidModel(format!(
                "basis is {:?}, expected ({n}, {k})",
                basis.shape()
            )));
        }
        if eigenvalues.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(SubspaceError::InvalidModel(
                "eigenvalues must be finite and positive".into(),
            ));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(SubspaceError::InvalidModel(
                "eigenvalues must be descending".into(),
            ));
        }
        if mean.iter().chain(basis.iter()).any(|x| !x.is_finite()) {
            return Err(SubspaceError::InvalidModel(
                "non-finite mean or basis entry".into(),
            ));
        }
        let gram = basis.transpose() * &basis;
        let gap = (gram - DMatrix::<f64>::identity(k, k)).amax();
        if gap > ORTHONORMALITY_TOLERANCE {
            return Err(SubspaceError::InvalidModel(format!(
                "basis not orthonormal (gap {gap:e})"
            )));
        }
        Ok(SubspaceModel {
            modality,
            mean,
            eigenvalues,
            basis,
            canonical_size,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn canonical_size(&self) -> (usize, usize) {
        self.canonical_size
    }

    /// Pixel count `n`.
    pub fn pixels(&self) -> usize {
        self.mean.len()
    }

    /// Feature dimension `K`.
    pub fn components(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// What a training run saw and kept.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub modality: Modality,
    pub pixels: usize,
    pub samples: usize,
    /// Number of nonzero covariance eigenvalues found.
    pub rank: usize,
    pub components: usize,
    /// Fraction of total variance captured by the kept components.
    pub retained_energy: f64,
}

pub fn compute_mean(images: &[Vec<f64>]) -> Result<Vec<f64>, SubspaceError> {
    let first = images.first().ok_or(SubspaceError::TooFewImages {
        needed: 1,
        found: 0,
    })?;
    let n = first.len();
    let mut mean = vec![0.0; n];
    for img in images {
        if img.len() != n {
            return Err(SubspaceError::LengthMismatch {
                expected: n,
                found: img.len(),
            });
        }
        for (m, x) in mean.iter_mut().zip(img) {
            *m += x;
        }
    }
    let count = images.len() as f64;
    mean.iter_mut().for_each(|m| *m /= count);
    Ok(mean)
}

pub fn center(images: &[Vec<f64>], mean: &[f64]) -> Result<Vec<Vec<f64>>, SubspaceError> {
    images
        .iter()
        .map(|img| {
            if img.len() != mean.len() {
                return Err(SubspaceError::LengthMismatch {
                    expected: mean.len(),
                    found: img.len(),
                });
            }
            Ok(img.iter().zip(mean).map(|(x, m)| x - m).collect())
        })
        .collect()
}

pub fn train(
    images: &[ImageMatrix],
    modality: Modality,
    policy: ComponentPolicy,
) -> Result<SubspaceModel, SubspaceError> {
    train_with_report(images, modality, policy).map(|(model, _)| model)
}

pub fn train_with_report(
    images: &[ImageMatrix],
    modality: Modality,
    policy: ComponentPolicy,
) -> Result<(SubspaceModel, TrainReport), SubspaceError> {
    policy.validate()?;
    if images.len() < 2 {
        return Err(SubspaceError::TooFewImages {
            needed: 2,
            found: images.len(),
        });
    }
    let canonical_size = images[0].shape();
    if let Some(bad) = images.iter().find(|img| img.shape() != canonical_size) {
        return Err(SubspaceError::SizeMismatch {
            expected: canonical_size,
            found: bad.shape(),
        });
    }
    let flat: Vec<Vec<f64>> = images.iter().map(flatten).collect();
    let mean = compute_mean(&flat)?;
    let phi = center(&flat, &mean)?;
    if phi.iter().all(|v| v.iter().all(|&x| x == 0.0)) {
        return Err(SubspaceError::NoVariance);
    }

    let samples = images.len();
    let pixels = mean.len();
    let a = DMatrix::from_fn(pixels, samples, |r, c| phi[c][r]);
    // centered data has rank at most N - 1
    let snapshot = snapshot_eigenvectors(&a, samples - 1)?;
    if snapshot.eigenvalues.is_empty() {
        return Err(SubspaceError::NoVariance);
    }
    let spectrum: Vec<f64> = snapshot
        .eigenvalues
        .iter()
        .map(|l| l / samples as f64)
        .collect();
    let rank = spectrum.len();
    let k = policy.select(&spectrum);
    let total: f64 = spectrum.iter().sum();
    let retained_energy = spectrum[..k].iter().sum::<f64>() / total;

    let basis = snapshot.vectors.columns(0, k).into_owned();
    let model = SubspaceModel::new(
        modality,
        mean,
        spectrum[..k].to_vec(),
        basis,
        canonical_size,
    )?;
    let report = TrainReport {
        modality,
        pixels,
        samples,
        rank,
        components: k,
        retained_energy,
    };
    Ok((model, report))
}

/// Projects an already-flattened sample.
pub fn project_vector(model: &SubspaceModel, x: &[f64]) -> Result<FeatureVector, SubspaceError> {
    if x.len() != model.pixels() {
        return Err(SubspaceError::LengthMismatch {
            expected: model.pixels(),
            found: x.len(),
        });
    }
    let centered = DVector::from_iterator(x.len(), x.iter().zip(&model.mean).map(|(a, m)| a - m));
    let coords = model.basis.tr_mul(&centered);
    Ok(FeatureVector::new(
        model.modality,
        coords.iter().copied().collect(),
    ))
}

pub fn project(model: &SubspaceModel, img: &ImageMatrix) -> Result<FeatureVector, SubspaceError> {
    if img.shape() != model.canonical_size {
        return Err(SubspaceError::SizeMismatch {
            expected: model.canonical_size,
            found: img.shape(),
        });
    }
    project_vector(model, img.as_slice())
}

fn check_feature(model: &SubspaceModel, feat: &FeatureVector) -> Result<(), SubspaceError> {
    if feat.modality != model.modality {
        return Err(SubspaceError::ModalityMismatch {
            expected: model.modality,
            found: feat.modality,
        });
    }
    if feat.len() != model.components() {
        return Err(SubspaceError::LengthMismatch {
            expected: model.components(),
            found: feat.len(),
        });
    }
    Ok(())
}

/// `mean + basis * coords`, in flattened pixel space.
pub fn reconstruct(model: &SubspaceModel, feat: &FeatureVector) -> Result<Vec<f64>, SubspaceError> {
    check_feature(model, feat)?;
    let y = &model.basis * DVector::from_column_slice(&feat.coords);
    Ok(y.iter().zip(&model.mean).map(|(a, m)| a + m).collect())
}

/// `sum_k lambda_k * coords_k^2`.
pub fn canonical_energy(model: &SubspaceModel, feat: &FeatureVector) -> Result<f64, SubspaceError> {
    check_feature(model, feat)?;
    Ok(model
        .eigenvalues
        .iter()
        .zip(&feat.coords)
        .map(|(l, c)| l * c * c)
        .sum())
}

/// Basis column `k` min-max rescaled into a displayable image.
pub fn basis_image(model: &SubspaceModel, k: usize) -> Option<ImageMatrix> {
    if k >= model.components() {
        return None;
    }
    let col = model.basis.column(k);
    let lo = col.min();
    let hi = col.max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data = col
        .iter()
        .map(|v| ((v - lo) / span).clamp(0.0, 1.0))
        .collect();
    let (rows, cols) = model.canonical_size;
    ImageMatrix::new(rows, cols, data).ok()
}
