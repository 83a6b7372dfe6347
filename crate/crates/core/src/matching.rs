//! Euclidean matching of feature vectors against enrolled templates.

use std::cmp::Ordering;

use thiserror::Error;

use crate::subspace::FeatureVector;
use crate::Modality;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("feature length mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("modality mismatch: {left} vs {right}")]
    ModalityMismatch { left: Modality, right: Modality },
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("subject '{0}' has no enrolled samples")]
    EmptyTemplate(String),
    #[error("need at least one distance to fit a normalizer")]
    NoDistances,
    #[error("degenerate normalizer: d_min = d_max = {0}")]
    Degenerate(f64),
    #[error("invalid distance {0}")]
    InvalidDistance(f64),
}

/// Euclidean distance between two feature vectors of the same modality.
pub fn euclidean_distance(x: &FeatureVector, y: &FeatureVector) -> Result<f64, MatchError> {
    if x.modality != y.modality {
        return Err(MatchError::ModalityMismatch {
            left: x.modality,
            right: y.modality,
        });
    }
    if x.len() != y.len() {
        return Err(MatchError::DimensionMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(x.coords
        .iter()
        .zip(&y.coords)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Min-max map from raw distance to similarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceNormalizer {
    d_min: f64,
    d_max: f64,
}

impl DistanceNormalizer {
    pub fn new(d_min: f64, d_max: f64) -> Result<Self, MatchError> {
        for d in [d_min, d_max] {
            if !(d.is_finite() && d >= 0.0) {
                return Err(MatchError::InvalidDistance(d));
            }
        }
        if d_max <= d_min {
            return Err(MatchError::Degenerate(d_min));
        }
        Ok(DistanceNormalizer { d_min, d_max })
    }

    /// Fits the range of the given distances.
    pub fn fit(distances: &[f64]) -> Result<Self, MatchError> {
        if distances.is_empty() {
            return Err(MatchError::NoDistances);
        }
        let lo = distances.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(lo, hi)
    }

    /// Fits over every distinct pair of the given features.
    pub fn fit_pairwise(features: &[FeatureVector]) -> Result<Self, MatchError> {
        let mut distances =
            Vec::with_capacity(features.len() * features.len().saturating_sub(1) / 2);
        for (i, a) in features.iter().enumerate() {
            for b in &features[i + 1..] {
                distances.push(euclidean_distance(a, b)?);
            }
        }
        Self::fit(&distances)
    }

    /// Calibration from training features alone: `[0, max pairwise distance]`.
    ///
    /// Training images lie inside the subspace fitted to them, so their mutual
    /// distances overstate the distances a fresh probe will show. Anchoring at
    /// zero keeps such probes from all clamping to similarity 1.
    pub fn fit_training(features: &[FeatureVector]) -> Result<Self, MatchError> {
        let fitted = Self::fit_pairwise(features)?;
        Self::new(0.0, fitted.d_max)
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }
}

pub fn distance_to_similarity(d: f64, normalizer: &DistanceNormalizer) -> Result<f64, MatchError> {
    if d.is_nan() || d < 0.0 || d.is_infinite() {
        return Err(MatchError::InvalidDistance(d));
    }
    let t = (d - normalizer.d_min) / (normalizer.d_max - normalizer.d_min);
    Ok(1.0 - t.clamp(0.0, 1.0))
}

/// 0-100 integer rendering of a similarity, for display only.
pub fn quantize_similarity(similarity: f64) -> u8 {
    (similarity.clamp(0.0, 1.0) * 100.0).round() as u8
}

/// One subject's enrolled samples for a single modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub subject_id: String,
    pub modality: Modality,
    pub samples: Vec<FeatureVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchScore {
    pub subject_id: String,
    pub modality: Modality,
    pub similarity: f64,
    pub raw_distance: f64,
}

/// Smallest distance from `probe` to any of the template's samples.
pub fn template_distance(probe: &FeatureVector, template: &Template) -> Result<f64, MatchError> {
    if template.modality != probe.modality {
        return Err(MatchError::ModalityMismatch {
            left: probe.modality,
            right: template.modality,
        });
    }
    if template.samples.is_empty() {
        return Err(MatchError::EmptyTemplate(template.subject_id.clone()));
    }
    template
        .samples
        .iter()
        .map(|s| euclidean_distance(probe, s))
        .try_fold(f64::INFINITY, |best, d| d.map(|d| best.min(d)))
}

/// Ranking order: similarity descending, then raw distance ascending, then
/// subject id ascending.
pub fn rank_order(a: &MatchScore, b: &MatchScore) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then(a.raw_distance.total_cmp(&b.raw_distance))
        .then_with(|| a.subject_id.cmp(&b.subject_id))
}

/// Scores `probe` against every subject in the gallery, best first.
pub fn match_gallery(
    probe: &FeatureVector,
    gallery: &[Template],
    normalizer: &DistanceNormalizer,
) -> Result<Vec<MatchScore>, MatchError> {
    if gallery.is_empty() {
        return Err(MatchError::EmptyGallery);
    }
    let mut scores = gallery
        .iter()
        .map(|t| {
            let raw_distance = template_distance(probe, t)?;
            Ok(MatchScore {
                subject_id: t.subject_id.clone(),
                modality: probe.modality,
                similarity: distance_to_similarity(raw_distance, normalizer)?,
                raw_distance,
            })
        })
        .collect::<Result<Vec<_>, MatchError>>()?;
    scores.sort_by(rank_order);
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn fv(coords: &[f64]) -> FeatureVector {
        FeatureVector::new(Modality::Face, coords.to_vec())
    }

    #[test]
    fn distance_examples() {
        assert_eq!(
            euclidean_distance(&fv(&[1.0, 2.0]), &fv(&[1.0, 2.0])).unwrap(),
            0.0
        );
        assert_eq!(
            euclidean_distance(&fv(&[0.0, 0.0]), &fv(&[3.0, 4.0])).unwrap(),
            5.0
        );
        assert_eq!(
            euclidean_distance(&fv(&[1.0, 2.0, 3.0]), &fv(&[4.0, 6.0, 3.0])).unwrap(),
            5.0
        );
        assert!(matches!(
            euclidean_distance(&fv(&[1.0]), &fv(&[1.0, 2.0])),
            Err(MatchError::DimensionMismatch { left: 1, right: 2 })
        ));
        let palm = FeatureVector::new(Modality::Palm, vec![1.0]);
        assert!(matches!(
            euclidean_distance(&fv(&[1.0]), &palm),
            Err(MatchError::ModalityMismatch { .. })
        ));
    }

    #[test]
    fn similarity_examples() {
        let n = DistanceNormalizer::new(2.0, 10.0).unwrap();
        assert_eq!(distance_to_similarity(2.0, &n).unwrap(), 1.0);
        assert_eq!(distance_to_similarity(10.0, &n).unwrap(), 0.0);
        assert_eq!(distance_to_similarity(4.0, &n).unwrap(), 0.75);
        assert_eq!(distance_to_similarity(0.5, &n).unwrap(), 1.0);
        assert_eq!(distance_to_similarity(50.0, &n).unwrap(), 0.0);
        assert!(distance_to_similarity(-1.0, &n).is_err());
        assert!(distance_to_similarity(f64::NAN, &n).is_err());
        assert_eq!(quantize_similarity(0.754), 75);
    }

    #[test]
    fn normalizer_errors() {
        assert_eq!(
            DistanceNormalizer::new(3.0, 3.0).unwrap_err(),
            MatchError::Degenerate(3.0)
        );
        assert_eq!(
            DistanceNormalizer::fit(&[]).unwrap_err(),
            MatchError::NoDistances
        );
        assert_eq!(
            DistanceNormalizer::fit(&[1.0, 1.0]).unwrap_err(),
            MatchError::Degenerate(1.0)
        );
        let n = DistanceNormalizer::fit(&[4.0, 1.0, 7.0]).unwrap();
        assert_eq!((n.d_min(), n.d_max()), (1.0, 7.0));
        let n = DistanceNormalizer::fit_pairwise(&[fv(&[0.0]), fv(&[1.0]), fv(&[3.0])]).unwrap();
        let anchored =
            DistanceNormalizer::fit_training(&[fv(&[0.0]), fv(&[1.0]), fv(&[3.0])]).unwrap();
        assert_eq!((anchored.d_min(), anchored.d_max()), (0.0, 3.0));
        assert_eq!((n.d_min(), n.d_max()), (1.0, 3.0));
    }

    #[test]
    fn exact_match_ranks_first() {
        let gallery = vec![
            Template {
                subject_id: "a".into(),
                modality: Modality::Face,
                samples: vec![fv(&[0.0, 0.0]), fv(&[5.0, 5.0])],
            },
            Template {
                subject_id: "b".into(),
                modality: Modality::Face,
                samples: vec![fv(&[1.0, 1.0])],
            },
        ];
        let n = DistanceNormalizer::new(0.5, 8.0).unwrap();
        let ranked = match_gallery(&fv(&[5.0, 5.0]), &gallery, &n).unwrap();
        assert_eq!(ranked[0].subject_id, "a");
        assert_eq!(ranked[0].similarity, 1.0);
        assert_eq!(ranked[0].raw_distance, 0.0);

        let single = match_gallery(&fv(&[3.0, 3.0]), &gallery[1..], &n).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(
            match_gallery(&fv(&[0.0, 0.0]), &[], &n).unwrap_err(),
            MatchError::EmptyGallery
        );
    }

    #[test]
    fn ties_break_by_subject_id() {
        let gallery = vec![
            Template {
                subject_id: "zed".into(),
                modality: Modality::Face,
                samples: vec![fv(&[1.0, 0.0])],
            },
            Template {
                subject_id: "amy".into(),
                modality: Modality::Face,
                samples: vec![fv(&[0.0, 1.0])],
            },
        ];
        let n = DistanceNormalizer::new(0.0, 4.0).unwrap();
        let ranked = match_gallery(&fv(&[0.0, 0.0]), &gallery, &n).unwrap();
        assert_eq!(ranked[0].subject_id, "amy");
        assert_eq!(ranked[1].subject_id, "zed");
        assert_eq!(
            ranked,
            match_gallery(&fv(&[0.0, 0.0]), &gallery, &n).unwrap()
        );
    }

    #[test]
    fn top_one_matches_exhaustive_search() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let gallery: Vec<Template> = (0..5)
                .map(|s| Template {
                    subject_id: format!("s{s}"),
                    modality: Modality::Face,
                    samples: (0..3)
                        .map(|_| fv(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]))
                        .collect(),
                })
                .collect();
            let probe = fv(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            let mut best = (f64::INFINITY, String::new());
            for t in &gallery {
                for s in &t.samples {
                    let d = probe
                        .coords
                        .iter()
                        .zip(&s.coords)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    if d < best.0 {
                        best = (d, t.subject_id.clone());
                    }
                }
            }
            let n = DistanceNormalizer::new(0.0, 3.0).unwrap();
            assert_eq!(
                match_gallery(&probe, &gallery, &n).unwrap()[0].subject_id,
                best.1
            );
        }
    }

    proptest! {
        #[test]
        fn metric_axioms(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
            c in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let (a, b, c) = (fv(&a), fv(&b), fv(&c));
            let ab = euclidean_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, euclidean_distance(&b, &a).unwrap());
            let ac = euclidean_distance(&a, &c).unwrap();
            let cb = euclidean_distance(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn similarity_monotone(d1 in 0.0f64..20.0, d2 in 0.0f64..20.0) {
            let n = DistanceNormalizer::new(2.0, 10.0).unwrap();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let s_lo = distance_to_similarity(lo, &n).unwrap();
            let s_hi = distance_to_similarity(hi, &n).unwrap();
            prop_assert!(s_lo >= s_hi);
            prop_assert!((0.0..=1.0).contains(&s_lo));
        }
    }
}
