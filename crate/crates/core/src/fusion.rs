//! Weighted sum-rule fusion of face and palm similarities.
//!
//! ```text
//! MS_final = 1/2 * (alpha * MS_face + beta * MS_palm),   alpha + beta = 2
//! ```
//!
//! Weights are normalized so that equal weighting is `alpha = beta = 1` and two
//! perfect scores fuse to exactly 1. A claim is accepted when the fused score
//! reaches the threshold (the boundary counts as genuine).

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::matching::MatchScore;

/// EERs below this are clamped before inversion.
pub const MIN_EER: f64 = 1e-4;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("weights must be finite and nonnegative, got alpha={alpha}, beta={beta}")]
    InvalidWeights { alpha: f64, beta: f64 },
    #[error("at least one weight must be positive")]
    ZeroWeights,
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("{which} score {value} outside [0, 1]")]
    ScoreOutOfRange { which: &'static str, value: f64 },
    #[error("equal error rate {0} outside [0, 0.5]")]
    InvalidEer(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionPolicy {
    alpha: f64,
    beta: f64,
    threshold: f64,
}

impl FusionPolicy {
    /// Builds a policy, rescaling the weights so `alpha + beta = 2`.
    pub fn new(alpha: f64, beta: f64, threshold: f64) -> Result<Self, FusionError> {
        if !(alpha.is_finite() && beta.is_finite() && alpha >= 0.0 && beta >= 0.0) {
            return Err(FusionError::InvalidWeights { alpha, beta });
        }
        let sum = alpha + beta;
        if sum <= 0.0 {
            return Err(FusionError::ZeroWeights);
        }
        if !(0.0..=1.0).contains(&threshold) {
            return Err(FusionError::InvalidThreshold(threshold));
        }
        Ok(FusionPolicy {
            alpha: 2.0 * alpha / sum,
            beta: 2.0 * beta / sum,
            threshold,
        })
    }

    /// Accepts weights that already sum to 2 (within rounding) and keeps them
    /// bit-for-bit, so a stored policy reloads unchanged.
    pub fn from_normalized(alpha: f64, beta: f64, threshold: f64) -> Result<Self, FusionError> {
        let checked = Self::new(alpha, beta, threshold)?;
        if (alpha + beta - 2.0).abs() > 1e-9 {
            return Err(FusionError::InvalidWeights { alpha, beta });
        }
        Ok(FusionPolicy {
            alpha,
            beta,
            ..checked
        })
    }

    pub fn equal_weights(threshold: f64) -> Result<Self, FusionError> {
        Self::new(1.0, 1.0, threshold)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn with_threshold(&self, threshold: f64) -> Result<Self, FusionError> {
        Self::new(self.alpha, self.beta, threshold)
    }
}

/// Per-modality error summary used to derive fusion weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModalityErrorStats {
    pub eer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights {
    pub alpha: f64,
    pub beta: f64,
    /// Set when the face EER was 0 and got clamped to [`MIN_EER`].
    pub face_clamped: bool,
    pub palm_clamped: bool,
}

/// Inverse-EER weighting, normalized to `alpha + beta = 2`.
pub fn compute_weights(
    face: ModalityErrorStats,
    palm: ModalityErrorStats,
) -> Result<FusionWeights, FusionError> {
    let prepare = |eer: f64| -> Result<(f64, bool), FusionError> {
        if !(0.0..=0.5).contains(&eer) {
            return Err(FusionError::InvalidEer(eer));
        }
        Ok(if eer < MIN_EER {
            (MIN_EER, true)
        } else {
            (eer, false)
        })
    };
    let (face_eer, face_clamped) = prepare(face.eer)?;
    let (palm_eer, palm_clamped) = prepare(palm.eer)?;
    let (wf, wp) = (1.0 / face_eer, 1.0 / palm_eer);
    let sum = wf + wp;
    Ok(FusionWeights {
        alpha: 2.0 * wf / sum,
        beta: 2.0 * wp / sum,
        face_clamped,
        palm_clamped,
    })
}

fn check_score(which: &'static str, value: f64) -> Result<(), FusionError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(FusionError::ScoreOutOfRange { which, value })
    }
}

pub fn fuse(ms_face: f64, ms_palm: f64, policy: &FusionPolicy) -> Result<f64, FusionError> {
    check_score("face", ms_face)?;
    check_score("palm", ms_palm)?;
    Ok((0.5 * (policy.alpha * ms_face + policy.beta * ms_palm)).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Genuine,
    Impostor,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Genuine => "genuine",
            Verdict::Impostor => "impostor",
        })
    }
}

pub fn decide(fused: f64, policy: &FusionPolicy) -> Verdict {
    if fused >= policy.threshold {
        Verdict::Genuine
    } else {
        Verdict::Impostor
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub verdict: Verdict,
    pub fused_score: f64,
    pub face_score: f64,
    pub palm_score: f64,
    pub policy: FusionPolicy,
}

impl Decision {
    pub fn evaluate(
        face_score: f64,
        palm_score: f64,
        policy: &FusionPolicy,
    ) -> Result<Self, FusionError> {
        let fused_score = fuse(face_score, palm_score, policy)?;
        Ok(Decision {
            verdict: decide(fused_score, policy),
            fused_score,
            face_score,
            palm_score,
            policy: *policy,
        })
    }
}

/// One gallery subject in a fused identification ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedCandidate {
    pub subject_id: String,
    pub face_score: f64,
    pub palm_score: f64,
    pub fused_score: f64,
}

/// Fuses per-subject face and palm similarities and ranks the subjects,
/// best first, ties broken by subject id. A subject missing from one
/// modality's list scores 0 there.
pub fn rank_fused(
    face: &[MatchScore],
    palm: &[MatchScore],
    policy: &FusionPolicy,
) -> Result<Vec<FusedCandidate>, FusionError> {
    let mut by_subject: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for s in face {
        by_subject.entry(&s.subject_id).or_insert((0.0, 0.0)).0 = s.similarity;
    }
    for s in palm {
        by_subject.entry(&s.subject_id).or_insert((0.0, 0.0)).1 = s.similarity;
    }
    let mut ranked = by_subject
        .into_iter()
        .map(|(id, (f, p))| {
            Ok(FusedCandidate {
                subject_id: id.to_string(),
                face_score: f,
                palm_score: p,
                fused_score: fuse(f, p, policy)?,
            })
        })
        .collect::<Result<Vec<_>, FusionError>>()?;
    // stable sort keeps the id order from the map among equal scores
    ranked.sort_by(|a, b| b.fused_score.total_cmp(&a.fused_score));
    Ok(ranked)
}
