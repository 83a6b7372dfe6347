//! # fuseid-core
//!
//! Face and palmprint identification built on per-modality eigen-subspaces.
//!
//! The pipeline mirrors a classic multimodal verification system:
//!
//! 1. [`imaging`] loads PGM/PPM samples and normalizes them to a canonical
//!    grayscale matrix (palms additionally get contrast normalization).
//! 2. [`subspace`] trains an eigen-subspace per modality (mean image, covariance
//!    eigenvectors via the small Gram-matrix trick) and projects samples onto it.
//! 3. [`matching`] compares feature vectors by Euclidean distance and maps the
//!    distance to a similarity in `[0, 1]`.
//! 4. [`fusion`] combines face and palm similarities with a weighted sum and
//!    thresholds the result into a genuine/impostor verdict.
//! 5. [`evaluation`] measures FAR, FRR, accuracy and EER, and can synthesize
//!    paired face/palm datasets to drive the whole thing end to end.
//!
//! [`eigencore`] holds the symmetric eigensolver everything else relies on, and
//! [`store`] persists models, galleries and policies in a checksummed binary
//! format.

pub mod eigencore;
pub mod evaluation;
pub mod fusion;
pub mod imaging;
pub mod matching;
pub mod store;
pub mod subspace;

use std::fmt;

/// A biometric trait channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Face,
    Palm,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Face, Modality::Palm];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Face => "face",
            Modality::Palm => "palm",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "face" => Ok(Modality::Face),
            "palm" | "palmprint" => Ok(Modality::Palm),
            other => Err(format!("unknown modality '{other}'")),
        }
    }
}
