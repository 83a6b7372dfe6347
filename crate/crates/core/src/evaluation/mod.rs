//! Verification metrics: FAR, FRR, accuracy, ROC sweep and EER.
//!
//! Scores are similarities in `[0, 1]`; a trial is accepted when its score is
//! at or above the threshold, matching [`crate::fusion::decide`].

mod experiment;
mod synth;

use std::io::{self, Write};

use thiserror::Error;

pub use experiment::{
    run_experiment, score_trials, split_partitions, ExperimentConfig, ExperimentResult, Partitions,
    SplitPolicy, SystemReport, ThresholdMode, TrainedSystem, TrialScores, WeightMode,
};
pub use synth::{synthesize_dataset, Dataset, Subject, SynthSpec};

use crate::fusion::FusionError;
use crate::imaging::ImageError;
use crate::matching::MatchError;
use crate::subspace::SubspaceError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} score list is empty")]
    EmptyScores(&'static str),
    #[error("{which} score {value} outside [0, 1]")]
    ScoreOutOfRange { which: &'static str, value: f64 },
    #[error("invalid synthetic dataset spec: {0}")]
    InvalidSpec(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// Genuine and impostor trial scores, each kept sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    genuine: Vec<f64>,
    impostor: Vec<f64>,
}

impl ScoreSet {
    pub fn new(mut genuine: Vec<f64>, mut impostor: Vec<f64>) -> Result<Self, EvalError> {
        for (which, list) in [("genuine", &genuine), ("impostor", &impostor)] {
            if list.is_empty() {
                return Err(EvalError::EmptyScores(which));
            }
            if let Some(&value) = list.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(EvalError::ScoreOutOfRange { which, value });
            }
        }
        genuine.sort_by(f64::total_cmp);
        impostor.sort_by(f64::total_cmp);
        Ok(ScoreSet { genuine, impostor })
    }

    pub fn genuine(&self) -> &[f64] {
        &self.genuine
    }

    pub fn impostor(&self) -> &[f64] {
        &self.impostor
    }

    fn below(sorted: &[f64], threshold: f64) -> usize {
        sorted.partition_point(|&s| s < threshold)
    }
}

/// `(FAR, FRR)`: impostors scoring `>= threshold`, genuines scoring `< threshold`.
pub fn far_frr(scores: &ScoreSet, threshold: f64) -> (f64, f64) {
    let accepted_impostors = scores.impostor.len() - ScoreSet::below(&scores.impostor, threshold);
    let rejected_genuine = ScoreSet::below(&scores.genuine, threshold);
    (
        accepted_impostors as f64 / scores.impostor.len() as f64,
        rejected_genuine as f64 / scores.genuine.len() as f64,
    )
}

pub fn accuracy(scores: &ScoreSet, threshold: f64) -> f64 {
    let accepted_genuine = scores.genuine.len() - ScoreSet::below(&scores.genuine, threshold);
    let rejected_impostors = ScoreSet::below(&scores.impostor, threshold);
    (accepted_genuine + rejected_impostors) as f64
        / (scores.genuine.len() + scores.impostor.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Operating threshold the `*_at_threshold` and accuracy figures refer to.
    pub threshold: f64,
    pub far_at_threshold: f64,
    pub frr_at_threshold: f64,
    pub accuracy: f64,
    pub eer: f64,
    pub eer_threshold: f64,
    /// Ascending thresholds.
    pub roc: Vec<RocPoint>,
    pub genuine_trials: usize,
    pub impostor_trials: usize,
}

/// Sweeps every distinct score plus 0 and 1, in ascending order.
pub fn roc_curve(scores: &ScoreSet) -> Vec<RocPoint> {
    let mut thresholds: Vec<f64> = scores
        .genuine
        .iter()
        .chain(&scores.impostor)
        .copied()
        .chain([0.0, 1.0])
        .collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds
        .into_iter()
        .map(|threshold| {
            let (far, frr) = far_frr(scores, threshold);
            RocPoint {
                threshold,
                far,
                frr,
            }
        })
        .collect()
}

/// Locates the equal error rate on an ascending sweep.
///
/// Returns `(eer, threshold)`. When `FAR = FRR` exactly, it holds on a whole
/// threshold interval reaching down to (but excluding) the preceding sweep
/// point; the threshold returned is that interval's midpoint, so a separable
/// tune set yields a threshold centred in the gap. Where `FAR - FRR` changes
/// sign between two adjacent points the crossing is linearly interpolated;
/// otherwise the point with the smallest `|FAR - FRR|` is used.
pub fn equal_error_rate(roc: &[RocPoint]) -> (f64, f64) {
    let gap = |p: &RocPoint| p.far - p.frr;
    for (i, p) in roc.iter().enumerate() {
        let d = gap(p);
        if d == 0.0 {
            let last = roc[i..]
                .iter()
                .take_while(|q| gap(q) == 0.0)
                .last()
                .unwrap_or(p);
            let threshold = match i.checked_sub(1) {
                Some(prev) => 0.5 * (roc[prev].threshold + last.threshold),
                None => p.threshold,
            };
            return (p.far, threshold);
        }
        if d < 0.0 && i > 0 {
            let prev = &roc[i - 1];
            let dp = gap(prev);
            let s = dp / (dp - d);
            let eer = prev.far + s * (p.far - prev.far);
            let threshold = prev.threshold + s * (p.threshold - prev.threshold);
            return (eer, threshold);
        }
    }
    let best = roc
        .iter()
        .min_by(|a, b| gap(a).abs().total_cmp(&gap(b).abs()))
        .expect("sweep always holds the 0 and 1 thresholds");
    (0.5 * (best.far + best.frr), best.threshold)
}

/// Full report with the operating point placed at the EER threshold.
pub fn roc_and_eer(scores: &ScoreSet) -> EvalReport {
    let roc = roc_curve(scores);
    let (_, eer_threshold) = equal_error_rate(&roc);
    report_with_roc(scores, eer_threshold, roc)
}

/// Full report with the operating point at a caller-chosen threshold.
pub fn report_at(scores: &ScoreSet, threshold: f64) -> EvalReport {
    report_with_roc(scores, threshold, roc_curve(scores))
}

fn report_with_roc(scores: &ScoreSet, threshold: f64, roc: Vec<RocPoint>) -> EvalReport {
    let (eer, eer_threshold) = equal_error_rate(&roc);
    let (far, frr) = far_frr(scores, threshold);
    EvalReport {
        threshold,
        far_at_threshold: far,
        frr_at_threshold: frr,
        accuracy: accuracy(scores, threshold),
        eer,
        eer_threshold,
        roc,
        genuine_trials: scores.genuine.len(),
        impostor_trials: scores.impostor.len(),
    }
}

/// Writes the sweep as `threshold,far,frr` CSV with a header row.
pub fn write_roc_csv<W: Write>(report: &EvalReport, mut out: W) -> io::Result<()> {
    writeln!(out, "threshold,far,frr")?;
    for p in &report.roc {
        writeln!(out, "{},{},{}", p.threshold, p.far, p.frr)?;
    }
    Ok(())
}
