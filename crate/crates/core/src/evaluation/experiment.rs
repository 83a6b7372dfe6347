//! End-to-end verification experiment over a paired face/palm dataset.
//!
//! Every subject's samples are split by index into train, tune and test
//! partitions. Subspaces are fitted on the train partition. Distance
//! normalizers, fusion weights and thresholds come from the tune partition's
//! trials. Reported figures come from the test partition.
//!
//! A trial compares a probe sample from the evaluated partition against a
//! reference sample from the train (enrollment) partition:
//!
//! * genuine: every probe of subject `s` against every reference of `s`;
//! * impostor: the first probe of `s` against the first reference of every
//!   other subject `t`.

use std::fmt::Write as _;
use std::ops::Range;

use super::{report_at, roc_and_eer, Dataset, EvalError, EvalReport, ScoreSet};
use crate::fusion::{
    compute_weights, fuse, FusionPolicy, FusionWeights, ModalityErrorStats, DEFAULT_THRESHOLD,
};
use crate::imaging::{preprocess, ImageMatrix, PreprocessConfig};
use crate::matching::{distance_to_similarity, euclidean_distance, DistanceNormalizer};
use crate::subspace::{
    project, train_with_report, ComponentPolicy, FeatureVector, SubspaceModel, TrainReport,
};
use crate::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitPolicy {
    /// First half train, half of the remainder tune, the rest test.
    #[default]
    Halves,
    /// Explicit per-subject train and tune counts; the rest is test.
    Counts { train: usize, tune: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum WeightMode {
    /// Inverse-EER weights from the tune partition.
    #[default]
    Auto,
    Fixed {
        alpha: f64,
        beta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ThresholdMode {
    /// Fused EER threshold on the tune partition.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExperimentConfig {
    pub preprocess: PreprocessConfig,
    pub components: ComponentPolicy,
    pub weights: WeightMode,
    pub threshold: ThresholdMode,
}

/// Sample-index ranges for one subject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partitions {
    pub train: Range<usize>,
    pub tune: Range<usize>,
    pub test: Range<usize>,
}

impl SplitPolicy {
    fn sizes(self, samples: usize) -> (usize, usize) {
        match self {
            SplitPolicy::Halves => {
                let train = samples / 2;
                (train, (samples - train) / 2)
            }
            SplitPolicy::Counts { train, tune } => (train, tune),
        }
    }
}

pub fn split_partitions(
    dataset: &Dataset,
    split: SplitPolicy,
) -> Result<Vec<Partitions>, EvalError> {
    if dataset.subjects.len() < 2 {
        return Err(EvalError::InvalidDataset(format!(
            "need at least 2 subjects, got {}",
            dataset.subjects.len()
        )));
    }
    dataset
        .subjects
        .iter()
        .map(|subject| {
            let samples = subject.face.len();
            if subject.palm.len() != samples {
                return Err(EvalError::InvalidDataset(format!(
                    "subject {} has {} face but {} palm samples",
                    subject.id,
                    samples,
                    subject.palm.len()
                )));
            }
            let (train, tune) = split.sizes(samples);
            if train + tune > samples {
                return Err(EvalError::InvalidSplit(format!(
                    "subject {} has {samples} samples, split asks for {train} + {tune}",
                    subject.id
                )));
            }
            let parts = Partitions {
                train: 0..train,
                tune: train..train + tune,
                test: train + tune..samples,
            };
            for (name, range) in [
                ("train", &parts.train),
                ("tune", &parts.tune),
                ("test", &parts.test),
            ] {
                if range.is_empty() {
                    return Err(EvalError::InvalidSplit(format!(
                        "{name} partition is empty for subject {} ({samples} samples)",
                        subject.id
                    )));
                }
            }
            Ok(parts)
        })
        .collect()
}

/// Preprocessed samples of one subject, paired by index.
#[derive(Debug, Clone)]
pub(crate) struct SubjectImages {
    pub face: Vec<ImageMatrix>,
    pub palm: Vec<ImageMatrix>,
}

pub(crate) fn preprocess_dataset(
    dataset: &Dataset,
    config: &PreprocessConfig,
) -> Result<Vec<SubjectImages>, EvalError> {
    dataset
        .subjects
        .iter()
        .map(|s| {
            let run = |m: Modality| -> Result<Vec<ImageMatrix>, EvalError> {
                s.samples(m)
                    .iter()
                    .map(|img| Ok(preprocess(img, m, config)?))
                    .collect()
            };
            Ok(SubjectImages {
                face: run(Modality::Face)?,
                palm: run(Modality::Palm)?,
            })
        })
        .collect()
}

/// Both trained modality chains plus the fusion policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSystem {
    pub face_model: SubspaceModel,
    pub palm_model: SubspaceModel,
    pub face_report: TrainReport,
    pub palm_report: TrainReport,
    pub face_normalizer: DistanceNormalizer,
    pub palm_normalizer: DistanceNormalizer,
    pub policy: FusionPolicy,
    /// Present when weights were derived from tuning data.
    pub weights: Option<FusionWeights>,
    /// Single-modality operating thresholds.
    pub face_threshold: f64,
    pub palm_threshold: f64,
}

impl TrainedSystem {
    pub fn model(&self, modality: Modality) -> &SubspaceModel {
        match modality {
            Modality::Face => &self.face_model,
            Modality::Palm => &self.palm_model,
        }
    }

    pub fn normalizer(&self, modality: Modality) -> &DistanceNormalizer {
        match modality {
            Modality::Face => &self.face_normalizer,
            Modality::Palm => &self.palm_normalizer,
        }
    }

    /// Trains on `dataset` with the given per-subject train ranges and,
    /// when supplied, tunes weights and thresholds on the tune ranges.
    pub fn fit(
        dataset: &Dataset,
        train: &[Range<usize>],
        tune: Option<&[Range<usize>]>,
        config: &ExperimentConfig,
    ) -> Result<Self, EvalError> {
        let images = preprocess_dataset(dataset, &config.preprocess)?;
        fit_on_images(&images, train, tune, config).map(|(system, _)| system)
    }
}

/// Projected features of one subject.
#[derive(Debug, Clone)]
pub(crate) struct SubjectFeatures {
    pub face: Vec<FeatureVector>,
    pub palm: Vec<FeatureVector>,
}

fn train_modality(
    images: &[SubjectImages],
    train: &[Range<usize>],
    modality: Modality,
    policy: ComponentPolicy,
) -> Result<(SubspaceModel, TrainReport), EvalError> {
    let training: Vec<ImageMatrix> = images
        .iter()
        .zip(train)
        .flat_map(|(s, range)| {
            let list = match modality {
                Modality::Face => &s.face,
                Modality::Palm => &s.palm,
            };
            list[range.clone()].iter().cloned()
        })
        .collect();
    Ok(train_with_report(&training, modality, policy)?)
}

fn project_all(
    images: &[SubjectImages],
    face: &SubspaceModel,
    palm: &SubspaceModel,
) -> Result<Vec<SubjectFeatures>, EvalError> {
    images
        .iter()
        .map(|s| {
            Ok(SubjectFeatures {
                face: s
                    .face
                    .iter()
                    .map(|img| project(face, img))
                    .collect::<Result<_, _>>()?,
                palm: s
                    .palm
                    .iter()
                    .map(|img| project(palm, img))
                    .collect::<Result<_, _>>()?,
            })
        })
        .collect()
}

fn fit_normalizer(
    features: &[SubjectFeatures],
    train: &[Range<usize>],
    modality: Modality,
) -> Result<DistanceNormalizer, EvalError> {
    let pooled: Vec<FeatureVector> = features
        .iter()
        .zip(train)
        .flat_map(|(f, r)| {
            let list = match modality {
                Modality::Face => &f.face,
                Modality::Palm => &f.palm,
            };
            list[r.clone()].iter().cloned()
        })
        .collect();
    Ok(DistanceNormalizer::fit_training(&pooled)?)
}

/// Per-modality similarity scores for one list of trials.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialScores {
    pub face: ScoreSet,
    pub palm: ScoreSet,
    genuine_pairs: Vec<(f64, f64)>,
    impostor_pairs: Vec<(f64, f64)>,
}

impl TrialScores {
    pub fn fused(&self, policy: &FusionPolicy) -> Result<ScoreSet, EvalError> {
        let apply = |pairs: &[(f64, f64)]| -> Result<Vec<f64>, EvalError> {
            pairs
                .iter()
                .map(|&(f, p)| Ok(fuse(f, p, policy)?))
                .collect()
        };
        ScoreSet::new(apply(&self.genuine_pairs)?, apply(&self.impostor_pairs)?)
    }

    pub fn genuine_trials(&self) -> usize {
        self.genuine_pairs.len()
    }

    pub fn impostor_trials(&self) -> usize {
        self.impostor_pairs.len()
    }
}

/// Raw `(face, palm)` distances for one trial list.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TrialDistances {
    genuine: Vec<(f64, f64)>,
    impostor: Vec<(f64, f64)>,
}

impl TrialDistances {
    fn all(&self, modality: Modality) -> Vec<f64> {
        self.genuine
            .iter()
            .chain(&self.impostor)
            .map(|&(f, p)| match modality {
                Modality::Face => f,
                Modality::Palm => p,
            })
            .collect()
    }
}

/// Distances for the trial protocol with probes drawn from `probes` and
/// references from `references` (per subject).
pub(crate) fn trial_distances(
    features: &[SubjectFeatures],
    probes: &[Range<usize>],
    references: &[Range<usize>],
) -> Result<TrialDistances, EvalError> {
    let pair = |s: usize, p: usize, t: usize, r: usize| -> Result<(f64, f64), EvalError> {
        Ok((
            euclidean_distance(&features[s].face[p], &features[t].face[r])?,
            euclidean_distance(&features[s].palm[p], &features[t].palm[r])?,
        ))
    };
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for s in 0..features.len() {
        for p in probes[s].clone() {
            for r in references[s].clone() {
                genuine.push(pair(s, p, s, r)?);
            }
        }
        for (t, reference) in references.iter().enumerate() {
            if t != s {
                impostor.push(pair(s, probes[s].start, t, reference.start)?);
            }
        }
    }
    Ok(TrialDistances { genuine, impostor })
}

pub(crate) fn score_distances(
    distances: &TrialDistances,
    face_norm: &DistanceNormalizer,
    palm_norm: &DistanceNormalizer,
) -> Result<TrialScores, EvalError> {
    let to_scores = |pairs: &[(f64, f64)]| -> Result<Vec<(f64, f64)>, EvalError> {
        pairs
            .iter()
            .map(|&(df, dp)| {
                Ok((
                    distance_to_similarity(df, face_norm)?,
                    distance_to_similarity(dp, palm_norm)?,
                ))
            })
            .collect()
    };
    let genuine_pairs = to_scores(&distances.genuine)?;
    let impostor_pairs = to_scores(&distances.impostor)?;
    let (gf, gp): (Vec<f64>, Vec<f64>) = genuine_pairs.iter().copied().unzip();
    let (i_f, ip): (Vec<f64>, Vec<f64>) = impostor_pairs.iter().copied().unzip();
    Ok(TrialScores {
        face: ScoreSet::new(gf, i_f)?,
        palm: ScoreSet::new(gp, ip)?,
        genuine_pairs,
        impostor_pairs,
    })
}

/// Scores the trial protocol for `dataset` under a trained system.
pub fn score_trials(
    system: &TrainedSystem,
    dataset: &Dataset,
    probes: &[Range<usize>],
    references: &[Range<usize>],
    preprocess_config: &PreprocessConfig,
) -> Result<TrialScores, EvalError> {
    let images = preprocess_dataset(dataset, preprocess_config)?;
    let features = project_all(&images, &system.face_model, &system.palm_model)?;
    score_distances(
        &trial_distances(&features, probes, references)?,
        &system.face_normalizer,
        &system.palm_normalizer,
    )
}

fn fit_on_images(
    images: &[SubjectImages],
    train: &[Range<usize>],
    tune: Option<&[Range<usize>]>,
    config: &ExperimentConfig,
) -> Result<(TrainedSystem, Vec<SubjectFeatures>), EvalError> {
    let (face_model, face_report) =
        train_modality(images, train, Modality::Face, config.components)?;
    let (palm_model, palm_report) =
        train_modality(images, train, Modality::Palm, config.components)?;
    let features = project_all(images, &face_model, &palm_model)?;
    let tune_distances = tune
        .map(|ranges| trial_distances(&features, ranges, train))
        .transpose()?;
    // tune trials follow the test protocol, so their distance range is the
    // right calibration; train pairs are the fallback without tuning data
    let (face_normalizer, palm_normalizer) = match &tune_distances {
        Some(d) => (
            DistanceNormalizer::fit(&d.all(Modality::Face))?,
            DistanceNormalizer::fit(&d.all(Modality::Palm))?,
        ),
        None => (
            fit_normalizer(&features, train, Modality::Face)?,
            fit_normalizer(&features, train, Modality::Palm)?,
        ),
    };
    let tuning = tune_distances
        .as_ref()
        .map(|d| score_distances(d, &face_normalizer, &palm_normalizer))
        .transpose()?;
    let face_tune = tuning.as_ref().map(|t| roc_and_eer(&t.face));
    let palm_tune = tuning.as_ref().map(|t| roc_and_eer(&t.palm));

    let (alpha, beta, weights) = match (config.weights, &face_tune, &palm_tune) {
        (WeightMode::Fixed { alpha, beta }, _, _) => (alpha, beta, None),
        (WeightMode::Auto, Some(face), Some(palm)) => {
            // worse-than-chance modalities are weighted as chance
            let w = compute_weights(
                ModalityErrorStats {
                    eer: face.eer.min(0.5),
                },
                ModalityErrorStats {
                    eer: palm.eer.min(0.5),
                },
            )?;
            (w.alpha, w.beta, Some(w))
        }
        (WeightMode::Auto, _, _) => (1.0, 1.0, None),
    };
    let unthresholded = FusionPolicy::new(alpha, beta, DEFAULT_THRESHOLD)?;
    let threshold = match (config.threshold, &tuning) {
        (ThresholdMode::Fixed(t), _) => t,
        (ThresholdMode::Auto, Some(t)) => roc_and_eer(&t.fused(&unthresholded)?).eer_threshold,
        (ThresholdMode::Auto, None) => DEFAULT_THRESHOLD,
    };
    let policy = unthresholded.with_threshold(threshold)?;

    let system = TrainedSystem {
        face_model,
        palm_model,
        face_report,
        palm_report,
        face_normalizer,
        palm_normalizer,
        policy,
        weights,
        face_threshold: face_tune
            .as_ref()
            .map_or(DEFAULT_THRESHOLD, |r| r.eer_threshold),
        palm_threshold: palm_tune
            .as_ref()
            .map_or(DEFAULT_THRESHOLD, |r| r.eer_threshold),
    };
    Ok((system, features))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemReport {
    pub face: EvalReport,
    pub palm: EvalReport,
    pub fused: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub system: TrainedSystem,
    /// Test-partition reports at the tuned operating thresholds.
    pub test: SystemReport,
    pub partitions: Vec<Partitions>,
}

impl ExperimentResult {
    /// Trait / Algorithm / FAR / FRR / Accuracy table, percentages.
    pub fn summary_table(&self) -> String {
        let rows = [
            ("Face", "Canonical form based", &self.test.face),
            ("Palmprint", "Canonical form based", &self.test.palm),
            ("Fused", "Sum of scores", &self.test.fused),
        ];
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:<21} {:>7} {:>7} {:>9}",
            "Trait", "Algorithm", "FAR", "FRR", "Accuracy"
        );
        for (name, algorithm, r) in rows {
            let _ = writeln!(
                out,
                "{:<10} {:<21} {:>6.2}% {:>6.2}% {:>8.2}%",
                name,
                algorithm,
                100.0 * r.far_at_threshold,
                100.0 * r.frr_at_threshold,
                100.0 * r.accuracy
            );
        }
        out
    }
}

pub fn run_experiment(
    dataset: &Dataset,
    split: SplitPolicy,
    config: &ExperimentConfig,
) -> Result<ExperimentResult, EvalError> {
    let partitions = split_partitions(dataset, split)?;
    let train: Vec<Range<usize>> = partitions.iter().map(|p| p.train.clone()).collect();
    let tune: Vec<Range<usize>> = partitions.iter().map(|p| p.tune.clone()).collect();
    let test: Vec<Range<usize>> = partitions.iter().map(|p| p.test.clone()).collect();

    let images = preprocess_dataset(dataset, &config.preprocess)?;
    let (system, features) = fit_on_images(&images, &train, Some(&tune), config)?;
    let trials = score_distances(
        &trial_distances(&features, &test, &train)?,
        &system.face_normalizer,
        &system.palm_normalizer,
    )?;

    let test = SystemReport {
        face: report_at(&trials.face, system.face_threshold),
        palm: report_at(&trials.palm, system.palm_threshold),
        fused: report_at(&trials.fused(&system.policy)?, system.policy.threshold()),
    };
    Ok(ExperimentResult {
        system,
        test,
        partitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{synthesize_dataset, SynthSpec};

    fn small_spec() -> SynthSpec {
        SynthSpec {
            subjects: 6,
            samples_per_subject: 6,
            image_size: (12, 12),
            ..SynthSpec::default()
        }
    }

    fn config() -> ExperimentConfig {
        ExperimentConfig {
            preprocess: PreprocessConfig {
                canonical_size: (12, 12),
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn halves_split() {
        let ds = synthesize_dataset(&small_spec()).unwrap();
        let parts = split_partitions(&ds, SplitPolicy::Halves).unwrap();
        assert_eq!(
            parts[0],
            Partitions {
                train: 0..3,
                tune: 3..4,
                test: 4..6
            }
        );

        let two = synthesize_dataset(&SynthSpec {
            samples_per_subject: 2,
            ..small_spec()
        })
        .unwrap();
        assert!(matches!(
            split_partitions(&two, SplitPolicy::Halves),
            Err(EvalError::InvalidSplit(_))
        ));
        assert!(matches!(
            split_partitions(&ds, SplitPolicy::Counts { train: 5, tune: 2 }),
            Err(EvalError::InvalidSplit(_))
        ));
    }

    #[test]
    fn trial_counts_follow_protocol() {
        let ds = synthesize_dataset(&small_spec()).unwrap();
        let result = run_experiment(&ds, SplitPolicy::Halves, &config()).unwrap();
        // 6 subjects x 2 test probes x 3 references ; 6 x 5 ordered impostor pairs
        assert_eq!(result.test.face.genuine_trials, 6 * 2 * 3);
        assert_eq!(result.test.face.impostor_trials, 6 * 5);
        assert_eq!(result.test.fused.genuine_trials, 36);
    }

    #[test]
    fn beta_zero_reduces_to_face() {
        let ds = synthesize_dataset(&small_spec()).unwrap();
        let cfg = ExperimentConfig {
            weights: WeightMode::Fixed {
                alpha: 1.0,
                beta: 0.0,
            },
            ..config()
        };
        let result = run_experiment(&ds, SplitPolicy::Halves, &cfg).unwrap();
        let (f, u) = (&result.test.face, &result.test.fused);
        assert!((f.far_at_threshold - u.far_at_threshold).abs() < 1e-12);
        assert!((f.frr_at_threshold - u.frr_at_threshold).abs() < 1e-12);
        assert!((f.accuracy - u.accuracy).abs() < 1e-12);
        assert!((f.eer - u.eer).abs() < 1e-12);
        assert_eq!(f.roc, u.roc);
    }

    #[test]
    fn summary_has_table_columns() {
        let ds = synthesize_dataset(&small_spec()).unwrap();
        let result = run_experiment(&ds, SplitPolicy::Halves, &config()).unwrap();
        let table = result.summary_table();
        let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(header, ["Trait", "Algorithm", "FAR", "FRR", "Accuracy"]);
        assert_eq!(table.lines().count(), 4);
    }
}
