use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};

use fuseid_core::evaluation::{
    run_experiment, synthesize_dataset, write_roc_csv, Dataset, EvalReport, ExperimentConfig,
    SplitPolicy, SynthSpec, ThresholdMode, WeightMode,
};
use fuseid_core::fusion::{rank_fused, Decision, FusionPolicy, Verdict, DEFAULT_THRESHOLD};
use fuseid_core::imaging::{preprocess, PreprocessConfig, RawImage};
use fuseid_core::matching::{
    distance_to_similarity, match_gallery, template_distance, DistanceNormalizer, Template,
};
use fuseid_core::store::{self, Gallery, GalleryRecord, PolicyArtifact};
use fuseid_core::subspace::{project, train_with_report, FeatureVector, SubspaceModel};
use fuseid_core::Modality;

use crate::config::RunConfig;
use crate::manifest::{self, Catalog, ManifestRow};

pub struct SynthOptions {
    pub subjects: usize,
    pub samples: usize,
    pub sigma: f64,
    pub contrast: f64,
    pub shared_noise: bool,
}

impl SynthOptions {
    pub fn spec(&self, config: &RunConfig) -> SynthSpec {
        SynthSpec {
            subjects: self.subjects,
            samples_per_subject: self.samples,
            image_size: (config.size.rows, config.size.cols),
            contrast: self.contrast,
            sigma: self.sigma,
            independent_noise: !self.shared_noise,
            seed: config.seed,
        }
    }
}

fn preprocess_config(config: &RunConfig) -> PreprocessConfig {
    PreprocessConfig {
        canonical_size: (config.size.rows, config.size.cols),
    }
}

pub fn synth(out: &Path, options: &SynthOptions, config: &RunConfig) -> Result<ExitCode> {
    let dataset = synthesize_dataset(&options.spec(config))?;
    let mut rows = Vec::new();
    for modality in Modality::ALL {
        let dir = out.join(modality.as_str());
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for subject in &dataset.subjects {
            for (i, img) in subject.samples(modality).iter().enumerate() {
                let name = format!("{}/{}_{}.pgm", modality.as_str(), subject.id, i);
                img.save(out.join(&name))?;
                rows.push(ManifestRow {
                    subject_id: subject.id.clone(),
                    modality: modality.as_str().into(),
                    sample_index: i,
                    path: name,
                });
            }
        }
    }
    manifest::write(&out.join("manifest.csv"), &rows)?;
    println!(
        "wrote {} images for {} subjects to {}",
        rows.len(),
        dataset.subjects.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// All .pgm/.ppm/.pnm files in `dir`, sorted by name; every unreadable file is
/// reported.
pub fn load_image_dir(dir: &Path) -> Result<Vec<(PathBuf, RawImage)>> {
    let entries =
        fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| ["pgm", "ppm", "pnm"].contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("{}: no .pgm/.ppm images found", dir.display());
    }
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for path in paths {
        match RawImage::load(&path) {
            Ok(img) => images.push((path, img)),
            Err(e) => failures.push(format!("  {}: {e}", path.display())),
        }
    }
    if !failures.is_empty() {
        bail!(
            "{} unreadable image(s) in {}:\n{}",
            failures.len(),
            dir.display(),
            failures.join("\n")
        );
    }
    Ok(images)
}

pub fn train(face_dir: &Path, palm_dir: &Path, config: &RunConfig) -> Result<ExitCode> {
    let pre = preprocess_config(config);
    let mut outputs = Vec::new();
    for (modality, dir) in [(Modality::Face, face_dir), (Modality::Palm, palm_dir)] {
        let images = load_image_dir(dir)?
            .iter()
            .map(|(path, img)| {
                preprocess(img, modality, &pre).with_context(|| path.display().to_string())
            })
            .collect::<Result<Vec<_>>>()?;
        let (model, report) = train_with_report(&images, modality, config.components)
            .with_context(|| format!("training {modality} model"))?;
        let features = images
            .iter()
            .map(|img| project(&model, img))
            .collect::<Result<Vec<_>, _>>()?;
        let normalizer = DistanceNormalizer::fit_training(&features)
            .with_context(|| format!("fitting {modality} normalizer"))?;
        println!(
            "{modality}: n={} N={} K={} retained_energy={}",
            report.pixels, report.samples, report.components, report.retained_energy
        );
        outputs.push((model, normalizer));
    }
    let (alpha, beta) = config.weights.unwrap_or((1.0, 1.0));
    let policy = PolicyArtifact {
        policy: FusionPolicy::new(alpha, beta, config.threshold.unwrap_or(DEFAULT_THRESHOLD))?,
        face_normalizer: outputs[0].1,
        palm_normalizer: outputs[1].1,
    };
    save_system(config, &outputs[0].0, &outputs[1].0, &policy)?;
    Ok(ExitCode::SUCCESS)
}

fn save_system(
    config: &RunConfig,
    face: &SubspaceModel,
    palm: &SubspaceModel,
    policy: &PolicyArtifact,
) -> Result<()> {
    let policy_dir = config.policy.parent().filter(|p| !p.as_os_str().is_empty());
    for dir in std::iter::once(config.models.as_path()).chain(policy_dir) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    store::save_model(face, config.face_model_path())?;
    store::save_model(palm, config.palm_model_path())?;
    store::save_policy(policy, &config.policy)?;
    println!(
        "saved {}, {} and {}",
        config.face_model_path().display(),
        config.palm_model_path().display(),
        config.policy.display()
    );
    Ok(())
}

struct Models {
    face: SubspaceModel,
    palm: SubspaceModel,
}

impl Models {
    fn load(config: &RunConfig) -> Result<Self> {
        let load = |path: PathBuf| {
            store::load_model(&path).with_context(|| format!("loading model {}", path.display()))
        };
        Ok(Models {
            face: load(config.face_model_path())?,
            palm: load(config.palm_model_path())?,
        })
    }

    fn get(&self, modality: Modality) -> &SubspaceModel {
        match modality {
            Modality::Face => &self.face,
            Modality::Palm => &self.palm,
        }
    }

    /// Loads, preprocesses (at the model's canonical size) and projects one image.
    fn features(&self, path: &Path, modality: Modality) -> Result<FeatureVector> {
        let model = self.get(modality);
        let img = RawImage::load(path)?;
        let pre = PreprocessConfig {
            canonical_size: model.canonical_size(),
        };
        let matrix =
            preprocess(&img, modality, &pre).with_context(|| path.display().to_string())?;
        Ok(project(model, &matrix)?)
    }
}

pub struct EnrollSource {
    pub manifest: Option<PathBuf>,
    pub per_subject: Option<usize>,
    pub id: Option<String>,
    pub face: Vec<PathBuf>,
    pub palm: Vec<PathBuf>,
}

pub fn enroll(
    source: &EnrollSource,
    enrolled_at: Option<i64>,
    config: &RunConfig,
) -> Result<ExitCode> {
    let models = Models::load(config)?;
    let enrolled_at = match enrolled_at {
        Some(t) => t,
        None => SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs() as i64),
    };
    let mut batches: Vec<(String, Vec<PathBuf>, Vec<PathBuf>)> = Vec::new();
    match (&source.manifest, &source.id) {
        (Some(path), _) => {
            let catalog = Catalog::from_manifest(&manifest::locate(path))?;
            let limit = source.per_subject.unwrap_or(usize::MAX);
            for id in catalog.subjects.keys() {
                let take = |m| catalog.paths(id, m).take(limit).cloned().collect();
                batches.push((id.clone(), take(Modality::Face), take(Modality::Palm)));
            }
        }
        (None, Some(id)) => batches.push((id.clone(), source.face.clone(), source.palm.clone())),
        (None, None) => bail!("enroll needs --manifest or --id"),
    }

    let mut gallery = if config.gallery.exists() {
        store::load_gallery(&config.gallery)
            .with_context(|| format!("loading gallery {}", config.gallery.display()))?
    } else {
        Gallery::default()
    };
    for (id, face, palm) in batches {
        let project_all = |paths: &[PathBuf], m| {
            paths
                .iter()
                .map(|p| models.features(p, m))
                .collect::<Result<Vec<_>>>()
        };
        let record = GalleryRecord {
            subject_id: id.clone(),
            face: project_all(&face, Modality::Face)?,
            palm: project_all(&palm, Modality::Palm)?,
            enrolled_at,
        };
        println!(
            "enrolled {id}: {} face, {} palm",
            record.face.len(),
            record.palm.len()
        );
        match gallery.records.iter_mut().find(|r| r.subject_id == id) {
            Some(existing) => *existing = record,
            None => gallery.records.push(record),
        }
    }
    if let Some(parent) = config
        .gallery
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
    {
        fs::create_dir_all(parent)?;
    }
    store::save_gallery(&gallery, &config.gallery)?;
    println!(
        "gallery {} holds {} subject(s)",
        config.gallery.display(),
        gallery.len()
    );
    Ok(ExitCode::SUCCESS)
}

/// Stored policy with any weight/threshold flags applied on top.
fn effective_policy(config: &RunConfig) -> Result<PolicyArtifact> {
    let mut artifact = store::load_policy(&config.policy)
        .with_context(|| format!("loading policy {}", config.policy.display()))?;
    let (alpha, beta) = config
        .weights
        .unwrap_or((artifact.policy.alpha(), artifact.policy.beta()));
    let threshold = config.threshold.unwrap_or(artifact.policy.threshold());
    if config.weights.is_some() || config.threshold.is_some() {
        artifact.policy = FusionPolicy::new(alpha, beta, threshold)?;
    }
    Ok(artifact)
}

fn load_gallery(config: &RunConfig) -> Result<Gallery> {
    store::load_gallery(&config.gallery)
        .with_context(|| format!("loading gallery {}", config.gallery.display()))
}

fn print_decision(d: &Decision) -> ExitCode {
    println!("MS_Face  = {}", d.face_score);
    println!("MS_Palm  = {}", d.palm_score);
    println!("alpha    = {}", d.policy.alpha());
    println!("beta     = {}", d.policy.beta());
    println!("MS_FINAL = {}", d.fused_score);
    println!("tau      = {}", d.policy.threshold());
    println!("verdict  = {}", d.verdict);
    match d.verdict {
        Verdict::Genuine => ExitCode::SUCCESS,
        Verdict::Impostor => ExitCode::from(1),
    }
}

pub fn verify(face: &Path, palm: &Path, claim: &str, config: &RunConfig) -> Result<ExitCode> {
    let models = Models::load(config)?;
    let artifact = effective_policy(config)?;
    let gallery = load_gallery(config)?;
    let record = gallery
        .get(claim)
        .ok_or_else(|| anyhow!("unknown subject '{claim}'"))?;
    let mut scores = [0.0; 2];
    for (slot, (modality, path)) in [(Modality::Face, face), (Modality::Palm, palm)]
        .into_iter()
        .enumerate()
    {
        if record.samples(modality).is_empty() {
            bail!("subject '{claim}' has no enrolled {modality} samples");
        }
        let template = Template {
            subject_id: record.subject_id.clone(),
            modality,
            samples: record.samples(modality).to_vec(),
        };
        let probe = models.features(path, modality)?;
        let distance = template_distance(&probe, &template)?;
        scores[slot] = distance_to_similarity(distance, artifact.normalizer(modality))?;
    }
    let decision = Decision::evaluate(scores[0], scores[1], &artifact.policy)?;
    println!("claim    = {claim}");
    Ok(print_decision(&decision))
}

pub fn identify(face: &Path, palm: &Path, top: usize, config: &RunConfig) -> Result<ExitCode> {
    let models = Models::load(config)?;
    let artifact = effective_policy(config)?;
    let gallery = load_gallery(config)?;
    if gallery.is_empty() {
        bail!("gallery {} is empty", config.gallery.display());
    }
    let mut per_modality = Vec::new();
    for (modality, path) in [(Modality::Face, face), (Modality::Palm, palm)] {
        let templates = gallery.templates(modality);
        per_modality.push(if templates.is_empty() {
            Vec::new()
        } else {
            match_gallery(
                &models.features(path, modality)?,
                &templates,
                artifact.normalizer(modality),
            )?
        });
    }
    let ranked = rank_fused(&per_modality[0], &per_modality[1], &artifact.policy)?;
    println!("rank,subject_id,ms_face,ms_palm,ms_final");
    for (i, c) in ranked.iter().take(top).enumerate() {
        println!(
            "{},{},{},{},{}",
            i + 1,
            c.subject_id,
            c.face_score,
            c.palm_score,
            c.fused_score
        );
    }
    Ok(ExitCode::SUCCESS)
}

pub fn fuse(face_score: f64, palm_score: f64, config: &RunConfig) -> Result<ExitCode> {
    let (alpha, beta) = config.weights.unwrap_or((1.0, 1.0));
    let policy = FusionPolicy::new(alpha, beta, config.threshold.unwrap_or(DEFAULT_THRESHOLD))?;
    Ok(print_decision(&Decision::evaluate(
        face_score, palm_score, &policy,
    )?))
}

pub enum EvalSource {
    Manifest(PathBuf),
    Synth(SynthOptions),
}

pub fn evaluate(
    source: &EvalSource,
    split: SplitPolicy,
    out: &Path,
    save: bool,
    config: &RunConfig,
) -> Result<ExitCode> {
    let dataset: Dataset = match source {
        EvalSource::Manifest(path) => {
            Catalog::from_manifest(&manifest::locate(path))?.load_dataset()?
        }
        EvalSource::Synth(options) => synthesize_dataset(&options.spec(config))?,
    };
    let experiment = ExperimentConfig {
        preprocess: preprocess_config(config),
        components: config.components,
        weights: config
            .weights
            .map_or(WeightMode::Auto, |(alpha, beta)| WeightMode::Fixed {
                alpha,
                beta,
            }),
        threshold: config
            .threshold
            .map_or(ThresholdMode::Auto, ThresholdMode::Fixed),
    };
    let result = run_experiment(&dataset, split, &experiment)?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let reports: [(&str, &EvalReport); 3] = [
        ("face", &result.test.face),
        ("palm", &result.test.palm),
        ("fused", &result.test.fused),
    ];
    for (name, report) in reports {
        let path = out.join(format!("{name}_roc.csv"));
        let file =
            fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_roc_csv(report, std::io::BufWriter::new(file))?;
    }
    let table = result.summary_table();
    fs::write(out.join("summary.txt"), &table)?;

    let sys = &result.system;
    println!(
        "subjects={} face_K={} palm_K={} genuine_trials={} impostor_trials={}",
        dataset.subjects.len(),
        sys.face_report.components,
        sys.palm_report.components,
        result.test.fused.genuine_trials,
        result.test.fused.impostor_trials
    );
    println!(
        "alpha={} beta={} tau={}",
        sys.policy.alpha(),
        sys.policy.beta(),
        sys.policy.threshold()
    );
    for (name, report) in reports {
        println!("{name}_eer={}", report.eer);
    }
    print!("{table}");
    println!("reports written to {}", out.display());

    if save {
        let policy = PolicyArtifact {
            policy: sys.policy,
            face_normalizer: sys.face_normalizer,
            palm_normalizer: sys.palm_normalizer,
        };
        save_system(config, &sys.face_model, &sys.palm_model, &policy)?;
    }
    Ok(ExitCode::SUCCESS)
}
