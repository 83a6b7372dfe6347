//! Run configuration: command-line flags over an optional TOML file over
//! built-in defaults.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use fuseid_core::fusion::{FusionPolicy, DEFAULT_THRESHOLD};
use fuseid_core::imaging::DEFAULT_CANONICAL_SIZE;
use fuseid_core::subspace::{ComponentPolicy, DEFAULT_ENERGY};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Size {
    pub rows: usize,
    pub cols: usize,
}

impl FromStr for Size {
    type Err = String;

    /// `ROWSxCOLS`, or a single number for a square.
    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |t: &str| -> Result<usize, String> {
            match t.trim().parse::<usize>() {
                Ok(0) => Err("image sides must be positive".into()),
                Ok(v) => Ok(v),
                Err(_) => Err(format!(
                    "'{t}' is not a size; expected ROWSxCOLS such as 32x32"
                )),
            }
        };
        match s.split_once(['x', 'X']) {
            Some((r, c)) => Ok(Size {
                rows: parse(r)?,
                cols: parse(c)?,
            }),
            None => {
                let v = parse(s)?;
                Ok(Size { rows: v, cols: v })
            }
        }
    }
}

impl fmt::Display for Size {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file supplying defaults for the options below.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Canonical image size, ROWSxCOLS (or one number for a square).
    #[arg(long, value_name = "ROWSxCOLS")]
    pub size: Option<Size>,
    /// Keep the fewest components that retain this fraction of variance.
    #[arg(long, conflicts_with = "k")]
    pub energy: Option<f64>,
    /// Keep exactly this many components (capped at the training rank).
    #[arg(long)]
    pub k: Option<usize>,
    /// Face weight; requires --beta. Omit both for automatic weights.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Palm weight; requires --alpha.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Decision threshold in [0, 1]. Omit for the tuned EER threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Seed for synthetic data.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory holding face.model and palm.model.
    #[arg(long, value_name = "DIR")]
    pub models: Option<PathBuf>,
    /// Gallery file (default: <models>/gallery.bin).
    #[arg(long, value_name = "FILE")]
    pub gallery: Option<PathBuf>,
    /// Policy file (default: <models>/policy.bin).
    #[arg(long, value_name = "FILE")]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    size: Option<String>,
    energy: Option<f64>,
    k: Option<usize>,
    alpha: Option<f64>,
    beta: Option<f64>,
    threshold: Option<f64>,
    seed: Option<u64>,
    models: Option<PathBuf>,
    gallery: Option<PathBuf>,
    policy: Option<PathBuf>,
}

impl FileConfig {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub size: Size,
    pub components: ComponentPolicy,
    /// `None` means weights are derived from tuning data.
    pub weights: Option<(f64, f64)>,
    /// `None` means the tuned EER threshold.
    pub threshold: Option<f64>,
    pub seed: u64,
    pub models: PathBuf,
    pub gallery: PathBuf,
    pub policy: PathBuf,
}

impl RunConfig {
    pub fn resolve(args: &ConfigArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };

        let size = match (args.size, &file.size) {
            (Some(s), _) => s,
            (None, Some(text)) => text
                .parse()
                .map_err(anyhow::Error::msg)
                .context("config file 'size'")?,
            (None, None) => Size {
                rows: DEFAULT_CANONICAL_SIZE.0,
                cols: DEFAULT_CANONICAL_SIZE.1,
            },
        };

        let components = match (args.k, args.energy) {
            (Some(k), _) => ComponentPolicy::Fixed(k),
            (None, Some(e)) => ComponentPolicy::Energy(e),
            (None, None) => match (file.k, file.energy) {
                (Some(_), Some(_)) => bail!("config file sets both 'k' and 'energy'"),
                (Some(k), None) => ComponentPolicy::Fixed(k),
                (None, Some(e)) => ComponentPolicy::Energy(e),
                (None, None) => ComponentPolicy::Energy(DEFAULT_ENERGY),
            },
        };
        match components {
            ComponentPolicy::Fixed(0) => bail!("k must be at least 1"),
            ComponentPolicy::Energy(e) if !(e > 0.0 && e <= 1.0) => {
                bail!("energy {e} outside (0, 1]")
            }
            _ => {}
        }

        let weights = match (args.alpha.or(file.alpha), args.beta.or(file.beta)) {
            (Some(a), Some(b)) => {
                FusionPolicy::new(a, b, DEFAULT_THRESHOLD)?;
                Some((a, b))
            }
            (None, None) => None,
            _ => bail!("alpha and beta must be given together"),
        };

        let threshold = args.threshold.or(file.threshold);
        if let Some(t) = threshold {
            if !(0.0..=1.0).contains(&t) {
                bail!("threshold {t} outside [0, 1]");
            }
        }

        let models = args
            .models
            .clone()
            .or(file.models)
            .unwrap_or_else(|| PathBuf::from("models"));
        let gallery = args
            .gallery
            .clone()
            .or(file.gallery)
            .unwrap_or_else(|| models.join("gallery.bin"));
        let policy = args
            .policy
            .clone()
            .or(file.policy)
            .unwrap_or_else(|| models.join("policy.bin"));

        Ok(RunConfig {
            size,
            components,
            weights,
            threshold,
            seed: args.seed.or(file.seed).unwrap_or(1),
            models,
            gallery,
            policy,
        })
    }

    pub fn face_model_path(&self) -> PathBuf {
        self.models.join("face.model")
    }

    pub fn palm_model_path(&self) -> PathBuf {
        self.models.join("palm.model")
    }

    /// Effective settings, one `# key = value` line each.
    pub fn echo(&self) -> String {
        let components = match self.components {
            ComponentPolicy::Fixed(k) => format!("k {k}"),
            ComponentPolicy::Energy(e) => format!("energy {e}"),
        };
        let weights = match self.weights {
            Some((a, b)) => format!("alpha {a}, beta {b}"),
            None => "auto".into(),
        };
        let threshold = self
            .threshold
            .map_or_else(|| "auto".into(), |t| t.to_string());
        [
            ("size", self.size.to_string()),
            ("components", components),
            ("weights", weights),
            ("threshold", threshold),
            ("seed", self.seed.to_string()),
            ("models", self.models.display().to_string()),
            ("gallery", self.gallery.display().to_string()),
            ("policy", self.policy.display().to_string()),
        ]
        .iter()
        .map(|(k, v)| format!("# {k} = {v}\n"))
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!(
            "32x24".parse::<Size>().unwrap(),
            Size { rows: 32, cols: 24 }
        );
        assert_eq!("16".parse::<Size>().unwrap(), Size { rows: 16, cols: 16 });
        assert!("0x4".parse::<Size>().is_err());
        assert!("big".parse::<Size>().is_err());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "size = \"16x16\"\nk = 7\nthreshold = 0.4\nseed = 9\nalpha = 1.0\nbeta = 3.0\n",
        )
        .unwrap();

        let defaults = RunConfig::resolve(&ConfigArgs::default()).unwrap();
        assert_eq!(defaults.size, Size { rows: 32, cols: 32 });
        assert_eq!(defaults.components, ComponentPolicy::Energy(0.95));
        assert_eq!(
            (defaults.weights, defaults.threshold, defaults.seed),
            (None, None, 1)
        );
        assert_eq!(defaults.policy, PathBuf::from("models/policy.bin"));

        let from_file = RunConfig::resolve(&ConfigArgs {
            config: Some(path.clone()),
            ..ConfigArgs::default()
        })
        .unwrap();
        assert_eq!(from_file.size, Size { rows: 16, cols: 16 });
        assert_eq!(from_file.components, ComponentPolicy::Fixed(7));
        assert_eq!(from_file.weights, Some((1.0, 3.0)));
        assert_eq!((from_file.threshold, from_file.seed), (Some(0.4), 9));

        let flagged = RunConfig::resolve(&ConfigArgs {
            config: Some(path),
            energy: Some(0.9),
            seed: Some(3),
            alpha: Some(2.0),
            ..ConfigArgs::default()
        })
        .unwrap();
        assert_eq!(flagged.components, ComponentPolicy::Energy(0.9));
        assert_eq!(flagged.seed, 3);
        assert_eq!(flagged.weights, Some((2.0, 3.0)));
        assert!(flagged.echo().contains("# components = energy 0.9\n"));
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            ConfigArgs {
                alpha: Some(1.0),
                ..ConfigArgs::default()
            },
            ConfigArgs {
                threshold: Some(1.5),
                ..ConfigArgs::default()
            },
            ConfigArgs {
                energy: Some(0.0),
                ..ConfigArgs::default()
            },
            ConfigArgs {
                k: Some(0),
                ..ConfigArgs::default()
            },
        ];
        for args in bad {
            assert!(RunConfig::resolve(&args).is_err(), "{args:?}");
        }
    }
}
