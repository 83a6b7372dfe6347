//! `subject_id,modality,sample_index,path` manifests.
//!
//! Relative paths resolve against the manifest's own directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use fuseid_core::evaluation::{Dataset, Subject};
use fuseid_core::imaging::RawImage;
use fuseid_core::Modality;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub subject_id: String,
    pub modality: String,
    pub sample_index: usize,
    pub path: String,
}

pub fn write(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut out =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening manifest {}", path.display()))?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{}: row {}", path.display(), i + 1)))
        .collect()
}

/// Accepts a manifest file or a directory containing `manifest.csv`.
pub fn locate(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("manifest.csv")
    } else {
        path.to_path_buf()
    }
}

/// Image paths per subject and modality, ordered by subject id then sample index.
pub struct Catalog {
    pub subjects: BTreeMap<String, [BTreeMap<usize, PathBuf>; 2]>,
}

fn slot(modality: Modality) -> usize {
    match modality {
        Modality::Face => 0,
        Modality::Palm => 1,
    }
}

impl Catalog {
    pub fn from_manifest(manifest: &Path) -> Result<Self> {
        let base = manifest.parent().unwrap_or(Path::new(""));
        let mut subjects: BTreeMap<String, [BTreeMap<usize, PathBuf>; 2]> = BTreeMap::new();
        for row in read(manifest)? {
            let modality: Modality = row.modality.parse().map_err(anyhow::Error::msg)?;
            if row.subject_id.is_empty() {
                bail!("{}: empty subject id", manifest.display());
            }
            let entry = subjects.entry(row.subject_id.clone()).or_default();
            if entry[slot(modality)]
                .insert(row.sample_index, base.join(&row.path))
                .is_some()
            {
                bail!(
                    "{}: duplicate {} sample {} for subject {}",
                    manifest.display(),
                    modality,
                    row.sample_index,
                    row.subject_id
                );
            }
        }
        Ok(Catalog { subjects })
    }

    pub fn paths<'a>(
        &'a self,
        subject: &str,
        modality: Modality,
    ) -> impl Iterator<Item = &'a PathBuf> + 'a {
        self.subjects
            .get(subject)
            .into_iter()
            .flat_map(move |s| s[slot(modality)].values())
    }

    /// Loads every image as a paired dataset; face and palm sample indices
    /// must agree per subject.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let mut subjects = Vec::with_capacity(self.subjects.len());
        for (id, [face, palm]) in &self.subjects {
            if !face.keys().eq(palm.keys()) {
                bail!("subject {id}: face and palm sample indices differ");
            }
            let load = |m: &BTreeMap<usize, PathBuf>| -> Result<Vec<RawImage>> {
                m.values()
                    .map(|p| RawImage::load(p).map_err(Into::into))
                    .collect()
            };
            subjects.push(Subject {
                id: id.clone(),
                face: load(face)?,
                palm: load(palm)?,
            });
        }
        Ok(Dataset { subjects })
    }
}
