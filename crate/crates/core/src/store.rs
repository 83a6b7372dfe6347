//! Checksummed binary persistence for models, galleries and fusion policies.
//!
//! One artifact per file. Every file is
//!
//! ```text
//! header (29 bytes) | payload | CRC-32 (IEEE) of all preceding bytes, u32 LE
//! ```
//!
//! with the header laid out as magic `"FUSEID\0"`, format version (`u32`),
//! artifact kind (`u8`), modality (`u8`), and two `u64` dimensions `n`, `K`.
//! All integers and IEEE-754 doubles are little-endian. The per-kind payload
//! layouts and byte offsets are listed in `docs/FORMAT.md`.
//!
//! Loading validates, in order: header length, magic, version, expected file
//! length, checksum, kind, then the payload itself. Writes go to a temporary
//! file in the target directory that is atomically renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::fusion::FusionPolicy;
use crate::matching::{DistanceNormalizer, Template};
use crate::subspace::{FeatureVector, SubspaceError, SubspaceModel};
use crate::Modality;

pub const MAGIC: &[u8; 7] = b"FUSEID\0";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 29;
const CRC_LEN: usize = 4;
const POLICY_PAYLOAD_LEN: usize = 7 * 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ArtifactKind {
    Model = 1,
    Gallery = 2,
    Policy = 3,
}

impl ArtifactKind {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(ArtifactKind::Model),
            2 => Some(ArtifactKind::Gallery),
            3 => Some(ArtifactKind::Policy),
            _ => None,
        }
    }
}

fn modality_byte(m: Option<Modality>) -> u8 {
    match m {
        None => 0,
        Some(Modality::Face) => 1,
        Some(Modality::Palm) => 2,
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: not a fuseid artifact")]
    MagicMismatch,
    #[error("unsupported format version {found} (this build reads version {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("truncated artifact: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("expected a {expected:?} artifact, found kind byte {found}")]
    WrongKind { expected: ArtifactKind, found: u8 },
    #[error("malformed artifact: {0}")]
    Malformed(String),
    #[error("invalid gallery record: {0}")]
    InvalidRecord(String),
    #[error(transparent)]
    Model(#[from] SubspaceError),
}

/// Parsed fixed-size header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArtifactHeader {
    pub version: u32,
    pub kind: u8,
    pub modality: u8,
    pub n: u64,
    pub k: u64,
}

impl ArtifactHeader {
    fn write(kind: ArtifactKind, modality: Option<Modality>, n: u64, k: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(kind as u8);
        out.push(modality_byte(modality));
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(&k.to_le_bytes());
        out
    }

    pub fn read(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) {
                return Err(StoreError::Truncated {
                    needed: HEADER_LEN,
                    available: bytes.len(),
                });
            }
            return Err(StoreError::MagicMismatch);
        }
        if bytes.len() < HEADER_LEN {
            return Err(StoreError::Truncated {
                needed: HEADER_LEN,
                available: bytes.len(),
            });
        }
        let version = u32::from_le_bytes(bytes[7..11].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion { found: version });
        }
        Ok(ArtifactHeader {
            version,
            kind: bytes[11],
            modality: bytes[12],
            n: u64::from_le_bytes(bytes[13..21].try_into().unwrap()),
            k: u64::from_le_bytes(bytes[21..29].try_into().unwrap()),
        })
    }
}

fn put_f64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn finish(mut out: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], StoreError> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(StoreError::Truncated {
                needed: self.pos.saturating_add(len),
                available: self.bytes.len(),
            })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, StoreError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, StoreError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>, StoreError> {
        let raw = self.take(
            count
                .checked_mul(8)
                .ok_or_else(|| StoreError::Malformed("length overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn len_u64(&mut self) -> Result<usize, StoreError> {
        let v = self.u64()?;
        usize::try_from(v)
            .map_err(|_| StoreError::Malformed(format!("length {v} exceeds address space")))
    }
}

fn size_from(parts: &[u64]) -> Option<usize> {
    let mut total: u64 = 0;
    for &p in parts {
        total = total.checked_add(p)?;
    }
    usize::try_from(total).ok()
}

/// Runs the shared validation sequence and returns the header plus payload slice.
fn open(bytes: &[u8], expected: ArtifactKind) -> Result<(ArtifactHeader, &[u8]), StoreError> {
    let header = ArtifactHeader::read(bytes)?;
    let payload_len = match ArtifactKind::from_byte(header.kind) {
        Some(ArtifactKind::Model) => header.n.checked_mul(header.k).and_then(|nk| {
            size_from(&[
                nk.checked_mul(8)?,
                header.n.checked_mul(8)?,
                header.k.checked_mul(8)?,
                16,
            ])
        }),
        Some(ArtifactKind::Policy) => Some(POLICY_PAYLOAD_LEN),
        Some(ArtifactKind::Gallery) => {
            if bytes.len() < HEADER_LEN + 8 {
                return Err(StoreError::Truncated {
                    needed: HEADER_LEN + 8 + CRC_LEN,
                    available: bytes.len(),
                });
            }
            let body = u64::from_le_bytes(bytes[HEADER_LEN..HEADER_LEN + 8].try_into().unwrap());
            size_from(&[8, body])
        }
        None => None,
    };
    if let Some(len) =
        payload_len.and_then(|p| size_from(&[HEADER_LEN as u64, p as u64, CRC_LEN as u64]))
    {
        if bytes.len() < len {
            return Err(StoreError::Truncated {
                needed: len,
                available: bytes.len(),
            });
        }
    }
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(StoreError::Truncated {
            needed: HEADER_LEN + CRC_LEN,
            available: bytes.len(),
        });
    }
    let body_end = bytes.len() - CRC_LEN;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(StoreError::ChecksumMismatch { stored, computed });
    }
    if header.kind != expected as u8 {
        return Err(StoreError::WrongKind {
            expected,
            found: header.kind,
        });
    }
    match payload_len {
        Some(len) if len == body_end - HEADER_LEN => Ok((header, &bytes[HEADER_LEN..body_end])),
        _ => Err(StoreError::Malformed(format!(
            "payload is {} bytes, header implies {:?}",
            body_end - HEADER_LEN,
            payload_len
        ))),
    }
}

fn read_modality(byte: u8) -> Result<Modality, StoreError> {
    match byte {
        1 => Ok(Modality::Face),
        2 => Ok(Modality::Palm),
        other => Err(StoreError::Malformed(format!(
            "model modality byte {other}"
        ))),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let io_err = |source: std::io::Error| StoreError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>, StoreError> {
    fs::read(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---- model ----

pub fn encode_model(model: &SubspaceModel) -> Vec<u8> {
    let (n, k) = (model.pixels(), model.components());
    let mut out = ArtifactHeader::write(
        ArtifactKind::Model,
        Some(model.modality()),
        n as u64,
        k as u64,
    );
    put_f64s(&mut out, model.mean().iter().copied());
    put_f64s(&mut out, model.eigenvalues().iter().copied());
    // column-major: each basis vector is contiguous
    put_f64s(&mut out, model.basis().iter().copied());
    let (rows, cols) = model.canonical_size();
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    finish(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<SubspaceModel, StoreError> {
    let (header, payload) = open(bytes, ArtifactKind::Model)?;
    let modality = read_modality(header.modality)?;
    let (n, k) = (header.n as usize, header.k as usize);
    let mut r = Reader {
        bytes: payload,
        pos: 0,
    };
    let mean = r.f64s(n)?;
    let eigenvalues = r.f64s(k)?;
    let basis = DMatrix::from_column_slice(n, k, &r.f64s(n * k)?);
    let rows = r.len_u64()?;
    let cols = r.len_u64()?;
    if rows.checked_mul(cols) != Some(n) {
        return Err(StoreError::Malformed(format!(
            "canonical size {rows}x{cols} does not match n = {n}"
        )));
    }
    Ok(SubspaceModel::new(
        modality,
        mean,
        eigenvalues,
        basis,
        (rows, cols),
    )?)
}

pub fn save_model(model: &SubspaceModel, path: impl AsRef<Path>) -> Result<(), StoreError> {
    write_atomic(path.as_ref(), &encode_model(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SubspaceModel, StoreError> {
    decode_model(&read_file(path.as_ref())?)
}

// ---- gallery ----

/// One enrolled subject.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryRecord {
    pub subject_id: String,
    pub face: Vec<FeatureVector>,
    pub palm: Vec<FeatureVector>,
    /// Unix seconds.
    pub enrolled_at: i64,
}

impl GalleryRecord {
    pub fn samples(&self, modality: Modality) -> &[FeatureVector] {
        match modality {
            Modality::Face => &self.face,
            Modality::Palm => &self.palm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gallery {
    pub records: Vec<GalleryRecord>,
}

impl Gallery {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn get(&self, subject_id: &str) -> Option<&GalleryRecord> {
        self.records.iter().find(|r| r.subject_id == subject_id)
    }

    /// Per-subject templates for one modality, skipping subjects without samples.
    pub fn templates(&self, modality: Modality) -> Vec<Template> {
        self.records
            .iter()
            .filter(|r| !r.samples(modality).is_empty())
            .map(|r| Template {
                subject_id: r.subject_id.clone(),
                modality,
                samples: r.samples(modality).to_vec(),
            })
            .collect()
    }

    /// Feature length per modality (0 when no record has that modality).
    pub fn dims(&self) -> Result<(usize, usize), StoreError> {
        let mut dims = [None::<usize>, None];
        for record in &self.records {
            validate_subject_id(&record.subject_id)?;
            if record.face.is_empty() && record.palm.is_empty() {
                return Err(StoreError::InvalidRecord(format!(
                    "subject '{}' has no samples",
                    record.subject_id
                )));
            }
            for (slot, modality) in Modality::ALL.iter().enumerate() {
                for f in record.samples(*modality) {
                    if f.modality != *modality {
                        return Err(StoreError::InvalidRecord(format!(
                            "subject '{}' has a {} feature in its {} list",
                            record.subject_id, f.modality, modality
                        )));
                    }
                    match dims[slot] {
                        None => dims[slot] = Some(f.len()),
                        Some(d) if d != f.len() => {
                            return Err(StoreError::InvalidRecord(format!(
                                "subject '{}' has a {}-length {} feature, expected {d}",
                                record.subject_id,
                                f.len(),
                                modality
                            )))
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok((dims[0].unwrap_or(0), dims[1].unwrap_or(0)))
    }
}

fn validate_subject_id(id: &str) -> Result<(), StoreError> {
    if id.is_empty() || id.chars().any(char::is_control) {
        return Err(StoreError::InvalidRecord(format!(
            "subject id {id:?} must be non-empty printable text"
        )));
    }
    Ok(())
}

pub fn encode_gallery(gallery: &Gallery) -> Result<Vec<u8>, StoreError> {
    let (face_dim, palm_dim) = gallery.dims()?;
    let mut body = Vec::new();
    body.extend_from_slice(&(gallery.records.len() as u64).to_le_bytes());
    for record in &gallery.records {
        body.extend_from_slice(&(record.subject_id.len() as u64).to_le_bytes());
        body.extend_from_slice(record.subject_id.as_bytes());
        body.extend_from_slice(&record.enrolled_at.to_le_bytes());
        for list in [&record.face, &record.palm] {
            body.extend_from_slice(&(list.len() as u64).to_le_bytes());
            for f in list {
                put_f64s(&mut body, f.coords.iter().copied());
            }
        }
    }
    let mut out = ArtifactHeader::write(
        ArtifactKind::Gallery,
        None,
        face_dim as u64,
        palm_dim as u64,
    );
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(finish(out))
}

pub fn decode_gallery(bytes: &[u8]) -> Result<Gallery, StoreError> {
    let (header, payload) = open(bytes, ArtifactKind::Gallery)?;
    let (face_dim, palm_dim) = (header.n as usize, header.k as usize);
    let mut r = Reader {
        bytes: payload,
        pos: 8,
    };
    let count = r.len_u64()?;
    let mut records = Vec::new();
    for _ in 0..count {
        let id_len = r.len_u64()?;
        let subject_id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|e| StoreError::Malformed(format!("subject id is not UTF-8: {e}")))?
            .to_string();
        let enrolled_at = r.i64()?;
        let mut lists = [Vec::new(), Vec::new()];
        for (slot, (modality, dim)) in [(Modality::Face, face_dim), (Modality::Palm, palm_dim)]
            .into_iter()
            .enumerate()
        {
            let samples = r.len_u64()?;
            for _ in 0..samples {
                lists[slot].push(FeatureVector::new(modality, r.f64s(dim)?));
            }
        }
        let [face, palm] = lists;
        records.push(GalleryRecord {
            subject_id,
            face,
            palm,
            enrolled_at,
        });
    }
    if r.pos != payload.len() {
        return Err(StoreError::Malformed(format!(
            "{} trailing payload bytes",
            payload.len() - r.pos
        )));
    }
    let gallery = Gallery { records };
    gallery.dims()?;
    Ok(gallery)
}

pub fn save_gallery(gallery: &Gallery, path: impl AsRef<Path>) -> Result<(), StoreError> {
    write_atomic(path.as_ref(), &encode_gallery(gallery)?)
}

pub fn load_gallery(path: impl AsRef<Path>) -> Result<Gallery, StoreError> {
    decode_gallery(&read_file(path.as_ref())?)
}

// ---- policy ----

/// Fusion policy together with the per-modality distance normalizers it was
/// tuned against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyArtifact {
    pub policy: FusionPolicy,
    pub face_normalizer: DistanceNormalizer,
    pub palm_normalizer: DistanceNormalizer,
}

impl PolicyArtifact {
    pub fn normalizer(&self, modality: Modality) -> &DistanceNormalizer {
        match modality {
            Modality::Face => &self.face_normalizer,
            Modality::Palm => &self.palm_normalizer,
        }
    }
}

pub fn encode_policy(artifact: &PolicyArtifact) -> Vec<u8> {
    let mut out = ArtifactHeader::write(ArtifactKind::Policy, None, 0, 0);
    let p = &artifact.policy;
    put_f64s(
        &mut out,
        [
            p.alpha(),
            p.beta(),
            p.threshold(),
            artifact.face_normalizer.d_min(),
            artifact.face_normalizer.d_max(),
            artifact.palm_normalizer.d_min(),
            artifact.palm_normalizer.d_max(),
        ],
    );
    finish(out)
}

pub fn decode_policy(bytes: &[u8]) -> Result<PolicyArtifact, StoreError> {
    let (_, payload) = open(bytes, ArtifactKind::Policy)?;
    let mut r = Reader {
        bytes: payload,
        pos: 0,
    };
    let bad = |e: &dyn std::fmt::Display| StoreError::Malformed(e.to_string());
    let (alpha, beta, threshold) = (r.f64()?, r.f64()?, r.f64()?);
    let policy = FusionPolicy::from_normalized(alpha, beta, threshold).map_err(|e| bad(&e))?;
    let face_normalizer = DistanceNormalizer::new(r.f64()?, r.f64()?).map_err(|e| bad(&e))?;
    let palm_normalizer = DistanceNormalizer::new(r.f64()?, r.f64()?).map_err(|e| bad(&e))?;
    Ok(PolicyArtifact {
        policy,
        face_normalizer,
        palm_normalizer,
    })
}

pub fn save_policy(artifact: &PolicyArtifact, path: impl AsRef<Path>) -> Result<(), StoreError> {
    write_atomic(path.as_ref(), &encode_policy(artifact))
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<PolicyArtifact, StoreError> {
    decode_policy(&read_file(path.as_ref())?)
}
