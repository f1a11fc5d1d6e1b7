//! On-disk sample populations.
//!
//! Layout: `<root>/<dataset_id>/manifest.jsonl` plus
//! `<root>/<dataset_id>/images/<sample_id>.png`. The manifest is one header
//! record followed by one record per sample, each a JSON object on its own
//! line. Every image is pinned by its SHA-256 digest.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scheme::{LabelRules, LabelViolation};
use crate::seed::rng_from_seed;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const IMAGES_DIR: &str = "images";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = concat!("capsynth ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Imitation,
    Synthetic,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Pool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub dataset_id: String,
    pub scheme_id: String,
    pub provenance: Provenance,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    /// Constraints every label must satisfy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_rules: Option<LabelRules>,
    /// For derived populations (e.g. synthetic from imitation): the source
    /// dataset id. Sample ids correspond one-to-one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_dataset: Option<String>,
}

impl ManifestHeader {
    pub fn new(dataset_id: &str, scheme_id: &str, provenance: Provenance) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            dataset_id: dataset_id.to_string(),
            scheme_id: scheme_id.to_string(),
            provenance,
            tool_version: TOOL_VERSION.to_string(),
            master_seed: None,
            label_rules: None,
            source_dataset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    /// Image path relative to the dataset directory.
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub split: Split,
    /// Hex SHA-256 of the image file.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
    root: PathBuf,
}

/// A sample to be persisted by [`write_dataset`].
#[derive(Debug, Clone)]
pub struct NewSample {
    pub sample_id: String,
    pub png: Vec<u8>,
    pub label: Option<String>,
    pub seed: Option<u64>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntegrityViolation {
    DuplicateId { sample_id: String },
    MissingImage { sample_id: String, path: String },
    DigestMismatch { sample_id: String },
    MalformedDigest { sample_id: String },
    Label { sample_id: String, violation: LabelViolation },
}

impl fmt::Display for IntegrityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateId { sample_id } => write!(f, "{sample_id}: duplicate sample id"),
            Self::MissingImage { sample_id, path } => {
                write!(f, "{sample_id}: image {path} is missing")
            }
            Self::DigestMismatch { sample_id } => {
                write!(f, "{sample_id}: image content does not match digest")
            }
            Self::MalformedDigest { sample_id } => write!(f, "{sample_id}: malformed digest"),
            Self::Label {
                sample_id,
                violation,
            } => write!(f, "{sample_id}: {violation}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset has no entries")]
    Empty,
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("unsupported manifest schema_version {found} (supported: {MANIFEST_SCHEMA_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("integrity check failed: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Integrity(Vec<IntegrityViolation>),
    #[error("split requests {requested} samples but only {available} exist")]
    Oversubscribed { requested: usize, available: usize },
    #[error("{0} already exists; datasets are never overwritten")]
    AlreadyExists(String),
    #[error("sample `{sample_id}`: {message}")]
    Image { sample_id: String, message: String },
    #[error("unknown sample id `{0}`")]
    UnknownSample(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .expect("in-memory PNG encoding cannot fail");
    out
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, image::ImageError> {
    Ok(image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8())
}

impl DatasetManifest {
    /// Dataset directory (parent of the manifest file).
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn image_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.image)
    }

    /// Copy of `entry` whose image path is absolute, for use in a manifest
    /// stored in another directory.
    pub fn absolute_entry(&self, entry: &ManifestEntry) -> Result<ManifestEntry, DatasetError> {
        let path = self.image_path(entry);
        let abs = std::path::absolute(&path).map_err(io_err(&path))?;
        Ok(ManifestEntry {
            image: abs.to_string_lossy().into_owned(),
            ..entry.clone()
        })
    }

    pub fn entry(&self, sample_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.sample_id == sample_id)
    }

    pub fn read_png(&self, entry: &ManifestEntry) -> Result<Vec<u8>, DatasetError> {
        let path = self.image_path(entry);
        fs::read(&path).map_err(io_err(&path))
    }

    pub fn load_image(&self, entry: &ManifestEntry) -> Result<RgbImage, DatasetError> {
        let bytes = self.read_png(entry)?;
        decode_png(&bytes).map_err(|e| DatasetError::Image {
            sample_id: entry.sample_id.clone(),
            message: e.to_string(),
        })
    }

    pub fn with_split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.split).or_insert(0) += 1;
        }
        counts
    }

    fn render_manifest(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        for e in &self.entries {
            serde_json::to_writer(&mut out, e).expect("entry serializes");
            out.push(b'\n');
        }
        out
    }

    /// Writes this manifest under a new file name in the dataset directory,
    /// e.g. after re-splitting. Existing files are never replaced.
    pub fn write_version(&self, file_name: &str) -> Result<PathBuf, DatasetError> {
        let path = self.root.join(file_name);
        write_new_file(&path, &self.render_manifest())?;
        Ok(path)
    }
}

fn write_new_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let file = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                DatasetError::AlreadyExists(path.display().to_string())
            } else {
                io_err(path)(e)
            }
        })?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Persists `samples` as a new dataset `<out_root>/<header.dataset_id>`.
pub fn write_dataset(
    samples: Vec<NewSample>,
    header: ManifestHeader,
    out_root: &Path,
) -> Result<DatasetManifest, DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut seen = HashSet::new();
    for s in &samples {
        if !seen.insert(s.sample_id.as_str()) {
            return Err(DatasetError::DuplicateId(s.sample_id.clone()));
        }
    }
    let root = out_root.join(&header.dataset_id);
    let manifest_path = root.join(MANIFEST_FILE);
    if manifest_path.exists() {
        return Err(DatasetError::AlreadyExists(manifest_path.display().to_string()));
    }
    let images = root.join(IMAGES_DIR);
    fs::create_dir_all(&images).map_err(io_err(&images))?;

    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let rel = format!("{IMAGES_DIR}/{}.png", s.sample_id);
        let path = root.join(&rel);
        fs::write(&path, &s.png).map_err(io_err(&path))?;
        entries.push(ManifestEntry {
            digest: sha256_hex(&s.png),
            sample_id: s.sample_id,
            image: rel,
            label: s.label,
            seed: s.seed,
            split: s.split,
        });
    }
    let manifest = DatasetManifest {
        header,
        entries,
        root,
    };
    write_new_file(&manifest_path, &manifest.render_manifest())?;
    Ok(manifest)
}

/// Writes a manifest-only dataset in `dir` whose entries reference images
/// elsewhere; see [`DatasetManifest::absolute_entry`].
pub fn write_derived_manifest(
    dir: &Path,
    header: ManifestHeader,
    entries: Vec<ManifestEntry>,
) -> Result<DatasetManifest, DatasetError> {
    if entries.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut seen = HashSet::new();
    for e in &entries {
        if !seen.insert(e.sample_id.as_str()) {
            return Err(DatasetError::DuplicateId(e.sample_id.clone()));
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = DatasetManifest {
        header,
        entries,
        root: dir.to_path_buf(),
    };
    write_new_file(&manifest.manifest_path(), &manifest.render_manifest())?;
    Ok(manifest)
}

/// Parses a manifest without touching the images.
pub fn parse_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let file_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let file = fs::File::open(&file_path).map_err(io_err(&file_path))?;
    let parse_err = |line: usize, message: String| DatasetError::Parse {
        path: file_path.display().to_string(),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header record".into()))?
        .map_err(io_err(&file_path))?;
    let raw: serde_json::Value =
        serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
    let version = raw.get("schema_version").and_then(|v| v.as_u64());
    match version {
        Some(v) if v == MANIFEST_SCHEMA_VERSION as u64 => {}
        Some(v) => return Err(DatasetError::UnsupportedVersion { found: v as u32 }),
        None => return Err(parse_err(1, "header lacks schema_version".into())),
    }
    let header: ManifestHeader =
        serde_json::from_value(raw).map_err(|e| parse_err(1, e.to_string()))?;
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err(&file_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(&line).map_err(|e| parse_err(i + 2, e.to_string()))?;
        entries.push(entry);
    }
    let root = file_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(DatasetManifest {
        header,
        entries,
        root,
    })
}

/// Reads a manifest (file or dataset directory) and checks every invariant,
/// including image digests.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let manifest = parse_manifest(path)?;
    let violations = verify_integrity(&manifest);
    if violations.is_empty() {
        Ok(manifest)
    } else {
        Err(DatasetError::Integrity(violations))
    }
}

/// Lists every broken invariant; empty for an untouched dataset.
pub fn verify_integrity(manifest: &DatasetManifest) -> Vec<IntegrityViolation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for e in &manifest.entries {
        if !seen.insert(e.sample_id.as_str()) {
            out.push(IntegrityViolation::DuplicateId {
                sample_id: e.sample_id.clone(),
            });
        }
        if e.digest.len() != 64 || !e.digest.bytes().all(|b| b.is_ascii_hexdigit()) {
            out.push(IntegrityViolation::MalformedDigest {
                sample_id: e.sample_id.clone(),
            });
        } else {
            match fs::read(manifest.image_path(e)) {
                Ok(bytes) if sha256_hex(&bytes) == e.digest.to_ascii_lowercase() => {}
                Ok(_) => out.push(IntegrityViolation::DigestMismatch {
                    sample_id: e.sample_id.clone(),
                }),
                Err(_) => out.push(IntegrityViolation::MissingImage {
                    sample_id: e.sample_id.clone(),
                    path: e.image.clone(),
                }),
            }
        }
        if let (Some(rules), Some(label)) = (&manifest.header.label_rules, &e.label) {
            if let Err(violation) = rules.check(label) {
                out.push(IntegrityViolation::Label {
                    sample_id: e.sample_id.clone(),
                    violation,
                });
            }
        }
    }
    out
}

/// How many entries go to each split. Entries left over after test and val
/// go to train, up to `train` when it is set; the rest go to the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SplitSpec {
    pub test: usize,
    pub val: usize,
    pub train: Option<usize>,
}

impl SplitSpec {
    /// Counts from fractions of `n`, rounded down; the remainder is train.
    pub fn from_ratios(n: usize, test: f64, val: f64) -> Self {
        Self {
            test: (n as f64 * test).floor() as usize,
            val: (n as f64 * val).floor() as usize,
            train: None,
        }
    }
}

/// Deterministically shuffles entries with `seed` and re-tags them.
pub fn split_dataset(
    manifest: &DatasetManifest,
    spec: SplitSpec,
    seed: u64,
) -> Result<DatasetManifest, DatasetError> {
    let n = manifest.entries.len();
    let requested = spec.test + spec.val + spec.train.unwrap_or(0);
    if requested > n {
        return Err(DatasetError::Oversubscribed {
            requested,
            available: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let train_cap = spec.train.unwrap_or(n);
    let mut out = manifest.clone();
    for (rank, &idx) in order.iter().enumerate() {
        let split = if rank < spec.test {
            Split::Test
        } else if rank < spec.test + spec.val {
            Split::Val
        } else if rank < spec.test + spec.val + train_cap {
            Split::Train
        } else {
            Split::Pool
        };
        out.entries[idx].split = split;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(n: usize) -> Vec<NewSample> {
        (0..n)
            .map(|i| {
                let img = RgbImage::from_pixel(8, 8, image::Rgb([i as u8, 0, 0]));
                NewSample {
                    sample_id: format!("{i:04}"),
                    png: encode_png(&img),
                    label: Some("AB".into()),
                    seed: Some(i as u64),
                    split: Split::Train,
                }
            })
            .collect()
    }

    fn header() -> ManifestHeader {
        let mut h = ManifestHeader::new("ds", "test", Provenance::Imitation);
        h.label_rules = Some(LabelRules {
            charset: "ABC".into(),
            excluded_chars: "C".into(),
            length_range: (2, 2),
        });
        h
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let written = write_dataset(samples(10), header(), dir.path()).unwrap();
        assert_eq!(written.len(), 10);
        assert!(verify_integrity(&written).is_empty());
        let read = read_manifest(&dir.path().join("ds")).unwrap();
        assert_eq!(read, written);
    }

    #[test]
    fn duplicate_id_is_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = samples(3);
        s[2].sample_id = "0001".into();
        match write_dataset(s, header(), dir.path()) {
            Err(DatasetError::DuplicateId(id)) => assert_eq!(id, "0001"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn never_overwrites() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(samples(2), header(), dir.path()).unwrap();
        assert!(matches!(
            write_dataset(samples(2), header(), dir.path()),
            Err(DatasetError::AlreadyExists(_))
        ));
    }

    #[test]
    fn flipped_byte_is_one_digest_violation() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(samples(4), header(), dir.path()).unwrap();
        let path = m.image_path(&m.entries[2]);
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        fs::write(&path, bytes).unwrap();
        let v = verify_integrity(&m);
        assert_eq!(
            v,
            vec![IntegrityViolation::DigestMismatch {
                sample_id: "0002".into()
            }]
        );
        assert!(matches!(read_manifest(m.root()), Err(DatasetError::Integrity(_))));
    }

    #[test]
    fn excluded_label_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = samples(2);
        s[1].label = Some("AC".into());
        let m = write_dataset(s, header(), dir.path()).unwrap();
        assert_eq!(
            verify_integrity(&m),
            vec![IntegrityViolation::Label {
                sample_id: "0001".into(),
                violation: LabelViolation::Excluded { ch: 'C' }
            }]
        );
    }

    #[test]
    fn unknown_version_is_a_versioned_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(samples(2), header(), dir.path()).unwrap();
        let text = fs::read_to_string(m.manifest_path()).unwrap();
        fs::write(m.manifest_path(), text.replacen("\"schema_version\":1", "\"schema_version\":7", 1)).unwrap();
        assert!(matches!(
            read_manifest(m.root()),
            Err(DatasetError::UnsupportedVersion { found: 7 })
        ));
    }

    fn fake_manifest(n: usize) -> DatasetManifest {
        DatasetManifest {
            header: ManifestHeader::new("big", "s", Provenance::Synthetic),
            entries: (0..n)
                .map(|i| ManifestEntry {
                    sample_id: i.to_string(),
                    image: format!("images/{i}.png"),
                    label: None,
                    seed: None,
                    split: Split::Pool,
                    digest: String::new(),
                })
                .collect(),
            root: PathBuf::from("."),
        }
    }

    #[test]
    fn split_counts_match_request() {
        let m = fake_manifest(120_000);
        let spec = SplitSpec {
            test: 5000,
            val: 5000,
            train: None,
        };
        let s = split_dataset(&m, spec, 3).unwrap();
        let counts = s.split_counts();
        assert_eq!(counts[&Split::Train], 110_000);
        assert_eq!(counts[&Split::Val], 5000);
        assert_eq!(counts[&Split::Test], 5000);
        assert_eq!(split_dataset(&m, spec, 3).unwrap(), s);
        assert_ne!(split_dataset(&m, spec, 4).unwrap(), s);
    }

    #[test]
    fn train_cap_covers_small_population() {
        let m = fake_manifest(500);
        let s = split_dataset(
            &m,
            SplitSpec {
                test: 0,
                val: 0,
                train: Some(500),
            },
            1,
        )
        .unwrap();
        assert_eq!(s.split_counts()[&Split::Train], 500);
        assert!(matches!(
            split_dataset(&m, SplitSpec { test: 300, val: 300, train: None }, 1),
            Err(DatasetError::Oversubscribed { requested: 600, available: 500 })
        ));
    }

    #[test]
    fn png_round_trip() {
        let img = RgbImage::from_fn(5, 4, |x, y| image::Rgb([x as u8 * 40, y as u8 * 60, 7]));
        assert_eq!(decode_png(&encode_png(&img)).unwrap(), img);
    }
}
