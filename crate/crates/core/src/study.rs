//! Mechanism study: one recognizer per preset scheme, trained on imitation
//! data and scored on a held-out test split.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{AdapterError, Gateway, PredictItem, TrainRequest};
use crate::dataset::{
    parse_manifest, read_manifest, split_dataset, DatasetError, DatasetManifest, Split, SplitSpec, MANIFEST_FILE,
};
use crate::render::{generate_dataset, GenerateError};
use crate::scheme::{preset, Mechanism, SchemeError};
use crate::seed::split_seed;

pub const STUDY_REPORT_SCHEMA_VERSION: u32 = 1;
pub const SPLIT_MANIFEST_FILE: &str = "manifest.split.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl StudyCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

impl Default for StudyCounts {
    /// One tenth of the 40,000 / 4,000 / 4,000 full-scale split.
    fn default() -> Self {
        Self {
            train: 4000,
            val: 400,
            test: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub preset: u32,
    pub scheme_id: String,
    /// Enabled mechanisms, in column order.
    pub mechanisms: Vec<Mechanism>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_success_rate: Option<f64>,
    pub success_rate: f64,
    pub test_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema_version: u32,
    pub counts: StudyCounts,
    pub seed: u64,
    pub rows: Vec<StudyRow>,
}

impl StudyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Markdown table with one Yes column per mechanism.
    pub fn to_table(&self) -> String {
        let mut out = String::from("| no |");
        let mut sep = String::from("|---|");
        for m in Mechanism::ALL {
            let _ = write!(out, " {} |", m.name());
            sep.push_str("---|");
        }
        out.push_str(" success rate |\n");
        sep.push_str("---|\n");
        out.push_str(&sep);
        for r in &self.rows {
            let _ = write!(out, "| {} |", r.preset);
            for m in Mechanism::ALL {
                out.push_str(if r.mechanisms.contains(&m) { " Yes |" } else { "  |" });
            }
            let _ = writeln!(out, " {:.1}% |", 100.0 * r.success_rate);
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("dataset {path} holds {found} samples, expected {expected}")]
    StaleDataset { path: String, found: usize, expected: usize },
}

/// Generates (or reuses) the preset's dataset under `data_root` and writes
/// its split manifest next to it.
pub fn prepare_preset_data(
    no: u32,
    counts: StudyCounts,
    seed: u64,
    data_root: &Path,
) -> Result<DatasetManifest, StudyError> {
    let cfg = preset(no)?;
    let dir = data_root.join(&cfg.scheme_id);
    let manifest = if dir.join(MANIFEST_FILE).exists() {
        read_manifest(&dir)?
    } else {
        generate_dataset(&cfg, counts.total(), split_seed(seed, no as u64), data_root, &cfg.scheme_id)?
    };
    if manifest.len() != counts.total() {
        return Err(StudyError::StaleDataset {
            path: dir.display().to_string(),
            found: manifest.len(),
            expected: counts.total(),
        });
    }
    let spec = SplitSpec {
        test: counts.test,
        val: counts.val,
        train: Some(counts.train),
    };
    let split = split_dataset(&manifest, spec, seed)?;
    let split_path = dir.join(SPLIT_MANIFEST_FILE);
    if split_path.exists() {
        let existing = parse_manifest(&split_path)?;
        if existing.entries != split.entries {
            return Err(StudyError::StaleDataset {
                path: split_path.display().to_string(),
                found: existing.len(),
                expected: split.len(),
            });
        }
        Ok(existing)
    } else {
        split.write_version(SPLIT_MANIFEST_FILE)?;
        parse_manifest(&split_path).map_err(Into::into)
    }
}

/// Trains one recognizer per preset and scores it on the test split by
/// exact string match.
pub fn run_mechanism_study(
    presets: &[u32],
    counts: StudyCounts,
    seed: u64,
    gateway: &Gateway,
    data_root: &Path,
) -> Result<StudyReport, StudyError> {
    let mut rows = Vec::with_capacity(presets.len());
    for &no in presets {
        let cfg = preset(no)?;
        let data = prepare_preset_data(no, counts, seed, data_root)?;
        let mut req = TrainRequest::new(data.manifest_path().to_string_lossy());
        req.scheme_id = Some(cfg.scheme_id.clone());
        req.hyperparams.seed = Some(split_seed(seed ^ 0x7ab1e7, no as u64));
        let summary = gateway.train(&req)?;
        let test: Vec<_> = data.with_split(Split::Test).collect();
        let items = test
            .iter()
            .map(|e| {
                Ok(PredictItem {
                    sample_id: e.sample_id.clone(),
                    png: data.read_png(e)?,
                })
            })
            .collect::<Result<Vec<_>, DatasetError>>()?;
        let preds = gateway.predict(&summary.model_id, &items, false)?;
        let hits = preds
            .iter()
            .zip(&test)
            .filter(|(p, e)| e.label.as_deref() == Some(p.text.as_str()))
            .count();
        rows.push(StudyRow {
            preset: no,
            scheme_id: cfg.scheme_id.clone(),
            mechanisms: cfg.mechanisms().iter().collect(),
            val_success_rate: summary.val_success_rate,
            success_rate: if test.is_empty() { 0.0 } else { hits as f64 / test.len() as f64 },
            test_size: test.len(),
        });
    }
    Ok(StudyReport {
        schema_version: STUDY_REPORT_SCHEMA_VERSION,
        counts,
        seed,
        rows,
    })
}
