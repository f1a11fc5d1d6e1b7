//! Deterministic in-process adapter for tests and desk runs.
//!
//! The stub recognizes an image by looking its content digest up in a truth
//! registry. Whether a prediction is correct is decided by comparing a fixed
//! per-image difficulty, hashed from the seed and digest, against the
//! model's scripted accuracy. Wrong predictions follow the scripted
//! confusion pairs, so their effect on confusion statistics is predictable.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{
    codes, Adapter, AdapterDescriptor, AdapterError, Capability, FinetuneRequest, HealthStatus, PredictRequest,
    Prediction, SynthesizeRequest, SynthesizeSummary, TrainRequest, TrainSummary, PROTOCOL_VERSION,
};
use crate::ctc::LogitsMatrix;
use crate::dataset::{
    parse_manifest, read_manifest, sha256_hex, write_dataset, DatasetManifest, ManifestHeader, NewSample,
    Provenance, Split,
};
use crate::seed::{mix64, unit_hash};

/// Model every stub starts with, at the schedule's baseline accuracy.
pub const BASE_MODEL_ID: &str = "stub-base";
const IDENTITY_GENERATOR: &str = "identity";
const TRAIN_EPOCHS: u32 = 20;
const FINETUNE_EPOCHS: u32 = 10;
/// Probability mass of the chosen class in each emitted logit frame.
const PEAK: f64 = 0.9;

/// Accuracy as a function of training-set size:
/// `min(max, baseline + per_sample · n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccuracySchedule {
    pub baseline: f64,
    pub per_sample: f64,
    pub max: f64,
}

impl AccuracySchedule {
    pub fn at(&self, n: usize) -> f64 {
        (self.baseline + self.per_sample * n as f64).min(self.max).clamp(0.0, 1.0)
    }
}

impl Default for AccuracySchedule {
    fn default() -> Self {
        Self {
            baseline: 0.3,
            per_sample: 0.001,
            max: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StubConfig {
    pub seed: u64,
    pub schedule: AccuracySchedule,
    /// Accuracy of `train` by scheme id, overriding the schedule.
    pub scheme_accuracy: BTreeMap<String, f64>,
    /// Character pairs the recognizer confuses. When non-empty, only
    /// samples containing one of these characters can be misrecognized,
    /// and errors swap the character for its partner.
    pub confusions: Vec<(char, char)>,
    pub identity_generator: bool,
    /// Alphabet of emitted logits; predictions with other characters carry
    /// no logits.
    pub alphabet: String,
    pub capabilities: Vec<Capability>,
    pub max_batch: usize,
    pub total_params: u64,
    /// Parameters in the top fully-connected layer.
    pub head_params: u64,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            schedule: AccuracySchedule::default(),
            scheme_accuracy: BTreeMap::new(),
            confusions: Vec::new(),
            identity_generator: false,
            alphabet: "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz".into(),
            capabilities: Capability::ALL.to_vec(),
            max_batch: 256,
            total_params: 4_718_592,
            head_params: 33_345,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct StubModel {
    accuracy: f64,
}

#[derive(Debug)]
pub struct StubAdapter {
    cfg: StubConfig,
    truth: RwLock<HashMap<String, String>>,
    models: Mutex<(BTreeMap<String, StubModel>, u32)>,
}

fn digest_key(digest: &str) -> u64 {
    u64::from_str_radix(&digest[..digest.len().min(16)], 16).unwrap_or_else(|_| {
        digest.bytes().fold(0u64, |h, b| mix64(h ^ b as u64))
    })
}

fn unreadable(path: &str, e: impl std::fmt::Display) -> AdapterError {
    AdapterError::remote(codes::MANIFEST_UNREADABLE, format!("manifest {path}: {e}"))
}

impl StubAdapter {
    pub fn new(cfg: StubConfig) -> Self {
        let mut models = BTreeMap::new();
        models.insert(
            BASE_MODEL_ID.to_string(),
            StubModel {
                accuracy: cfg.schedule.baseline.clamp(0.0, 1.0),
            },
        );
        Self {
            cfg,
            truth: RwLock::new(HashMap::new()),
            models: Mutex::new((models, 0)),
        }
    }

    pub fn config(&self) -> &StubConfig {
        &self.cfg
    }

    /// Makes the stub able to recognize `png` as `label`.
    pub fn register(&self, png: &[u8], label: &str) {
        self.truth.write().expect("truth lock").insert(sha256_hex(png), label.to_string());
    }

    /// Registers every labeled entry of `manifest` by its recorded digest.
    pub fn register_manifest(&self, manifest: &DatasetManifest) {
        let mut truth = self.truth.write().expect("truth lock");
        for e in &manifest.entries {
            if let Some(label) = &e.label {
                truth.insert(e.digest.to_ascii_lowercase(), label.clone());
            }
        }
    }

    pub fn model_accuracy(&self, model_id: &str) -> Option<f64> {
        self.models.lock().expect("model lock").0.get(model_id).map(|m| m.accuracy)
    }

    fn add_model(&self, prefix: &str, accuracy: f64) -> String {
        let mut guard = self.models.lock().expect("model lock");
        guard.1 += 1;
        let id = format!("{prefix}-{:04}", guard.1);
        guard.0.insert(id.clone(), StubModel { accuracy });
        id
    }

    fn require(&self, cap: Capability) -> Result<(), AdapterError> {
        if self.cfg.capabilities.contains(&cap) {
            Ok(())
        } else {
            Err(AdapterError::CapabilityMissing(cap))
        }
    }

    fn partner(&self, ch: char) -> Option<char> {
        self.cfg.confusions.iter().find_map(|&(a, b)| {
            if a == ch {
                Some(b)
            } else if b == ch {
                Some(a)
            } else {
                None
            }
        })
    }

    /// Scripted output for an image with the given truth and digest.
    pub fn scripted_output(&self, truth: &str, digest: &str, accuracy: f64) -> String {
        let key = digest_key(digest);
        let difficulty = unit_hash(&[self.cfg.seed, key]);
        if self.cfg.confusions.is_empty() {
            if difficulty < accuracy || truth.is_empty() {
                return truth.to_string();
            }
            let chars: Vec<char> = truth.chars().collect();
            let alphabet: Vec<char> = self.cfg.alphabet.chars().collect();
            let h = mix64(self.cfg.seed ^ key);
            let pos = (h % chars.len() as u64) as usize;
            let replacement = match alphabet.iter().position(|&c| c == chars[pos]) {
                Some(i) if alphabet.len() > 1 => {
                    let step = 1 + (mix64(h) % (alphabet.len() as u64 - 1)) as usize;
                    alphabet[(i + step) % alphabet.len()]
                }
                _ => alphabet.first().copied().filter(|&c| c != chars[pos]).unwrap_or('?'),
            };
            let mut out = chars;
            out[pos] = replacement;
            return out.into_iter().collect();
        }
        let first = truth.char_indices().find_map(|(i, c)| self.partner(c).map(|p| (i, c, p)));
        match first {
            Some((i, c, p)) if difficulty >= accuracy => {
                let mut out = truth.to_string();
                out.replace_range(i..i + c.len_utf8(), &p.to_string());
                out
            }
            _ => truth.to_string(),
        }
    }

    /// Blank-interleaved near-one-hot logits whose best path is `text`.
    fn logits_for(&self, text: &str) -> Option<LogitsMatrix> {
        let alphabet: Vec<char> = self.cfg.alphabet.chars().collect();
        let blank = alphabet.len();
        let mut frames = vec![blank];
        for ch in text.chars() {
            frames.push(alphabet.iter().position(|&c| c == ch)?);
            frames.push(blank);
        }
        let rest = (1.0 - PEAK) / blank as f64;
        let rows = frames
            .into_iter()
            .map(|k| (0..=blank).map(|c| if c == k { PEAK } else { rest }).collect())
            .collect();
        LogitsMatrix::from_probabilities(&self.cfg.alphabet, rows).ok()
    }

    fn load(&self, path: &str) -> Result<DatasetManifest, AdapterError> {
        parse_manifest(Path::new(path)).map_err(|e| unreadable(path, e))
    }

    fn curve(accuracy: f64, epochs: u32) -> Vec<f64> {
        (1..=epochs).map(|e| accuracy * e as f64 / epochs as f64).collect()
    }
}

impl Adapter for StubAdapter {
    fn health(&self) -> Result<AdapterDescriptor, AdapterError> {
        Ok(AdapterDescriptor {
            protocol_version: PROTOCOL_VERSION,
            adapter: "stub".into(),
            status: HealthStatus::Ok,
            capabilities: self.cfg.capabilities.clone(),
            max_batch: self.cfg.max_batch,
        })
    }

    fn train(&self, req: &TrainRequest) -> Result<TrainSummary, AdapterError> {
        self.require(Capability::Train)?;
        let manifest = self.load(&req.manifest)?;
        if manifest.is_empty() {
            return Err(AdapterError::remote(codes::INVALID_REQUEST, "manifest has no entries"));
        }
        self.register_manifest(&manifest);
        let train_n = manifest.with_split(Split::Train).count();
        let n = if train_n > 0 { train_n } else { manifest.len() };
        let scheme = req.scheme_id.as_deref().unwrap_or(&manifest.header.scheme_id);
        let accuracy = self
            .cfg
            .scheme_accuracy
            .get(scheme)
            .copied()
            .unwrap_or_else(|| self.cfg.schedule.at(n));
        let epochs = TRAIN_EPOCHS.min(req.hyperparams.max_epochs.max(1));
        Ok(TrainSummary {
            model_id: self.add_model("stub-train", accuracy),
            epochs_run: epochs,
            val_success_rate: Some(accuracy),
            trainable_params: self.cfg.total_params,
            total_params: self.cfg.total_params,
            curve: Self::curve(accuracy, epochs),
        })
    }

    fn finetune(&self, req: &FinetuneRequest) -> Result<TrainSummary, AdapterError> {
        self.require(Capability::Finetune)?;
        let base = self
            .model_accuracy(&req.base_model)
            .ok_or_else(|| AdapterError::remote(codes::UNKNOWN_MODEL, format!("no model {}", req.base_model)))?;
        let manifest = self.load(&req.manifest)?;
        if manifest.is_empty() {
            return Err(AdapterError::remote(codes::INVALID_REQUEST, "manifest has no entries"));
        }
        if let Some(bad) = req.freeze.trainable.iter().find(|l| !matches!(l.as_str(), "fc" | "lstm" | "cnn")) {
            return Err(AdapterError::remote(codes::INVALID_REQUEST, format!("unknown layer group {bad}")));
        }
        self.register_manifest(&manifest);
        let accuracy = base.max(self.cfg.schedule.at(manifest.len()));
        let trainable = if req.freeze.trainable.iter().any(|l| l != "fc") {
            self.cfg.total_params
        } else {
            self.cfg.head_params
        };
        let epochs = FINETUNE_EPOCHS.min(req.hyperparams.max_epochs.max(1));
        Ok(TrainSummary {
            model_id: self.add_model("stub-ft", accuracy),
            epochs_run: epochs,
            val_success_rate: Some(accuracy),
            trainable_params: trainable,
            total_params: self.cfg.total_params,
            curve: Self::curve(accuracy, epochs),
        })
    }

    fn predict(&self, req: &PredictRequest) -> Result<Vec<Prediction>, AdapterError> {
        self.require(Capability::Predict)?;
        if req.items.len() > self.cfg.max_batch {
            return Err(AdapterError::remote(
                codes::BATCH_TOO_LARGE,
                format!("{} images exceed max_batch {}", req.items.len(), self.cfg.max_batch),
            ));
        }
        let accuracy = self
            .model_accuracy(&req.model_id)
            .ok_or_else(|| AdapterError::remote(codes::UNKNOWN_MODEL, format!("no model {}", req.model_id)))?;
        let truth = self.truth.read().expect("truth lock");
        req.items
            .iter()
            .map(|item| {
                let digest = sha256_hex(&item.png);
                let label = truth.get(&digest).ok_or_else(|| {
                    AdapterError::remote(codes::UNKNOWN_IMAGE, format!("{}: image not registered", item.sample_id))
                })?;
                let text = self.scripted_output(label, &digest, accuracy);
                let logits = if req.return_logits { self.logits_for(&text) } else { None };
                let frames = 2 * text.chars().count() + 1;
                Ok(Prediction {
                    sample_id: item.sample_id.clone(),
                    confidence: PEAK.powi(frames as i32),
                    text,
                    logits,
                    latency_ms: 1.0,
                })
            })
            .collect()
    }

    fn synthesize(&self, req: &SynthesizeRequest) -> Result<SynthesizeSummary, AdapterError> {
        self.require(Capability::Synthesize)?;
        if !self.cfg.identity_generator {
            return Err(AdapterError::remote(
                codes::UNTRAINED_GENERATOR,
                "no trained generator G; run synthesizer training first",
            ));
        }
        if let Some(m) = req.model_id.as_deref().filter(|m| *m != IDENTITY_GENERATOR) {
            return Err(AdapterError::remote(codes::UNKNOWN_MODEL, format!("no generator {m}")));
        }
        let source = read_manifest(Path::new(&req.manifest)).map_err(|e| unreadable(&req.manifest, e))?;
        let samples = source
            .entries
            .iter()
            .map(|e| {
                Ok(NewSample {
                    sample_id: e.sample_id.clone(),
                    png: source.read_png(e).map_err(|err| unreadable(&req.manifest, err))?,
                    label: e.label.clone(),
                    seed: e.seed,
                    split: e.split,
                })
            })
            .collect::<Result<Vec<_>, AdapterError>>()?;
        let header = ManifestHeader {
            provenance: Provenance::Synthetic,
            source_dataset: Some(source.header.dataset_id.clone()),
            ..ManifestHeader {
                dataset_id: req.dataset_id.clone(),
                ..source.header.clone()
            }
        };
        let out = write_dataset(samples, header, Path::new(&req.out_root))
            .map_err(|e| AdapterError::remote(codes::INTERNAL, e.to_string()))?;
        Ok(SynthesizeSummary {
            manifest: out.manifest_path().to_string_lossy().into_owned(),
            count: out.len(),
        })
    }
}
