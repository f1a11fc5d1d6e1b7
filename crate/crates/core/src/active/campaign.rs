use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{evaluate_predictions, select_hard_samples, ActiveError, ConfusionStats, LabelRequest, Labeler, PoolSample};
use crate::adapter::{CharRate, FinetuneRequest, FreezeSpec, Gateway, Hyperparams, PredictItem, BASE_MODEL_ID};
use crate::ctc::beam_decode;
use crate::dataset::{
    parse_manifest, split_dataset, write_derived_manifest, DatasetError, DatasetManifest, ManifestEntry,
    ManifestHeader, Split, SplitSpec,
};
use crate::seed::split_seed;

pub const CAMPAIGN_REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub initial: usize,
    pub per_round: usize,
    pub cap: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            initial: 100,
            per_round: 100,
            cap: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DecodeMode {
    /// Use the adapter's own decoded strings.
    #[default]
    Greedy,
    /// Request logits and decode them here with prefix beam search.
    Beam { width: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelerMode {
    #[default]
    Oracle,
    Human,
}

/// Campaign configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default = "default_campaign_id")]
    pub campaign_id: String,
    /// Dataset holding validation, initial training and pool samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default = "default_validation_size")]
    pub validation_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_base_model")]
    pub base_model: String,
    #[serde(default)]
    pub freeze: FreezeSpec,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default)]
    pub decode: DecodeMode,
    /// Occurrences a character needs before its error rate is trusted.
    #[serde(default = "default_min_exposure")]
    pub min_exposure: u64,
    /// Length of the per-round misrecognition top-list.
    #[serde(default = "default_top_list")]
    pub top_list: usize,
    /// Adapter endpoint; `None` uses the built-in stub.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<String>,
    #[serde(default)]
    pub labeler: LabelerMode,
    #[serde(default = "default_label_timeout")]
    pub label_timeout_secs: u64,
}

fn default_campaign_id() -> String {
    "campaign".into()
}
fn default_validation_size() -> usize {
    500
}
fn default_base_model() -> String {
    BASE_MODEL_ID.into()
}
fn default_min_exposure() -> u64 {
    5
}
fn default_top_list() -> usize {
    10
}
fn default_label_timeout() -> u64 {
    24 * 3600
}

impl Default for CampaignConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

impl CampaignConfig {
    pub fn from_json(doc: &str) -> Result<Self, ActiveError> {
        let de = &mut serde_json::Deserializer::from_str(doc);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| ActiveError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ActiveError> {
        let b = self.budget;
        let bad = |m: &str| Err(ActiveError::Config(m.to_string()));
        if b.initial == 0 || b.per_round == 0 {
            return bad("budget.initial and budget.per_round must be positive");
        }
        if b.cap < b.initial {
            return bad("budget.cap must be at least budget.initial");
        }
        if self.validation_size == 0 {
            return bad("validation_size must be positive");
        }
        if matches!(self.decode, DecodeMode::Beam { width: 0 }) {
            return bad("decode.width must be positive");
        }
        Ok(())
    }

    /// Training-set sizes at which the recognizer is evaluated.
    pub fn schedule(&self) -> Vec<usize> {
        let b = self.budget;
        let mut out = vec![b.initial];
        while *out.last().expect("non-empty") < b.cap {
            out.push((out.last().expect("non-empty") + b.per_round).min(b.cap));
        }
        out
    }
}

/// Tags a dataset for a campaign: `validation_size` validation samples,
/// `budget.initial` training samples, the rest pool.
pub fn prepare_splits(manifest: &DatasetManifest, cfg: &CampaignConfig) -> Result<DatasetManifest, ActiveError> {
    let spec = SplitSpec {
        test: 0,
        val: cfg.validation_size,
        train: Some(cfg.budget.initial),
    };
    split_dataset(manifest, spec, cfg.seed).map_err(dataset_err)
}

fn dataset_err(e: DatasetError) -> ActiveError {
    ActiveError::Dataset(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    /// Training-set size of the evaluated model; 0 for the baseline.
    pub training_size: usize,
    pub success_rate: f64,
    pub top_confusions: Vec<CharRate>,
    pub stats: ConfusionStats,
    /// Pool samples selected for labeling after this evaluation.
    pub selected: Vec<String>,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    /// Completed rounds, not counting the baseline.
    pub round: u32,
    pub training: Vec<String>,
    pub validation: Vec<String>,
    pub pool: Vec<String>,
    /// Labels obtained from the labeler, by sample id.
    pub acquired: BTreeMap<String, String>,
    pub history: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub round: u32,
    pub training_size: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundConfusions {
    pub round: u32,
    pub top: Vec<CharRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub schema_version: u32,
    pub campaign_id: String,
    pub scheme_id: String,
    pub budget: Budget,
    pub seed: u64,
    pub decode: DecodeMode,
    pub rows: Vec<ReportRow>,
    pub confusions: Vec<RoundConfusions>,
}

impl CampaignReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Two-line table: training-set size, then success rate.
    pub fn to_table(&self) -> String {
        let mut head = String::from("| training set |");
        let mut sep = String::from("|---|");
        let mut body = String::from("| success rate |");
        for r in &self.rows {
            let label = if r.round == 0 { "basic".to_string() } else { r.training_size.to_string() };
            let _ = write!(head, " {label} |");
            sep.push_str("---|");
            let _ = write!(body, " {:.1}% |", 100.0 * r.success_rate);
        }
        let mut out = format!("{head}\n{sep}\n{body}\n");
        for c in &self.confusions {
            if c.top.is_empty() {
                continue;
            }
            let list: Vec<String> = c
                .top
                .iter()
                .map(|r| format!("{} {}/{}", r.ch, r.misrecognized, r.exposure))
                .collect();
            let _ = writeln!(out, "round {} top confusions: {}", c.round, list.join(", "));
        }
        out
    }
}

/// A running active-learning campaign over one dataset.
pub struct Campaign<'a> {
    cfg: CampaignConfig,
    manifest: &'a DatasetManifest,
    gateway: &'a Gateway,
    labeler: &'a dyn Labeler,
    work_dir: PathBuf,
    state: CampaignState,
    charset: String,
}

impl<'a> Campaign<'a> {
    /// Checks the dataset's split tags against the configuration. Round
    /// manifests are written under `work_dir`.
    pub fn new(
        cfg: CampaignConfig,
        manifest: &'a DatasetManifest,
        gateway: &'a Gateway,
        labeler: &'a dyn Labeler,
        work_dir: &Path,
    ) -> Result<Self, ActiveError> {
        cfg.validate()?;
        let ids = |s: Split| -> Vec<String> { manifest.with_split(s).map(|e| e.sample_id.clone()).collect() };
        let (validation, training, pool) = (ids(Split::Val), ids(Split::Train), ids(Split::Pool));
        if validation.len() != cfg.validation_size {
            return Err(ActiveError::SplitSize {
                split: "validation",
                expected: cfg.validation_size,
                found: validation.len(),
            });
        }
        if training.len() != cfg.budget.initial {
            return Err(ActiveError::SplitSize {
                split: "training",
                expected: cfg.budget.initial,
                found: training.len(),
            });
        }
        let needed = cfg.budget.cap - cfg.budget.initial;
        if pool.len() < needed {
            return Err(ActiveError::SplitSize {
                split: "pool",
                expected: needed,
                found: pool.len(),
            });
        }
        for id in validation.iter().chain(&training) {
            if manifest.entry(id).and_then(|e| e.label.as_ref()).is_none() {
                return Err(ActiveError::Unlabeled(id.clone()));
            }
        }
        let charset = manifest
            .header
            .label_rules
            .as_ref()
            .map(|r| r.charset.clone())
            .unwrap_or_default();
        Ok(Self {
            cfg,
            manifest,
            gateway,
            labeler,
            work_dir: work_dir.to_path_buf(),
            state: CampaignState {
                round: 0,
                training,
                validation,
                pool,
                acquired: BTreeMap::new(),
                history: Vec::new(),
            },
            charset,
        })
    }

    pub fn state(&self) -> &CampaignState {
        &self.state
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.cfg
    }

    /// True once the model trained on `cap` samples has been evaluated.
    pub fn is_terminal(&self) -> bool {
        self.state.round > 0
            && self
                .state
                .history
                .last()
                .is_some_and(|r| r.training_size >= self.cfg.budget.cap)
    }

    fn entry(&self, id: &str) -> Result<&ManifestEntry, ActiveError> {
        self.manifest.entry(id).ok_or_else(|| ActiveError::Dataset(format!("unknown sample {id}")))
    }

    fn label_of(&self, id: &str) -> Option<String> {
        self.state
            .acquired
            .get(id)
            .cloned()
            .or_else(|| self.manifest.entry(id)?.label.clone())
    }

    fn items(&self, ids: &[String]) -> Result<Vec<PredictItem>, ActiveError> {
        ids.iter()
            .map(|id| {
                let e = self.entry(id)?;
                Ok(PredictItem {
                    sample_id: id.clone(),
                    png: self.manifest.read_png(e).map_err(dataset_err)?,
                })
            })
            .collect()
    }

    fn read(&self, model_id: &str, ids: &[String]) -> Result<Vec<String>, ActiveError> {
        let beam = match self.cfg.decode {
            DecodeMode::Greedy => None,
            DecodeMode::Beam { width } => Some(width),
        };
        let preds = self.gateway.predict(model_id, &self.items(ids)?, beam.is_some())?;
        Ok(preds
            .into_iter()
            .map(|p| match (beam, &p.logits) {
                (Some(w), Some(m)) => beam_decode(m, w).label,
                _ => p.text,
            })
            .collect())
    }

    fn evaluate(&self, model_id: &str) -> Result<(f64, ConfusionStats), ActiveError> {
        let preds = self.read(model_id, &self.state.validation)?;
        let truth: Vec<String> = self
            .state
            .validation
            .iter()
            .map(|id| self.label_of(id).ok_or_else(|| ActiveError::Unlabeled(id.clone())))
            .collect::<Result<_, _>>()?;
        let ev = evaluate_predictions(&preds, &truth)?;
        Ok((ev.success_rate, ev.stats))
    }

    fn record(&self, round: u32, size: usize, model_id: String, rate: f64, stats: ConfusionStats) -> RoundRecord {
        RoundRecord {
            round,
            training_size: size,
            success_rate: rate,
            top_confusions: stats.top(&self.charset, self.cfg.min_exposure, self.cfg.top_list),
            stats,
            selected: Vec::new(),
            model_id,
        }
    }

    /// Round 0: evaluates the basic recognizer. Idempotent.
    pub fn run_baseline(&mut self) -> Result<&RoundRecord, ActiveError> {
        if self.state.history.is_empty() {
            let (rate, stats) = self.evaluate(&self.cfg.base_model)?;
            let rec = self.record(0, 0, self.cfg.base_model.clone(), rate, stats);
            self.state.history.push(rec);
        }
        Ok(&self.state.history[0])
    }

    /// Writes (or reuses) the training manifest for `round`.
    fn round_manifest(&self, round: u32) -> Result<PathBuf, ActiveError> {
        let dir = self.work_dir.join(format!("round-{round:02}"));
        let path = dir.join(crate::dataset::MANIFEST_FILE);
        if path.exists() {
            let existing = parse_manifest(&path).map_err(dataset_err)?;
            let ids: Vec<&str> = existing.entries.iter().map(|e| e.sample_id.as_str()).collect();
            let want: Vec<&str> = self.state.training.iter().map(String::as_str).collect();
            if ids != want {
                return Err(ActiveError::Dataset(format!(
                    "{} belongs to a different campaign state",
                    path.display()
                )));
            }
            return Ok(path);
        }
        let entries = self
            .state
            .training
            .iter()
            .map(|id| {
                let mut e = self.manifest.absolute_entry(self.entry(id)?).map_err(dataset_err)?;
                e.label = Some(self.label_of(id).ok_or_else(|| ActiveError::Unlabeled(id.clone()))?);
                e.split = Split::Train;
                Ok(e)
            })
            .collect::<Result<Vec<_>, ActiveError>>()?;
        let mut header = ManifestHeader {
            dataset_id: format!("{}-round-{round:02}", self.cfg.campaign_id),
            source_dataset: Some(self.manifest.header.dataset_id.clone()),
            ..self.manifest.header.clone()
        };
        header.master_seed = None;
        let m = write_derived_manifest(&dir, header, entries).map_err(dataset_err)?;
        Ok(m.manifest_path())
    }

    /// Fine-tunes on the current training set, evaluates, and unless the
    /// cap is reached selects, labels and adds the next batch. On error the
    /// state is left unchanged.
    pub fn run_round(&mut self) -> Result<&RoundRecord, ActiveError> {
        if self.is_terminal() {
            return Err(ActiveError::Terminal { cap: self.cfg.budget.cap });
        }
        self.run_baseline()?;
        let round = self.state.round + 1;
        let size = self.state.training.len();
        let manifest_path = self.round_manifest(round)?;
        let mut req = FinetuneRequest::new(self.cfg.base_model.clone(), manifest_path.to_string_lossy());
        req.freeze = self.cfg.freeze.clone();
        req.hyperparams = self.cfg.hyperparams.clone();
        if req.hyperparams.seed.is_none() {
            req.hyperparams.seed = Some(split_seed(self.cfg.seed, round as u64));
        }
        let summary = self.gateway.finetune(&req)?;
        let (rate, stats) = self.evaluate(&summary.model_id)?;
        let mut rec = self.record(round, size, summary.model_id.clone(), rate, stats);

        let mut next = self.state.clone();
        if size < self.cfg.budget.cap {
            let k = self.cfg.budget.per_round.min(self.cfg.budget.cap - size);
            let unknown: Vec<String> = next.pool.iter().filter(|id| self.label_of(id).is_none()).cloned().collect();
            let mut read: BTreeMap<String, String> = BTreeMap::new();
            if !unknown.is_empty() {
                read = unknown.iter().cloned().zip(self.read(&summary.model_id, &unknown)?).collect();
            }
            let pool: Vec<PoolSample> = next
                .pool
                .iter()
                .map(|id| PoolSample {
                    sample_id: id.clone(),
                    text: self.label_of(id).or_else(|| read.get(id).cloned()).unwrap_or_default(),
                })
                .collect();
            let selected = select_hard_samples(
                &pool,
                &rec.stats,
                k,
                self.cfg.min_exposure,
                split_seed(self.cfg.seed ^ 0x5e1ec7, round as u64),
            )?;
            let requests = selected
                .iter()
                .map(|id| {
                    let e = self.manifest.absolute_entry(self.entry(id)?).map_err(dataset_err)?;
                    Ok(LabelRequest {
                        sample_id: id.clone(),
                        image: e.image,
                    })
                })
                .collect::<Result<Vec<_>, ActiveError>>()?;
            let labels = self.labeler.label(round, &requests, &rec.top_confusions)?;
            for id in &selected {
                let label = labels.get(id).ok_or_else(|| ActiveError::Unlabeled(id.clone()))?;
                next.acquired.insert(id.clone(), label.clone());
            }
            let chosen: HashSet<&String> = selected.iter().collect();
            next.pool.retain(|id| !chosen.contains(id));
            next.training.extend(selected.iter().cloned());
            rec.selected = selected;
        }
        next.round = round;
        next.history.push(rec);
        self.state = next;
        Ok(self.state.history.last().expect("just pushed"))
    }

    /// Baseline plus rounds until the cap-sized model has been evaluated.
    pub fn run(mut self) -> Result<(CampaignState, CampaignReport), ActiveError> {
        self.run_baseline()?;
        while !self.is_terminal() {
            self.run_round()?;
        }
        let report = self.report();
        Ok((self.state, report))
    }

    pub fn report(&self) -> CampaignReport {
        CampaignReport {
            schema_version: CAMPAIGN_REPORT_SCHEMA_VERSION,
            campaign_id: self.cfg.campaign_id.clone(),
            scheme_id: self.manifest.header.scheme_id.clone(),
            budget: self.cfg.budget,
            seed: self.cfg.seed,
            decode: self.cfg.decode,
            rows: self
                .state
                .history
                .iter()
                .map(|r| ReportRow {
                    round: r.round,
                    training_size: r.training_size,
                    success_rate: r.success_rate,
                })
                .collect(),
            confusions: self
                .state
                .history
                .iter()
                .map(|r| RoundConfusions {
                    round: r.round,
                    top: r.top_confusions.clone(),
                })
                .collect(),
        }
    }
}
