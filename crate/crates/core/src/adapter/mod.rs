//! Boundary between the toolkit and model runtimes.
//!
//! Runtimes (the neural trainer, or the in-process [`StubAdapter`]) sit
//! behind the [`Adapter`] trait. [`Gateway`] wraps any adapter and enforces
//! the protocol contract: version and capability checks, batch chunking,
//! ordered responses and decode consistency of returned logits.
//!
//! HTTP wire protocol, version 1 (all JSON bodies carry `protocol_version`):
//!
//! | method | path | request | response |
//! |---|---|---|---|
//! | GET | `/v1/health` | | [`AdapterDescriptor`] |
//! | POST | `/v1/train` | [`TrainRequest`] | [`JobStatus`] |
//! | POST | `/v1/finetune` | [`FinetuneRequest`] | [`JobStatus`] |
//! | POST | `/v1/synthesize` | [`SynthesizeRequest`] | [`JobStatus`] |
//! | GET | `/v1/jobs/{id}` | | [`JobStatus`] |
//! | POST | `/v1/predict` | envelope | envelope |
//!
//! Predict uses the binary [`Envelope`]: PNG images and logits travel as
//! attachments referenced by part id from the JSON document. Failures use
//! HTTP 4xx/5xx with an [`ErrorBody`].

mod envelope;
mod gateway;
mod http;
mod labeling;
mod stub;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctc::LogitsMatrix;

pub use envelope::{Envelope, ENVELOPE_CONTENT_TYPE, ENVELOPE_MAGIC};
pub use gateway::{check_prediction, Gateway};
pub use http::{HttpAdapter, HttpAdapterOptions};
pub use labeling::{
    task_id, BoardError, CharRate, LabelBoard, LabelProgress, LabelTask, SubmitOutcome, TaskEvent, TaskStatus,
    TaskView,
};
pub use stub::{AccuracySchedule, StubAdapter, StubConfig, BASE_MODEL_ID};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Train,
    Finetune,
    Predict,
    Synthesize,
}

impl Capability {
    pub const ALL: [Capability; 4] = [Self::Train, Self::Finetune, Self::Predict, Self::Synthesize];

    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Finetune => "finetune",
            Self::Predict => "predict",
            Self::Synthesize => "synthesize",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HealthStatus {
    Ok,
    Degraded,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterDescriptor {
    pub protocol_version: u32,
    pub adapter: String,
    pub status: HealthStatus,
    pub capabilities: Vec<Capability>,
    /// Largest predict batch the adapter accepts.
    pub max_batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    #[serde(default = "default_optimizer")]
    pub optimizer: String,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: u32,
    /// Early-stopping patience in epochs.
    #[serde(default = "default_patience")]
    pub patience: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_optimizer() -> String {
    "adam".into()
}
fn default_lr() -> f64 {
    7e-4
}
fn default_max_epochs() -> u32 {
    200
}
fn default_patience() -> u32 {
    10
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            optimizer: default_optimizer(),
            learning_rate: default_lr(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub protocol_version: u32,
    /// Path to a manifest file or dataset directory readable by the adapter.
    pub manifest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme_id: Option<String>,
    #[serde(default)]
    pub hyperparams: Hyperparams,
}

impl TrainRequest {
    pub fn new(manifest: impl Into<String>) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            manifest: manifest.into(),
            scheme_id: None,
            hyperparams: Hyperparams::default(),
        }
    }
}

/// Layer groups left trainable during fine-tuning; everything else is
/// frozen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeSpec {
    pub trainable: Vec<String>,
}

impl Default for FreezeSpec {
    fn default() -> Self {
        Self {
            trainable: vec!["fc".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRequest {
    pub protocol_version: u32,
    pub base_model: String,
    pub manifest: String,
    #[serde(default)]
    pub freeze: FreezeSpec,
    #[serde(default)]
    pub hyperparams: Hyperparams,
}

impl FinetuneRequest {
    pub fn new(base_model: impl Into<String>, manifest: impl Into<String>) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            base_model: base_model.into(),
            manifest: manifest.into(),
            freeze: FreezeSpec::default(),
            hyperparams: Hyperparams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model_id: String,
    pub epochs_run: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_success_rate: Option<f64>,
    pub trainable_params: u64,
    pub total_params: u64,
    /// Validation success rate per epoch.
    #[serde(default)]
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizeRequest {
    pub protocol_version: u32,
    /// Generator model; `None` selects the adapter's default generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    /// Imitation dataset to translate.
    pub manifest: String,
    pub out_root: String,
    pub dataset_id: String,
}

impl SynthesizeRequest {
    pub fn new(manifest: impl Into<String>, out_root: impl Into<String>, dataset_id: impl Into<String>) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            model_id: None,
            manifest: manifest.into(),
            out_root: out_root.into(),
            dataset_id: dataset_id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizeSummary {
    /// Path of the written synthetic manifest.
    pub manifest: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictItem {
    pub sample_id: String,
    pub png: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictRequest {
    pub model_id: String,
    pub return_logits: bool,
    pub items: Vec<PredictItem>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub sample_id: String,
    pub text: String,
    pub confidence: f64,
    pub logits: Option<LogitsMatrix>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub protocol_version: u32,
    pub job_id: String,
    pub state: JobState,
    /// [`TrainSummary`] or [`SynthesizeSummary`] once succeeded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RemoteError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub protocol_version: u32,
    pub error: RemoteError,
}

/// Error codes used in [`RemoteError::code`].
pub mod codes {
    pub const CAPABILITY_MISSING: &str = "capability_missing";
    pub const UNKNOWN_MODEL: &str = "unknown_model";
    pub const UNKNOWN_JOB: &str = "unknown_job";
    pub const UNKNOWN_IMAGE: &str = "unknown_image";
    pub const INVALID_REQUEST: &str = "invalid_request";
    pub const MANIFEST_UNREADABLE: &str = "manifest_unreadable";
    pub const UNTRAINED_GENERATOR: &str = "untrained_generator";
    pub const BATCH_TOO_LARGE: &str = "batch_too_large";
    pub const UNSUPPORTED_VERSION: &str = "unsupported_version";
    pub const INTERNAL: &str = "internal";
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdapterError {
    #[error("adapter lacks capability '{}'", .0.name())]
    CapabilityMissing(Capability),
    #[error("unsupported protocol version {found} (expected {PROTOCOL_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("adapter reported {code}: {message}")]
    Remote { code: String, message: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed adapter message: {0}")]
    Malformed(String),
    #[error("adapter broke the protocol contract: {0}")]
    ContractViolation(String),
    #[error("adapter is not healthy ({0:?})")]
    Unhealthy(HealthStatus),
    #[error("job {job_id} timed out after {seconds:.0}s")]
    Timeout { job_id: String, seconds: f64 },
}

impl AdapterError {
    pub fn remote(code: &str, message: impl Into<String>) -> Self {
        Self::Remote {
            code: code.to_string(),
            message: message.into(),
        }
    }

    /// Wire form of this error, as an adapter server would report it.
    pub fn to_remote(&self) -> RemoteError {
        let (code, message) = match self {
            Self::Remote { code, message } => (code.clone(), message.clone()),
            Self::CapabilityMissing(_) => (codes::CAPABILITY_MISSING.into(), self.to_string()),
            Self::UnsupportedVersion { .. } => (codes::UNSUPPORTED_VERSION.into(), self.to_string()),
            Self::Malformed(_) => (codes::INVALID_REQUEST.into(), self.to_string()),
            _ => (codes::INTERNAL.into(), self.to_string()),
        };
        RemoteError { code, message }
    }

    /// HTTP status an adapter server answers with for this error.
    pub fn http_status(&self) -> u16 {
        match self.to_remote().code.as_str() {
            codes::UNKNOWN_MODEL | codes::UNKNOWN_JOB | codes::UNKNOWN_IMAGE => 404,
            codes::CAPABILITY_MISSING => 501,
            codes::UNTRAINED_GENERATOR => 409,
            codes::BATCH_TOO_LARGE => 413,
            codes::INTERNAL => 500,
            _ => 400,
        }
    }
}

impl From<RemoteError> for AdapterError {
    fn from(e: RemoteError) -> Self {
        Self::Remote {
            code: e.code,
            message: e.message,
        }
    }
}

/// A model runtime. Implementations must return predictions in request
/// order, one per item.
pub trait Adapter: Send + Sync {
    fn health(&self) -> Result<AdapterDescriptor, AdapterError>;
    fn train(&self, req: &TrainRequest) -> Result<TrainSummary, AdapterError>;
    fn finetune(&self, req: &FinetuneRequest) -> Result<TrainSummary, AdapterError>;
    fn predict(&self, req: &PredictRequest) -> Result<Vec<Prediction>, AdapterError>;
    fn synthesize(&self, req: &SynthesizeRequest) -> Result<SynthesizeSummary, AdapterError>;
}

impl<A: Adapter + ?Sized> Adapter for std::sync::Arc<A> {
    fn health(&self) -> Result<AdapterDescriptor, AdapterError> {
        (**self).health()
    }
    fn train(&self, req: &TrainRequest) -> Result<TrainSummary, AdapterError> {
        (**self).train(req)
    }
    fn finetune(&self, req: &FinetuneRequest) -> Result<TrainSummary, AdapterError> {
        (**self).finetune(req)
    }
    fn predict(&self, req: &PredictRequest) -> Result<Vec<Prediction>, AdapterError> {
        (**self).predict(req)
    }
    fn synthesize(&self, req: &SynthesizeRequest) -> Result<SynthesizeSummary, AdapterError> {
        (**self).synthesize(req)
    }
}

#[derive(Serialize, Deserialize)]
struct WirePredictRequest {
    protocol_version: u32,
    model_id: String,
    #[serde(default)]
    return_logits: bool,
    items: Vec<WireItem>,
}

#[derive(Serialize, Deserialize)]
struct WireItem {
    sample_id: String,
    part: u32,
}

#[derive(Serialize, Deserialize)]
struct WirePredictResponse {
    protocol_version: u32,
    predictions: Vec<WirePrediction>,
}

#[derive(Serialize, Deserialize)]
struct WirePrediction {
    sample_id: String,
    text: String,
    confidence: f64,
    latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logits_part: Option<u32>,
}

fn check_version(found: u32) -> Result<(), AdapterError> {
    if found == PROTOCOL_VERSION {
        Ok(())
    } else {
        Err(AdapterError::UnsupportedVersion { found })
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, AdapterError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| AdapterError::Malformed(e.to_string()))
}

pub fn encode_predict_request(req: &PredictRequest) -> Vec<u8> {
    let mut env = Envelope::default();
    let items = req
        .items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            env.parts.insert(i as u32, item.png.clone());
            WireItem {
                sample_id: item.sample_id.clone(),
                part: i as u32,
            }
        })
        .collect();
    let doc = WirePredictRequest {
        protocol_version: PROTOCOL_VERSION,
        model_id: req.model_id.clone(),
        return_logits: req.return_logits,
        items,
    };
    env.json = serde_json::to_vec(&doc).expect("request serializes");
    env.encode()
}

pub fn decode_predict_request(bytes: &[u8]) -> Result<PredictRequest, AdapterError> {
    let env = Envelope::decode(bytes)?;
    let doc: WirePredictRequest = parse_json(&env.json)?;
    check_version(doc.protocol_version)?;
    let items = doc
        .items
        .into_iter()
        .map(|it| {
            Ok(PredictItem {
                png: env.part(it.part)?.to_vec(),
                sample_id: it.sample_id,
            })
        })
        .collect::<Result<_, AdapterError>>()?;
    Ok(PredictRequest {
        model_id: doc.model_id,
        return_logits: doc.return_logits,
        items,
    })
}

pub fn encode_predict_response(predictions: &[Prediction]) -> Vec<u8> {
    let mut env = Envelope::default();
    let predictions = predictions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let logits_part = p.logits.as_ref().map(|m| {
                env.parts.insert(i as u32, m.to_wire());
                i as u32
            });
            WirePrediction {
                sample_id: p.sample_id.clone(),
                text: p.text.clone(),
                confidence: p.confidence,
                latency_ms: p.latency_ms,
                logits_part,
            }
        })
        .collect();
    env.json = serde_json::to_vec(&WirePredictResponse {
        protocol_version: PROTOCOL_VERSION,
        predictions,
    })
    .expect("response serializes");
    env.encode()
}

pub fn decode_predict_response(bytes: &[u8]) -> Result<Vec<Prediction>, AdapterError> {
    let env = Envelope::decode(bytes)?;
    let doc: WirePredictResponse = parse_json(&env.json)?;
    check_version(doc.protocol_version)?;
    doc.predictions
        .into_iter()
        .map(|p| {
            let logits = match p.logits_part {
                Some(id) => Some(
                    LogitsMatrix::from_wire(env.part(id)?)
                        .map_err(|e| AdapterError::Malformed(format!("{}: {e}", p.sample_id)))?,
                ),
                None => None,
            };
            Ok(Prediction {
                sample_id: p.sample_id,
                text: p.text,
                confidence: p.confidence,
                logits,
                latency_ms: p.latency_ms,
            })
        })
        .collect()
}

/// Parses a JSON request body and checks its protocol version.
pub fn parse_request<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, AdapterError> {
    let raw: serde_json::Value = parse_json(bytes)?;
    match raw.get("protocol_version").and_then(|v| v.as_u64()) {
        Some(v) => check_version(v as u32)?,
        None => return Err(AdapterError::Malformed("missing protocol_version".into())),
    }
    serde_path_to_error::deserialize(raw).map_err(|e| AdapterError::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix() -> LogitsMatrix {
        LogitsMatrix::from_probabilities("ab", vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.1, 0.8]]).unwrap()
    }

    #[test]
    fn predict_request_round_trips() {
        let req = PredictRequest {
            model_id: "m".into(),
            return_logits: true,
            items: vec![
                PredictItem {
                    sample_id: "000001".into(),
                    png: vec![1, 2, 3],
                },
                PredictItem {
                    sample_id: "000000".into(),
                    png: vec![],
                },
            ],
        };
        assert_eq!(decode_predict_request(&encode_predict_request(&req)).unwrap(), req);
    }

    #[test]
    fn predict_response_round_trips_logits() {
        let p = Prediction {
            sample_id: "x".into(),
            text: "a".into(),
            confidence: 0.56,
            logits: Some(matrix()),
            latency_ms: 1.5,
        };
        let back = decode_predict_response(&encode_predict_response(&[p.clone()])).unwrap();
        assert_eq!(back[0].text, "a");
        let m = back[0].logits.as_ref().unwrap();
        for t in 0..2 {
            for c in 0..3 {
                assert!((m.get(t, c) - matrix().get(t, c)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn request_version_is_checked() {
        let doc = br#"{"protocol_version":2,"manifest":"m"}"#;
        assert_eq!(
            parse_request::<TrainRequest>(doc).unwrap_err(),
            AdapterError::UnsupportedVersion { found: 2 }
        );
        let ok: TrainRequest = parse_request(br#"{"protocol_version":1,"manifest":"m"}"#).unwrap();
        assert_eq!(ok.hyperparams, Hyperparams::default());
        assert!(matches!(
            parse_request::<TrainRequest>(br#"{"manifest":"m"}"#),
            Err(AdapterError::Malformed(_))
        ));
    }

    #[test]
    fn error_codes_map_to_statuses() {
        assert_eq!(AdapterError::remote(codes::UNKNOWN_MODEL, "x").http_status(), 404);
        assert_eq!(AdapterError::CapabilityMissing(Capability::Train).http_status(), 501);
        assert_eq!(AdapterError::Malformed("x".into()).http_status(), 400);
    }
}
