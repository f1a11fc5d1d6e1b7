use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;
use ureq::Agent;

use super::{
    decode_predict_response, encode_predict_request, parse_json, Adapter, AdapterDescriptor, AdapterError,
    ErrorBody, FinetuneRequest, JobState, JobStatus, PredictRequest, Prediction, SynthesizeRequest,
    SynthesizeSummary, TrainRequest, TrainSummary, ENVELOPE_CONTENT_TYPE,
};

#[derive(Debug, Clone)]
pub struct HttpAdapterOptions {
    /// Per-request timeout.
    pub request_timeout: Duration,
    /// Upper bound on waiting for a long-running job.
    pub job_timeout: Duration,
    pub poll_interval: Duration,
}

impl Default for HttpAdapterOptions {
    fn default() -> Self {
        Self {
            request_timeout: Duration::from_secs(60),
            job_timeout: Duration::from_secs(24 * 3600),
            poll_interval: Duration::from_millis(500),
        }
    }
}

/// Client for an adapter speaking the HTTP protocol.
#[derive(Debug, Clone)]
pub struct HttpAdapter {
    base: String,
    agent: Agent,
    opts: HttpAdapterOptions,
}

fn transport(e: ureq::Error) -> AdapterError {
    AdapterError::Transport(e.to_string())
}

impl HttpAdapter {
    /// `base` is the endpoint root, e.g. `http://127.0.0.1:8700`.
    pub fn new(base: &str, opts: HttpAdapterOptions) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(opts.request_timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: base.trim_end_matches('/').to_string(),
            agent,
            opts,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn finish(mut resp: ureq::http::Response<ureq::Body>) -> Result<Vec<u8>, AdapterError> {
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_vec()
            .map_err(transport)?;
        if (200..300).contains(&status) {
            return Ok(body);
        }
        match parse_json::<ErrorBody>(&body) {
            Ok(e) => Err(e.error.into()),
            Err(_) => Err(AdapterError::Transport(format!(
                "HTTP {status}: {}",
                String::from_utf8_lossy(&body)
            ))),
        }
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, AdapterError> {
        let resp = self.agent.get(&self.url(path)).call().map_err(transport)?;
        parse_json(&Self::finish(resp)?)
    }

    fn post_json<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, AdapterError> {
        let bytes = serde_json::to_vec(body).expect("request serializes");
        let resp = self
            .agent
            .post(&self.url(path))
            .header("content-type", "application/json")
            .send(&bytes[..])
            .map_err(transport)?;
        parse_json(&Self::finish(resp)?)
    }

    /// Submits a job and polls until it leaves the running state.
    fn run_job<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, AdapterError> {
        let started = Instant::now();
        let mut status: JobStatus = self.post_json(path, body)?;
        loop {
            match status.state {
                JobState::Succeeded => {
                    let result = status
                        .result
                        .ok_or_else(|| AdapterError::Malformed("succeeded job without result".into()))?;
                    return serde_json::from_value(result).map_err(|e| AdapterError::Malformed(e.to_string()));
                }
                JobState::Failed => {
                    return Err(status.error.map(Into::into).unwrap_or_else(|| {
                        AdapterError::Malformed(format!("job {} failed without an error", status.job_id))
                    }))
                }
                JobState::Running => {}
            }
            if started.elapsed() > self.opts.job_timeout {
                return Err(AdapterError::Timeout {
                    job_id: status.job_id,
                    seconds: started.elapsed().as_secs_f64(),
                });
            }
            std::thread::sleep(self.opts.poll_interval);
            status = self.get(&format!("/v1/jobs/{}", status.job_id))?;
        }
    }
}

impl Adapter for HttpAdapter {
    fn health(&self) -> Result<AdapterDescriptor, AdapterError> {
        self.get("/v1/health")
    }

    fn train(&self, req: &TrainRequest) -> Result<TrainSummary, AdapterError> {
        self.run_job("/v1/train", req)
    }

    fn finetune(&self, req: &FinetuneRequest) -> Result<TrainSummary, AdapterError> {
        self.run_job("/v1/finetune", req)
    }

    fn predict(&self, req: &PredictRequest) -> Result<Vec<Prediction>, AdapterError> {
        let body = encode_predict_request(req);
        let resp = self
            .agent
            .post(&self.url("/v1/predict"))
            .header("content-type", ENVELOPE_CONTENT_TYPE)
            .send(&body[..])
            .map_err(transport)?;
        decode_predict_response(&Self::finish(resp)?)
    }

    fn synthesize(&self, req: &SynthesizeRequest) -> Result<SynthesizeSummary, AdapterError> {
        self.run_job("/v1/synthesize", req)
    }
}
