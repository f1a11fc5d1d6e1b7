use std::sync::Arc;

use super::{
    Adapter, AdapterDescriptor, AdapterError, Capability, FinetuneRequest, HealthStatus, PredictItem,
    PredictRequest, Prediction, SynthesizeRequest, SynthesizeSummary, TrainRequest, TrainSummary,
    PROTOCOL_VERSION,
};
use crate::ctc::greedy_decode;

/// Contract-checking front of an [`Adapter`].
#[derive(Clone)]
pub struct Gateway {
    adapter: Arc<dyn Adapter>,
    descriptor: AdapterDescriptor,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("descriptor", &self.descriptor).finish()
    }
}

/// Checks one prediction on its own: confidence within `[0, 1]` and, when
/// logits are present, best-path decoding of them reproduces the text.
pub fn check_prediction(p: &Prediction) -> Result<(), AdapterError> {
    if !(0.0..=1.0).contains(&p.confidence) {
        return Err(AdapterError::ContractViolation(format!(
            "{}: confidence {} outside [0, 1]",
            p.sample_id, p.confidence
        )));
    }
    if let Some(m) = &p.logits {
        let decoded = greedy_decode(m).label;
        if decoded != p.text {
            return Err(AdapterError::ContractViolation(format!(
                "{}: text {:?} but logits decode to {:?}",
                p.sample_id, p.text, decoded
            )));
        }
    }
    Ok(())
}

fn check_summary(s: &TrainSummary) -> Result<(), AdapterError> {
    if s.model_id.is_empty() {
        return Err(AdapterError::ContractViolation("empty model id".into()));
    }
    if s.trainable_params > s.total_params {
        return Err(AdapterError::ContractViolation(format!(
            "{} trainable parameters exceed total {}",
            s.trainable_params, s.total_params
        )));
    }
    if let Some(r) = s.val_success_rate {
        if !(0.0..=1.0).contains(&r) {
            return Err(AdapterError::ContractViolation(format!("success rate {r} outside [0, 1]")));
        }
    }
    Ok(())
}

impl Gateway {
    /// Queries health and refuses adapters speaking another protocol
    /// version or reporting themselves down.
    pub fn connect(adapter: Arc<dyn Adapter>) -> Result<Self, AdapterError> {
        let descriptor = adapter.health()?;
        if descriptor.protocol_version != PROTOCOL_VERSION {
            return Err(AdapterError::UnsupportedVersion {
                found: descriptor.protocol_version,
            });
        }
        if descriptor.status == HealthStatus::Down {
            return Err(AdapterError::Unhealthy(descriptor.status));
        }
        if descriptor.max_batch == 0 {
            return Err(AdapterError::ContractViolation("max_batch is zero".into()));
        }
        Ok(Self { adapter, descriptor })
    }

    pub fn descriptor(&self) -> &AdapterDescriptor {
        &self.descriptor
    }

    pub fn supports(&self, cap: Capability) -> bool {
        self.descriptor.capabilities.contains(&cap)
    }

    fn require(&self, cap: Capability) -> Result<(), AdapterError> {
        if self.supports(cap) {
            Ok(())
        } else {
            Err(AdapterError::CapabilityMissing(cap))
        }
    }

    pub fn train(&self, req: &TrainRequest) -> Result<TrainSummary, AdapterError> {
        self.require(Capability::Train)?;
        let s = self.adapter.train(req)?;
        check_summary(&s)?;
        Ok(s)
    }

    /// Fine-tuning must leave some parameters frozen.
    pub fn finetune(&self, req: &FinetuneRequest) -> Result<TrainSummary, AdapterError> {
        self.require(Capability::Finetune)?;
        let s = self.adapter.finetune(req)?;
        check_summary(&s)?;
        if s.trainable_params >= s.total_params {
            return Err(AdapterError::ContractViolation(format!(
                "fine-tune froze nothing ({} of {} parameters trainable)",
                s.trainable_params, s.total_params
            )));
        }
        Ok(s)
    }

    /// Predicts in chunks of at most `max_batch`; the result has one entry
    /// per item, in item order.
    pub fn predict(
        &self,
        model_id: &str,
        items: &[PredictItem],
        return_logits: bool,
    ) -> Result<Vec<Prediction>, AdapterError> {
        self.require(Capability::Predict)?;
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.descriptor.max_batch) {
            let req = PredictRequest {
                model_id: model_id.to_string(),
                return_logits,
                items: chunk.to_vec(),
            };
            let preds = self.adapter.predict(&req)?;
            if preds.len() != chunk.len() {
                return Err(AdapterError::ContractViolation(format!(
                    "{} predictions for {} images",
                    preds.len(),
                    chunk.len()
                )));
            }
            for (item, p) in chunk.iter().zip(&preds) {
                if item.sample_id != p.sample_id {
                    return Err(AdapterError::ContractViolation(format!(
                        "prediction for {} returned where {} was expected",
                        p.sample_id, item.sample_id
                    )));
                }
                check_prediction(p)?;
            }
            out.extend(preds);
        }
        Ok(out)
    }

    pub fn synthesize(&self, req: &SynthesizeRequest) -> Result<SynthesizeSummary, AdapterError> {
        self.require(Capability::Synthesize)?;
        self.adapter.synthesize(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::LogitsMatrix;
    use std::sync::Mutex;

    /// Adapter returning canned answers and recording batch sizes.
    struct Canned {
        descriptor: AdapterDescriptor,
        mutate: fn(&mut Vec<Prediction>),
        batches: Mutex<Vec<usize>>,
    }

    impl Canned {
        fn new(max_batch: usize, mutate: fn(&mut Vec<Prediction>)) -> Arc<Self> {
            Arc::new(Self {
                descriptor: AdapterDescriptor {
                    protocol_version: PROTOCOL_VERSION,
                    adapter: "canned".into(),
                    status: HealthStatus::Ok,
                    capabilities: vec![Capability::Predict, Capability::Finetune],
                    max_batch,
                },
                mutate,
                batches: Mutex::new(Vec::new()),
            })
        }
    }

    impl Adapter for Canned {
        fn health(&self) -> Result<AdapterDescriptor, AdapterError> {
            Ok(self.descriptor.clone())
        }
        fn train(&self, _: &TrainRequest) -> Result<TrainSummary, AdapterError> {
            unreachable!()
        }
        fn finetune(&self, _: &FinetuneRequest) -> Result<TrainSummary, AdapterError> {
            Ok(TrainSummary {
                model_id: "m".into(),
                epochs_run: 1,
                val_success_rate: None,
                trainable_params: 10,
                total_params: 10,
                curve: vec![],
            })
        }
        fn predict(&self, req: &PredictRequest) -> Result<Vec<Prediction>, AdapterError> {
            self.batches.lock().unwrap().push(req.items.len());
            let mut out: Vec<Prediction> = req
                .items
                .iter()
                .map(|it| Prediction {
                    sample_id: it.sample_id.clone(),
                    text: "a".into(),
                    confidence: 0.9,
                    logits: Some(LogitsMatrix::from_probabilities("ab", vec![vec![0.9, 0.05, 0.05]]).unwrap()),
                    latency_ms: 0.0,
                })
                .collect();
            (self.mutate)(&mut out);
            Ok(out)
        }
        fn synthesize(&self, _: &SynthesizeRequest) -> Result<SynthesizeSummary, AdapterError> {
            unreachable!()
        }
    }

    fn items(n: usize) -> Vec<PredictItem> {
        (0..n)
            .map(|i| PredictItem {
                sample_id: format!("{i}"),
                png: vec![],
            })
            .collect()
    }

    #[test]
    fn chunks_by_max_batch() {
        let a = Canned::new(4, |_| {});
        let g = Gateway::connect(a.clone()).unwrap();
        assert_eq!(g.predict("m", &items(10), true).unwrap().len(), 10);
        assert_eq!(*a.batches.lock().unwrap(), vec![4, 4, 2]);
    }

    #[test]
    fn contract_violations_are_caught() {
        let cases: [fn(&mut Vec<Prediction>); 4] = [
            |v| v[0].text = "b".into(),
            |v| v.reverse(),
            |v| {
                v.pop();
            },
            |v| v[0].confidence = 1.5,
        ];
        for mutate in cases {
            let g = Gateway::connect(Canned::new(8, mutate)).unwrap();
            assert!(matches!(g.predict("m", &items(3), true), Err(AdapterError::ContractViolation(_))));
        }
    }

    #[test]
    fn missing_capability_and_unfrozen_finetune() {
        let g = Gateway::connect(Canned::new(8, |_| {})).unwrap();
        assert_eq!(
            g.train(&TrainRequest::new("x")).unwrap_err(),
            AdapterError::CapabilityMissing(Capability::Train)
        );
        assert!(matches!(
            g.finetune(&FinetuneRequest::new("b", "x")),
            Err(AdapterError::ContractViolation(_))
        ));
    }
}
