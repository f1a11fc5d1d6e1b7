use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::ActiveError;
use crate::adapter::{CharRate, LabelBoard};
use crate::dataset::DatasetManifest;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRequest {
    pub sample_id: String,
    /// Absolute image path.
    pub image: String,
}

/// Source of labels for selected pool samples. `label` blocks until every
/// requested sample is labeled.
pub trait Labeler {
    fn label(
        &self,
        round: u32,
        samples: &[LabelRequest],
        top_confusions: &[CharRate],
    ) -> Result<BTreeMap<String, String>, ActiveError>;
}

/// Labels from the manifest itself, for pools with known ground truth.
#[derive(Debug, Clone)]
pub struct OracleLabeler {
    labels: BTreeMap<String, String>,
}

impl OracleLabeler {
    pub fn new(manifest: &DatasetManifest) -> Self {
        Self {
            labels: manifest
                .entries
                .iter()
                .filter_map(|e| Some((e.sample_id.clone(), e.label.clone()?)))
                .collect(),
        }
    }
}

impl Labeler for OracleLabeler {
    fn label(&self, _: u32, samples: &[LabelRequest], _: &[CharRate]) -> Result<BTreeMap<String, String>, ActiveError> {
        samples
            .iter()
            .map(|s| {
                self.labels
                    .get(&s.sample_id)
                    .map(|l| (s.sample_id.clone(), l.clone()))
                    .ok_or_else(|| ActiveError::Unlabeled(s.sample_id.clone()))
            })
            .collect()
    }
}

/// Queues samples on a shared [`LabelBoard`] and waits for people to label
/// them through the labeling service.
#[derive(Debug, Clone)]
pub struct BoardLabeler {
    pub board: Arc<Mutex<LabelBoard>>,
    pub timeout: Duration,
    pub poll_interval: Duration,
}

impl BoardLabeler {
    pub fn new(board: Arc<Mutex<LabelBoard>>, timeout: Duration) -> Self {
        Self {
            board,
            timeout,
            poll_interval: Duration::from_millis(250),
        }
    }
}

impl Labeler for BoardLabeler {
    fn label(
        &self,
        round: u32,
        samples: &[LabelRequest],
        top_confusions: &[CharRate],
    ) -> Result<BTreeMap<String, String>, ActiveError> {
        let pairs: Vec<(String, String)> = samples.iter().map(|s| (s.sample_id.clone(), s.image.clone())).collect();
        {
            let mut board = self.board.lock().expect("board lock");
            board.queue(round, &pairs);
            board.set_confusions(round, top_confusions.to_vec());
        }
        let started = Instant::now();
        loop {
            let labels = self.board.lock().expect("board lock").labels_for_round(round);
            let done = samples.iter().filter(|s| labels.contains_key(&s.sample_id)).count();
            if done == samples.len() {
                return Ok(samples
                    .iter()
                    .map(|s| (s.sample_id.clone(), labels[&s.sample_id].clone()))
                    .collect());
            }
            if started.elapsed() >= self.timeout {
                return Err(ActiveError::LabelTimeout {
                    round,
                    labeled: done,
                    requested: samples.len(),
                });
            }
            std::thread::sleep(self.poll_interval);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::task_id;
    use crate::scheme::LabelRules;

    #[test]
    fn board_labeler_waits_for_submissions() {
        let rules = LabelRules {
            charset: "AB".into(),
            excluded_chars: String::new(),
            length_range: (1, 3),
        };
        let board = Arc::new(Mutex::new(LabelBoard::new(rules)));
        let mut labeler = BoardLabeler::new(board.clone(), Duration::from_secs(10));
        labeler.poll_interval = Duration::from_millis(5);
        let req = vec![
            LabelRequest {
                sample_id: "a".into(),
                image: "/x/a.png".into(),
            },
            LabelRequest {
                sample_id: "b".into(),
                image: "/x/b.png".into(),
            },
        ];
        let worker = {
            let board = board.clone();
            std::thread::spawn(move || loop {
                let mut b = board.lock().unwrap();
                if b.progress(3).total == 2 {
                    b.submit(&task_id(3, "a"), "AB", "ann").unwrap();
                    b.submit(&task_id(3, "b"), "BA", "ann").unwrap();
                    return;
                }
                drop(b);
                std::thread::sleep(Duration::from_millis(2));
            })
        };
        let got = labeler.label(3, &req, &[]).unwrap();
        worker.join().unwrap();
        assert_eq!(got["a"], "AB");
        assert_eq!(got["b"], "BA");

        labeler.timeout = Duration::from_millis(20);
        let err = labeler.label(4, &req, &[]).unwrap_err();
        assert_eq!(
            err,
            ActiveError::LabelTimeout {
                round: 4,
                labeled: 0,
                requested: 2
            }
        );
    }
}
