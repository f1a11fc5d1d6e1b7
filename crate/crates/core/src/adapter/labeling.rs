//! Label-task board behind the labeling service.
//!
//! Tasks move `queued → assigned → labeled`, or `assigned → rejected →
//! queued` when a submitted label breaks the scheme's rules. Every
//! transition is appended to the task history, and all operations are
//! idempotent so concurrent or repeated submissions are harmless.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheme::{LabelRules, LabelViolation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Queued,
    Assigned,
    Labeled,
    Rejected,
}

impl TaskStatus {
    /// Whether `from → to` is a legal transition; `None` is creation.
    pub fn allows(from: Option<TaskStatus>, to: TaskStatus) -> bool {
        use TaskStatus::*;
        matches!(
            (from, to),
            (None, Queued) | (Some(Queued), Assigned) | (Some(Assigned), Labeled | Rejected) | (Some(Rejected), Queued)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvent {
    pub from: Option<TaskStatus>,
    pub to: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Milliseconds since the Unix epoch.
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTask {
    pub task_id: String,
    pub round: u32,
    pub sample_id: String,
    /// Image file path on the serving host.
    pub image: String,
    pub status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submitter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignee: Option<String>,
    /// Reason of the latest rejection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<String>,
    pub history: Vec<TaskEvent>,
}

/// What the labeling UI sees of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: String,
    pub round: u32,
    pub sample_id: String,
    pub status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<String>,
}

impl From<&LabelTask> for TaskView {
    fn from(t: &LabelTask) -> Self {
        Self {
            task_id: t.task_id.clone(),
            round: t.round,
            sample_id: t.sample_id.clone(),
            status: t.status,
            rejection: t.rejection.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SubmitOutcome {
    Labeled { task: TaskView },
    /// Same label resubmitted for an already labeled task.
    Unchanged { task: TaskView },
    Rejected { task: TaskView, violation: LabelViolation, reason: String },
}

/// One row of the misrecognition top-list shown next to progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharRate {
    pub ch: char,
    pub misrecognized: u64,
    pub exposure: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelProgress {
    pub round: u32,
    pub total: usize,
    pub queued: usize,
    pub assigned: usize,
    pub labeled: usize,
    pub rejections: usize,
    pub top_confusions: Vec<CharRate>,
}

impl LabelProgress {
    pub fn complete(&self) -> bool {
        self.total > 0 && self.labeled == self.total
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoardError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("task {task_id} is already labeled as {label:?}")]
    Terminal { task_id: String, label: String },
    #[error("snapshot {path}: {message}")]
    Snapshot { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelBoard {
    rules: LabelRules,
    tasks: BTreeMap<String, LabelTask>,
    #[serde(default)]
    confusions: BTreeMap<u32, Vec<CharRate>>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn task_id(round: u32, sample_id: &str) -> String {
    format!("r{round}-{sample_id}")
}

impl LabelTask {
    fn transition(&mut self, to: TaskStatus, actor: Option<&str>, note: Option<String>) {
        debug_assert!(TaskStatus::allows(Some(self.status), to));
        self.history.push(TaskEvent {
            from: Some(self.status),
            to,
            actor: actor.map(str::to_string),
            note,
            at_ms: now_ms(),
        });
        self.status = to;
    }
}

impl LabelBoard {
    pub fn new(rules: LabelRules) -> Self {
        Self {
            rules,
            tasks: BTreeMap::new(),
            confusions: BTreeMap::new(),
        }
    }

    pub fn rules(&self) -> &LabelRules {
        &self.rules
    }

    pub fn task(&self, task_id: &str) -> Option<&LabelTask> {
        self.tasks.get(task_id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &LabelTask> {
        self.tasks.values()
    }

    /// Queues `(sample_id, image path)` pairs for `round`. Already queued
    /// samples keep their task unchanged.
    pub fn queue(&mut self, round: u32, samples: &[(String, String)]) -> Vec<TaskView> {
        samples
            .iter()
            .map(|(sample_id, image)| {
                let id = task_id(round, sample_id);
                let task = self.tasks.entry(id.clone()).or_insert_with(|| LabelTask {
                    task_id: id,
                    round,
                    sample_id: sample_id.clone(),
                    image: image.clone(),
                    status: TaskStatus::Queued,
                    label: None,
                    submitter: None,
                    assignee: None,
                    rejection: None,
                    history: vec![TaskEvent {
                        from: None,
                        to: TaskStatus::Queued,
                        actor: None,
                        note: None,
                        at_ms: now_ms(),
                    }],
                });
                TaskView::from(&*task)
            })
            .collect()
    }

    /// Up to `limit` tasks for `assignee`: tasks already assigned to them
    /// first, then newly assigned queued tasks, lowest round first.
    pub fn next_batch(&mut self, round: Option<u32>, limit: usize, assignee: &str) -> Vec<TaskView> {
        let in_round = |t: &LabelTask| round.is_none_or(|r| t.round == r);
        let mut ids: Vec<String> = self
            .tasks
            .values()
            .filter(|t| in_round(t) && t.status == TaskStatus::Assigned && t.assignee.as_deref() == Some(assignee))
            .map(|t| t.task_id.clone())
            .take(limit)
            .collect();
        let mut fresh: Vec<&LabelTask> = self
            .tasks
            .values()
            .filter(|t| in_round(t) && t.status == TaskStatus::Queued)
            .collect();
        fresh.sort_by_key(|t| t.round);
        let fresh: Vec<String> = fresh
            .into_iter()
            .take(limit - ids.len())
            .map(|t| t.task_id.clone())
            .collect();
        for id in &fresh {
            let t = self.tasks.get_mut(id).expect("task exists");
            t.transition(TaskStatus::Assigned, Some(assignee), None);
            t.assignee = Some(assignee.to_string());
        }
        ids.extend(fresh);
        ids.iter().map(|id| TaskView::from(&self.tasks[id])).collect()
    }

    /// Validates and records a label. Submitting for a queued task assigns
    /// it to `submitter` first.
    pub fn submit(&mut self, task_id: &str, label: &str, submitter: &str) -> Result<SubmitOutcome, BoardError> {
        let rules = self.rules.clone();
        let task = self
            .tasks
            .get_mut(task_id)
            .ok_or_else(|| BoardError::UnknownTask(task_id.to_string()))?;
        if task.status == TaskStatus::Labeled {
            let current = task.label.clone().unwrap_or_default();
            return if current == label {
                Ok(SubmitOutcome::Unchanged {
                    task: TaskView::from(&*task),
                })
            } else {
                Err(BoardError::Terminal {
                    task_id: task_id.to_string(),
                    label: current,
                })
            };
        }
        if task.status == TaskStatus::Queued {
            task.transition(TaskStatus::Assigned, Some(submitter), Some("implicit".into()));
            task.assignee = Some(submitter.to_string());
        }
        match rules.check(label) {
            Ok(()) => {
                task.transition(TaskStatus::Labeled, Some(submitter), None);
                task.label = Some(label.to_string());
                task.submitter = Some(submitter.to_string());
                task.rejection = None;
                Ok(SubmitOutcome::Labeled {
                    task: TaskView::from(&*task),
                })
            }
            Err(violation) => {
                let reason = format!("{label:?}: {violation}");
                task.transition(TaskStatus::Rejected, Some(submitter), Some(reason.clone()));
                task.transition(TaskStatus::Queued, None, None);
                task.assignee = None;
                task.rejection = Some(reason.clone());
                Ok(SubmitOutcome::Rejected {
                    task: TaskView::from(&*task),
                    violation,
                    reason,
                })
            }
        }
    }

    pub fn set_confusions(&mut self, round: u32, top: Vec<CharRate>) {
        self.confusions.insert(round, top);
    }

    pub fn progress(&self, round: u32) -> LabelProgress {
        let mut p = LabelProgress {
            round,
            total: 0,
            queued: 0,
            assigned: 0,
            labeled: 0,
            rejections: 0,
            top_confusions: self.confusions.get(&round).cloned().unwrap_or_default(),
        };
        for t in self.tasks.values().filter(|t| t.round == round) {
            p.total += 1;
            match t.status {
                TaskStatus::Queued | TaskStatus::Rejected => p.queued += 1,
                TaskStatus::Assigned => p.assigned += 1,
                TaskStatus::Labeled => p.labeled += 1,
            }
            p.rejections += t.history.iter().filter(|e| e.to == TaskStatus::Rejected).count();
        }
        p
    }

    /// Latest round with any task.
    pub fn current_round(&self) -> Option<u32> {
        self.tasks.values().map(|t| t.round).max()
    }

    /// Labels of the round's labeled tasks, by sample id.
    pub fn labels_for_round(&self, round: u32) -> BTreeMap<String, String> {
        self.tasks
            .values()
            .filter(|t| t.round == round && t.status == TaskStatus::Labeled)
            .filter_map(|t| Some((t.sample_id.clone(), t.label.clone()?)))
            .collect()
    }

    /// Checks every task's history against the state machine and the
    /// labeled-task rules; returns the violations found.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut per_round: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        for (id, t) in &self.tasks {
            if *id != task_id(t.round, &t.sample_id) {
                out.push(format!("{id}: key does not match round and sample"));
            }
            let mut state = None;
            for e in &t.history {
                if e.from != state || !TaskStatus::allows(e.from, e.to) {
                    out.push(format!("{id}: illegal transition {:?} -> {:?}", e.from, e.to));
                }
                state = Some(e.to);
            }
            if state != Some(t.status) {
                out.push(format!("{id}: status {:?} disagrees with history", t.status));
            }
            if t.status == TaskStatus::Rejected {
                out.push(format!("{id}: rejected task was not re-queued"));
            }
            if t.status == TaskStatus::Labeled {
                match &t.label {
                    Some(l) if self.rules.check(l).is_ok() => {}
                    other => out.push(format!("{id}: labeled with invalid label {other:?}")),
                }
            }
            let c = per_round.entry(t.round).or_default();
            c.0 += 1;
            c.1 += usize::from(t.status == TaskStatus::Labeled);
        }
        for (round, (queued, labeled)) in per_round {
            if labeled > queued {
                out.push(format!("round {round}: {labeled} labeled of {queued} queued"));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("board serializes")
    }

    /// Writes a snapshot, replacing the previous one atomically.
    pub fn save(&self, path: &Path) -> Result<(), BoardError> {
        let err = |e: std::io::Error| BoardError::Snapshot {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()).map_err(err)?;
        std::fs::rename(&tmp, path).map_err(err)
    }

    pub fn load(path: &Path) -> Result<Self, BoardError> {
        let err = |message: String| BoardError::Snapshot {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rules() -> LabelRules {
        LabelRules {
            charset: "ABCDEFGHJK0123456789".into(),
            excluded_chars: "0O".into(),
            length_range: (2, 4),
        }
    }

    fn samples(n: usize) -> Vec<(String, String)> {
        (0..n).map(|i| (format!("{i:06}"), format!("/img/{i}.png"))).collect()
    }

    #[test]
    fn queue_is_idempotent() {
        let mut b = LabelBoard::new(rules());
        let first = b.queue(1, &samples(100));
        assert_eq!(first.len(), 100);
        assert!(first.iter().all(|t| t.status == TaskStatus::Queued));
        assert_eq!(b.queue(1, &samples(100)), first);
        assert!(b.queue(1, &[]).is_empty());
        assert_eq!(b.progress(1).total, 100);
    }

    #[test]
    fn excluded_character_is_rejected_and_requeued() {
        let mut b = LabelBoard::new(rules());
        b.queue(1, &samples(1));
        let id = task_id(1, "000000");
        match b.submit(&id, "A0B", "ann").unwrap() {
            SubmitOutcome::Rejected { task, reason, violation } => {
                assert_eq!(task.status, TaskStatus::Queued);
                assert!(reason.contains('0'));
                assert_eq!(violation, LabelViolation::Excluded { ch: '0' });
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(b.submit(&id, "AB", "ann").unwrap(), SubmitOutcome::Labeled { .. }));
        let before = b.clone();
        assert!(matches!(b.submit(&id, "AB", "bob").unwrap(), SubmitOutcome::Unchanged { .. }));
        assert_eq!(b, before);
        assert!(matches!(b.submit(&id, "AC", "bob"), Err(BoardError::Terminal { .. })));
        assert!(matches!(b.submit("r9-x", "AB", "bob"), Err(BoardError::UnknownTask(_))));
        assert_eq!(b.labels_for_round(1)["000000"], "AB");
        assert_eq!(b.progress(1).rejections, 1);
        assert!(b.check_invariants().is_empty());
    }

    #[test]
    fn next_batch_assigns_and_resumes() {
        let mut b = LabelBoard::new(rules());
        b.queue(2, &samples(5));
        let a = b.next_batch(Some(2), 3, "ann");
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|t| t.status == TaskStatus::Assigned));
        assert_eq!(b.next_batch(Some(2), 3, "ann")[..3], a[..]);
        assert_eq!(b.next_batch(Some(2), 10, "bob").len(), 2);
        assert!(b.next_batch(Some(2), 10, "cat").is_empty());
    }

    #[test]
    fn snapshot_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = LabelBoard::new(rules());
        b.queue(1, &samples(3));
        b.submit(&task_id(1, "000001"), "AB", "ann").unwrap();
        b.set_confusions(
            1,
            vec![CharRate {
                ch: 'S',
                misrecognized: 3,
                exposure: 9,
                rate: 1.0 / 3.0,
            }],
        );
        let path = dir.path().join("board.json");
        b.save(&path).unwrap();
        assert_eq!(LabelBoard::load(&path).unwrap(), b);
    }

    #[test]
    fn random_transitions_keep_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut b = LabelBoard::new(rules());
        let labels = ["AB", "A0", "", "ABCDE", "K9", "HJ12", "O1"];
        for step in 0..4000 {
            let round = rng.random_range(1..4u32);
            match rng.random_range(0..4) {
                0 => {
                    let n = rng.random_range(0..5);
                    let s: Vec<_> = (0..n)
                        .map(|_| {
                            let i = rng.random_range(0..30);
                            (format!("{i:06}"), String::new())
                        })
                        .collect();
                    b.queue(round, &s);
                }
                1 => {
                    b.next_batch(Some(round), rng.random_range(1..4), ["ann", "bob"][rng.random_range(0..2)]);
                }
                _ => {
                    let i = rng.random_range(0..30);
                    let label = labels[rng.random_range(0..labels.len())];
                    let _ = b.submit(&task_id(round, &format!("{i:06}")), label, "ann");
                }
            }
            let v = b.check_invariants();
            assert!(v.is_empty(), "step {step}: {v:?}");
        }
    }
}
