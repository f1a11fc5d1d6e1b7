//! Confusion-driven active transfer learning.
//!
//! A campaign starts from a basic recognizer, fine-tunes it on a small
//! labeled training set, measures which characters it misreads on a fixed
//! validation set, then asks for labels on pool samples containing those
//! characters. The training set grows by a fixed amount per round up to a
//! cap.

mod campaign;
mod evaluate;
mod labeler;
mod select;

use thiserror::Error;

use crate::adapter::AdapterError;

pub use campaign::{
    prepare_splits, Budget, Campaign, CampaignConfig, CampaignReport, CampaignState, DecodeMode, LabelerMode,
    ReportRow, RoundConfusions, RoundRecord, CAMPAIGN_REPORT_SCHEMA_VERSION,
};
pub use evaluate::{align, evaluate_predictions, ConfusionStats, EditPair, Evaluation, PairCount};
pub use labeler::{BoardLabeler, LabelRequest, Labeler, OracleLabeler};
pub use select::{hardness, select_hard_samples, PoolSample};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActiveError {
    #[error("{predictions} predictions for {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("pool holds {available} samples, {requested} requested")]
    PoolExhausted { requested: usize, available: usize },
    #[error("campaign finished: training set reached its cap of {cap}")]
    Terminal { cap: usize },
    #[error("sample {0} has no label")]
    Unlabeled(String),
    #[error("{split} split has {found} samples, expected {expected}")]
    SplitSize {
        split: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("round {round}: {labeled} of {requested} samples labeled before the timeout")]
    LabelTimeout { round: u32, labeled: usize, requested: usize },
    #[error("invalid campaign config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{Gateway, StubAdapter, StubConfig};
    use crate::dataset::{encode_png, write_dataset, DatasetManifest, ManifestHeader, NewSample, Provenance, Split};
    use crate::scheme::LabelRules;
    use crate::seed::rng_from_seed;
    use rand::Rng;
    use std::collections::HashSet;
    use std::path::Path;
    use std::sync::Arc;

    const CHARSET: &str = "0123456789ABCDEFGHJKLMNPQRSTUVWXYZ";

    fn dataset(root: &Path, n: usize, seed: u64) -> DatasetManifest {
        let chars: Vec<char> = CHARSET.chars().collect();
        let mut rng = rng_from_seed(seed);
        let samples = (0..n)
            .map(|i| {
                let label: String = (0..4).map(|_| chars[rng.random_range(0..chars.len())]).collect();
                let img = image::RgbImage::from_fn(4, 2, |x, y| {
                    let b = (i as u32 >> (4 * (x + 4 * y) % 32)) as u8;
                    image::Rgb([b, (i % 251) as u8, x as u8 + y as u8])
                });
                NewSample {
                    sample_id: format!("{i:06}"),
                    png: encode_png(&img),
                    label: Some(label),
                    seed: None,
                    split: Split::Pool,
                }
            })
            .collect();
        let mut header = ManifestHeader::new("pool", "test", Provenance::Real);
        header.label_rules = Some(LabelRules {
            charset: CHARSET.into(),
            excluded_chars: String::new(),
            length_range: (4, 4),
        });
        write_dataset(samples, header, root).unwrap()
    }

    fn stub(confusions: Vec<(char, char)>) -> Arc<StubAdapter> {
        Arc::new(StubAdapter::new(StubConfig {
            seed: 3,
            confusions,
            ..StubConfig::default()
        }))
    }

    fn run(cfg: &CampaignConfig, m: &DatasetManifest, stub: Arc<StubAdapter>, work: &Path) -> (CampaignState, CampaignReport) {
        stub.register_manifest(m);
        let g = Gateway::connect(stub).unwrap();
        let labeler = OracleLabeler::new(m);
        Campaign::new(cfg.clone(), m, &g, &labeler, work).unwrap().run().unwrap()
    }

    #[test]
    fn default_budget_gives_six_cells() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CampaignConfig::default();
        let m = prepare_splits(&dataset(dir.path(), 1600, 1), &cfg).unwrap();
        let (state, report) = run(&cfg, &m, stub(vec![]), &dir.path().join("w1"));
        let sizes: Vec<usize> = report.rows.iter().map(|r| r.training_size).collect();
        assert_eq!(sizes, vec![0, 100, 200, 300, 400, 500]);
        assert_eq!(state.history.len(), state.round as usize + 1);
        let val: HashSet<_> = state.validation.iter().collect();
        assert!(state.training.iter().all(|id| !val.contains(id)));
        assert!(state.pool.iter().all(|id| !val.contains(id) && !state.training.contains(id)));
        for w in report.rows.windows(2) {
            assert!(w[1].success_rate > w[0].success_rate, "{:?}", report.rows);
        }
        let (_, again) = run(&cfg, &m, stub(vec![]), &dir.path().join("w2"));
        assert_eq!(again, report);
        assert_eq!(again.to_json(), report.to_json());
    }

    #[test]
    fn cap_equal_initial_gives_two_cells_and_terminal() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CampaignConfig {
            budget: Budget {
                initial: 50,
                per_round: 50,
                cap: 50,
            },
            validation_size: 100,
            ..CampaignConfig::default()
        };
        let m = prepare_splits(&dataset(dir.path(), 300, 2), &cfg).unwrap();
        let s = stub(vec![]);
        s.register_manifest(&m);
        let g = Gateway::connect(s).unwrap();
        let labeler = OracleLabeler::new(&m);
        let mut c = Campaign::new(cfg, &m, &g, &labeler, &dir.path().join("w")).unwrap();
        c.run_baseline().unwrap();
        c.run_round().unwrap();
        assert!(c.is_terminal());
        assert_eq!(c.run_round().unwrap_err(), ActiveError::Terminal { cap: 50 });
        assert_eq!(c.report().rows.len(), 2);
    }

    #[test]
    fn confused_pair_drives_selection() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CampaignConfig::default();
        let m = prepare_splits(&dataset(dir.path(), 3600, 4), &cfg).unwrap();
        let (state, _) = run(&cfg, &m, stub(vec![('S', '5')]), &dir.path().join("w"));
        for rec in &state.history[1..] {
            if rec.selected.is_empty() {
                continue;
            }
            let hit = rec
                .selected
                .iter()
                .filter(|id| {
                    let l = m.entry(id).unwrap().label.as_ref().unwrap();
                    l.contains('S') || l.contains('5')
                })
                .count();
            assert!(hit * 100 >= 95 * rec.selected.len(), "round {}: {hit}", rec.round);
        }
    }

    #[test]
    fn failed_round_leaves_state_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CampaignConfig {
            validation_size: 100,
            base_model: "missing".into(),
            ..CampaignConfig::default()
        };
        let m = prepare_splits(&dataset(dir.path(), 600, 5), &cfg).unwrap();
        let s = stub(vec![]);
        s.register_manifest(&m);
        let g = Gateway::connect(s).unwrap();
        let labeler = OracleLabeler::new(&m);
        let mut c = Campaign::new(cfg, &m, &g, &labeler, &dir.path().join("w")).unwrap();
        assert!(c.run_baseline().is_err());
        let before = c.state().clone();
        assert!(matches!(c.run_round(), Err(ActiveError::Adapter(_))));
        assert_eq!(*c.state(), before);
    }

    #[test]
    fn split_sizes_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let m = dataset(dir.path(), 50, 6);
        let g = Gateway::connect(stub(vec![])).unwrap();
        let labeler = OracleLabeler::new(&m);
        let err = Campaign::new(CampaignConfig::default(), &m, &g, &labeler, dir.path())
            .err()
            .unwrap();
        assert!(matches!(err, ActiveError::SplitSize { split: "validation", .. }));

        let cfg = CampaignConfig::default();
        let m = prepare_splits(&dataset(&dir.path().join("short"), 700, 6), &cfg).unwrap();
        let err = Campaign::new(cfg, &m, &g, &labeler, dir.path()).err().unwrap();
        assert_eq!(
            err,
            ActiveError::SplitSize {
                split: "pool",
                expected: 400,
                found: 100
            }
        );
    }

    #[test]
    fn config_parsing_and_schedule() {
        let cfg = CampaignConfig::from_json(r#"{"budget":{"initial":100,"per_round":150,"cap":500},"decode":{"mode":"beam","width":8}}"#).unwrap();
        assert_eq!(cfg.schedule(), vec![100, 250, 400, 500]);
        assert_eq!(cfg.decode, DecodeMode::Beam { width: 8 });
        assert!(matches!(CampaignConfig::from_json(r#"{"budgett":{}}"#), Err(ActiveError::Config(_))));
        assert!(CampaignConfig::from_json(r#"{"budget":{"initial":5,"per_round":1,"cap":4}}"#).is_err());
    }
}
