use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ActiveError;
use crate::adapter::CharRate;

/// One aligned edit: `None` on the truth side is an insertion, on the
/// predicted side a deletion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EditPair {
    pub truth: Option<char>,
    pub predicted: Option<char>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCount {
    pub truth: Option<char>,
    pub predicted: Option<char>,
    pub count: u64,
}

/// Per-character error statistics over a set of predictions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionStats {
    /// Occurrences of each character in the truth strings.
    pub exposure: BTreeMap<char, u64>,
    /// Truth occurrences that were substituted or deleted.
    pub misrecognized: BTreeMap<char, u64>,
    /// Edit pairs with counts, sorted by pair.
    pub pairs: Vec<PairCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub success_rate: f64,
    pub stats: ConfusionStats,
}

/// Minimum-edit-distance alignment with unit costs. The backtrace prefers
/// the diagonal (match or substitution), then deletion, then insertion.
pub fn align(truth: &str, pred: &str) -> Vec<EditPair> {
    let t: Vec<char> = truth.chars().collect();
    let p: Vec<char> = pred.chars().collect();
    let (n, m) = (t.len(), p.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(t[i - 1] != p[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut out = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(t[i - 1] != p[j - 1]) {
            out.push(EditPair {
                truth: Some(t[i - 1]),
                predicted: Some(p[j - 1]),
            });
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            out.push(EditPair {
                truth: Some(t[i - 1]),
                predicted: None,
            });
            i -= 1;
        } else {
            out.push(EditPair {
                truth: None,
                predicted: Some(p[j - 1]),
            });
            j -= 1;
        }
    }
    out.reverse();
    out
}

impl ConfusionStats {
    pub fn add(&mut self, truth: &str, pred: &str) {
        let mut pairs: BTreeMap<EditPair, u64> = self
            .pairs
            .iter()
            .map(|p| {
                (
                    EditPair {
                        truth: p.truth,
                        predicted: p.predicted,
                    },
                    p.count,
                )
            })
            .collect();
        for ch in truth.chars() {
            *self.exposure.entry(ch).or_insert(0) += 1;
        }
        for e in align(truth, pred) {
            if e.truth == e.predicted {
                continue;
            }
            if let Some(t) = e.truth {
                *self.misrecognized.entry(t).or_insert(0) += 1;
            }
            *pairs.entry(e).or_insert(0) += 1;
        }
        self.pairs = pairs
            .into_iter()
            .map(|(e, count)| PairCount {
                truth: e.truth,
                predicted: e.predicted,
                count,
            })
            .collect();
    }

    pub fn misrecognized(&self, ch: char) -> u64 {
        self.misrecognized.get(&ch).copied().unwrap_or(0)
    }

    pub fn exposure(&self, ch: char) -> u64 {
        self.exposure.get(&ch).copied().unwrap_or(0)
    }

    /// Misrecognition rate, or `None` below `min_exposure`.
    pub fn rate(&self, ch: char, min_exposure: u64) -> Option<f64> {
        let e = self.exposure(ch);
        (e >= min_exposure.max(1)).then(|| self.misrecognized(ch) as f64 / e as f64)
    }

    /// Characters with enough exposure, by rate, then absolute count
    /// (both descending), then position in `charset`. Characters outside
    /// `charset` follow in code-point order.
    pub fn ranked(&self, charset: &str, min_exposure: u64) -> Vec<CharRate> {
        let order: BTreeMap<char, usize> = charset.chars().enumerate().map(|(i, c)| (c, i)).collect();
        let mut out: Vec<CharRate> = self
            .exposure
            .keys()
            .filter_map(|&ch| {
                let rate = self.rate(ch, min_exposure)?;
                Some(CharRate {
                    ch,
                    misrecognized: self.misrecognized(ch),
                    exposure: self.exposure(ch),
                    rate,
                })
            })
            .collect();
        let pos = |c: char| order.get(&c).copied().unwrap_or(usize::MAX);
        out.sort_by(|a, b| {
            b.rate
                .total_cmp(&a.rate)
                .then(b.misrecognized.cmp(&a.misrecognized))
                .then(pos(a.ch).cmp(&pos(b.ch)))
                .then(a.ch.cmp(&b.ch))
        });
        out
    }

    /// The `n` highest-ranked characters with a non-zero rate.
    pub fn top(&self, charset: &str, min_exposure: u64, n: usize) -> Vec<CharRate> {
        self.ranked(charset, min_exposure)
            .into_iter()
            .filter(|r| r.misrecognized > 0)
            .take(n)
            .collect()
    }
}

/// Exact-match success rate plus confusion statistics.
pub fn evaluate_predictions<P: AsRef<str>, T: AsRef<str>>(pred: &[P], truth: &[T]) -> Result<Evaluation, ActiveError> {
    if pred.len() != truth.len() {
        return Err(ActiveError::LengthMismatch {
            predictions: pred.len(),
            truths: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(ActiveError::EmptyEvaluation);
    }
    let mut stats = ConfusionStats::default();
    let mut hits = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        let (p, t) = (p.as_ref(), t.as_ref());
        hits += usize::from(p == t);
        stats.add(t, p);
    }
    Ok(Evaluation {
        success_rate: hits as f64 / pred.len() as f64,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn levenshtein(a: &[char], b: &[char]) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        let sub = levenshtein(&a[1..], &b[1..]) + usize::from(a[0] != b[0]);
        sub.min(levenshtein(&a[1..], b) + 1).min(levenshtein(a, &b[1..]) + 1)
    }

    #[test]
    fn substitution_example() {
        let ev = evaluate_predictions(&["AB", "CO"], &["AB", "CD"]).unwrap();
        assert_eq!(ev.success_rate, 0.5);
        assert_eq!(ev.stats.misrecognized, BTreeMap::from([('D', 1)]));
        assert_eq!(
            ev.stats.pairs,
            vec![PairCount {
                truth: Some('D'),
                predicted: Some('O'),
                count: 1
            }]
        );
    }

    #[test]
    fn insertion_example() {
        let ev = evaluate_predictions(&["ABX"], &["AB"]).unwrap();
        assert_eq!(ev.success_rate, 0.0);
        assert!(ev.stats.misrecognized.is_empty());
        assert_eq!(
            ev.stats.pairs,
            vec![PairCount {
                truth: None,
                predicted: Some('X'),
                count: 1
            }]
        );
    }

    #[test]
    fn errors() {
        assert_eq!(
            evaluate_predictions(&["A"], &["A", "B"]).unwrap_err(),
            ActiveError::LengthMismatch {
                predictions: 1,
                truths: 2
            }
        );
        assert_eq!(
            evaluate_predictions::<&str, &str>(&[], &[]).unwrap_err(),
            ActiveError::EmptyEvaluation
        );
    }

    #[test]
    fn ranking_ties() {
        let mut s = ConfusionStats::default();
        for _ in 0..10 {
            s.add("AB", "AB");
        }
        for _ in 0..5 {
            s.add("CD", "XY");
        }
        s.add("EE", "E");
        let r: Vec<char> = s.ranked("DCBAE", 5).iter().map(|r| r.ch).collect();
        // C and D tie on rate and count; charset order puts D first. E has
        // too little exposure.
        assert_eq!(r, vec!['D', 'C', 'B', 'A']);
        assert_eq!(s.top("DCBAE", 1, 10).last().unwrap().ch, 'E');
    }

    proptest! {
        #[test]
        fn alignment_is_minimal(t in "[ABC]{0,6}", p in "[ABC]{0,6}") {
            let a = align(&t, &p);
            let cost = a.iter().filter(|e| e.truth != e.predicted).count();
            let tc: Vec<char> = t.chars().collect();
            let pc: Vec<char> = p.chars().collect();
            prop_assert_eq!(cost, levenshtein(&tc, &pc));
            let back_t: String = a.iter().filter_map(|e| e.truth).collect();
            let back_p: String = a.iter().filter_map(|e| e.predicted).collect();
            prop_assert_eq!(back_t, t);
            prop_assert_eq!(back_p, p);
        }

        #[test]
        fn perfect_iff_all_equal(pairs in proptest::collection::vec(("[AB]{1,3}", "[AB]{1,3}"), 1..20)) {
            let (p, t): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
            let ev = evaluate_predictions(&p, &t).unwrap();
            prop_assert_eq!(ev.success_rate == 1.0, p == t);
            prop_assert!((0.0..=1.0).contains(&ev.success_rate));
            if p == t {
                prop_assert!(ev.stats.misrecognized.is_empty());
            }
            for (ch, m) in &ev.stats.misrecognized {
                prop_assert!(*m <= ev.stats.exposure(*ch));
            }
        }
    }
}
