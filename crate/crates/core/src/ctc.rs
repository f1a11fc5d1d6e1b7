//! Connectionist temporal classification: collapse, decoding and exact
//! label likelihood over per-frame log-probabilities.
//!
//! Everything runs in the log domain. Impossible events use the finite
//! sentinel [`LOG_ZERO`] rather than `-inf`, so sums never produce NaN.

use std::collections::BTreeMap;

use thiserror::Error;

/// Stand-in for `log(0)`.
pub const LOG_ZERO: f64 = -1e31;
/// Allowed deviation of a frame's probability mass from 1.
pub const NORM_TOLERANCE: f64 = 1e-6;
const WIRE_MAGIC: &[u8; 4] = b"CTCL";
/// f32 storage loses precision; wire input is checked loosely then
/// renormalized.
const WIRE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CtcError {
    #[error("logits need at least one frame")]
    NoFrames,
    #[error("alphabet must be non-empty and free of duplicates")]
    BadAlphabet,
    #[error("frame {frame} has {found} classes, expected {expected}")]
    ClassMismatch { frame: usize, found: usize, expected: usize },
    #[error("frame {frame} probabilities sum to {sum}")]
    NotNormalized { frame: usize, sum: f64 },
    #[error("frame {frame} holds a NaN or +inf log-probability")]
    NonFinite { frame: usize },
    #[error("class index {index} outside 0..{classes}")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("character '{0}' is not in the alphabet")]
    ForeignChar(char),
    #[error("malformed logits wire data: {0}")]
    Wire(String),
}

/// `T × (C+1)` log-probabilities; the last class is blank.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsMatrix {
    alphabet: Vec<char>,
    frames: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub label: String,
    pub score: f64,
}

/// `log(exp(a) + exp(b))`, saturating at [`LOG_ZERO`].
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi <= LOG_ZERO {
        return LOG_ZERO;
    }
    if lo <= LOG_ZERO {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn clamp_log(v: f64) -> f64 {
    if v.is_nan() {
        v
    } else {
        v.max(LOG_ZERO)
    }
}

fn log_softmax(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter_mut().for_each(|v| *v = clamp_log(*v - lse));
}

impl LogitsMatrix {
    /// Builds from log-probability rows, checking per-frame normalization.
    pub fn new(alphabet: &str, rows: Vec<Vec<f64>>) -> Result<Self, CtcError> {
        Self::build(alphabet, rows, Some(NORM_TOLERANCE), false)
    }

    /// Builds from unnormalized scores by applying a per-frame log-softmax.
    pub fn from_scores(alphabet: &str, rows: Vec<Vec<f64>>) -> Result<Self, CtcError> {
        Self::build(alphabet, rows, None, true)
    }

    /// Builds from per-frame probabilities.
    pub fn from_probabilities(alphabet: &str, rows: Vec<Vec<f64>>) -> Result<Self, CtcError> {
        let rows = rows
            .into_iter()
            .map(|r| r.into_iter().map(|p| if p > 0.0 { p.ln() } else { LOG_ZERO }).collect())
            .collect();
        Self::new(alphabet, rows)
    }

    fn build(alphabet: &str, rows: Vec<Vec<f64>>, tolerance: Option<f64>, normalize: bool) -> Result<Self, CtcError> {
        let alphabet: Vec<char> = alphabet.chars().collect();
        let mut sorted = alphabet.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if alphabet.is_empty() || sorted.len() != alphabet.len() {
            return Err(CtcError::BadAlphabet);
        }
        if rows.is_empty() {
            return Err(CtcError::NoFrames);
        }
        let classes = alphabet.len() + 1;
        let mut data = Vec::with_capacity(rows.len() * classes);
        for (t, mut row) in rows.into_iter().enumerate() {
            if row.len() != classes {
                return Err(CtcError::ClassMismatch {
                    frame: t,
                    found: row.len(),
                    expected: classes,
                });
            }
            if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(CtcError::NonFinite { frame: t });
            }
            if normalize {
                log_softmax(&mut row);
            } else {
                row.iter_mut().for_each(|v| *v = clamp_log(*v));
            }
            if let Some(tol) = tolerance {
                let sum: f64 = row.iter().map(|v| v.exp()).sum();
                if (sum - 1.0).abs() > tol {
                    return Err(CtcError::NotNormalized { frame: t, sum });
                }
            }
            data.extend(row);
        }
        Ok(Self {
            frames: data.len() / classes,
            alphabet,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Alphabet size plus one.
    pub fn classes(&self) -> usize {
        self.alphabet.len() + 1
    }

    pub fn blank(&self) -> usize {
        self.alphabet.len()
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let c = self.classes();
        &self.data[t * c..(t + 1) * c]
    }

    pub fn get(&self, t: usize, class: usize) -> f64 {
        self.data[t * self.classes() + class]
    }

    /// Class indices of `text`.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, CtcError> {
        text.chars()
            .map(|ch| self.alphabet.iter().position(|&a| a == ch).ok_or(CtcError::ForeignChar(ch)))
            .collect()
    }

    fn spell(&self, indices: &[usize]) -> String {
        indices.iter().map(|&i| self.alphabet[i]).collect()
    }

    /// Merges adjacent repeats, then drops blanks.
    pub fn collapse(&self, path: &[usize]) -> Result<String, CtcError> {
        Ok(self.spell(&collapse_indices(path, self.blank())?))
    }

    /// Per-frame argmax, lowest index on ties.
    pub fn best_path(&self) -> Vec<usize> {
        (0..self.frames)
            .map(|t| {
                let row = self.row(t);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Wire form: `"CTCL"`, u32 T, u32 C+1, u32 alphabet byte length, the
    /// UTF-8 alphabet, then `T·(C+1)` little-endian f32 log-probabilities,
    /// row-major.
    pub fn to_wire(&self) -> Vec<u8> {
        let alpha: String = self.alphabet.iter().collect();
        let mut out = Vec::with_capacity(16 + alpha.len() + self.data.len() * 4);
        out.extend_from_slice(WIRE_MAGIC);
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.classes() as u32).to_le_bytes());
        out.extend_from_slice(&(alpha.len() as u32).to_le_bytes());
        out.extend_from_slice(alpha.as_bytes());
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, CtcError> {
        let wire = |m: &str| CtcError::Wire(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != WIRE_MAGIC {
            return Err(wire("missing CTCL header"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
        let (t, c, alen) = (u32_at(4), u32_at(8), u32_at(12));
        let alpha_end = 16usize.checked_add(alen).ok_or_else(|| wire("alphabet length overflows"))?;
        let body = t
            .checked_mul(c)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| wire("matrix size overflows"))?;
        if bytes.len() != alpha_end.saturating_add(body) {
            return Err(wire("length does not match header"));
        }
        let alphabet = std::str::from_utf8(&bytes[16..alpha_end]).map_err(|_| wire("alphabet is not UTF-8"))?;
        if alphabet.chars().count() + 1 != c {
            return Err(wire("class count does not match alphabet"));
        }
        let values: Vec<f64> = bytes[alpha_end..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        let rows: Vec<Vec<f64>> = values.chunks(c.max(1)).map(<[f64]>::to_vec).collect();
        Self::build(alphabet, rows.clone(), Some(WIRE_TOLERANCE), false)?;
        Self::build(alphabet, rows, None, true)
    }
}

/// Index-level collapse with `blank` as the blank class.
pub fn collapse_indices(path: &[usize], blank: usize) -> Result<Vec<usize>, CtcError> {
    let mut out = Vec::new();
    let mut prev = None;
    for &c in path {
        if c > blank {
            return Err(CtcError::IndexOutOfRange {
                index: c,
                classes: blank + 1,
            });
        }
        if Some(c) != prev && c != blank {
            out.push(c);
        }
        prev = Some(c);
    }
    Ok(out)
}

/// Best-path decoding; score is the chosen path's log-probability.
pub fn greedy_decode(m: &LogitsMatrix) -> DecodeResult {
    let path = m.best_path();
    let score = clamp_log(path.iter().enumerate().map(|(t, &c)| m.get(t, c)).sum());
    let label = m.collapse(&path).expect("argmax indices are in range");
    DecodeResult { label, score }
}

/// Prefix beam search keeping `beam_width` labelings per frame, ranked by
/// total (blank-ending plus non-blank-ending) probability. Ties go to the
/// lexicographically smaller index sequence.
pub fn beam_decode(m: &LogitsMatrix, beam_width: usize) -> DecodeResult {
    let width = beam_width.max(1);
    let blank = m.blank();
    // prefix → (log P ending in blank, log P ending in non-blank)
    let mut beams: BTreeMap<Vec<usize>, (f64, f64)> = BTreeMap::new();
    beams.insert(Vec::new(), (0.0, LOG_ZERO));
    for t in 0..m.frames() {
        let row = m.row(t);
        let mut next: BTreeMap<Vec<usize>, (f64, f64)> = BTreeMap::new();
        for (prefix, &(pb, pnb)) in &beams {
            let total = log_add(pb, pnb);
            let e = next.entry(prefix.clone()).or_insert((LOG_ZERO, LOG_ZERO));
            e.0 = log_add(e.0, total + row[blank]);
            if let Some(&last) = prefix.last() {
                // Repeat without a separating blank stays on the prefix.
                e.1 = log_add(e.1, pnb + row[last]);
            }
            for c in 0..blank {
                let mut ext = prefix.clone();
                ext.push(c);
                let add = if prefix.last() == Some(&c) { pb } else { total } + row[c];
                let e = next.entry(ext).or_insert((LOG_ZERO, LOG_ZERO));
                e.1 = log_add(e.1, add);
            }
        }
        let mut ranked: Vec<(Vec<usize>, (f64, f64))> = next.into_iter().collect();
        // BTreeMap order is lexicographic; a stable sort keeps it on ties.
        ranked.sort_by(|a, b| log_add(b.1 .0, b.1 .1).total_cmp(&log_add(a.1 .0, a.1 .1)));
        ranked.truncate(width);
        beams = ranked.into_iter().collect();
    }
    let (prefix, score) = beams
        .iter()
        .map(|(p, &(pb, pnb))| (p, log_add(pb, pnb)))
        .fold(None::<(&Vec<usize>, f64)>, |best, cur| match best {
            Some(b) if b.1 > cur.1 || (b.1 == cur.1 && b.0 <= cur.0) => Some(b),
            _ => Some(cur),
        })
        .expect("beam never empties");
    DecodeResult {
        label: m.spell(prefix),
        score,
    }
}

/// Exact `log P(target | m)` by the forward algorithm. Returns
/// [`LOG_ZERO`] when the target cannot fit in the available frames.
pub fn log_likelihood(m: &LogitsMatrix, target: &str) -> Result<f64, CtcError> {
    let labels = m.encode(target)?;
    let blank = m.blank();
    let repeats = labels.windows(2).filter(|w| w[0] == w[1]).count();
    if labels.len() + repeats > m.frames() {
        return Ok(LOG_ZERO);
    }
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(blank);
    for &l in &labels {
        ext.push(l);
        ext.push(blank);
    }
    let s = ext.len();
    let mut alpha = vec![LOG_ZERO; s];
    alpha[0] = m.get(0, blank);
    if s > 1 {
        alpha[1] = m.get(0, ext[1]);
    }
    for t in 1..m.frames() {
        let mut next = vec![LOG_ZERO; s];
        for i in 0..s {
            let mut a = alpha[i];
            if i >= 1 {
                a = log_add(a, alpha[i - 1]);
            }
            if i >= 2 && ext[i] != blank && ext[i] != ext[i - 2] {
                a = log_add(a, alpha[i - 2]);
            }
            next[i] = clamp_log(a + m.get(t, ext[i]));
        }
        alpha = next;
    }
    let end = if s > 1 { log_add(alpha[s - 1], alpha[s - 2]) } else { alpha[0] };
    Ok(clamp_log(end))
}
