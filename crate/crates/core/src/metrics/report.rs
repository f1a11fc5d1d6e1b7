use std::fmt::Write as _;

use image::GrayImage;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{entropy, mutual_information, nrmse, psnr, ssim, MetricError, PerceptualFeatures, PERCEPTUAL_NOTE};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Which (candidate, real) pairs enter a group mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Every candidate sample against every real sample of the group.
    #[default]
    AllPairs,
    /// Candidate `i` against real `i` only.
    Matched,
}

/// PSNR may be infinite; JSON carries that as the string `"inf"`.
mod db {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Raw::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("invalid decibel value `{s}`"))),
        }
    }
}

/// Pair-averaged metric values for one candidate population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub ssim: f64,
    #[serde(with = "db")]
    pub psnr: f64,
    pub nrmse: f64,
    pub mi: f64,
    pub pl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationEntropy {
    pub real: f64,
    pub imitation: f64,
    pub synthetic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    /// 1-based group index.
    pub group: usize,
    /// Samples per population in this group.
    pub size: usize,
    pub imitation_vs_real: MetricValues,
    pub synthetic_vs_real: MetricValues,
    pub entropy: PopulationEntropy,
}

impl GroupResult {
    /// Number of the six metrics on which synthetic is closer to real than
    /// imitation. EN counts when the synthetic mean entropy is nearer the
    /// real one.
    pub fn synthetic_wins(&self) -> usize {
        let (i, s) = (&self.imitation_vs_real, &self.synthetic_vs_real);
        let e = &self.entropy;
        [
            s.ssim > i.ssim,
            s.psnr > i.psnr,
            s.nrmse < i.nrmse,
            s_en_gap(e.synthetic, e.real) < s_en_gap(e.imitation, e.real),
            s.mi > i.mi,
            s.pl < i.pl,
        ]
        .iter()
        .filter(|&&w| w)
        .count()
    }
}

fn s_en_gap(a: f64, b: f64) -> f64 {
    (a - b).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub pairing: Pairing,
    pub perceptual_note: String,
    pub groups: Vec<GroupResult>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One panel per metric, one row per group.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let panels: [(&str, fn(&GroupResult) -> (f64, f64, Option<f64>)); 6] = [
            ("SSIM", |g| (g.imitation_vs_real.ssim, g.synthetic_vs_real.ssim, None)),
            ("PSNR (dB)", |g| (g.imitation_vs_real.psnr, g.synthetic_vs_real.psnr, None)),
            ("NRMSE", |g| (g.imitation_vs_real.nrmse, g.synthetic_vs_real.nrmse, None)),
            ("EN (bits)", |g| (g.entropy.imitation, g.entropy.synthetic, Some(g.entropy.real))),
            ("MI (bits)", |g| (g.imitation_vs_real.mi, g.synthetic_vs_real.mi, None)),
            ("PL", |g| (g.imitation_vs_real.pl, g.synthetic_vs_real.pl, None)),
        ];
        for (name, get) in panels {
            let _ = writeln!(out, "{name}");
            let _ = writeln!(out, "{:>6} {:>6} {:>12} {:>12} {:>12}", "group", "size", "imitation", "synthetic", "real");
            for g in &self.groups {
                let (i, s, r) = get(g);
                let real = r.map(|v| format!("{v:>12.4}")).unwrap_or_else(|| format!("{:>12}", "-"));
                let _ = writeln!(out, "{:>6} {:>6} {:>12.4} {:>12.4} {real}", g.group, g.size, i, s);
            }
            out.push('\n');
        }
        let _ = writeln!(out, "note: {}", self.perceptual_note);
        out
    }
}

struct Pop<'a> {
    images: &'a [GrayImage],
    features: Vec<PerceptualFeatures>,
    entropy: Vec<f64>,
}

impl<'a> Pop<'a> {
    fn new(images: &'a [GrayImage], n: usize) -> Self {
        let images = &images[..n];
        Self {
            images,
            features: images.par_iter().map(PerceptualFeatures::new).collect(),
            entropy: images.iter().map(entropy).collect(),
        }
    }
}

/// Pairwise values `[candidate i][real j]`, five metrics each.
fn pair_matrix(cand: &Pop, real: &Pop, pairing: Pairing) -> Result<Vec<Vec<Option<[f64; 5]>>>, MetricError> {
    let n = real.images.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if pairing == Pairing::Matched && i != j {
                        return Ok(None);
                    }
                    let (x, y) = (&cand.images[i], &real.images[j]);
                    Ok(Some([
                        ssim(x, y)?,
                        psnr(x, y)?,
                        nrmse(x, y)?,
                        mutual_information(x, y)?,
                        cand.features[i].distance(&real.features[j])?,
                    ]))
                })
                .collect()
        })
        .collect()
}

fn group_mean(m: &[Vec<Option<[f64; 5]>>], size: usize) -> MetricValues {
    let mut sum = [0.0; 5];
    let mut count = 0usize;
    for row in &m[..size] {
        for v in row[..size].iter().flatten() {
            for k in 0..5 {
                sum[k] += v[k];
            }
            count += 1;
        }
    }
    let mean = sum.map(|s| s / count as f64);
    MetricValues {
        ssim: mean[0],
        psnr: mean[1],
        nrmse: mean[2],
        mi: mean[3],
        pl: mean[4],
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Incremental protocol: group `g` (1-based) uses the first `2g` samples of
/// each population. `synthetic[i]` must be the translation of
/// `imitation[i]`.
pub fn group_protocol_report(
    real: &[GrayImage],
    imitation: &[GrayImage],
    synthetic: &[GrayImage],
    groups: usize,
    pairing: Pairing,
) -> Result<MetricReport, MetricError> {
    if imitation.len() != synthetic.len() {
        return Err(MetricError::CorrespondenceMismatch {
            imitation: imitation.len(),
            synthetic: synthetic.len(),
        });
    }
    let needed = 2 * groups.max(1);
    for (population, found) in [("real", real.len()), ("imitation", imitation.len()), ("synthetic", synthetic.len())] {
        if found < needed {
            return Err(MetricError::InsufficientSamples {
                population,
                needed,
                found,
            });
        }
    }
    let (r, i, s) = (Pop::new(real, needed), Pop::new(imitation, needed), Pop::new(synthetic, needed));
    let mi = pair_matrix(&i, &r, pairing)?;
    let ms = pair_matrix(&s, &r, pairing)?;
    let groups = (1..=groups)
        .map(|g| {
            let size = 2 * g;
            GroupResult {
                group: g,
                size,
                imitation_vs_real: group_mean(&mi, size),
                synthetic_vs_real: group_mean(&ms, size),
                entropy: PopulationEntropy {
                    real: mean(&r.entropy[..size]),
                    imitation: mean(&i.entropy[..size]),
                    synthetic: mean(&s.entropy[..size]),
                },
            }
        })
        .collect();
    Ok(MetricReport {
        schema_version: REPORT_SCHEMA_VERSION,
        pairing,
        perceptual_note: PERCEPTUAL_NOTE.to_string(),
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn population(n: usize, seed: u64) -> Vec<GrayImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let fx: f64 = rng.random_range(3.0..9.0);
                let fy: f64 = rng.random_range(3.0..9.0);
                GrayImage::from_fn(128, 64, |x, y| {
                    image::Luma([(128.0 + 100.0 * (x as f64 / fx).sin() * (y as f64 / fy).cos()) as u8])
                })
            })
            .collect()
    }

    fn noised(pop: &[GrayImage], amp: f64, seed: u64) -> Vec<GrayImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pop.iter()
            .map(|img| {
                let mut o = img.clone();
                o.iter_mut()
                    .for_each(|v| *v = (*v as f64 + rng.random_range(-amp..=amp)).round().clamp(0.0, 255.0) as u8);
                o
            })
            .collect()
    }

    #[test]
    fn ten_groups_of_growing_size() {
        let real = population(20, 1);
        let report = group_protocol_report(&real, &noised(&real, 60.0, 2), &noised(&real, 5.0, 3), 10, Pairing::AllPairs)
            .unwrap();
        assert_eq!(report.groups.iter().map(|g| g.size).collect::<Vec<_>>(), (1..=10).map(|g| 2 * g).collect::<Vec<_>>());
        let back: MetricReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
        assert!(report.to_table().contains("PSNR"));
    }

    #[test]
    fn identical_synthetic_is_best_case_when_matched() {
        let real = population(8, 4);
        let report = group_protocol_report(&real, &noised(&real, 30.0, 5), &real, 4, Pairing::Matched).unwrap();
        for g in &report.groups {
            assert!((g.synthetic_vs_real.ssim - 1.0).abs() < 1e-12);
            assert_eq!(g.synthetic_vs_real.nrmse, 0.0);
            assert_eq!(g.synthetic_vs_real.pl, 0.0);
            assert_eq!(g.synthetic_vs_real.psnr, f64::INFINITY);
        }
        let back: MetricReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn less_noise_dominates_in_every_group() {
        let real = population(20, 6);
        for pairing in [Pairing::AllPairs, Pairing::Matched] {
            let report =
                group_protocol_report(&real, &noised(&real, 80.0, 7), &noised(&real, 8.0, 8), 10, pairing).unwrap();
            for g in &report.groups {
                let (i, s) = (&g.imitation_vs_real, &g.synthetic_vs_real);
                assert!(s.ssim > i.ssim && s.psnr > i.psnr, "{pairing:?} group {}", g.group);
                // Unrelated cross pairs carry no shared information, so the
                // MI ordering is only meaningful for matched pairs.
                if pairing == Pairing::Matched {
                    assert!(s.mi > i.mi, "group {}", g.group);
                }
                assert!(s.nrmse < i.nrmse && s.pl < i.pl, "{pairing:?} group {}", g.group);
            }
        }
    }

    #[test]
    fn insufficient_and_mismatched_inputs() {
        let real = population(6, 9);
        assert!(matches!(
            group_protocol_report(&real, &real, &real, 4, Pairing::AllPairs),
            Err(MetricError::InsufficientSamples { needed: 8, .. })
        ));
        assert!(matches!(
            group_protocol_report(&real, &real[..4], &real, 2, Pairing::AllPairs),
            Err(MetricError::CorrespondenceMismatch { .. })
        ));
    }
}
