//! Parametric CAPTCHA rendering.
//!
//! Every random choice for one image is drawn up front into a [`RenderMeta`]
//! from a single seed. Pixels are then a pure function of the scheme and the
//! metadata, so [`render_from_meta`] reproduces [`render_captcha`] byte for
//! byte.

mod arc;
mod background;
mod distort;
mod font;
mod layout;
mod raster;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use image::RgbImage;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arc::{draw_noise_arc, ArcShape, NoiseArc};
pub use background::Background;
pub use distort::{apply_distortion, Distortion};
pub use font::{rasterize_glyph, FontLibrary, BUILTIN_FONTS};
pub use layout::{assign_layers, compose_two_layer, GlyphBox, TwoLayerMeta, MARGIN_PX};
pub use raster::Mask;

use crate::dataset::{
    encode_png, write_dataset, DatasetError, DatasetManifest, ManifestHeader, NewSample, Provenance, Split,
};
use crate::scheme::{validate_scheme, LabelViolation, Mechanism, MechanismSet, SchemeConfig};
use crate::seed::{rng_from_seed, split_seed};
use raster::{Canvas, GlyphLayer};

/// Default glyph em size as a fraction of image height.
pub const DEFAULT_FONT_SCALE: f64 = 0.55;
/// Sidecar file holding per-sample render metadata.
pub const RENDER_META_FILE: &str = "render_meta.jsonl";

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("font `{font}` unavailable: {reason}")]
    FontUnavailable { font: String, reason: String },
    #[error("font `{font}` has no glyph for '{ch}'")]
    MissingGlyph { font: String, ch: char },
    #[error("text rejected: {0}")]
    InvalidText(#[from] LabelViolation),
    #[error("text `{text}` needs {needed}px but {available}px are available")]
    PlacementOverflow { text: String, needed: i64, available: i64 },
    #[error("two-layer offset {offset_px}px does not fit {glyph_height}px glyphs in a {image_height}px image")]
    TwoLayerTooSmall {
        offset_px: i64,
        glyph_height: i64,
        image_height: u32,
    },
    #[error("invalid scheme: {}", .0.iter().map(|v| format!("{}: {}", v.field, v.message)).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<crate::scheme::SchemeViolation>),
    #[error("render metadata does not fit the scheme: {0}")]
    InvalidMeta(String),
}

/// Per-character record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphMeta {
    pub ch: char,
    pub font: String,
    pub color: [u8; 3],
    pub rotation_deg: f64,
    pub layer: u8,
}

/// Everything sampled for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderMeta {
    pub text: String,
    pub font_size_px: f64,
    /// Set when the scheme has a variable length range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled_length: Option<usize>,
    pub glyphs: Vec<GlyphMeta>,
    /// Gap after each character but the last; negative values overlap.
    pub gaps_px: Vec<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_layer: Option<TwoLayerMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distortion: Option<Distortion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<Background>,
    #[serde(default)]
    pub arcs: Vec<NoiseArc>,
}

impl RenderMeta {
    /// Mechanisms whose effect is present in this particular image.
    pub fn applied_mechanisms(&self) -> MechanismSet {
        let mut set = MechanismSet::default();
        if self.glyphs.iter().any(|g| g.rotation_deg != 0.0) {
            set.insert(Mechanism::Rotation);
        }
        if self.gaps_px.iter().any(|&g| g < 0) {
            set.insert(Mechanism::Overlapping);
        }
        if self.distortion.is_some_and(|d| d.amplitude_px != 0.0) {
            set.insert(Mechanism::Distortion);
        }
        let fonts: BTreeSet<&str> = self.glyphs.iter().map(|g| g.font.as_str()).collect();
        if fonts.len() >= 2 {
            set.insert(Mechanism::MultiFonts);
        }
        if !self.arcs.is_empty() {
            set.insert(Mechanism::NoiseArc);
        }
        if self.sampled_length.is_some() {
            set.insert(Mechanism::VariableLength);
        }
        if self.background.is_some() {
            set.insert(Mechanism::BackgroundInterference);
        }
        if self.two_layer.is_some() {
            set.insert(Mechanism::TwoLayer);
        }
        set
    }
}

/// An image with its ground truth.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub image: RgbImage,
    pub label: String,
    pub provenance: Provenance,
    pub meta: Option<RenderMeta>,
    pub seed: Option<u64>,
}

fn uniform_f64<R: Rng>(rng: &mut R, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..=range.1)
    }
}

fn ensure_valid(cfg: &SchemeConfig) -> Result<(), RenderError> {
    let violations = validate_scheme(cfg);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(RenderError::InvalidConfig(violations))
    }
}

/// Draws a label: length uniform in the scheme range, characters uniform
/// over the effective charset.
pub fn sample_text<R: Rng>(cfg: &SchemeConfig, rng: &mut R) -> Result<String, RenderError> {
    let chars = cfg.effective_charset();
    if chars.is_empty() {
        return Err(RenderError::InvalidConfig(validate_scheme(cfg)));
    }
    let (lo, hi) = cfg.length_range;
    let len = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    Ok((0..len).map(|_| chars[rng.random_range(0..chars.len())]).collect())
}

fn default_font_size(cfg: &SchemeConfig) -> f64 {
    cfg.font_size_px.unwrap_or(cfg.image_size.1 as f64 * DEFAULT_FONT_SCALE)
}

/// Samples the full render plan for `seed`. With `text` given, the label is
/// taken as is (after rule checks) and no randomness is spent on it.
pub fn sample_meta(cfg: &SchemeConfig, seed: u64, text: Option<&str>) -> Result<RenderMeta, RenderError> {
    ensure_valid(cfg)?;
    let mut rng = rng_from_seed(seed);
    let text = match text {
        Some(t) => {
            cfg.label_rules().check(t)?;
            t.to_string()
        }
        None => sample_text(cfg, &mut rng)?,
    };
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let nf = cfg.fonts.len();

    let font_idx: Vec<usize> = if cfg.multi_font_per_image && nf >= 2 {
        let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..nf)).collect();
        if n >= 2 && idx.iter().all(|&i| i == idx[0]) {
            let pos = rng.random_range(0..n);
            idx[pos] = (idx[pos] + 1 + rng.random_range(0..nf - 1)) % nf;
        }
        idx
    } else {
        let i = if nf > 1 { rng.random_range(0..nf) } else { 0 };
        vec![i; n]
    };
    let colors: Vec<[u8; 3]> = (0..n)
        .map(|_| cfg.font_colors[rng.random_range(0..cfg.font_colors.len())])
        .collect();
    let rotations: Vec<f64> = (0..n).map(|_| uniform_f64(&mut rng, cfg.rotation_range_deg)).collect();
    let (gmin, gmax) = cfg.char_gap_range_px;
    let gaps_px: Vec<i32> = (0..n.saturating_sub(1))
        .map(|_| if gmin == gmax { gmin } else { rng.random_range(gmin..=gmax) })
        .collect();
    let layers = if cfg.two_layer {
        assign_layers(n, cfg.two_layer_mode)
    } else {
        vec![0; n]
    };
    let distortion = cfg.distortion.as_ref().map(|d| Distortion {
        amplitude_px: d.amplitude_px,
        period_px: d.period_px,
        phase_rad: uniform_f64(&mut rng, d.phase_range_rad),
    });
    let background = cfg.background.as_ref().map(|b| Background {
        kind: b.kind,
        density: b.density,
        seed: rng.random(),
    });
    let mut arcs = Vec::new();
    for spec in &cfg.noise_arcs {
        let (lo, hi) = spec.count_range;
        let count = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        for _ in 0..count {
            arcs.push(NoiseArc::sample(spec, cfg, &mut rng));
        }
    }
    let glyphs = (0..n)
        .map(|i| GlyphMeta {
            ch: chars[i],
            font: cfg.fonts[font_idx[i]].clone(),
            color: colors[i],
            rotation_deg: rotations[i],
            layer: layers[i],
        })
        .collect();
    let two_layer = cfg.two_layer.then(|| TwoLayerMeta {
        mode: cfg.two_layer_mode,
        offset_px: (cfg.two_layer_offset * cfg.image_size.1 as f64).round() as i64,
    });
    Ok(RenderMeta {
        sampled_length: (cfg.length_range.0 != cfg.length_range.1).then_some(n),
        text,
        font_size_px: default_font_size(cfg),
        glyphs,
        gaps_px,
        two_layer,
        distortion,
        background,
        arcs,
    })
}

fn build_glyphs(cfg: &SchemeConfig, meta: &RenderMeta) -> Result<Vec<GlyphBox>, RenderError> {
    let lib = FontLibrary::global();
    meta.glyphs
        .iter()
        .map(|g| {
            let font = lib.resolve(&g.font)?;
            let mut mask = rasterize_glyph(&font, &g.font, g.ch, meta.font_size_px)?;
            if cfg.hollow {
                mask = mask.hollow();
            }
            Ok(GlyphBox {
                ch: g.ch,
                mask: mask.rotate(g.rotation_deg).trim(),
                x: 0,
                y: 0,
                layer: g.layer,
            })
        })
        .collect()
}

fn check_meta(cfg: &SchemeConfig, meta: &RenderMeta) -> Result<(), RenderError> {
    let n = meta.glyphs.len();
    if meta.text.chars().count() != n || meta.text.chars().zip(&meta.glyphs).any(|(c, g)| c != g.ch) {
        return Err(RenderError::InvalidMeta("glyphs do not spell the text".into()));
    }
    if meta.gaps_px.len() != n.saturating_sub(1) {
        return Err(RenderError::InvalidMeta(format!(
            "{} gaps recorded for {n} characters",
            meta.gaps_px.len()
        )));
    }
    if !(meta.font_size_px.is_finite() && meta.font_size_px > 0.0) {
        return Err(RenderError::InvalidMeta("font size must be positive".into()));
    }
    if meta.distortion.is_some_and(|d| !(d.period_px > 0.0)) {
        return Err(RenderError::InvalidMeta("distortion period must be positive".into()));
    }
    if cfg.image_size.0 == 0 || cfg.image_size.1 == 0 {
        return Err(RenderError::InvalidConfig(validate_scheme(cfg)));
    }
    Ok(())
}

fn compose(cfg: &SchemeConfig, meta: &RenderMeta, mut glyphs: Vec<GlyphBox>) -> Result<RgbImage, RenderError> {
    let (w, h) = (cfg.image_size.0 as usize, cfg.image_size.1 as usize);
    layout::place_row(&mut glyphs, &meta.gaps_px, cfg.image_size, meta.font_size_px);
    if let Some(tl) = meta.two_layer {
        compose_two_layer(&mut glyphs, cfg.image_size.1, tl.offset_px)?;
    }
    let mut layer = GlyphLayer::new(w, h);
    for (g, gm) in glyphs.iter().zip(&meta.glyphs) {
        layer.paint(&g.mask, g.x, g.y, gm.color);
    }
    if let Some(d) = &meta.distortion {
        distort::warp_layer(&mut layer, d);
    }
    let mut canvas = Canvas::filled(w, h, cfg.background_color);
    if let Some(bg) = &meta.background {
        background::paint(&mut canvas, bg);
    }
    canvas.composite(&layer);
    for a in &meta.arcs {
        arc::stroke(&mut canvas, a);
    }
    Ok(canvas.to_rgb())
}

const MAX_SHRINKS: usize = 4;

/// Renders one CAPTCHA. The result is a deterministic function of
/// `(cfg, seed, text)`.
pub fn render_captcha(cfg: &SchemeConfig, seed: u64, text: Option<&str>) -> Result<LabeledSample, RenderError> {
    let mut meta = sample_meta(cfg, seed, text)?;
    let available = layout::available_width(cfg.image_size.0);
    let mut glyphs = build_glyphs(cfg, &meta)?;
    let mut needed = layout::row_extent(&glyphs, &meta.gaps_px);
    // Glyph extents are not exactly linear in the em size, so shrink
    // proportionally a few times before giving up.
    let mut attempts = 0;
    while needed > available {
        let gap_sum: i64 = meta.gaps_px.iter().map(|&g| g as i64).sum();
        let ink = (needed - gap_sum).max(1) as f64;
        let scale = (available - gap_sum) as f64 / ink * 0.98;
        if scale <= 0.0 || attempts == MAX_SHRINKS {
            return Err(RenderError::PlacementOverflow {
                text: meta.text,
                needed,
                available,
            });
        }
        meta.font_size_px *= scale;
        glyphs = build_glyphs(cfg, &meta)?;
        needed = layout::row_extent(&glyphs, &meta.gaps_px);
        attempts += 1;
    }
    let image = compose(cfg, &meta, glyphs)?;
    Ok(LabeledSample {
        image,
        label: meta.text.clone(),
        provenance: Provenance::Imitation,
        meta: Some(meta),
        seed: Some(seed),
    })
}

/// Redraws an image from recorded metadata.
pub fn render_from_meta(cfg: &SchemeConfig, meta: &RenderMeta) -> Result<RgbImage, RenderError> {
    check_meta(cfg, meta)?;
    let glyphs = build_glyphs(cfg, meta)?;
    compose(cfg, meta, glyphs)
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("sample {index}: {source}")]
    Render {
        index: usize,
        #[source]
        source: RenderError,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Sample id for index `i` in a generated dataset.
pub fn sample_id(i: usize) -> String {
    format!("{i:06}")
}

/// Renders `count` samples in parallel. Sample `i` uses seed
/// `split_seed(master_seed, i)`, so output does not depend on thread count.
pub fn render_batch(cfg: &SchemeConfig, count: usize, master_seed: u64) -> Result<Vec<LabeledSample>, GenerateError> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            render_captcha(cfg, split_seed(master_seed, i as u64), None)
                .map_err(|source| GenerateError::Render { index: i, source })
        })
        .collect()
}

/// Renders and persists an imitation dataset under `out_root/dataset_id`,
/// with a metadata sidecar next to the manifest.
pub fn generate_dataset(
    cfg: &SchemeConfig,
    count: usize,
    master_seed: u64,
    out_root: &Path,
    dataset_id: &str,
) -> Result<DatasetManifest, GenerateError> {
    ensure_valid(cfg).map_err(|source| GenerateError::Render { index: 0, source })?;
    let samples = render_batch(cfg, count, master_seed)?;
    let encoded: Vec<(NewSample, RenderMeta)> = samples
        .into_par_iter()
        .enumerate()
        .map(|(i, s)| {
            (
                NewSample {
                    sample_id: sample_id(i),
                    png: encode_png(&s.image),
                    label: Some(s.label),
                    seed: s.seed,
                    split: Split::Train,
                },
                s.meta.expect("rendered samples carry metadata"),
            )
        })
        .collect();
    let (new, metas): (Vec<_>, Vec<_>) = encoded.into_iter().unzip();
    let ids: Vec<String> = new.iter().map(|s| s.sample_id.clone()).collect();
    let mut header = ManifestHeader::new(dataset_id, &cfg.scheme_id, Provenance::Imitation);
    header.master_seed = Some(master_seed);
    header.label_rules = Some(cfg.label_rules());
    let manifest = write_dataset(new, header, out_root)?;

    let path = manifest.root().join(RENDER_META_FILE);
    let io = |source| GenerateError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(&path).map_err(io)?);
    for (id, meta) in ids.iter().zip(&metas) {
        let line = serde_json::json!({ "sample_id": id, "meta": meta });
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::{preset, weibo, PRESET_FLAGS};

    #[test]
    fn same_seed_same_bytes() {
        let cfg = preset(12).unwrap();
        let a = render_captcha(&cfg, 77, None).unwrap();
        let b = render_captcha(&cfg, 77, None).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.meta, b.meta);
        let c = render_captcha(&cfg, 78, None).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn meta_reproduces_image() {
        for no in 1..=12 {
            let cfg = preset(no).unwrap();
            let s = render_captcha(&cfg, no as u64, None).unwrap();
            assert_eq!(render_from_meta(&cfg, s.meta.as_ref().unwrap()).unwrap(), s.image, "preset {no}");
        }
    }

    #[test]
    fn fixed_text_is_used() {
        let cfg = preset(1).unwrap();
        let s = render_captcha(&cfg, 5, Some("AB12CD")).unwrap();
        assert_eq!(s.label, "AB12CD");
        assert_eq!((s.image.width(), s.image.height()), (200, 64));
    }

    #[test]
    fn excluded_character_is_rejected() {
        let cfg = weibo();
        assert!(matches!(
            render_captcha(&cfg, 1, Some("ab1c")),
            Err(RenderError::InvalidText(LabelViolation::Excluded { ch: '1' }))
        ));
    }

    #[test]
    fn weibo_renders_and_respects_rules() {
        let cfg = weibo();
        for seed in 0..50 {
            let s = render_captcha(&cfg, seed, None).unwrap();
            assert!(cfg.label_rules().check(&s.label).is_ok());
            assert_eq!((s.image.width(), s.image.height()), (100, 40));
        }
    }

    #[test]
    fn applied_mechanisms_match_preset_over_many_seeds() {
        for no in 1..=12u32 {
            let cfg = preset(no).unwrap();
            let mut seen = MechanismSet::default();
            for seed in 0..40 {
                for m in render_captcha(&cfg, seed, None).unwrap().meta.unwrap().applied_mechanisms().iter() {
                    seen.insert(m);
                }
            }
            assert_eq!(seen.flags(), PRESET_FLAGS[no as usize - 1], "preset {no}");
        }
    }

    #[test]
    fn multi_font_uses_two_fonts() {
        let cfg = preset(4).unwrap();
        assert!(cfg.multi_font_per_image);
        for seed in 0..30 {
            let meta = render_captcha(&cfg, seed, None).unwrap().meta.unwrap();
            let fonts: BTreeSet<_> = meta.glyphs.iter().map(|g| g.font.clone()).collect();
            assert!(fonts.len() >= 2);
        }
    }

    #[test]
    fn generated_dataset_verifies() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = preset(3).unwrap();
        let m = generate_dataset(&cfg, 12, 9, dir.path(), "p3").unwrap();
        assert_eq!(m.len(), 12);
        let read = crate::dataset::read_manifest(m.root()).unwrap();
        assert_eq!(read.entries, m.entries);
        let again = render_batch(&cfg, 12, 9).unwrap();
        for (e, s) in m.entries.iter().zip(&again) {
            assert_eq!(e.label.as_deref(), Some(s.label.as_str()));
            assert_eq!(m.load_image(e).unwrap(), s.image);
        }
    }
}
