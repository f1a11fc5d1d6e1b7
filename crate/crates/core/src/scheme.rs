//! CAPTCHA scheme configurations: parsing, validation and the preset catalog.
//!
//! A [`SchemeConfig`] is the complete parameterization of one scheme's
//! anti-recognition mechanisms. Configs are plain data; all sampling happens
//! in [`crate::render`].

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Current value of the `schema_version` field.
pub const SCHEMA_VERSION: u32 = 1;

pub const DIGITS: &str = "0123456789";
pub const UPPERCASE: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";
pub const LOWERCASE: &str = "abcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("config field `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("invalid scheme config: {}", join_violations(.0))]
    Invalid(Vec<SchemeViolation>),
    #[error("preset number {0} is outside 1..=12")]
    PresetOutOfRange(u32),
    #[error("unknown named scheme `{0}`")]
    UnknownScheme(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn join_violations(v: &[SchemeViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// One broken invariant, named by the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeViolation {
    pub field: String,
    pub message: String,
}

impl SchemeViolation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for SchemeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArcKind {
    Line,
    Sine,
    Bezier,
}

/// Sampling ranges for `y(x) = A·sin(ωx + φ) + σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineRanges {
    pub amplitude_px: (f64, f64),
    pub omega_rad_per_px: (f64, f64),
    pub phase_rad: (f64, f64),
    pub offset_px: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorRule {
    /// Pick uniformly from the scheme's font colors.
    FontColor,
    /// Uniform random RGB.
    Random,
    Fixed([u8; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcSpec {
    pub kind: ArcKind,
    pub count_range: (u32, u32),
    /// Required when `kind` is `sine`.
    #[serde(default)]
    pub sine: Option<SineRanges>,
    #[serde(default = "default_stroke_width")]
    pub stroke_width_px: f64,
    #[serde(default = "default_color_rule")]
    pub color: ColorRule,
}

fn default_stroke_width() -> f64 {
    1.5
}

fn default_color_rule() -> ColorRule {
    ColorRule::FontColor
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionSpec {
    pub amplitude_px: f64,
    pub period_px: f64,
    /// Phase is drawn uniformly from this range; equal bounds fix it.
    #[serde(default = "default_phase_range")]
    pub phase_range_rad: (f64, f64),
}

fn default_phase_range() -> (f64, f64) {
    (0.0, TAU)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    NoiseDots,
    Texture,
    ColorBlocks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSpec {
    pub kind: BackgroundKind,
    /// In `[0, 1]`; meaning depends on `kind` (dot fraction, texture
    /// strength, block count scale).
    pub density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TwoLayerMode {
    /// Characters alternate between bands: 0,1,0,1,...
    #[default]
    Alternate,
    /// First half in band 0, second half in band 1.
    SplitHalf,
}

/// Full parameterization of one CAPTCHA scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub schema_version: u32,
    pub scheme_id: String,
    /// (width, height) in pixels.
    pub image_size: (u32, u32),
    /// Ordered label alphabet. Also the CTC class order.
    pub charset: String,
    /// Never sampled. Applied at text sampling, not by editing `charset`.
    #[serde(default)]
    pub excluded_chars: String,
    pub length_range: (usize, usize),
    pub fonts: Vec<String>,
    #[serde(default = "default_font_colors")]
    pub font_colors: Vec<[u8; 3]>,
    /// Glyph em size; derived from the image height when absent.
    #[serde(default)]
    pub font_size_px: Option<f64>,
    #[serde(default)]
    pub hollow: bool,
    #[serde(default)]
    pub rotation_range_deg: (f64, f64),
    /// Blank pixels between adjacent glyph boxes; negative overlaps.
    #[serde(default)]
    pub char_gap_range_px: (i32, i32),
    #[serde(default)]
    pub distortion: Option<DistortionSpec>,
    #[serde(default)]
    pub noise_arcs: Vec<ArcSpec>,
    #[serde(default)]
    pub background: Option<BackgroundSpec>,
    #[serde(default = "default_background_color")]
    pub background_color: [u8; 3],
    #[serde(default)]
    pub two_layer: bool,
    #[serde(default)]
    pub two_layer_mode: TwoLayerMode,
    /// Baseline offset between the two bands as a fraction of image height.
    #[serde(default = "default_two_layer_offset")]
    pub two_layer_offset: f64,
    #[serde(default)]
    pub multi_font_per_image: bool,
}

fn default_font_colors() -> Vec<[u8; 3]> {
    vec![[0, 0, 0]]
}

fn default_background_color() -> [u8; 3] {
    [255, 255, 255]
}

fn default_two_layer_offset() -> f64 {
    0.25
}

/// The eight mechanisms of the mechanism study, in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Rotation,
    Overlapping,
    Distortion,
    MultiFonts,
    NoiseArc,
    VariableLength,
    BackgroundInterference,
    TwoLayer,
}

impl Mechanism {
    pub const ALL: [Mechanism; 8] = [
        Mechanism::Rotation,
        Mechanism::Overlapping,
        Mechanism::Distortion,
        Mechanism::MultiFonts,
        Mechanism::NoiseArc,
        Mechanism::VariableLength,
        Mechanism::BackgroundInterference,
        Mechanism::TwoLayer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Rotation => "rotation",
            Mechanism::Overlapping => "overlapping",
            Mechanism::Distortion => "distortion",
            Mechanism::MultiFonts => "multi-fonts",
            Mechanism::NoiseArc => "noise-arc",
            Mechanism::VariableLength => "variable-length",
            Mechanism::BackgroundInterference => "background",
            Mechanism::TwoLayer => "two-layer",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// Set of enabled mechanisms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct MechanismSet(u8);

impl MechanismSet {
    pub fn contains(self, m: Mechanism) -> bool {
        self.0 & m.bit() != 0
    }

    pub fn insert(&mut self, m: Mechanism) {
        self.0 |= m.bit();
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Mechanism> {
        Mechanism::ALL.into_iter().filter(move |m| self.contains(*m))
    }

    /// Flags in [`Mechanism::ALL`] order.
    pub fn flags(self) -> [bool; 8] {
        Mechanism::ALL.map(|m| self.contains(m))
    }
}

impl FromIterator<Mechanism> for MechanismSet {
    fn from_iter<I: IntoIterator<Item = Mechanism>>(iter: I) -> Self {
        let mut s = MechanismSet::default();
        for m in iter {
            s.insert(m);
        }
        s
    }
}

impl fmt::Display for MechanismSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<_> = self.iter().map(Mechanism::name).collect();
        f.write_str(&names.join("+"))
    }
}

/// Label constraints of a scheme: alphabet, exclusions and length.
///
/// Shared by dataset verification and the labeling service so both apply
/// identical rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRules {
    pub charset: String,
    pub excluded_chars: String,
    pub length_range: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelViolation {
    #[error("label is empty")]
    Empty,
    #[error("label length {len} outside {min}..={max}")]
    Length { len: usize, min: usize, max: usize },
    #[error("character '{ch}' is excluded by the scheme")]
    Excluded { ch: char },
    #[error("character '{ch}' is not in the scheme charset")]
    Foreign { ch: char },
}

impl LabelRules {
    pub fn check(&self, label: &str) -> Result<(), LabelViolation> {
        if label.is_empty() {
            return Err(LabelViolation::Empty);
        }
        for ch in label.chars() {
            if self.excluded_chars.contains(ch) {
                return Err(LabelViolation::Excluded { ch });
            }
            if !self.charset.contains(ch) {
                return Err(LabelViolation::Foreign { ch });
            }
        }
        let len = label.chars().count();
        let (min, max) = self.length_range;
        if len < min || len > max {
            return Err(LabelViolation::Length { len, min, max });
        }
        Ok(())
    }
}

impl SchemeConfig {
    /// A config with every mechanism off.
    pub fn minimal(scheme_id: &str, charset: &str, font: &str) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scheme_id: scheme_id.to_string(),
            image_size: (160, 60),
            charset: charset.to_string(),
            excluded_chars: String::new(),
            length_range: (4, 4),
            fonts: vec![font.to_string()],
            font_colors: default_font_colors(),
            font_size_px: None,
            hollow: false,
            rotation_range_deg: (0.0, 0.0),
            char_gap_range_px: (0, 0),
            distortion: None,
            noise_arcs: Vec::new(),
            background: None,
            background_color: default_background_color(),
            two_layer: false,
            two_layer_mode: TwoLayerMode::Alternate,
            two_layer_offset: default_two_layer_offset(),
            multi_font_per_image: false,
        }
    }

    /// Parses and validates a config document.
    pub fn from_json(doc: &str) -> Result<Self, SchemeError> {
        let de = &mut serde_json::Deserializer::from_str(doc);
        let cfg: SchemeConfig =
            serde_path_to_error::deserialize(de).map_err(|e| SchemeError::Parse {
                field: path_or_root(e.path().to_string()),
                message: e.inner().to_string(),
            })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(SchemeError::Parse {
                field: "schema_version".into(),
                message: format!(
                    "unsupported version {} (supported: {SCHEMA_VERSION})",
                    cfg.schema_version
                ),
            });
        }
        let violations = validate_scheme(&cfg);
        if violations.is_empty() {
            Ok(cfg)
        } else {
            Err(SchemeError::Invalid(violations))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchemeError> {
        let path = path.as_ref();
        let doc = std::fs::read_to_string(path).map_err(|source| SchemeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scheme config serializes")
    }

    /// SHA-256 of the canonical compact serialization.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("scheme config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Charset minus excluded characters, in charset order.
    pub fn effective_charset(&self) -> Vec<char> {
        self.charset
            .chars()
            .filter(|c| !self.excluded_chars.contains(*c))
            .collect()
    }

    pub fn label_rules(&self) -> LabelRules {
        LabelRules {
            charset: self.charset.clone(),
            excluded_chars: self.excluded_chars.clone(),
            length_range: self.length_range,
        }
    }

    /// Mechanisms this config turns on.
    pub fn mechanisms(&self) -> MechanismSet {
        let mut set = MechanismSet::default();
        if self.rotation_range_deg != (0.0, 0.0) {
            set.insert(Mechanism::Rotation);
        }
        if self.char_gap_range_px.0 < 0 {
            set.insert(Mechanism::Overlapping);
        }
        if self.distortion.as_ref().is_some_and(|d| d.amplitude_px > 0.0) {
            set.insert(Mechanism::Distortion);
        }
        if self.multi_font_per_image && self.fonts.len() >= 2 {
            set.insert(Mechanism::MultiFonts);
        }
        if self.noise_arcs.iter().any(|a| a.count_range.1 > 0) {
            set.insert(Mechanism::NoiseArc);
        }
        if self.length_range.0 < self.length_range.1 {
            set.insert(Mechanism::VariableLength);
        }
        if self.background.is_some() {
            set.insert(Mechanism::BackgroundInterference);
        }
        if self.two_layer {
            set.insert(Mechanism::TwoLayer);
        }
        set
    }

    /// Returns a copy with one mechanism switched off.
    pub fn without(&self, m: Mechanism) -> Self {
        let mut cfg = self.clone();
        match m {
            Mechanism::Rotation => cfg.rotation_range_deg = (0.0, 0.0),
            Mechanism::Overlapping => {
                let (lo, hi) = cfg.char_gap_range_px;
                cfg.char_gap_range_px = (lo.max(0), hi.max(lo.max(0)));
            }
            Mechanism::Distortion => cfg.distortion = None,
            Mechanism::MultiFonts => {
                cfg.multi_font_per_image = false;
                cfg.fonts.truncate(1);
            }
            Mechanism::NoiseArc => cfg.noise_arcs.clear(),
            Mechanism::VariableLength => {
                cfg.length_range = (cfg.length_range.1, cfg.length_range.1)
            }
            Mechanism::BackgroundInterference => cfg.background = None,
            Mechanism::TwoLayer => cfg.two_layer = false,
        }
        cfg
    }
}

fn path_or_root(p: String) -> String {
    if p == "." || p.is_empty() {
        "<document>".into()
    } else {
        p
    }
}

/// Parses a config document. Same as [`SchemeConfig::from_json`].
pub fn parse_scheme_config(doc: &str) -> Result<SchemeConfig, SchemeError> {
    SchemeConfig::from_json(doc)
}

fn check_range<T: PartialOrd + fmt::Debug>(out: &mut Vec<SchemeViolation>, field: &str, r: (T, T)) {
    if r.0 > r.1 {
        out.push(SchemeViolation::new(
            field,
            format!("inverted range ({:?}, {:?})", r.0, r.1),
        ));
    }
}

fn check_finite(out: &mut Vec<SchemeViolation>, field: &str, r: (f64, f64)) {
    if !r.0.is_finite() || !r.1.is_finite() {
        out.push(SchemeViolation::new(field, "range bounds must be finite"));
    } else {
        check_range(out, field, r);
    }
}

/// Lists every broken invariant; empty when the config is valid.
pub fn validate_scheme(cfg: &SchemeConfig) -> Vec<SchemeViolation> {
    let mut v = Vec::new();
    if cfg.schema_version != SCHEMA_VERSION {
        v.push(SchemeViolation::new(
            "schema_version",
            format!("expected {SCHEMA_VERSION}"),
        ));
    }
    if cfg.scheme_id.trim().is_empty() {
        v.push(SchemeViolation::new("scheme_id", "must not be empty"));
    }
    if cfg.image_size.0 < 8 || cfg.image_size.1 < 8 {
        v.push(SchemeViolation::new("image_size", "both sides must be at least 8 px"));
    }

    let mut seen = BTreeSet::new();
    for ch in cfg.charset.chars() {
        if ch.is_whitespace() || ch.is_control() {
            v.push(SchemeViolation::new(
                "charset",
                format!("contains non-printable character {ch:?}"),
            ));
        }
        if !seen.insert(ch) {
            v.push(SchemeViolation::new("charset", format!("duplicate character '{ch}'")));
        }
    }
    if cfg.charset.is_empty() {
        v.push(SchemeViolation::new("charset", "must not be empty"));
    } else if cfg.effective_charset().is_empty() {
        v.push(SchemeViolation::new(
            "excluded_chars",
            "excludes every charset character (effective charset is empty)",
        ));
    }

    let (lmin, lmax) = cfg.length_range;
    if lmin < 1 {
        v.push(SchemeViolation::new("length_range", "minimum length must be at least 1"));
    }
    check_range(&mut v, "length_range", cfg.length_range);
    if lmax > 64 {
        v.push(SchemeViolation::new("length_range", "maximum length must be at most 64"));
    }

    if cfg.fonts.is_empty() {
        v.push(SchemeViolation::new("fonts", "at least one font is required"));
    }
    if cfg.fonts.iter().any(|f| f.trim().is_empty()) {
        v.push(SchemeViolation::new("fonts", "font identifiers must not be empty"));
    }
    if cfg.font_colors.is_empty() {
        v.push(SchemeViolation::new("font_colors", "at least one color is required"));
    }
    if let Some(size) = cfg.font_size_px {
        if !(size.is_finite() && size > 0.0) {
            v.push(SchemeViolation::new("font_size_px", "must be positive"));
        }
    }

    check_finite(&mut v, "rotation_range_deg", cfg.rotation_range_deg);
    let (rlo, rhi) = cfg.rotation_range_deg;
    if rlo < -180.0 || rhi > 180.0 {
        v.push(SchemeViolation::new("rotation_range_deg", "must lie within [-180, 180]"));
    }
    check_range(&mut v, "char_gap_range_px", cfg.char_gap_range_px);

    if let Some(d) = &cfg.distortion {
        if !(d.period_px.is_finite() && d.period_px > 0.0) {
            v.push(SchemeViolation::new("distortion.period_px", "must be positive"));
        }
        if !(d.amplitude_px.is_finite() && d.amplitude_px >= 0.0) {
            v.push(SchemeViolation::new("distortion.amplitude_px", "must be non-negative"));
        }
        check_finite(&mut v, "distortion.phase_range_rad", d.phase_range_rad);
    }

    for (i, arc) in cfg.noise_arcs.iter().enumerate() {
        let field = |name: &str| format!("noise_arcs[{i}].{name}");
        check_range(&mut v, &field("count_range"), arc.count_range);
        if !(arc.stroke_width_px.is_finite() && arc.stroke_width_px > 0.0) {
            v.push(SchemeViolation::new(field("stroke_width_px"), "must be positive"));
        }
        match (&arc.kind, &arc.sine) {
            (ArcKind::Sine, None) => {
                v.push(SchemeViolation::new(field("sine"), "sine arcs need parameter ranges"))
            }
            (_, Some(s)) => {
                check_finite(&mut v, &field("sine.amplitude_px"), s.amplitude_px);
                check_finite(&mut v, &field("sine.omega_rad_per_px"), s.omega_rad_per_px);
                check_finite(&mut v, &field("sine.phase_rad"), s.phase_rad);
                check_finite(&mut v, &field("sine.offset_px"), s.offset_px);
            }
            _ => {}
        }
    }

    if let Some(bg) = &cfg.background {
        if !(0.0..=1.0).contains(&bg.density) {
            v.push(SchemeViolation::new("background.density", "must lie within [0, 1]"));
        }
    }
    if !(cfg.two_layer_offset > 0.0 && cfg.two_layer_offset <= 0.5) {
        v.push(SchemeViolation::new("two_layer_offset", "must lie within (0, 0.5]"));
    }
    v
}

/// Mechanism columns of the twelve-scheme study, one row per preset.
///
/// Column order follows [`Mechanism::ALL`].
pub const PRESET_FLAGS: [[bool; 8]; 12] = {
    const Y: bool = true;
    const N: bool = false;
    [
        [Y, N, N, N, N, N, N, N],
        [N, Y, N, N, N, N, N, N],
        [N, N, Y, N, N, N, N, N],
        [N, N, N, Y, N, N, N, N],
        [N, N, N, N, Y, N, N, N],
        [N, N, N, N, N, Y, N, N],
        [N, N, N, N, N, N, Y, N],
        [N, N, N, N, N, N, N, Y],
        [N, Y, N, Y, N, N, N, Y],
        [N, Y, Y, Y, N, Y, N, Y],
        [N, Y, Y, Y, N, Y, Y, Y],
        [Y, Y, Y, Y, Y, Y, Y, Y],
    ]
};

pub const PRESET_IMAGE_SIZE: (u32, u32) = (200, 64);

/// Sine arc ranges used by the presets.
pub fn preset_sine_arc(height: u32) -> ArcSpec {
    let mid = height as f64 / 2.0;
    ArcSpec {
        kind: ArcKind::Sine,
        count_range: (1, 2),
        sine: Some(SineRanges {
            amplitude_px: (3.0, 8.0),
            omega_rad_per_px: (0.03, 0.08),
            phase_rad: (0.0, TAU),
            offset_px: (mid - 10.0, mid + 10.0),
        }),
        stroke_width_px: 1.5,
        color: ColorRule::FontColor,
    }
}

/// One of the twelve mechanism-study schemes.
///
/// Only the on/off pattern is fixed by the study; the numeric ranges are
/// toolkit defaults.
pub fn preset(no: u32) -> Result<SchemeConfig, SchemeError> {
    if !(1..=12).contains(&no) {
        return Err(SchemeError::PresetOutOfRange(no));
    }
    let flags = PRESET_FLAGS[no as usize - 1];
    let on = |m: Mechanism| flags[m as usize];
    let (w, h) = PRESET_IMAGE_SIZE;

    let mut charset = String::from(DIGITS);
    charset.push_str(UPPERCASE);
    let mut cfg = SchemeConfig::minimal(&format!("preset-{no:02}"), &charset, "builtin:sans");
    cfg.image_size = (w, h);
    cfg.length_range = (6, 6);
    cfg.font_colors = vec![[20, 20, 20], [25, 55, 150], [140, 30, 30]];
    cfg.char_gap_range_px = (1, 4);

    if on(Mechanism::Rotation) {
        cfg.rotation_range_deg = (-30.0, 30.0);
    }
    if on(Mechanism::Overlapping) {
        cfg.char_gap_range_px = (-6, -1);
    }
    if on(Mechanism::Distortion) {
        cfg.distortion = Some(DistortionSpec {
            amplitude_px: 3.0,
            period_px: 40.0,
            phase_range_rad: (0.0, TAU),
        });
    }
    if on(Mechanism::MultiFonts) {
        cfg.fonts = vec![
            "builtin:sans".into(),
            "builtin:serif".into(),
            "builtin:mono".into(),
        ];
        cfg.multi_font_per_image = true;
    }
    if on(Mechanism::NoiseArc) {
        cfg.noise_arcs = vec![preset_sine_arc(h)];
    }
    if on(Mechanism::VariableLength) {
        cfg.length_range = (4, 6);
    }
    if on(Mechanism::BackgroundInterference) {
        cfg.background = Some(BackgroundSpec {
            kind: BackgroundKind::NoiseDots,
            density: 0.1,
        });
    }
    if on(Mechanism::TwoLayer) {
        cfg.two_layer = true;
    }
    debug_assert!(validate_scheme(&cfg).is_empty());
    Ok(cfg)
}

/// Weibo-style scheme: hollow fonts, two colors, sine interference line.
pub fn weibo() -> SchemeConfig {
    let mut charset = String::from(DIGITS);
    charset.push_str(LOWERCASE);
    let mut cfg = SchemeConfig::minimal("weibo", &charset, "builtin:sans");
    cfg.image_size = (100, 40);
    cfg.excluded_chars = "019ijlot".into();
    cfg.length_range = (4, 4);
    cfg.fonts = vec!["builtin:sans".into(), "builtin:serif".into()];
    cfg.font_colors = vec![[101, 101, 254], [254, 101, 101]];
    cfg.font_size_px = Some(30.0);
    cfg.hollow = true;
    cfg.rotation_range_deg = (-10.0, 10.0);
    cfg.char_gap_range_px = (0, 2);
    cfg.noise_arcs = vec![ArcSpec {
        kind: ArcKind::Sine,
        count_range: (1, 1),
        sine: Some(SineRanges {
            amplitude_px: (2.0, 6.0),
            omega_rad_per_px: (0.04, 0.09),
            phase_rad: (0.0, TAU),
            offset_px: (14.0, 26.0),
        }),
        stroke_width_px: 1.5,
        color: ColorRule::FontColor,
    }];
    cfg
}

/// Resolves `weibo` or `preset-N` / `N`.
pub fn named_scheme(name: &str) -> Result<SchemeConfig, SchemeError> {
    if name == "weibo" {
        return Ok(weibo());
    }
    let digits = name.strip_prefix("preset-").unwrap_or(name);
    match digits.parse::<u32>() {
        Ok(no) => preset(no),
        Err(_) => Err(SchemeError::UnknownScheme(name.to_string())),
    }
}
