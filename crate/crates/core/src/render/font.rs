//! Font resolution and glyph rasterization.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use ab_glyph::{point, Font, FontArc, PxScale};

use super::raster::Mask;
use super::RenderError;

static SANS: &[u8] = include_bytes!("../../assets/fonts/DejaVuSans-Bold.ttf");
static SERIF: &[u8] = include_bytes!("../../assets/fonts/DejaVuSerif-Bold.ttf");
static MONO: &[u8] = include_bytes!("../../assets/fonts/DejaVuSansMono-Bold.ttf");

/// Identifiers of the fonts bundled with the toolkit.
pub const BUILTIN_FONTS: [&str; 3] = ["builtin:sans", "builtin:serif", "builtin:mono"];

/// Process-wide cache of parsed fonts, keyed by font identifier.
///
/// Identifiers are either `builtin:<name>` or a path to a TrueType/OpenType
/// file.
#[derive(Default)]
pub struct FontLibrary {
    fonts: Mutex<HashMap<String, FontArc>>,
}

impl FontLibrary {
    pub fn global() -> &'static FontLibrary {
        static LIB: OnceLock<FontLibrary> = OnceLock::new();
        LIB.get_or_init(FontLibrary::default)
    }

    pub fn resolve(&self, id: &str) -> Result<FontArc, RenderError> {
        if let Some(f) = self.fonts.lock().expect("font cache poisoned").get(id) {
            return Ok(f.clone());
        }
        let font = load(id)?;
        self.fonts
            .lock()
            .expect("font cache poisoned")
            .insert(id.to_string(), font.clone());
        Ok(font)
    }
}

fn load(id: &str) -> Result<FontArc, RenderError> {
    let unavailable = |reason: String| RenderError::FontUnavailable {
        font: id.to_string(),
        reason,
    };
    if let Some(name) = id.strip_prefix("builtin:") {
        let bytes = match name {
            "sans" => SANS,
            "serif" => SERIF,
            "mono" => MONO,
            _ => return Err(unavailable(format!("no bundled font named `{name}`"))),
        };
        return FontArc::try_from_slice(bytes).map_err(|e| unavailable(e.to_string()));
    }
    let bytes = std::fs::read(id).map_err(|e| unavailable(e.to_string()))?;
    FontArc::try_from_vec(bytes).map_err(|e| unavailable(e.to_string()))
}

/// Rasterizes `ch` at `size_px` into a coverage mask.
///
/// The mask anchor is the horizontal center of the glyph box on the
/// baseline.
pub fn rasterize_glyph(
    font: &FontArc,
    font_id: &str,
    ch: char,
    size_px: f64,
) -> Result<Mask, RenderError> {
    let missing = || RenderError::MissingGlyph {
        font: font_id.to_string(),
        ch,
    };
    let id = font.glyph_id(ch);
    if id.0 == 0 {
        return Err(missing());
    }
    let glyph = id.with_scale_and_position(PxScale::from(size_px as f32), point(0.0, 0.0));
    let outlined = font.outline_glyph(glyph).ok_or_else(missing)?;
    let bounds = outlined.px_bounds();
    let width = bounds.width() as usize;
    let height = bounds.height() as usize;
    let mut data = vec![0f32; width * height];
    outlined.draw(|x, y, c| {
        let (x, y) = (x as usize, y as usize);
        if x < width && y < height {
            data[y * width + x] = c.clamp(0.0, 1.0);
        }
    });
    Ok(Mask {
        width,
        height,
        data,
        anchor: (width as f64 / 2.0, -(bounds.min.y as f64)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_fonts_cover_alphanumerics() {
        for id in BUILTIN_FONTS {
            let font = FontLibrary::global().resolve(id).unwrap();
            for ch in "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz".chars() {
                let m = rasterize_glyph(&font, id, ch, 32.0).unwrap();
                assert!(m.width > 0 && m.height > 0, "{id} {ch}");
                assert!(m.data.iter().any(|&v| v > 0.5), "{id} {ch}");
            }
        }
    }

    #[test]
    fn missing_font_file_is_reported() {
        let err = FontLibrary::global().resolve("/nonexistent/font.ttf").unwrap_err();
        assert!(matches!(err, RenderError::FontUnavailable { .. }));
        let err = FontLibrary::global().resolve("builtin:comic").unwrap_err();
        assert!(matches!(err, RenderError::FontUnavailable { .. }));
    }

    #[test]
    fn missing_glyph_is_reported() {
        let font = FontLibrary::global().resolve("builtin:sans").unwrap();
        let err = rasterize_glyph(&font, "builtin:sans", '\u{10FFFD}', 20.0).unwrap_err();
        assert!(matches!(err, RenderError::MissingGlyph { .. }));
    }
}
