use serde::{Deserialize, Serialize};

use super::raster::Mask;
use super::RenderError;
use crate::scheme::TwoLayerMode;

/// Horizontal margin kept free on each side of the text row.
pub const MARGIN_PX: i64 = 2;

/// A rasterized, rotated and trimmed glyph with its top-left position.
#[derive(Debug, Clone)]
pub struct GlyphBox {
    pub ch: char,
    pub mask: Mask,
    pub x: i64,
    pub y: i64,
    pub layer: u8,
}

impl GlyphBox {
    pub fn width(&self) -> i64 {
        self.mask.width as i64
    }

    pub fn height(&self) -> i64 {
        self.mask.height as i64
    }

    pub fn center_y(&self) -> f64 {
        self.y as f64 + self.mask.height as f64 / 2.0
    }
}

/// Band index per character position.
pub fn assign_layers(n: usize, mode: TwoLayerMode) -> Vec<u8> {
    match mode {
        TwoLayerMode::Alternate => (0..n).map(|i| (i % 2) as u8).collect(),
        TwoLayerMode::SplitHalf => (0..n).map(|i| u8::from(i >= n.div_ceil(2))).collect(),
    }
}

/// Width of the row: glyph widths plus gaps.
pub(crate) fn row_extent(glyphs: &[GlyphBox], gaps: &[i32]) -> i64 {
    glyphs.iter().map(GlyphBox::width).sum::<i64>() + gaps.iter().map(|&g| g as i64).sum::<i64>()
}

pub(crate) fn available_width(width: u32) -> i64 {
    width as i64 - 2 * MARGIN_PX
}

/// Lays glyphs left to right, centered, on a shared baseline.
pub(crate) fn place_row(glyphs: &mut [GlyphBox], gaps: &[i32], size: (u32, u32), font_size_px: f64) {
    let (w, h) = (size.0 as i64, size.1 as i64);
    let extent = row_extent(glyphs, gaps);
    let baseline = (h as f64 / 2.0 + 0.36 * font_size_px).round() as i64;
    let mut x = (w - extent).div_euclid(2);
    for (i, g) in glyphs.iter_mut().enumerate() {
        g.x = x;
        let top = baseline - g.mask.anchor.1.round() as i64;
        g.y = if g.height() <= h { top.clamp(0, h - g.height()) } else { top };
        x += g.width() + gaps.get(i).copied().unwrap_or(0) as i64;
    }
}

/// Moves each glyph into its band: band 0 is centered `offset_px / 2`
/// above the image midline, band 1 the same distance below.
pub fn compose_two_layer(glyphs: &mut [GlyphBox], image_height: u32, offset_px: i64) -> Result<(), RenderError> {
    let h = image_height as i64;
    let tallest = glyphs.iter().map(GlyphBox::height).max().unwrap_or(0);
    if offset_px < 1 || tallest + offset_px > h {
        return Err(RenderError::TwoLayerTooSmall {
            offset_px,
            glyph_height: tallest,
            image_height,
        });
    }
    let mid = h as f64 / 2.0;
    for g in glyphs.iter_mut() {
        let center = if g.layer == 0 {
            mid - offset_px as f64 / 2.0
        } else {
            mid + offset_px as f64 / 2.0
        };
        let top = (center - g.height() as f64 / 2.0).round() as i64;
        g.y = top.clamp(0, h - g.height());
    }
    Ok(())
}

/// Two-layer record kept in render metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoLayerMeta {
    pub mode: TwoLayerMode,
    pub offset_px: i64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(ch: char, w: usize, h: usize, layer: u8) -> GlyphBox {
        GlyphBox {
            ch,
            mask: Mask {
                width: w,
                height: h,
                data: vec![1.0; w * h],
                anchor: (w as f64 / 2.0, h as f64),
            },
            x: 0,
            y: 0,
            layer,
        }
    }

    #[test]
    fn layers_follow_mode() {
        assert_eq!(assign_layers(5, TwoLayerMode::Alternate), vec![0, 1, 0, 1, 0]);
        assert_eq!(assign_layers(5, TwoLayerMode::SplitHalf), vec![0, 0, 0, 1, 1]);
        assert_eq!(assign_layers(4, TwoLayerMode::SplitHalf), vec![0, 0, 1, 1]);
    }

    #[test]
    fn row_is_centered_with_gaps() {
        let mut g = vec![block('A', 10, 20, 0), block('B', 12, 20, 0), block('C', 8, 20, 0)];
        place_row(&mut g, &[3, -2], (100, 40), 20.0);
        assert_eq!(row_extent(&g, &[3, -2]), 31);
        assert_eq!(g.iter().map(|b| b.x).collect::<Vec<_>>(), vec![34, 47, 57]);
        assert!(g.iter().all(|b| b.y >= 0 && b.y + b.height() <= 40));
    }

    #[test]
    fn bands_separate_vertically() {
        let mut g: Vec<_> = assign_layers(4, TwoLayerMode::Alternate)
            .into_iter()
            .enumerate()
            .map(|(i, l)| block((b'A' + i as u8) as char, 10, 20, l))
            .collect();
        compose_two_layer(&mut g, 64, 16).unwrap();
        for pair in g.chunks(2) {
            assert_eq!(pair[1].center_y() - pair[0].center_y(), 16.0);
        }
        assert!(matches!(
            compose_two_layer(&mut g, 30, 16),
            Err(RenderError::TwoLayerTooSmall { .. })
        ));
    }
}
