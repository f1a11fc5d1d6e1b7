//! Sine-mesh warp applied to the glyph layer.

use std::f64::consts::TAU;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::raster::{Canvas, GlyphLayer};

/// Sampled distortion parameters, as recorded in render metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distortion {
    pub amplitude_px: f64,
    pub period_px: f64,
    pub phase_rad: f64,
}

impl Distortion {
    /// Vertical displacement of column `x`.
    pub fn shift(&self, x: usize) -> f64 {
        self.amplitude_px * (TAU * x as f64 / self.period_px + self.phase_rad).sin()
    }
}

/// Warps each column: destination row `y` reads source row `y - shift(x)`
/// with linear interpolation and edge clamping.
fn warp_columns<P: Copy>(
    data: &[P],
    width: usize,
    height: usize,
    d: &Distortion,
    lerp: impl Fn(P, P, f32) -> P,
) -> Vec<P> {
    let mut out = data.to_vec();
    if height == 0 {
        return out;
    }
    let last = (height - 1) as f64;
    for x in 0..width {
        let shift = d.shift(x);
        for y in 0..height {
            let sy = (y as f64 - shift).clamp(0.0, last);
            let y0 = sy.floor();
            let t = (sy - y0) as f32;
            let y0 = y0 as usize;
            let y1 = (y0 + 1).min(height - 1);
            out[y * width + x] = lerp(data[y0 * width + x], data[y1 * width + x], t);
        }
    }
    out
}

fn lerp3(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    if t == 0.0 {
        return a;
    }
    [0, 1, 2].map(|c| a[c] * (1.0 - t) + b[c] * t)
}

fn lerp4(a: [f32; 4], b: [f32; 4], t: f32) -> [f32; 4] {
    if t == 0.0 {
        return a;
    }
    [0, 1, 2, 3].map(|c| a[c] * (1.0 - t) + b[c] * t)
}

pub(crate) fn warp_layer(layer: &mut GlyphLayer, d: &Distortion) {
    layer.data = warp_columns(&layer.data, layer.width, layer.height, d, lerp4);
}

/// Horizontal sine-mesh warp of an RGB image.
///
/// `period_px` must be positive. Zero amplitude returns the input unchanged.
pub fn apply_distortion(image: &RgbImage, amplitude_px: f64, period_px: f64, phase_rad: f64) -> RgbImage {
    assert!(period_px > 0.0, "distortion period must be positive");
    let canvas = Canvas::from_rgb(image);
    let d = Distortion {
        amplitude_px,
        period_px,
        phase_rad,
    };
    let data = warp_columns(&canvas.data, canvas.width, canvas.height, &d, lerp3);
    Canvas { data, ..canvas }.to_rgb()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn textured(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 256) as u8, (y * 13 % 256) as u8, ((x ^ y) * 3 % 256) as u8]))
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let img = textured(50, 30);
        assert_eq!(apply_distortion(&img, 0.0, 40.0, 1.3), img);
    }

    #[test]
    fn impulse_moves_by_rounded_shift() {
        let (w, h) = (80u32, 40u32);
        let phase = 0.4;
        for x0 in [3u32, 17, 29, 50, 71] {
            let mut img = RgbImage::new(w, h);
            img.put_pixel(x0, 20, Rgb([255, 255, 255]));
            let out = apply_distortion(&img, 3.0, 40.0, phase);
            let s = 3.0 * (TAU * x0 as f64 / 40.0 + phase).sin();
            if (s.fract().abs() - 0.5).abs() < 1e-6 {
                continue;
            }
            let brightest = (0..h).max_by_key(|&y| out.get_pixel(x0, y).0[0]).unwrap();
            assert_eq!(brightest as i64, 20 + s.round() as i64, "column {x0}");
        }
    }

    #[test]
    fn inverse_warp_stays_within_interpolation_bound() {
        // Smooth vertical profile: second derivative bounded by 100·(2π/32)².
        let (w, h) = (96u32, 64u32);
        let img = RgbImage::from_fn(w, h, |_, y| {
            let v = 127.5 + 100.0 * (TAU * y as f64 / 32.0).sin();
            Rgb([v.round() as u8; 3])
        });
        let back = apply_distortion(&apply_distortion(&img, 3.0, 40.0, 0.7), -3.0, 40.0, 0.7);
        // Two linear interpolations (M/8 each), two output roundings and the
        // rounding of the source itself (0.5 each). Border rows are clamped.
        let curvature = 100.0 * (TAU / 32.0f64).powi(2);
        let bound = 2.0 * curvature / 8.0 + 1.5;
        for y in 5..h - 5 {
            for x in 0..w {
                let e = (back.get_pixel(x, y).0[0] as f64 - img.get_pixel(x, y).0[0] as f64).abs();
                assert!(e <= bound, "({x},{y}) error {e} > {bound}");
            }
        }
    }
}
