//! Interference curves drawn over the finished image.

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::raster::Canvas;
use crate::scheme::{ArcKind, ArcSpec, ColorRule, SchemeConfig};

/// Geometry of one drawn curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArcShape {
    Line {
        from: (f64, f64),
        to: (f64, f64),
    },
    /// `y(x) = amplitude·sin(omega·x + phase) + offset` across the full width.
    Sine {
        amplitude_px: f64,
        omega_rad_per_px: f64,
        phase_rad: f64,
        offset_px: f64,
    },
    /// Cubic Bézier through four control points.
    Bezier { points: [(f64, f64); 4] },
}

/// A fully sampled noise arc, as recorded in render metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseArc {
    pub shape: ArcShape,
    pub stroke_width_px: f64,
    pub color: [u8; 3],
}

fn uniform<R: Rng>(rng: &mut R, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..=range.1)
    }
}

impl NoiseArc {
    /// Draws one arc's parameters from `spec`.
    pub fn sample<R: Rng>(spec: &ArcSpec, cfg: &SchemeConfig, rng: &mut R) -> NoiseArc {
        let (w, h) = (cfg.image_size.0 as f64, cfg.image_size.1 as f64);
        let shape = match spec.kind {
            ArcKind::Sine => {
                let s = spec.sine.as_ref().expect("validated: sine arcs carry ranges");
                ArcShape::Sine {
                    amplitude_px: uniform(rng, s.amplitude_px),
                    omega_rad_per_px: uniform(rng, s.omega_rad_per_px),
                    phase_rad: uniform(rng, s.phase_rad),
                    offset_px: uniform(rng, s.offset_px),
                }
            }
            ArcKind::Line => ArcShape::Line {
                from: (
                    uniform(rng, (0.0, w * 0.25)),
                    uniform(rng, (h * 0.2, h * 0.8)),
                ),
                to: (
                    uniform(rng, (w * 0.75, w - 1.0)),
                    uniform(rng, (h * 0.2, h * 0.8)),
                ),
            },
            ArcKind::Bezier => {
                let mut points = [(0.0, 0.0); 4];
                for (i, p) in points.iter_mut().enumerate() {
                    let x_band = match i {
                        0 => (0.0, w * 0.2),
                        3 => (w * 0.8, w - 1.0),
                        _ => (0.0, w - 1.0),
                    };
                    *p = (uniform(rng, x_band), uniform(rng, (h * 0.15, h * 0.85)));
                }
                ArcShape::Bezier { points }
            }
        };
        let color = match &spec.color {
            ColorRule::FontColor => cfg.font_colors[rng.random_range(0..cfg.font_colors.len())],
            ColorRule::Random => [rng.random(), rng.random(), rng.random()],
            ColorRule::Fixed(c) => *c,
        };
        NoiseArc {
            shape,
            stroke_width_px: spec.stroke_width_px,
            color,
        }
    }

    /// The curve as a dense polyline.
    pub fn polyline(&self, width: usize) -> Vec<(f64, f64)> {
        match &self.shape {
            ArcShape::Line { from, to } => vec![*from, *to],
            ArcShape::Sine {
                amplitude_px,
                omega_rad_per_px,
                phase_rad,
                offset_px,
            } => {
                let steps = width.max(1) * 2;
                (0..=steps)
                    .map(|i| {
                        let x = (width.saturating_sub(1)) as f64 * i as f64 / steps as f64;
                        (x, amplitude_px * (omega_rad_per_px * x + phase_rad).sin() + offset_px)
                    })
                    .collect()
            }
            ArcShape::Bezier { points } => {
                let [p0, p1, p2, p3] = *points;
                (0..=96)
                    .map(|i| {
                        let t = i as f64 / 96.0;
                        let u = 1.0 - t;
                        let b = [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t];
                        (
                            b[0] * p0.0 + b[1] * p1.0 + b[2] * p2.0 + b[3] * p3.0,
                            b[0] * p0.1 + b[1] * p1.1 + b[2] * p2.1 + b[3] * p3.1,
                        )
                    })
                    .collect()
            }
        }
    }
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Anti-aliased stroke: coverage falls off linearly over one pixel outside
/// the stroke half-width. Pixel `(x, y)` has its center at `(x, y)`.
pub(crate) fn stroke(canvas: &mut Canvas, arc: &NoiseArc) {
    let (w, h) = (canvas.width, canvas.height);
    let half = arc.stroke_width_px / 2.0;
    let reach = half + 1.0;
    let pts = arc.polyline(w);
    let mut coverage = vec![0f32; w * h];
    for seg in pts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let x0 = (a.0.min(b.0) - reach).floor().max(0.0) as i64;
        let x1 = (a.0.max(b.0) + reach).ceil().min(w as f64 - 1.0) as i64;
        let y0 = (a.1.min(b.1) - reach).floor().max(0.0) as i64;
        let y1 = (a.1.max(b.1) + reach).ceil().min(h as f64 - 1.0) as i64;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = point_segment_distance((x as f64, y as f64), a, b);
                let c = (half + 0.5 - d).clamp(0.0, 1.0) as f32;
                let slot = &mut coverage[y as usize * w + x as usize];
                if c > *slot {
                    *slot = c;
                }
            }
        }
    }
    let color = arc.color.map(|v| v as f32 / 255.0);
    for y in 0..h {
        for x in 0..w {
            let c = coverage[y * w + x];
            if c > 0.0 {
                canvas.blend(x, y, color, c);
            }
        }
    }
}

/// Draws `arc` over `image`. Pixels off the stroke are left untouched.
pub fn draw_noise_arc(image: &mut RgbImage, arc: &NoiseArc) {
    let mut canvas = Canvas::from_rgb(image);
    stroke(&mut canvas, arc);
    *image = canvas.to_rgb();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn sine(a: f64, w: f64, phi: f64, sigma: f64, width: f64) -> NoiseArc {
        NoiseArc {
            shape: ArcShape::Sine {
                amplitude_px: a,
                omega_rad_per_px: w,
                phase_rad: phi,
                offset_px: sigma,
            },
            stroke_width_px: width,
            color: [0, 0, 0],
        }
    }

    fn touched(before: &RgbImage, after: &RgbImage) -> Vec<(u32, u32)> {
        before
            .enumerate_pixels()
            .filter(|(x, y, p)| after.get_pixel(*x, *y) != *p)
            .map(|(x, y, _)| (x, y))
            .collect()
    }

    #[test]
    fn flat_sine_is_horizontal_line() {
        let blank = RgbImage::from_pixel(80, 40, image::Rgb([255, 255, 255]));
        let mut img = blank.clone();
        draw_noise_arc(&mut img, &sine(0.0, 0.05, 0.0, 20.0, 1.0));
        let rows: std::collections::BTreeSet<u32> =
            touched(&blank, &img).into_iter().map(|(_, y)| y).collect();
        assert_eq!(rows.into_iter().collect::<Vec<_>>(), vec![20]);
    }

    #[test]
    fn sine_rows_follow_formula() {
        let blank = RgbImage::from_pixel(120, 40, image::Rgb([255, 255, 255]));
        let mut img = blank.clone();
        draw_noise_arc(&mut img, &sine(5.0, 0.05, 0.0, 20.0, 1.0));
        let diff = touched(&blank, &img);
        for x in 0..120u32 {
            let y = 5.0 * (0.05 * x as f64).sin() + 20.0;
            let rows: Vec<u32> = diff.iter().filter(|p| p.0 == x).map(|p| p.1).collect();
            assert!(rows.contains(&(y.round() as u32)), "x={x} rows={rows:?}");
            // stroke half-width 0.5 plus one pixel of anti-alias falloff
            assert!(rows.iter().all(|&r| (r as f64 - y).abs() < 1.5), "x={x}");
        }
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let cfg = crate::scheme::preset(5).unwrap();
        let spec = &cfg.noise_arcs[0];
        let a = NoiseArc::sample(spec, &cfg, &mut rng_from_seed(9));
        let b = NoiseArc::sample(spec, &cfg, &mut rng_from_seed(9));
        assert_eq!(a, b);
        let ranges = spec.sine.as_ref().unwrap();
        match a.shape {
            ArcShape::Sine {
                amplitude_px,
                omega_rad_per_px,
                phase_rad,
                offset_px,
            } => {
                let inside = |v: f64, r: (f64, f64)| r.0 <= v && v <= r.1;
                assert!(inside(amplitude_px, ranges.amplitude_px));
                assert!(inside(omega_rad_per_px, ranges.omega_rad_per_px));
                assert!(inside(phase_rad, ranges.phase_rad));
                assert!(inside(offset_px, ranges.offset_px));
            }
            _ => panic!("expected sine"),
        }
        let blank = RgbImage::from_pixel(200, 64, image::Rgb([255, 255, 255]));
        let (mut x, mut y) = (blank.clone(), blank.clone());
        draw_noise_arc(&mut x, &a);
        draw_noise_arc(&mut y, &b);
        assert_eq!(touched(&blank, &x), touched(&blank, &y));
    }

    #[test]
    fn line_and_bezier_draw_something() {
        let mut cfg = crate::scheme::preset(5).unwrap();
        let blank = RgbImage::from_pixel(200, 64, image::Rgb([255, 255, 255]));
        for kind in [ArcKind::Line, ArcKind::Bezier] {
            cfg.noise_arcs[0].kind = kind;
            let arc = NoiseArc::sample(&cfg.noise_arcs[0], &cfg, &mut rng_from_seed(1));
            let mut img = blank.clone();
            draw_noise_arc(&mut img, &arc);
            assert!(touched(&blank, &img).len() > 100, "{kind:?}");
        }
    }
}
