use rand::Rng;
use serde::{Deserialize, Serialize};

use super::raster::Canvas;
use crate::scheme::BackgroundKind;
use crate::seed::rng_from_seed;

/// Sampled background interference. All pixel-level randomness is drawn
/// from `seed`, so the record is enough to redraw it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub kind: BackgroundKind,
    pub density: f64,
    pub seed: u64,
}

const TEXTURE_CELL: usize = 8;

pub(crate) fn paint(canvas: &mut Canvas, bg: &Background) {
    let mut rng = rng_from_seed(bg.seed);
    let (w, h) = (canvas.width, canvas.height);
    match bg.kind {
        BackgroundKind::NoiseDots => {
            let count = (bg.density * (w * h) as f64).round() as usize;
            for _ in 0..count {
                let x = rng.random_range(0..w);
                let y = rng.random_range(0..h);
                let size = rng.random_range(1..=2usize);
                let color: [f32; 3] = [0, 1, 2].map(|_| rng.random_range(0.0..1.0f32));
                for dy in 0..size {
                    for dx in 0..size {
                        if x + dx < w && y + dy < h {
                            canvas.blend(x + dx, y + dy, color, 1.0);
                        }
                    }
                }
            }
        }
        BackgroundKind::Texture => {
            // Value noise: random lattice, bilinear in between.
            let gw = w / TEXTURE_CELL + 2;
            let gh = h / TEXTURE_CELL + 2;
            let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.random_range(0.0..1.0f32)).collect();
            let tint: [f32; 3] = [0, 1, 2].map(|_| rng.random_range(0.2..0.8f32));
            let strength = bg.density as f32 * 0.6;
            for y in 0..h {
                let fy = y as f32 / TEXTURE_CELL as f32;
                let (gy, ty) = (fy.floor() as usize, fy.fract());
                for x in 0..w {
                    let fx = x as f32 / TEXTURE_CELL as f32;
                    let (gx, tx) = (fx.floor() as usize, fx.fract());
                    let at = |i: usize, j: usize| lattice[j * gw + i];
                    let top = at(gx, gy) * (1.0 - tx) + at(gx + 1, gy) * tx;
                    let bottom = at(gx, gy + 1) * (1.0 - tx) + at(gx + 1, gy + 1) * tx;
                    let n = top * (1.0 - ty) + bottom * ty;
                    canvas.blend(x, y, tint, strength * n);
                }
            }
        }
        BackgroundKind::ColorBlocks => {
            let count = 1 + (bg.density * 12.0).round() as usize;
            for _ in 0..count {
                let bw = rng.random_range((w / 8).max(1)..=(w / 3).max(1));
                let bh = rng.random_range((h / 4).max(1)..=(h / 2).max(1));
                let x0 = rng.random_range(0..w);
                let y0 = rng.random_range(0..h);
                let color: [f32; 3] = [0, 1, 2].map(|_| rng.random_range(0.55..1.0f32));
                for y in y0..(y0 + bh).min(h) {
                    for x in x0..(x0 + bw).min(w) {
                        canvas.blend(x, y, color, 0.6);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_kind_changes_the_canvas_deterministically() {
        for kind in [BackgroundKind::NoiseDots, BackgroundKind::Texture, BackgroundKind::ColorBlocks] {
            let bg = Background {
                kind,
                density: 0.3,
                seed: 42,
            };
            let blank = Canvas::filled(64, 32, [255, 255, 255]);
            let mut a = blank.clone();
            let mut b = blank.clone();
            paint(&mut a, &bg);
            paint(&mut b, &bg);
            assert_eq!(a.to_rgb(), b.to_rgb(), "{kind:?}");
            assert_ne!(a.to_rgb(), blank.to_rgb(), "{kind:?}");
        }
    }
}
