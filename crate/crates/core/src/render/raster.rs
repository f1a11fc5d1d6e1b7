//! Float raster buffers used while composing an image.

use image::RgbImage;

/// Values below this are treated as empty when trimming glyph boxes.
const TRIM_EPS: f32 = 1e-3;

/// Single-channel coverage mask in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
    /// Baseline-center reference point in mask coordinates.
    pub anchor: (f64, f64),
}

impl Mask {
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    fn sample_bilinear(&self, x: f64, y: f64) -> f32 {
        // Pixel centers sit at integer + 0.5.
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = (fx - x0) as f32;
        let ty = (fy - y0) as f32;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let at = |x: i64, y: i64| -> f32 {
            if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
                0.0
            } else {
                self.data[y as usize * self.width + x as usize]
            }
        };
        let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
        let bottom = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Keeps only the outline: coverage minus its 3×3 erosion.
    pub fn hollow(&self) -> Mask {
        let (w, h) = (self.width + 2, self.height + 2);
        let mut padded = vec![0f32; w * h];
        for y in 0..self.height {
            let src = &self.data[y * self.width..(y + 1) * self.width];
            padded[(y + 1) * w + 1..(y + 1) * w + 1 + self.width].copy_from_slice(src);
        }
        let mut out = vec![0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let v = padded[y * w + x];
                if v == 0.0 {
                    continue;
                }
                let mut eroded = v;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        let n = if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            0.0
                        } else {
                            padded[ny as usize * w + nx as usize]
                        };
                        eroded = eroded.min(n);
                    }
                }
                out[y * w + x] = (v - eroded).max(0.0);
            }
        }
        Mask {
            width: w,
            height: h,
            data: out,
            anchor: (self.anchor.0 + 1.0, self.anchor.1 + 1.0),
        }
    }

    /// Rotates about the mask center; positive angles turn clockwise on
    /// screen (y axis points down).
    pub fn rotate(&self, degrees: f64) -> Mask {
        if degrees == 0.0 {
            return self.clone();
        }
        let theta = degrees.to_radians();
        let (sin, cos) = theta.sin_cos();
        let (w, h) = (self.width as f64, self.height as f64);
        // Grow symmetrically so source and destination centers stay on the
        // same sub-pixel grid.
        let pad = |need: f64, have: f64| ((need - have) / 2.0).ceil().max(0.0) as usize + 1;
        let out_w = self.width + 2 * pad(w * cos.abs() + h * sin.abs(), w);
        let out_h = self.height + 2 * pad(w * sin.abs() + h * cos.abs(), h);
        let (cx, cy) = (w / 2.0, h / 2.0);
        let (ocx, ocy) = (out_w as f64 / 2.0, out_h as f64 / 2.0);
        let mut data = vec![0f32; out_w * out_h];
        for v in 0..out_h {
            for u in 0..out_w {
                let dx = u as f64 + 0.5 - ocx;
                let dy = v as f64 + 0.5 - ocy;
                // Inverse rotation back into source coordinates.
                let sx = cos * dx + sin * dy + cx;
                let sy = -sin * dx + cos * dy + cy;
                data[v * out_w + u] = self.sample_bilinear(sx, sy);
            }
        }
        let (ax, ay) = (self.anchor.0 - cx, self.anchor.1 - cy);
        let anchor = (cos * ax - sin * ay + ocx, sin * ax + cos * ay + ocy);
        Mask {
            width: out_w,
            height: out_h,
            data,
            anchor,
        }
    }

    /// Crops to the tight box of non-negligible coverage.
    pub fn trim(&self) -> Mask {
        let mut min_x = usize::MAX;
        let mut min_y = usize::MAX;
        let mut max_x = 0;
        let mut max_y = 0;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) > TRIM_EPS {
                    min_x = min_x.min(x);
                    max_x = max_x.max(x);
                    min_y = min_y.min(y);
                    max_y = max_y.max(y);
                }
            }
        }
        if min_x == usize::MAX {
            return Mask {
                width: 0,
                height: 0,
                data: Vec::new(),
                anchor: self.anchor,
            };
        }
        let width = max_x - min_x + 1;
        let height = max_y - min_y + 1;
        let mut data = Vec::with_capacity(width * height);
        for y in min_y..=max_y {
            data.extend_from_slice(&self.data[y * self.width + min_x..y * self.width + max_x + 1]);
        }
        Mask {
            width,
            height,
            data,
            anchor: (self.anchor.0 - min_x as f64, self.anchor.1 - min_y as f64),
        }
    }
}

/// Premultiplied RGBA layer holding the composed glyphs.
#[derive(Debug, Clone)]
pub struct GlyphLayer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 4]>,
}

impl GlyphLayer {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 4]; width * height],
        }
    }

    /// Alpha-over: the mask is painted on top of what is already there.
    /// Pixels falling outside the layer are clipped.
    pub fn paint(&mut self, mask: &Mask, x: i64, y: i64, color: [u8; 3]) {
        let c = color.map(|v| v as f32 / 255.0);
        for my in 0..mask.height {
            let py = y + my as i64;
            if py < 0 || py >= self.height as i64 {
                continue;
            }
            for mx in 0..mask.width {
                let px = x + mx as i64;
                if px < 0 || px >= self.width as i64 {
                    continue;
                }
                let a = mask.get(mx, my);
                if a <= 0.0 {
                    continue;
                }
                let dst = &mut self.data[py as usize * self.width + px as usize];
                let keep = 1.0 - a;
                dst[0] = c[0] * a + dst[0] * keep;
                dst[1] = c[1] * a + dst[1] * keep;
                dst[2] = c[2] * a + dst[2] * keep;
                dst[3] = a + dst[3] * keep;
            }
        }
    }
}

/// Linear RGB canvas with channels in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 3]>,
}

impl Canvas {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![color.map(|v| v as f32 / 255.0); width * height],
        }
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.pixels().map(|p| p.0.map(|v| v as f32 / 255.0)).collect(),
        }
    }

    pub fn to_rgb(&self) -> RgbImage {
        let mut buf = Vec::with_capacity(self.data.len() * 3);
        for px in &self.data {
            for v in px {
                buf.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        RgbImage::from_raw(self.width as u32, self.height as u32, buf)
            .expect("buffer matches dimensions")
    }

    /// Blends `color` with coverage `alpha` into one pixel.
    pub fn blend(&mut self, x: usize, y: usize, color: [f32; 3], alpha: f32) {
        let dst = &mut self.data[y * self.width + x];
        for c in 0..3 {
            dst[c] = color[c] * alpha + dst[c] * (1.0 - alpha);
        }
    }

    /// Composites a premultiplied layer on top.
    pub fn composite(&mut self, layer: &GlyphLayer) {
        for (dst, src) in self.data.iter_mut().zip(&layer.data) {
            let keep = 1.0 - src[3];
            for c in 0..3 {
                dst[c] = src[c] + dst[c] * keep;
            }
        }
    }
}
