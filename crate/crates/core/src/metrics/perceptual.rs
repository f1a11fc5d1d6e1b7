use std::f64::consts::PI;
use std::sync::OnceLock;

use image::GrayImage;

use super::{same_dims, MetricError};

/// Disclosed in reports next to the PL series.
pub const PERCEPTUAL_NOTE: &str = "PL uses a fixed Gabor filter bank (4 orientations, quadrature pairs, 3 scales) \
in place of learned network features; aggregation is unit-normalized per-position channel distance averaged \
spatially and summed over scales";

const SCALES: u32 = 3;
const ORIENTATIONS: usize = 4;
const RADIUS: i64 = 4;
const SIGMA: f64 = 2.0;
const WAVELENGTH: f64 = 4.0;
/// Floor in the normalization so flat regions do not amplify noise.
const NORM_EPS: f64 = 0.05;

struct Bank {
    kernels: Vec<Vec<f64>>,
}

fn bank() -> &'static Bank {
    static BANK: OnceLock<Bank> = OnceLock::new();
    BANK.get_or_init(|| {
        let size = (2 * RADIUS + 1) as usize;
        let mut kernels = Vec::new();
        for o in 0..ORIENTATIONS {
            let theta = PI * o as f64 / ORIENTATIONS as f64;
            let (s, c) = theta.sin_cos();
            for quadrature in [false, true] {
                let mut k = Vec::with_capacity(size * size);
                for dy in -RADIUS..=RADIUS {
                    for dx in -RADIUS..=RADIUS {
                        let (x, y) = (dx as f64, dy as f64);
                        let u = x * c + y * s;
                        let env = (-(x * x + y * y) / (2.0 * SIGMA * SIGMA)).exp();
                        let arg = 2.0 * PI * u / WAVELENGTH;
                        k.push(env * if quadrature { arg.sin() } else { arg.cos() });
                    }
                }
                let mean = k.iter().sum::<f64>() / k.len() as f64;
                k.iter_mut().for_each(|v| *v -= mean);
                kernels.push(k);
            }
        }
        Bank { kernels }
    })
}

struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn from_gray(img: &GrayImage) -> Self {
        Self {
            w: img.width() as usize,
            h: img.height() as usize,
            data: img.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }

    fn half(&self) -> Option<Self> {
        let (w, h) = (self.w / 2, self.h / 2);
        if w == 0 || h == 0 {
            return None;
        }
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let at = |dx: usize, dy: usize| self.data[(2 * y + dy) * self.w + 2 * x + dx];
                data.push((at(0, 0) + at(1, 0) + at(0, 1) + at(1, 1)) / 4.0);
            }
        }
        Some(Self { w, h, data })
    }

    fn at_clamped(&self, x: i64, y: i64) -> f64 {
        let x = x.clamp(0, self.w as i64 - 1) as usize;
        let y = y.clamp(0, self.h as i64 - 1) as usize;
        self.data[y * self.w + x]
    }

    /// Unit-normalized channel vectors, one per position.
    fn features(&self) -> Vec<f64> {
        let kernels = &bank().kernels;
        let nc = kernels.len();
        let mut out = vec![0.0; self.w * self.h * nc];
        for y in 0..self.h as i64 {
            for x in 0..self.w as i64 {
                let base = (y as usize * self.w + x as usize) * nc;
                for (ci, k) in kernels.iter().enumerate() {
                    let mut acc = 0.0;
                    let mut i = 0;
                    for dy in -RADIUS..=RADIUS {
                        for dx in -RADIUS..=RADIUS {
                            acc += k[i] * self.at_clamped(x + dx, y + dy);
                            i += 1;
                        }
                    }
                    out[base + ci] = acc;
                }
                let f = &mut out[base..base + nc];
                let norm = (f.iter().map(|v| v * v).sum::<f64>() + NORM_EPS * NORM_EPS).sqrt();
                f.iter_mut().for_each(|v| *v /= norm);
            }
        }
        out
    }
}

/// Normalized filter responses of one image at every scale. Computing these
/// once per image makes many pairwise distances cheap.
#[derive(Debug, Clone)]
pub struct PerceptualFeatures {
    dims: (u32, u32),
    scales: Vec<(usize, Vec<f64>)>,
}

impl PerceptualFeatures {
    pub fn new(img: &GrayImage) -> Self {
        let mut plane = Plane::from_gray(img);
        let mut scales = Vec::new();
        for _ in 0..SCALES {
            if plane.w == 0 || plane.h == 0 {
                break;
            }
            scales.push((plane.w * plane.h, plane.features()));
            match plane.half() {
                Some(p) => plane = p,
                None => break,
            }
        }
        Self {
            dims: img.dimensions(),
            scales,
        }
    }

    pub fn distance(&self, other: &Self) -> Result<f64, MetricError> {
        if self.dims != other.dims {
            return Err(MetricError::DimensionMismatch {
                a: self.dims,
                b: other.dims,
            });
        }
        Ok(self
            .scales
            .iter()
            .zip(&other.scales)
            .map(|((n, fa), (_, fb))| fa.iter().zip(fb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / *n as f64)
            .sum())
    }
}

/// Filter-bank feature distance; zero for identical inputs, symmetric.
pub fn perceptual_distance(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricError> {
    same_dims(a, b)?;
    PerceptualFeatures::new(a).distance(&PerceptualFeatures::new(b))
}
