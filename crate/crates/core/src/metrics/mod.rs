//! Full-reference image metrics on 8-bit grayscale rasters.
//!
//! RGB input goes through [`to_gray`] first (luma weights 0.299, 0.587,
//! 0.114, rounded to the nearest level).

mod perceptual;
mod report;

use image::{GrayImage, RgbImage};
use thiserror::Error;

pub use perceptual::{perceptual_distance, PerceptualFeatures, PERCEPTUAL_NOTE};
pub use report::{group_protocol_report, GroupResult, MetricReport, MetricValues, Pairing, PopulationEntropy};

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const PEAK: f64 = 255.0;
pub const SSIM_C1: f64 = (SSIM_K1 * PEAK) * (SSIM_K1 * PEAK);
pub const SSIM_C2: f64 = (SSIM_K2 * PEAK) * (SSIM_K2 * PEAK);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("image {size:?} is smaller than the {window}x{window} window")]
    TooSmall { size: (u32, u32), window: usize },
    #[error("reference image is constant; range normalization is zero")]
    DegenerateReference,
    #[error("population `{population}` has {found} samples but {needed} are required")]
    InsufficientSamples {
        population: &'static str,
        needed: usize,
        found: usize,
    },
    #[error("imitation and synthetic populations differ in size ({imitation} vs {synthetic})")]
    CorrespondenceMismatch { imitation: usize, synthetic: usize },
}

pub fn to_gray(img: &RgbImage) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let [r, g, b] = img.get_pixel(x, y).0;
        let l = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
        image::Luma([l.round().clamp(0.0, 255.0) as u8])
    })
}

fn same_dims(a: &GrayImage, b: &GrayImage) -> Result<(), MetricError> {
    if a.dimensions() != b.dimensions() {
        return Err(MetricError::DimensionMismatch {
            a: a.dimensions(),
            b: b.dimensions(),
        });
    }
    Ok(())
}

/// Summed-area table with one row and column of zero padding.
struct Integral {
    stride: usize,
    data: Vec<u64>,
}

impl Integral {
    fn build(w: usize, h: usize, value: impl Fn(usize, usize) -> u64) -> Self {
        let stride = w + 1;
        let mut data = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += value(x, y);
                data[(y + 1) * stride + x + 1] = data[y * stride + x + 1] + row;
            }
        }
        Self { stride, data }
    }

    fn window(&self, x: usize, y: usize, n: usize) -> u64 {
        let s = self.stride;
        self.data[(y + n) * s + x + n] + self.data[y * s + x] - self.data[y * s + x + n] - self.data[(y + n) * s + x]
    }
}

/// Mean SSIM over all 8×8 windows at stride 1, uniform weights,
/// population (1/N) statistics.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricError> {
    same_dims(a, b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    let n = SSIM_WINDOW;
    if w < n || h < n {
        return Err(MetricError::TooSmall {
            size: a.dimensions(),
            window: n,
        });
    }
    let pa = a.as_raw();
    let pb = b.as_raw();
    let sa = Integral::build(w, h, |x, y| pa[y * w + x] as u64);
    let sb = Integral::build(w, h, |x, y| pb[y * w + x] as u64);
    let saa = Integral::build(w, h, |x, y| (pa[y * w + x] as u64).pow(2));
    let sbb = Integral::build(w, h, |x, y| (pb[y * w + x] as u64).pow(2));
    let sab = Integral::build(w, h, |x, y| pa[y * w + x] as u64 * pb[y * w + x] as u64);
    let count = (n * n) as u64;
    let nn = (count * count) as f64;
    let mut total = 0.0;
    for y in 0..=h - n {
        for x in 0..=w - n {
            let (xa, xb) = (sa.window(x, y, n), sb.window(x, y, n));
            // Exact integer numerators: N²·var = N·Σx² − (Σx)².
            let var_a = (count * saa.window(x, y, n) - xa * xa) as f64 / nn;
            let var_b = (count * sbb.window(x, y, n) - xb * xb) as f64 / nn;
            let cov = (count as i128 * sab.window(x, y, n) as i128 - xa as i128 * xb as i128) as f64 / nn;
            let mu_a = xa as f64 / count as f64;
            let mu_b = xb as f64 / count as f64;
            total += ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
        }
    }
    Ok(total / ((w - n + 1) * (h - n + 1)) as f64)
}

fn sum_squared_error(a: &GrayImage, b: &GrayImage) -> u64 {
    a.as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| (x as i64 - y as i64).pow(2) as u64)
        .sum()
}

/// Mean squared error over all pixels.
pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricError> {
    same_dims(a, b)?;
    Ok(sum_squared_error(a, b) as f64 / a.as_raw().len().max(1) as f64)
}

/// `10·log10(255² / MSE)`; `+∞` for identical images.
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricError> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / m).log10())
}

/// RMSE normalized by the intensity range of `reference`.
pub fn nrmse(a: &GrayImage, reference: &GrayImage) -> Result<f64, MetricError> {
    let m = mse(a, reference)?;
    let raw = reference.as_raw();
    let hi = raw.iter().copied().max().unwrap_or(0);
    let lo = raw.iter().copied().min().unwrap_or(0);
    if hi == lo {
        return Err(MetricError::DegenerateReference);
    }
    Ok(m.sqrt() / (hi - lo) as f64)
}

fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in img.as_raw() {
        h[v as usize] += 1;
    }
    h
}

fn shannon(counts: impl Iterator<Item = u64>, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    -counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / t;
            p * p.log2()
        })
        .sum::<f64>()
}

/// Shannon entropy of the intensity histogram, in bits.
pub fn entropy(img: &GrayImage) -> f64 {
    shannon(histogram(img).into_iter(), img.as_raw().len() as u64)
}

/// `H(a) + H(b) − H(a, b)` from the joint 256×256 histogram, in bits.
/// Clamped at zero against rounding.
pub fn mutual_information(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricError> {
    same_dims(a, b)?;
    let mut joint = vec![0u64; 256 * 256];
    for (&x, &y) in a.as_raw().iter().zip(b.as_raw()) {
        joint[x as usize * 256 + y as usize] += 1;
    }
    let total = a.as_raw().len() as u64;
    let h_ab = shannon(joint.into_iter(), total);
    Ok((entropy(a) + entropy(b) - h_ab).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(w: u32, h: u32, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| image::Luma([rng.random()]))
    }

    fn constant(w: u32, h: u32, v: u8) -> GrayImage {
        GrayImage::from_pixel(w, h, image::Luma([v]))
    }

    #[test]
    fn constant_images_ssim_closed_form() {
        let got = ssim(&constant(16, 16, 0), &constant(16, 16, 255)).unwrap();
        let want = 6.5025 / 65031.5025;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn ssim_rejects_small_and_mismatched() {
        assert!(matches!(
            ssim(&constant(7, 20, 1), &constant(7, 20, 1)),
            Err(MetricError::TooSmall { .. })
        ));
        assert!(matches!(
            ssim(&constant(8, 8, 1), &constant(9, 8, 1)),
            Err(MetricError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr(&constant(10, 10, 3), &constant(10, 10, 3)).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&constant(10, 10, 0), &constant(10, 10, 255)).unwrap(), 0.0);
        let a = constant(20, 10, 0);
        let mut b = a.clone();
        b.put_pixel(4, 4, image::Luma([255]));
        assert!((psnr(&a, &b).unwrap() - 10.0 * 200f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn nrmse_examples() {
        let checker = GrayImage::from_fn(16, 16, |x, y| image::Luma([if (x + y) % 2 == 0 { 0 } else { 255 }]));
        let shifted = GrayImage::from_fn(16, 16, |x, y| {
            let v = checker.get_pixel(x, y).0[0];
            image::Luma([if v == 0 { 10 } else { 245 }])
        });
        assert!((nrmse(&shifted, &checker).unwrap() - 10.0 / 255.0).abs() < 1e-12);
        assert_eq!(nrmse(&checker, &checker).unwrap(), 0.0);
        assert_eq!(nrmse(&checker, &constant(16, 16, 9)), Err(MetricError::DegenerateReference));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&constant(8, 8, 40)), 0.0);
        let half = GrayImage::from_fn(16, 16, |x, _| image::Luma([if x < 8 { 0 } else { 255 }]));
        assert_eq!(entropy(&half), 1.0);
        let all = GrayImage::from_fn(16, 16, |x, y| image::Luma([(y * 16 + x) as u8]));
        assert_eq!(entropy(&all), 8.0);
    }

    #[test]
    fn mi_of_independent_noise_vanishes_with_enough_samples() {
        // The plug-in estimator over 256² bins is biased upward by roughly
        // (K−1)²/(2N ln 2) bits, so independence only shows as ≈0 once N is
        // well above the bin count.
        let a = random(2048, 2048, 1);
        let b = random(2048, 2048, 2);
        let mi = mutual_information(&a, &b).unwrap();
        assert!(mi < 0.05, "mi={mi}");
        let small = mutual_information(&random(256, 256, 1), &random(256, 256, 2)).unwrap();
        let bias = 255.0 * 255.0 / (2.0 * 65536.0 * std::f64::consts::LN_2);
        assert!(small > bias && small < 2.0 * bias, "mi={small} bias={bias}");
    }

    #[test]
    fn gray_conversion_weights() {
        let img = RgbImage::from_pixel(1, 1, image::Rgb([255, 0, 0]));
        assert_eq!(to_gray(&img).get_pixel(0, 0).0[0], 76);
        let img = RgbImage::from_pixel(1, 1, image::Rgb([10, 10, 10]));
        assert_eq!(to_gray(&img).get_pixel(0, 0).0[0], 10);
    }

    fn gray_pair() -> impl Strategy<Value = (GrayImage, GrayImage)> {
        (8u32..24, 8u32..24).prop_flat_map(|(w, h)| {
            let n = (w * h) as usize;
            (
                proptest::collection::vec(any::<u8>(), n),
                proptest::collection::vec(any::<u8>(), n),
            )
                .prop_map(move |(x, y)| {
                    (
                        GrayImage::from_raw(w, h, x).unwrap(),
                        GrayImage::from_raw(w, h, y).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ssim_bounds_identity_symmetry((a, b) in gray_pair()) {
            let s = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert_eq!(s, ssim(&b, &a).unwrap());
            prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn psnr_infinite_only_when_equal((a, b) in gray_pair()) {
            let p = psnr(&a, &b).unwrap();
            prop_assert_eq!(p.is_infinite(), a == b);
            prop_assert_eq!(p.to_bits(), psnr(&b, &a).unwrap().to_bits());
        }

        #[test]
        fn entropy_bounds_and_permutation((a, _b) in gray_pair()) {
            let e = entropy(&a);
            prop_assert!((0.0..=8.0).contains(&e));
            let mut raw = a.as_raw().clone();
            raw.reverse();
            let r = GrayImage::from_raw(a.width(), a.height(), raw).unwrap();
            prop_assert!((entropy(&r) - e).abs() < 1e-12);
        }

        #[test]
        fn mi_properties((a, b) in gray_pair()) {
            let mi = mutual_information(&a, &b).unwrap();
            prop_assert!(mi >= -1e-12);
            prop_assert!((mi - mutual_information(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((mutual_information(&a, &a).unwrap() - entropy(&a)).abs() < 1e-9);
            let inv = |img: &GrayImage| {
                let mut o = img.clone();
                o.iter_mut().for_each(|v| *v = 255 - *v);
                o
            };
            prop_assert!((mutual_information(&inv(&a), &inv(&b)).unwrap() - mi).abs() < 1e-9);
            prop_assert!((mutual_information(&a, &inv(&a)).unwrap() - entropy(&a)).abs() < 1e-9);
        }

        #[test]
        fn nrmse_zero_iff_equal((a, b) in gray_pair()) {
            if let Ok(v) = nrmse(&a, &b) {
                prop_assert_eq!(v == 0.0, a == b);
            }
        }
    }
}
