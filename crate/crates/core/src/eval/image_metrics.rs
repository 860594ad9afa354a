use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::EvalError;

pub const PSNR_CAP: f64 = 99.0;
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub psnr: f64,
    pub ssim: f64,
}

fn check(pred: &RgbImage, gt: &RgbImage) -> Result<(), EvalError> {
    if pred.dimensions() != gt.dimensions() {
        return Err(EvalError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            pred.dimensions(),
            gt.dimensions()
        )));
    }
    Ok(())
}

/// PSNR over all channels, capped at [`PSNR_CAP`].
pub fn psnr(pred: &RgbImage, gt: &RgbImage) -> Result<f64, EvalError> {
    check(pred, gt)?;
    let n = pred.as_raw().len();
    if n == 0 {
        return Err(EvalError::ShapeMismatch("empty image".into()));
    }
    let sse: f64 = pred
        .as_raw()
        .iter()
        .zip(gt.as_raw())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    if sse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (255.0 * 255.0 / (sse / n as f64)).log10()).min(PSNR_CAP))
}

pub(crate) fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, w) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *w = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Separable Gaussian filter keeping only fully-inside windows.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - WINDOW + 1, h - WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean single-scale SSIM over channels (11×11 Gaussian window, σ = 1.5,
/// valid windows only).
pub fn ssim(pred: &RgbImage, gt: &RgbImage) -> Result<f64, EvalError> {
    check(pred, gt)?;
    let (w, h) = (pred.width() as usize, pred.height() as usize);
    if w < WINDOW || h < WINDOW {
        return Err(EvalError::ShapeMismatch(format!("{w}x{h} is smaller than the {WINDOW}x{WINDOW} window")));
    }
    let k = gaussian_kernel();
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = pred.pixels().map(|p| p[c] as f64).collect();
        let y: Vec<f64> = gt.pixels().map(|p| p[c] as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let (mx, my) = (filter_valid(&x, w, h, &k), filter_valid(&y, w, h, &k));
        let (sxx, syy, sxy) = (
            filter_valid(&xx, w, h, &k),
            filter_valid(&yy, w, h, &k),
            filter_valid(&xy, w, h, &k),
        );
        let mut acc = 0.0;
        for i in 0..mx.len() {
            acc += ssim_term(mx[i], my[i], sxx[i], syy[i], sxy[i]);
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / 3.0)
}

#[inline]
pub(crate) fn ssim_term(mx: f64, my: f64, exx: f64, eyy: f64, exy: f64) -> f64 {
    let (vx, vy, cxy) = (exx - mx * mx, eyy - my * my, exy - mx * my);
    ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2))
}

pub fn image_metrics(pred: &RgbImage, gt: &RgbImage) -> Result<ImageMetrics, EvalError> {
    Ok(ImageMetrics {
        psnr: psnr(pred, gt)?,
        ssim: ssim(pred, gt)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: u32, h: u32) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
    }

    /// Direct per-window double loop with an independently built 2D kernel.
    fn ssim_reference(a: &RgbImage, b: &RgbImage) -> f64 {
        let (w, h) = (a.width() as usize, a.height() as usize);
        let mut k2 = [[0.0f64; 11]; 11];
        let mut s = 0.0;
        for (i, row) in k2.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                s += *v;
            }
        }
        let c1 = (0.01f64 * 255.0).powi(2);
        let c2 = (0.03f64 * 255.0).powi(2);
        let mut total = 0.0;
        for c in 0..3 {
            let mut acc = 0.0;
            let mut count = 0;
            for y0 in 0..=h - 11 {
                for x0 in 0..=w - 11 {
                    let (mut mx, mut my) = (0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let wgt = k2[i][j] / s;
                            mx += wgt * a.get_pixel((x0 + j) as u32, (y0 + i) as u32)[c] as f64;
                            my += wgt * b.get_pixel((x0 + j) as u32, (y0 + i) as u32)[c] as f64;
                        }
                    }
                    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let wgt = k2[i][j] / s;
                            let dx = a.get_pixel((x0 + j) as u32, (y0 + i) as u32)[c] as f64 - mx;
                            let dy = b.get_pixel((x0 + j) as u32, (y0 + i) as u32)[c] as f64 - my;
                            vx += wgt * dx * dx;
                            vy += wgt * dy * dy;
                            cov += wgt * dx * dy;
                        }
                    }
                    acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        total / 3.0
    }

    #[test]
    fn identical_images() {
        let a = random_image(1, 32, 24);
        let m = image_metrics(&a, &a).unwrap();
        assert_eq!(m.psnr, 99.0);
        assert!((m.ssim - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_offset_psnr() {
        let a = RgbImage::from_pixel(16, 16, Rgb([110; 3]));
        let b = RgbImage::from_pixel(16, 16, Rgb([100; 3]));
        let p = psnr(&a, &b).unwrap();
        assert!((p - 10.0 * (65025.0f64 / 100.0).log10()).abs() < 1e-12);
        assert!((p - 28.13).abs() < 0.01);
    }

    #[test]
    fn ssim_matches_double_loop() {
        let a = random_image(2, 64, 64);
        let b = random_image(3, 64, 64);
        assert!((ssim(&a, &b).unwrap() - ssim_reference(&a, &b)).abs() < 1e-6);
        // correlated pair away from zero
        let c = RgbImage::from_fn(64, 64, |x, y| {
            let p = a.get_pixel(x, y);
            Rgb([p[0] / 2 + 60, p[1] / 3 + 90, p[2] / 2])
        });
        assert!((ssim(&a, &c).unwrap() - ssim_reference(&a, &c)).abs() < 1e-6);
    }

    #[test]
    fn shape_errors() {
        let a = random_image(1, 16, 16);
        assert!(image_metrics(&a, &random_image(1, 16, 15)).is_err());
        assert!(ssim(&random_image(1, 10, 10), &random_image(2, 10, 10)).is_err());
    }

    proptest! {
        #[test]
        fn ssim_symmetric_and_bounded(s1 in 0u64..1000, s2 in 0u64..1000) {
            let a = random_image(s1, 20, 17);
            let b = random_image(s2, 20, 17);
            let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
