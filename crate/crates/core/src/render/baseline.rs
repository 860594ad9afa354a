use image::{Rgb, RgbImage};

use super::{RenderBackend, RenderError, RenderJob};
use crate::projection::ProjectionResult;

/// One pyramid level: premultiplied color sums and covered-pixel counts.
struct Level {
    w: usize,
    h: usize,
    color: Vec<[f64; 3]>,
    weight: Vec<f64>,
}

/// Pull-push hole filling. Covered pixels are copied verbatim; holes take
/// the weighted average color of the nearest pyramid level that has data.
/// A projection with no covered pixel yields a black image.
pub fn baseline_inpaint(projection: &ProjectionResult) -> RgbImage {
    let (w, h) = projection.dims();
    let mut out = RgbImage::new(w as u32, h as u32);
    if projection.covered_count() == 0 {
        return out;
    }
    let mut base = Level {
        w,
        h,
        color: vec![[0.0; 3]; w * h],
        weight: vec![0.0; w * h],
    };
    for (u, v, &c) in projection.coverage.indexed() {
        if c {
            let p = projection.rgb.get_pixel(u as u32, v as u32).0;
            base.color[v * w + u] = [p[0] as f64, p[1] as f64, p[2] as f64];
            base.weight[v * w + u] = 1.0;
        }
    }

    // pull: colors are averages, weights are covered-descendant counts
    let mut levels = vec![base];
    while levels.last().is_some_and(|l| l.w > 1 || l.h > 1) {
        let fine = levels.last().unwrap();
        let (cw, ch) = (fine.w.div_ceil(2), fine.h.div_ceil(2));
        let mut coarse = Level {
            w: cw,
            h: ch,
            color: vec![[0.0; 3]; cw * ch],
            weight: vec![0.0; cw * ch],
        };
        for y in 0..ch {
            for x in 0..cw {
                let (mut acc, mut wsum) = ([0.0; 3], 0.0);
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let (fx, fy) = (2 * x + dx, 2 * y + dy);
                    if fx < fine.w && fy < fine.h {
                        let i = fy * fine.w + fx;
                        let wt = fine.weight[i];
                        for c in 0..3 {
                            acc[c] += wt * fine.color[i][c];
                        }
                        wsum += wt;
                    }
                }
                if wsum > 0.0 {
                    coarse.color[y * cw + x] = acc.map(|a| a / wsum);
                }
                coarse.weight[y * cw + x] = wsum;
            }
        }
        levels.push(coarse);
    }

    // push: undefined pixels inherit their parent's (already filled) color
    for k in (0..levels.len() - 1).rev() {
        let (upper, lower) = levels.split_at_mut(k + 1);
        let (fine, coarse) = (&mut upper[k], &lower[0]);
        for y in 0..fine.h {
            for x in 0..fine.w {
                let i = y * fine.w + x;
                if fine.weight[i] == 0.0 {
                    fine.color[i] = coarse.color[(y / 2) * coarse.w + x / 2];
                }
            }
        }
    }

    let filled = &levels[0];
    for (u, v, &c) in projection.coverage.indexed() {
        let px = if c {
            *projection.rgb.get_pixel(u as u32, v as u32)
        } else {
            Rgb(filled.color[v * w + u].map(|x| x.round().clamp(0.0, 255.0) as u8))
        };
        out.put_pixel(u as u32, v as u32, px);
    }
    out
}

/// In-process pull-push backend with exact covered-pixel fidelity.
#[derive(Clone, Copy, Debug, Default)]
pub struct BaselineBackend;

impl RenderBackend for BaselineBackend {
    fn name(&self) -> &str {
        "baseline"
    }

    fn supports_reference_masks(&self) -> bool {
        false
    }

    fn exact_fidelity(&self) -> bool {
        true
    }

    fn inpaint(&self, job: &RenderJob) -> Result<RgbImage, RenderError> {
        Ok(baseline_inpaint(&job.projection))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use proptest::prelude::*;

    fn projection(rgb: RgbImage, coverage: Grid<bool>) -> ProjectionResult {
        let (w, h) = coverage.dims();
        let depth = Grid::from_fn(w, h, |u, v| if *coverage.get(u, v) { 1.0 } else { f32::INFINITY });
        let instance = Grid::new(w, h, -1);
        let mut rgb = rgb;
        for (u, v, &c) in coverage.indexed() {
            if !c {
                rgb.put_pixel(u as u32, v as u32, Rgb([0, 0, 0]));
            }
        }
        ProjectionResult {
            rgb,
            coverage,
            depth,
            instance,
        }
    }

    /// Brute-force nearest covered pixel (squared distance, first in raster order on ties).
    fn nearest_fill(p: &ProjectionResult) -> RgbImage {
        let (w, h) = p.dims();
        let covered: Vec<(usize, usize)> = p.coverage.indexed().filter(|t| *t.2).map(|(u, v, _)| (u, v)).collect();
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as i64, y as i64);
            let &(u, v) = covered
                .iter()
                .min_by_key(|&&(u, v)| (u as i64 - x).pow(2) + (v as i64 - y).pow(2))
                .unwrap();
            *p.rgb.get_pixel(u as u32, v as u32)
        })
    }

    #[test]
    fn full_coverage_is_identity() {
        let rgb = RgbImage::from_fn(13, 7, |x, y| Rgb([x as u8 * 9, y as u8 * 30, 77]));
        let p = projection(rgb.clone(), Grid::new(13, 7, true));
        assert_eq!(baseline_inpaint(&p), rgb);
    }

    #[test]
    fn single_hole_takes_surrounding_color() {
        let mut cov = Grid::new(9, 9, true);
        cov.set(4, 4, false);
        let p = projection(RgbImage::from_pixel(9, 9, Rgb([12, 200, 99])), cov);
        assert_eq!(baseline_inpaint(&p).get_pixel(4, 4).0, [12, 200, 99]);
    }

    #[test]
    fn checkerboard_constant_matches_nearest_oracle() {
        let cov = Grid::from_fn(20, 14, |u, v| (u + v) % 2 == 0);
        let p = projection(RgbImage::from_pixel(20, 14, Rgb([40, 90, 200])), cov);
        let got = baseline_inpaint(&p);
        let oracle = nearest_fill(&p);
        for (a, b) in got.pixels().zip(oracle.pixels()) {
            for c in 0..3 {
                assert!((a[c] as i32 - b[c] as i32).abs() <= 2);
            }
        }
    }

    #[test]
    fn empty_coverage_is_black() {
        let p = projection(RgbImage::from_pixel(5, 3, Rgb([9, 9, 9])), Grid::new(5, 3, false));
        assert!(baseline_inpaint(&p).pixels().all(|px| px.0 == [0, 0, 0]));
    }

    proptest! {
        #[test]
        fn covered_pixels_preserved(
            w in 1usize..24, h in 1usize..24,
            bits in proptest::collection::vec(any::<bool>(), 576),
            colors in proptest::collection::vec(any::<u8>(), 576 * 3),
        ) {
            let cov = Grid::from_fn(w, h, |u, v| bits[v * 24 + u]);
            let rgb = RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let i = (y as usize * 24 + x as usize) * 3;
                Rgb([colors[i], colors[i + 1], colors[i + 2]])
            });
            let p = projection(rgb, cov);
            let out = baseline_inpaint(&p);
            prop_assert_eq!(crate::render::covered_mismatches(&p, &out), 0);
        }
    }
}
