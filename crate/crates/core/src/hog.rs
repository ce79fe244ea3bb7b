//! Histogram-of-oriented-gradients descriptor.
//!
//! Unsigned orientations (0..180 degrees) are binned per cell with linear
//! interpolation between the two nearest bin centres. Cells are grouped into
//! overlapping blocks, each L2-Hys normalized, and concatenated with blocks in
//! row-major order, cells within a block row-major, bins ascending.

use thiserror::Error;

use crate::imagecore::GrayTensor;

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum HogError {
    #[error("image {width}x{height} is too small: {reason}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        reason: String,
    },
    #[error("image {width}x{height} is not divisible into {cell}-pixel cells")]
    DimsNotDivisible {
        width: usize,
        height: usize,
        cell: usize,
    },
    #[error("invalid HOG configuration: {0}")]
    InvalidConfig(String),
}

/// Flat real-valued feature vector (HOG descriptor or flattened pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        FeatureVector { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(values: Vec<f64>) -> Self {
        FeatureVector { values }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HogConfig {
    /// cell side in pixels
    pub cell_size: usize,
    /// block side in cells
    pub block_size: usize,
    /// block stride in cells
    pub block_stride: usize,
    pub bins: usize,
    pub clip: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        HogConfig {
            cell_size: 8,
            block_size: 2,
            block_stride: 1,
            bins: 9,
            clip: 0.2,
        }
    }
}

impl HogConfig {
    pub fn validate(&self) -> Result<(), HogError> {
        if self.cell_size < 2 {
            return Err(HogError::InvalidConfig(format!(
                "cell_size {} < 2",
                self.cell_size
            )));
        }
        if self.bins < 2 {
            return Err(HogError::InvalidConfig(format!("bins {} < 2", self.bins)));
        }
        if self.block_size < 1 || self.block_stride < 1 {
            return Err(HogError::InvalidConfig(
                "block_size and block_stride must be >= 1".into(),
            ));
        }
        if !(self.clip > 0.0 && self.clip <= 1.0) {
            return Err(HogError::InvalidConfig(format!(
                "clip {} outside (0, 1]",
                self.clip
            )));
        }
        Ok(())
    }

    fn blocks_along(&self, cells: usize) -> usize {
        (cells - self.block_size) / self.block_stride + 1
    }

    /// Descriptor length for a `width`×`height` input.
    pub fn descriptor_len(&self, width: usize, height: usize) -> Result<usize, HogError> {
        let (cx, cy) = self.cell_grid(width, height)?;
        Ok(self.blocks_along(cx)
            * self.blocks_along(cy)
            * self.block_size
            * self.block_size
            * self.bins)
    }

    fn cell_grid(&self, width: usize, height: usize) -> Result<(usize, usize), HogError> {
        self.validate()?;
        if width < 3 || height < 3 {
            return Err(HogError::ImageTooSmall {
                width,
                height,
                reason: "need at least 3x3".into(),
            });
        }
        if !width.is_multiple_of(self.cell_size) || !height.is_multiple_of(self.cell_size) {
            return Err(HogError::DimsNotDivisible {
                width,
                height,
                cell: self.cell_size,
            });
        }
        let (cx, cy) = (width / self.cell_size, height / self.cell_size);
        if cx < self.block_size || cy < self.block_size {
            return Err(HogError::ImageTooSmall {
                width,
                height,
                reason: format!("fewer than {} cells per side", self.block_size),
            });
        }
        Ok((cx, cy))
    }
}

/// Per-pixel gradient magnitude and unsigned orientation in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub width: usize,
    pub height: usize,
    pub magnitude: Vec<f64>,
    pub orientation: Vec<f64>,
}

/// Central differences with replicated borders.
pub fn compute_gradients(t: &GrayTensor) -> Result<Gradients, HogError> {
    let (w, h) = (t.width(), t.height());
    if w < 3 || h < 3 {
        return Err(HogError::ImageTooSmall {
            width: w,
            height: h,
            reason: "need at least 3x3".into(),
        });
    }
    let v = t.values();
    let mut magnitude = Vec::with_capacity(w * h);
    let mut orientation = Vec::with_capacity(w * h);
    for y in 0..h {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(h - 1);
        for x in 0..w {
            let left = x.saturating_sub(1);
            let right = (x + 1).min(w - 1);
            let gx = v[y * w + right] - v[y * w + left];
            let gy = v[down * w + x] - v[up * w + x];
            magnitude.push((gx * gx + gy * gy).sqrt());
            let mut deg = gy.atan2(gx).to_degrees();
            if deg < 0.0 {
                deg += 180.0;
            }
            if deg >= 180.0 {
                deg -= 180.0;
            }
            orientation.push(deg + 0.0);
        }
    }
    Ok(Gradients {
        width: w,
        height: h,
        magnitude,
        orientation,
    })
}

fn cell_histograms(g: &Gradients, cfg: &HogConfig, cells_x: usize, cells_y: usize) -> Vec<f64> {
    let bins = cfg.bins;
    let bin_width = 180.0 / bins as f64;
    let mut hist = vec![0.0; cells_x * cells_y * bins];
    for y in 0..g.height {
        let cy = y / cfg.cell_size;
        for x in 0..g.width {
            let mag = g.magnitude[y * g.width + x];
            if mag == 0.0 {
                continue;
            }
            let cell = &mut hist[(cy * cells_x + x / cfg.cell_size) * bins..][..bins];
            let pos = g.orientation[y * g.width + x] / bin_width - 0.5;
            let lower = pos.floor();
            let frac = pos - lower;
            let lo = (lower as i64).rem_euclid(bins as i64) as usize;
            let hi = (lo + 1) % bins;
            cell[lo] += mag * (1.0 - frac);
            cell[hi] += mag * frac;
        }
    }
    hist
}

fn l2_hys(block: &mut [f64], clip: f64) {
    let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in block.iter_mut() {
        *v = (*v / (norm + NORM_EPS)).min(clip);
    }
    let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in block.iter_mut() {
        *v /= norm + NORM_EPS;
    }
}

pub fn hog_descriptor(t: &GrayTensor, cfg: &HogConfig) -> Result<FeatureVector, HogError> {
    let (cells_x, cells_y) = cfg.cell_grid(t.width(), t.height())?;
    let grads = compute_gradients(t)?;
    let hist = cell_histograms(&grads, cfg, cells_x, cells_y);
    let (bx, by) = (cfg.blocks_along(cells_x), cfg.blocks_along(cells_y));
    let block_len = cfg.block_size * cfg.block_size * cfg.bins;
    let mut out = Vec::with_capacity(bx * by * block_len);
    let mut block = Vec::with_capacity(block_len);
    for j in 0..by {
        for i in 0..bx {
            block.clear();
            for dy in 0..cfg.block_size {
                for dx in 0..cfg.block_size {
                    let cell = (j * cfg.block_stride + dy) * cells_x + i * cfg.block_stride + dx;
                    block.extend_from_slice(&hist[cell * cfg.bins..(cell + 1) * cfg.bins]);
                }
            }
            l2_hys(&mut block, cfg.clip);
            out.extend_from_slice(&block);
        }
    }
    Ok(FeatureVector::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tensor(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> GrayTensor {
        let values = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        GrayTensor::new(w, h, values).unwrap()
    }

    #[test]
    fn constant_image_has_zero_gradient_and_descriptor() {
        let t = tensor(16, 16, |_, _| 0.37);
        let g = compute_gradients(&t).unwrap();
        assert!(g.magnitude.iter().all(|&m| m == 0.0));
        let d = hog_descriptor(&t, &HogConfig::default()).unwrap();
        assert_eq!(d.dim(), 9 * 4);
        assert!(d.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_edge() {
        let t = tensor(6, 5, |x, _| if x < 3 { 0.0 } else { 1.0 });
        let g = compute_gradients(&t).unwrap();
        for y in 0..5 {
            for x in 0..6 {
                let m = g.magnitude[y * 6 + x];
                if x == 2 || x == 3 {
                    assert_eq!(m, 1.0);
                    assert_eq!(g.orientation[y * 6 + x], 0.0);
                } else {
                    assert_eq!(m, 0.0);
                }
            }
        }
    }

    #[test]
    fn single_bright_pixel_matches_hand_oracle() {
        // gx[y][x] = v[y][x+1] - v[y][x-1], gy[y][x] = v[y+1][x] - v[y-1][x]
        // with v = 1 only at (2, 2): nonzero at (1,2) gx=+1, (3,2) gx=-1,
        // (2,1) gy=+1, (2,3) gy=-1, all magnitude 1.
        let t = tensor(5, 5, |x, y| if (x, y) == (2, 2) { 1.0 } else { 0.0 });
        let g = compute_gradients(&t).unwrap();
        #[rustfmt::skip]
        let expected_mag = [
            0., 0., 0., 0., 0.,
            0., 0., 1., 0., 0.,
            0., 1., 0., 1., 0.,
            0., 0., 1., 0., 0.,
            0., 0., 0., 0., 0.,
        ];
        assert_eq!(g.magnitude, expected_mag.to_vec());
        let ori = |x: usize, y: usize| g.orientation[y * 5 + x];
        assert_eq!(ori(1, 2), 0.0);
        assert_eq!(ori(3, 2), 0.0); // 180 folds onto 0
        assert_eq!(ori(2, 1), 90.0);
        assert_eq!(ori(2, 3), 90.0); // -90 folds onto 90
    }

    #[test]
    fn default_descriptor_length_for_64() {
        assert_eq!(HogConfig::default().descriptor_len(64, 64).unwrap(), 1764);
        let t = tensor(64, 64, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        assert_eq!(
            hog_descriptor(&t, &HogConfig::default()).unwrap().dim(),
            1764
        );
    }

    #[test]
    fn errors() {
        let small = tensor(2, 8, |_, _| 0.0);
        assert!(matches!(
            compute_gradients(&small),
            Err(HogError::ImageTooSmall { .. })
        ));
        let odd = tensor(20, 16, |_, _| 0.0);
        assert!(matches!(
            hog_descriptor(&odd, &HogConfig::default()),
            Err(HogError::DimsNotDivisible { .. })
        ));
        let one_cell = tensor(8, 8, |_, _| 0.0);
        assert!(matches!(
            hog_descriptor(&one_cell, &HogConfig::default()),
            Err(HogError::ImageTooSmall { .. })
        ));
        let bad = HogConfig {
            clip: 0.0,
            ..HogConfig::default()
        };
        assert!(matches!(bad.validate(), Err(HogError::InvalidConfig(_))));
    }

    #[test]
    fn orientation_interpolates_between_nearest_bins() {
        // horizontal ramp: gx constant, gy 0, orientation 0 -> halfway between
        // bin 8 (170 deg centre) and bin 0 (10 deg centre), wrapping.
        let cfg = HogConfig {
            cell_size: 4,
            block_size: 1,
            block_stride: 1,
            bins: 9,
            clip: 1.0,
        };
        let t = tensor(4, 4, |x, _| x as f64 / 8.0);
        let g = compute_gradients(&t).unwrap();
        let hist = cell_histograms(&g, &cfg, 1, 1);
        assert!((hist[0] - hist[8]).abs() < 1e-15);
        assert!(hist[1..8].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn translation_by_one_cell_shifts_blocks() {
        let blob = |x: f64, y: f64| {
            let d = ((x - 20.0).powi(2) + (y - 27.0).powi(2)).sqrt();
            (1.0 - (d / 9.0)).clamp(0.0, 1.0) * 0.8 + 0.1 * ((x + 2.0 * y) / 40.0).sin().abs()
        };
        let base = tensor(64, 64, |x, y| {
            if x < 48 {
                blob(x as f64, y as f64)
            } else {
                0.0
            }
        });
        let shifted = tensor(64, 64, |x, y| {
            if (8..56).contains(&x) {
                blob(x as f64 - 8.0, y as f64)
            } else {
                0.0
            }
        });
        // Keep the shifted-out columns flat in both so only interior content matters.
        let cfg = HogConfig::default();
        let a = hog_descriptor(&base, &cfg).unwrap();
        let b = hog_descriptor(&shifted, &cfg).unwrap();
        let block_len = 36;
        let bx = 7;
        for j in 1..6 {
            for i in 1..5 {
                let src = &a.values()[(j * bx + i) * block_len..][..block_len];
                let dst = &b.values()[(j * bx + i + 1) * block_len..][..block_len];
                for (p, q) in src.iter().zip(dst) {
                    assert!((p - q).abs() < 1e-9, "block ({i},{j})");
                }
            }
        }
    }

    fn arb_tensor(side: usize) -> impl Strategy<Value = GrayTensor> {
        proptest::collection::vec(0.0f64..=1.0, side * side)
            .prop_map(move |v| GrayTensor::new(side, side, v).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn entries_in_unit_interval(t in arb_tensor(32)) {
            let d = hog_descriptor(&t, &HogConfig::default()).unwrap();
            prop_assert!(d.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn length_formula(cell in 2usize..6, block in 1usize..4, stride in 1usize..3, bins in 2usize..12, ncell in 4usize..9) {
            let cfg = HogConfig { cell_size: cell, block_size: block, block_stride: stride, bins, clip: 0.2 };
            let side = cell * ncell;
            prop_assume!(side >= 3 && ncell >= block);
            let t = GrayTensor::new(side, side, vec![0.5; side * side]).unwrap();
            let d = hog_descriptor(&t, &cfg).unwrap();
            let per_side = (ncell - block + stride) / stride;
            prop_assert_eq!(d.dim(), per_side * per_side * block * block * bins);
        }

        #[test]
        fn uniform_gain_is_cancelled(t in arb_tensor(24)) {
            let half = GrayTensor::new(24, 24, t.values().iter().map(|v| v * 0.5).collect()).unwrap();
            let cfg = HogConfig::default();
            let a = hog_descriptor(&t, &cfg).unwrap();
            let b = hog_descriptor(&half, &cfg).unwrap();
            for (p, q) in a.values().iter().zip(b.values()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }
}
