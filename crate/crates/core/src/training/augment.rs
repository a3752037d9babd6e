use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{QusError, Result};
use crate::rng::QusRng;
use crate::specklesim::EnvelopePatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Additive noise standard deviation, relative to the patch's own std.
    pub gaussian_noise_sigma: f64,
    /// Spacing of the displacement control grid, in pixels.
    pub elastic_grid_px: usize,
    /// Standard deviation of control-point displacements, in pixels.
    pub elastic_sigma_px: f64,
    pub flip_lateral_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { gaussian_noise_sigma: 0.05, elastic_grid_px: 32, elastic_sigma_px: 2.0, flip_lateral_prob: 0.5 }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self { gaussian_noise_sigma: 0.0, elastic_grid_px: 32, elastic_sigma_px: 0.0, flip_lateral_prob: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_lateral_prob) {
            return Err(QusError::invalid("flip_lateral_prob must lie in [0, 1]"));
        }
        if !(self.gaussian_noise_sigma >= 0.0) || !(self.elastic_sigma_px >= 0.0) {
            return Err(QusError::invalid("augmentation sigmas must be non-negative"));
        }
        if self.elastic_grid_px == 0 {
            return Err(QusError::invalid("elastic_grid_px must be positive"));
        }
        Ok(())
    }
}

/// Bilinear sample of `img` at fractional (r, c), clamped to the border.
pub fn bilinear(img: &Array2<f64>, r: f64, c: f64) -> f64 {
    let (rows, cols) = img.dim();
    let r = r.clamp(0.0, (rows - 1) as f64);
    let c = c.clamp(0.0, (cols - 1) as f64);
    let r0 = r.floor() as usize;
    let c0 = c.floor() as usize;
    let r1 = (r0 + 1).min(rows - 1);
    let c1 = (c0 + 1).min(cols - 1);
    let fr = r - r0 as f64;
    let fc = c - c0 as f64;
    let top = img[[r0, c0]] * (1.0 - fc) + img[[r0, c1]] * fc;
    let bottom = img[[r1, c0]] * (1.0 - fc) + img[[r1, c1]] * fc;
    top * (1.0 - fr) + bottom * fr
}

/// Dense displacement field interpolated bilinearly from control points
/// every `grid` pixels.
pub fn displacement_field(rows: usize, cols: usize, grid: usize, sigma: f64, rng: &mut QusRng) -> (Array2<f64>, Array2<f64>) {
    let nr = rows.div_ceil(grid) + 1;
    let nc = cols.div_ceil(grid) + 1;
    let mut draw = || Array2::from_shape_simple_fn((nr, nc), || sigma * rng.sample::<f64, _>(StandardNormal));
    let (cr, cc) = (draw(), draw());
    let g = grid as f64;
    let dense = |ctrl: &Array2<f64>| Array2::from_shape_fn((rows, cols), |(r, c)| bilinear(ctrl, r as f64 / g, c as f64 / g));
    (dense(&cr), dense(&cc))
}

/// Resamples `img` at `(r + dr, c + dc)`.
pub fn warp(img: &Array2<f64>, dr: &Array2<f64>, dc: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn(img.dim(), |(r, c)| bilinear(img, r as f64 + dr[[r, c]], c as f64 + dc[[r, c]]))
}

/// Random lateral flip, elastic warp, then additive Gaussian noise clipped at
/// zero. Label, depth and source are kept.
pub fn augment(patch: &EnvelopePatch, cfg: &AugmentConfig, rng: &mut QusRng) -> EnvelopePatch {
    let mut values = if cfg.flip_lateral_prob > 0.0 && rng.random::<f64>() < cfg.flip_lateral_prob {
        let mut v = patch.values.clone();
        v.invert_axis(ndarray::Axis(1));
        v.as_standard_layout().into_owned()
    } else {
        patch.values.clone()
    };
    let (rows, cols) = values.dim();
    if cfg.elastic_sigma_px > 0.0 {
        let (dr, dc) = displacement_field(rows, cols, cfg.elastic_grid_px, cfg.elastic_sigma_px, rng);
        values = warp(&values, &dr, &dc);
    }
    if cfg.gaussian_noise_sigma > 0.0 {
        let n = values.len() as f64;
        let mean = values.sum() / n;
        let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let s = cfg.gaussian_noise_sigma * std;
        values.mapv_inplace(|v| (v + s * rng.sample::<f64, _>(StandardNormal)).max(0.0));
    }
    EnvelopePatch {
        values,
        label: patch.label,
        depth_mm: patch.depth_mm,
        source_id: patch.source_id.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::specklesim::Label;

    fn patch(seed: u64) -> EnvelopePatch {
        let mut rng = seeded(seed);
        let v = Array2::from_shape_simple_fn((64, 32), || rng.random::<f64>() * 3.0);
        EnvelopePatch::new(v, Label::Fds, 4.0, "p").unwrap()
    }

    #[test]
    fn identity_config_returns_input() {
        let p = patch(1);
        let out = augment(&p, &AugmentConfig::identity(), &mut seeded(2));
        assert_eq!(out, p);
    }

    #[test]
    fn zero_displacement_warp_is_identity() {
        let p = patch(3);
        let z = Array2::zeros(p.values.dim());
        let w = warp(&p.values, &z, &z);
        assert!(w.iter().zip(p.values.iter()).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn flip_only_is_an_involution() {
        let p = patch(4);
        let cfg = AugmentConfig { flip_lateral_prob: 1.0, ..AugmentConfig::identity() };
        let once = augment(&p, &cfg, &mut seeded(5));
        assert_eq!(once, p.flipped_lateral());
        assert_eq!(augment(&once, &cfg, &mut seeded(5)), p);
    }

    #[test]
    fn full_augmentation_keeps_shape_label_and_sign() {
        let p = patch(6);
        let out = augment(&p, &AugmentConfig::default(), &mut seeded(7));
        assert_eq!(out.shape(), p.shape());
        assert_eq!(out.label, p.label);
        assert!(out.values.iter().all(|&v| v >= 0.0 && v.is_finite()));
        assert_ne!(out.values, p.values);
    }

    #[test]
    fn constant_displacement_shifts_content() {
        let img = Array2::from_shape_fn((8, 8), |(r, c)| (r * 8 + c) as f64);
        let dr = Array2::from_elem((8, 8), 1.0);
        let dc = Array2::zeros((8, 8));
        let w = warp(&img, &dr, &dc);
        assert_eq!(w[[2, 3]], img[[3, 3]]);
        assert_eq!(w[[7, 3]], img[[7, 3]]);
    }
}
