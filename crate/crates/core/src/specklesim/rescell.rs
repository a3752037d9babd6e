use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::SimConfig;
use crate::error::{QusError, Result};

const WINDOW_ROWS: usize = 256;
const MIN_ROWS: usize = 64;
const MIN_COLS: usize = 16;
/// -6 dB in amplitude.
const HALF_LEVEL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionCellEstimate {
    pub area_mm2: f64,
    pub axial_extent_mm: f64,
    pub lateral_extent_mm: f64,
    pub depth_mm: f64,
}

/// Normalized autocovariance of a mean-removed region along one axis.
fn autocorrelation(region: &ArrayView2<f64>, axial: bool, max_lag: usize) -> Vec<f64> {
    let (rows, cols) = region.dim();
    (0..=max_lag)
        .map(|lag| {
            let mut acc = 0.0;
            if axial {
                for r in 0..rows - lag {
                    for c in 0..cols {
                        acc += region[[r, c]] * region[[r + lag, c]];
                    }
                }
            } else {
                for r in 0..rows {
                    for c in 0..cols - lag {
                        acc += region[[r, c]] * region[[r, c + lag]];
                    }
                }
            }
            acc
        })
        .collect()
}

/// Lag (in samples, fractional) where the normalized correlation first falls to one half.
fn half_width(corr: &[f64]) -> Option<f64> {
    let r0 = corr[0];
    corr.windows(2).enumerate().find_map(|(k, w)| {
        let (a, b) = (w[0] / r0, w[1] / r0);
        (b <= HALF_LEVEL).then(|| k as f64 + (a - HALF_LEVEL) / (a - b))
    })
}

/// Resolution-cell size around `depth_mm` from the -6 dB widths of the
/// envelope autocorrelation: full widths along each axis, area = pi/4 times
/// their product.
pub fn estimate_resolution_cell(
    env: &Array2<f64>,
    cfg: &SimConfig,
    depth_mm: f64,
) -> Result<ResolutionCellEstimate> {
    let (rows, cols) = env.dim();
    let pitch = cfg.axial_pitch_mm();
    let center = (depth_mm / pitch).round().max(0.0) as usize;
    let half = WINDOW_ROWS / 2;
    let r0 = center.saturating_sub(half).min(rows.saturating_sub(WINDOW_ROWS));
    let r1 = (r0 + WINDOW_ROWS).min(rows);
    if r1 - r0 < MIN_ROWS || cols < MIN_COLS {
        return Err(QusError::invalid(format!(
            "resolution-cell region is {}x{cols}, need at least {MIN_ROWS}x{MIN_COLS}",
            r1 - r0
        )));
    }
    let region = env.slice(s![r0..r1, ..]);
    let mean = region.mean().unwrap_or(0.0);
    let centered = region.mapv(|v| v - mean);
    let view = centered.view();

    let ax_corr = autocorrelation(&view, true, (r1 - r0) / 4);
    let lat_corr = autocorrelation(&view, false, cols / 4);
    if ax_corr[0] <= 0.0 {
        return Err(QusError::degenerate("envelope region has zero variance"));
    }
    let ax_lag = half_width(&ax_corr)
        .ok_or_else(|| QusError::degenerate("axial correlation never drops to -6 dB"))?;
    let lat_lag = half_width(&lat_corr)
        .ok_or_else(|| QusError::degenerate("lateral correlation never drops to -6 dB"))?;

    let axial_extent_mm = 2.0 * ax_lag * pitch;
    let lateral_extent_mm = 2.0 * lat_lag * cfg.lateral_spacing_mm;
    Ok(ResolutionCellEstimate {
        area_mm2: std::f64::consts::FRAC_PI_4 * axial_extent_mm * lateral_extent_mm,
        axial_extent_mm,
        lateral_extent_mm,
        depth_mm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::specklesim::{compute_envelope, generate_phantom, synthesize_rf, GAUSSIAN_FWHM_PER_SIGMA};
    use rand::Rng;

    fn cfg() -> SimConfig {
        SimConfig {
            phantom_width_mm: 12.0,
            phantom_depth_mm: 8.0,
            depth_varying_psf: false,
            ..SimConfig::default()
        }
    }

    fn dense_envelope(cfg: &SimConfig, seed: u64) -> Array2<f64> {
        let p = generate_phantom(cfg, 20.0, cfg.focal_rescell_area_mm2(), 0.0, &mut seeded(seed)).unwrap();
        compute_envelope(&synthesize_rf(&p, cfg).unwrap()).unwrap()
    }

    #[test]
    fn dense_speckle_matches_gaussian_autocorrelation_width() {
        let cfg = cfg();
        let env = dense_envelope(&cfg, 1);
        let est = estimate_resolution_cell(&env, &cfg, 4.0).unwrap();
        // envelope autocovariance ~ |field correlation|^2 = exp(-d^2 / (2 sigma^2))
        let ax = GAUSSIAN_FWHM_PER_SIGMA * cfg.psf_axial_sigma_mm;
        let lat = GAUSSIAN_FWHM_PER_SIGMA * cfg.psf_lateral_sigma_mm;
        assert!((est.axial_extent_mm / ax - 1.0).abs() < 0.2, "{est:?} vs {ax}");
        assert!((est.lateral_extent_mm / lat - 1.0).abs() < 0.2, "{est:?} vs {lat}");
        let ratio = est.area_mm2 / (std::f64::consts::FRAC_PI_4 * est.axial_extent_mm * est.lateral_extent_mm);
        assert!((ratio - 1.0).abs() < 0.01);
    }

    #[test]
    fn doubling_axial_sigma_doubles_axial_extent() {
        let base = cfg();
        let wide = SimConfig {
            psf_axial_sigma_mm: 2.0 * base.psf_axial_sigma_mm,
            ..base.clone()
        };
        let a = estimate_resolution_cell(&dense_envelope(&base, 2), &base, 4.0).unwrap();
        let b = estimate_resolution_cell(&dense_envelope(&wide, 2), &wide, 4.0).unwrap();
        let ratio = b.axial_extent_mm / a.axial_extent_mm;
        assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn white_noise_has_single_sample_extent() {
        let cfg = cfg();
        let mut rng = seeded(3);
        let env = Array2::from_shape_fn((256, 64), |_| rng.random::<f64>() + 0.1);
        let est = estimate_resolution_cell(&env, &cfg, 1.0).unwrap();
        assert!((est.axial_extent_mm / cfg.axial_pitch_mm() - 1.0).abs() < 0.1);
        assert!((est.lateral_extent_mm / cfg.lateral_spacing_mm - 1.0).abs() < 0.1);
    }

    #[test]
    fn small_region_is_rejected() {
        let env = Array2::from_elem((40, 40), 1.0);
        assert!(matches!(
            estimate_resolution_cell(&env, &cfg(), 0.1),
            Err(QusError::InvalidArgument(_))
        ));
        let env = Array2::from_elem((300, 8), 1.0);
        assert!(estimate_resolution_cell(&env, &cfg(), 1.0).is_err());
    }
}
