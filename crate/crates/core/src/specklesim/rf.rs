use ndarray::Array2;

use super::filter::LowPass;
use super::{ScattererPhantom, SimConfig};
use crate::error::{QusError, Result};

/// PSF support in sigmas.
const PSF_TRUNCATION: f64 = 4.0;
const DECIMATION_FILTER_ORDER: usize = 8;
/// Anti-alias cutoff as a fraction of the post-decimation Nyquist frequency.
const DECIMATION_CUTOFF: f64 = 0.45;

#[derive(Debug, Clone, PartialEq)]
pub struct RfFrame {
    /// axial x lateral
    pub samples: Array2<f64>,
    pub axial_freq_hz: f64,
    pub lateral_spacing_mm: f64,
}

impl RfFrame {
    pub fn rows(&self) -> usize {
        self.samples.nrows()
    }

    pub fn cols(&self) -> usize {
        self.samples.ncols()
    }
}

/// Axial pulse shape: Gaussian envelope times the carrier cosine.
pub(crate) fn axial_pulse(cfg: &SimConfig, dz_mm: f64) -> f64 {
    let s = cfg.psf_axial_sigma_mm;
    (-0.5 * dz_mm * dz_mm / (s * s)).exp() * (cfg.axial_wavenumber() * dz_mm).cos()
}

pub(crate) fn lateral_profile(sigma: f64, dx_mm: f64) -> f64 {
    (-0.5 * dx_mm * dx_mm / (sigma * sigma)).exp()
}

/// Synthesizes the RF frame of a phantom at `sample_freq_hz`, then low-pass
/// filters and decimates each A-line to `downsample_freq_hz`.
pub fn synthesize_rf(phantom: &ScattererPhantom, cfg: &SimConfig) -> Result<RfFrame> {
    if phantom.is_empty() {
        return Err(QusError::invalid("phantom has no scatterers"));
    }
    if phantom.positions.len() != phantom.amplitudes.len() {
        return Err(QusError::invalid("positions and amplitudes differ in length"));
    }
    cfg.validate()?;

    let dz = cfg.acquisition_pitch_mm();
    let rows_hi = (cfg.phantom_depth_mm / dz).floor() as usize;
    let cols = cfg.lateral_lines();
    let sigma_ax = cfg.psf_axial_sigma_mm;
    let half_ax = PSF_TRUNCATION * sigma_ax;

    // column-major accumulation buffer: one contiguous A-line per column
    let mut lines = vec![0.0f64; rows_hi * cols];
    let mut taps = Vec::new();
    let mut weights = Vec::new();

    for (&(z, x), &amp) in phantom.positions.iter().zip(&phantom.amplitudes) {
        let i0 = ((z - half_ax) / dz).ceil().max(0.0) as usize;
        let i1 = (((z + half_ax) / dz).floor() as isize).min(rows_hi as isize - 1);
        if i1 < i0 as isize {
            continue;
        }
        let i1 = i1 as usize;
        taps.clear();
        taps.extend((i0..=i1).map(|i| axial_pulse(cfg, i as f64 * dz - z)));

        let sigma_lat = cfg.lateral_sigma_at(z);
        let half_lat = PSF_TRUNCATION * sigma_lat;
        let c0 = ((x - half_lat) / cfg.lateral_spacing_mm - 0.5).ceil().max(0.0) as usize;
        let c1 = (((x + half_lat) / cfg.lateral_spacing_mm - 0.5).floor() as isize)
            .min(cols as isize - 1);
        if c1 < c0 as isize {
            continue;
        }
        weights.clear();
        weights.extend(
            (c0..=c1 as usize).map(|c| amp * lateral_profile(sigma_lat, cfg.line_position_mm(c) - x)),
        );
        for (c, &w) in (c0..).zip(&weights) {
            let line = &mut lines[c * rows_hi + i0..=c * rows_hi + i1];
            for (v, &t) in line.iter_mut().zip(&taps) {
                *v += w * t;
            }
        }
    }

    let factor = cfg.decimation_factor();
    let rows = rows_hi.div_ceil(factor);
    let mut samples = Array2::<f64>::zeros((rows, cols));
    let lowpass = (factor > 1).then(|| {
        LowPass::butterworth(
            DECIMATION_FILTER_ORDER,
            DECIMATION_CUTOFF * cfg.downsample_freq_hz / 2.0,
            cfg.sample_freq_hz,
        )
    });
    for c in 0..cols {
        let line = &mut lines[c * rows_hi..(c + 1) * rows_hi];
        if let Some(lp) = &lowpass {
            lp.filtfilt(line);
        }
        for (r, v) in line.iter().step_by(factor).enumerate() {
            samples[[r, c]] = *v;
        }
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(QusError::numeric("synthesize_rf", "non-finite RF sample"));
    }
    Ok(RfFrame {
        samples,
        axial_freq_hz: cfg.downsample_freq_hz,
        lateral_spacing_mm: cfg.lateral_spacing_mm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specklesim::{generate_phantom, Label};
    use crate::rng::seeded;

    fn small_cfg() -> SimConfig {
        SimConfig {
            phantom_width_mm: 5.0,
            phantom_depth_mm: 6.0,
            depth_varying_psf: false,
            ..SimConfig::default()
        }
    }

    fn single(z: f64, x: f64, a: f64) -> ScattererPhantom {
        ScattererPhantom {
            positions: vec![(z, x)],
            amplitudes: vec![a],
            class_label: Label::Lds,
            density_per_rescell: 1.0,
        }
    }

    #[test]
    fn single_scatterer_reproduces_the_psf() {
        let cfg = small_cfg();
        let dz = cfg.axial_pitch_mm();
        // place the scatterer exactly on a decimated sample and on an A-line
        let row = 200usize;
        let col = 16usize;
        let z = row as f64 * dz;
        let x = cfg.line_position_mm(col);
        let rf = synthesize_rf(&single(z, x, 1.0), &cfg).unwrap();

        let mut template = Array2::<f64>::zeros(rf.samples.raw_dim());
        for ((r, c), v) in template.indexed_iter_mut() {
            *v = axial_pulse(&cfg, r as f64 * dz - z)
                * lateral_profile(cfg.psf_lateral_sigma_mm, cfg.line_position_mm(c) - x);
        }
        let dot: f64 = (&rf.samples * &template).sum();
        let na = rf.samples.mapv(|v| v * v).sum().sqrt();
        let nb = template.mapv(|v| v * v).sum().sqrt();
        let ncc = dot / (na * nb);
        assert!(ncc > 0.999, "normalized correlation {ncc}");
    }

    #[test]
    fn empty_phantom_is_rejected() {
        let p = ScattererPhantom {
            positions: vec![],
            amplitudes: vec![],
            class_label: Label::Lds,
            density_per_rescell: 1.0,
        };
        assert!(matches!(
            synthesize_rf(&p, &small_cfg()),
            Err(QusError::InvalidArgument(_))
        ));
    }

    #[test]
    fn synthesis_is_linear() {
        let cfg = small_cfg();
        let a = generate_phantom(&cfg, 2.0, 0.1, 0.0, &mut seeded(10)).unwrap();
        let b = generate_phantom(&cfg, 3.0, 0.1, 0.0, &mut seeded(11)).unwrap();
        let ra = synthesize_rf(&a, &cfg).unwrap();
        let rb = synthesize_rf(&b, &cfg).unwrap();
        let rab = synthesize_rf(&a.merged(&b), &cfg).unwrap();
        let diff = (&rab.samples - &(&ra.samples + &rb.samples))
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-9, "max deviation {diff}");
    }

    #[test]
    fn frame_dimensions_follow_config() {
        let cfg = small_cfg();
        let rf = synthesize_rf(&single(3.0, 2.5, 1.0), &cfg).unwrap();
        assert_eq!(rf.cols(), 32);
        let rows_hi = (6.0 / cfg.acquisition_pitch_mm()).floor() as usize;
        assert_eq!(rf.rows(), rows_hi.div_ceil(2));
        assert_eq!(rf.axial_freq_hz, 50e6);
    }

    #[test]
    fn identical_seed_is_bit_identical() {
        let cfg = small_cfg();
        let a = generate_phantom(&cfg, 4.0, 0.1, 0.0, &mut seeded(5)).unwrap();
        let b = generate_phantom(&cfg, 4.0, 0.1, 0.0, &mut seeded(5)).unwrap();
        assert_eq!(synthesize_rf(&a, &cfg).unwrap(), synthesize_rf(&b, &cfg).unwrap());
    }
}
