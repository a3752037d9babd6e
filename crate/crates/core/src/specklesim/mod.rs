//! Point-scatterer speckle simulation.
//!
//! Phantoms are random point-scatterer fields; RF frames are produced by
//! splatting a separable Gaussian-enveloped cosine point spread function at
//! the acquisition rate, low-pass filtering and decimating to the working
//! rate. The envelope is the magnitude of the per-A-line analytic signal.

mod dataset;
mod envelope;
mod filter;
mod patches;
mod phantom;
mod rescell;
mod rf;
pub mod store;

use serde::{Deserialize, Serialize};

use crate::error::{QusError, Result};

pub use dataset::{
    build_dataset, load_split, read_manifest, DatasetConfig, FrameEntry, Manifest, SplitInfo,
    SPLITS,
};
pub use envelope::{analytic_magnitude, compute_envelope};
pub use patches::{extract_patches, EnvelopePatch};
pub use phantom::{generate_phantom, ScattererPhantom};
pub use rescell::{estimate_resolution_cell, ResolutionCellEstimate};
pub use rf::{synthesize_rf, RfFrame};

/// Full width at half maximum of `exp(-x^2 / (2 sigma^2))`, in units of sigma.
pub const GAUSSIAN_FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Scatterer-per-cell density at or above which a region is fully developed speckle.
pub const FDS_DENSITY_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Lds,
    Fds,
    Unknown,
}

impl Label {
    pub fn from_density(density_per_rescell: f64) -> Self {
        if density_per_rescell >= FDS_DENSITY_THRESHOLD {
            Label::Fds
        } else {
            Label::Lds
        }
    }

    /// Byte used in patch stores: 0 = LDS, 1 = FDS, 255 = unknown.
    pub fn to_byte(self) -> u8 {
        match self {
            Label::Lds => 0,
            Label::Fds => 1,
            Label::Unknown => 255,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Label::Lds),
            1 => Some(Label::Fds),
            255 => Some(Label::Unknown),
            _ => None,
        }
    }

    /// 1.0 for FDS, 0.0 for LDS.
    pub fn target(self) -> Option<f64> {
        match self {
            Label::Fds => Some(1.0),
            Label::Lds => Some(0.0),
            Label::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Lateral extent.
    pub phantom_width_mm: f64,
    /// Axial extent.
    pub phantom_depth_mm: f64,
    pub center_freq_hz: f64,
    pub sample_freq_hz: f64,
    pub downsample_freq_hz: f64,
    pub sound_speed_m_s: f64,
    pub lateral_spacing_mm: f64,
    pub psf_axial_sigma_mm: f64,
    /// Lateral sigma at the focal depth.
    pub psf_lateral_sigma_mm: f64,
    pub depth_varying_psf: bool,
    pub focal_depth_mm: f64,
    /// Relative growth of the lateral sigma per mm of distance from focus.
    pub psf_broadening_per_mm: f64,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            phantom_width_mm: 30.0,
            phantom_depth_mm: 30.0,
            center_freq_hz: 6.67e6,
            sample_freq_hz: 100e6,
            downsample_freq_hz: 50e6,
            sound_speed_m_s: 1540.0,
            lateral_spacing_mm: 0.156_25,
            // (pi/4) * fwhm_ax * fwhm_lat = 0.1 mm^2 at the focus
            psf_axial_sigma_mm: 0.1148,
            psf_lateral_sigma_mm: 0.2,
            depth_varying_psf: true,
            focal_depth_mm: 15.0,
            psf_broadening_per_mm: 0.2,
            rng_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("phantom_width_mm", self.phantom_width_mm),
            ("phantom_depth_mm", self.phantom_depth_mm),
            ("center_freq_hz", self.center_freq_hz),
            ("sample_freq_hz", self.sample_freq_hz),
            ("downsample_freq_hz", self.downsample_freq_hz),
            ("sound_speed_m_s", self.sound_speed_m_s),
            ("lateral_spacing_mm", self.lateral_spacing_mm),
            ("psf_axial_sigma_mm", self.psf_axial_sigma_mm),
            ("psf_lateral_sigma_mm", self.psf_lateral_sigma_mm),
        ];
        for (name, v) in positives {
            if !(v.is_finite() && v > 0.0) {
                return Err(QusError::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.psf_broadening_per_mm.is_finite() && self.psf_broadening_per_mm >= 0.0) {
            return Err(QusError::invalid("psf_broadening_per_mm must be >= 0"));
        }
        let ratio = self.sample_freq_hz / self.downsample_freq_hz;
        if ratio < 1.0 || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(QusError::invalid(format!(
                "downsample_freq_hz ({}) must divide sample_freq_hz ({})",
                self.downsample_freq_hz, self.sample_freq_hz
            )));
        }
        Ok(())
    }

    pub fn decimation_factor(&self) -> usize {
        (self.sample_freq_hz / self.downsample_freq_hz).round() as usize
    }

    /// Axial sample pitch at the acquisition rate, in mm.
    pub fn acquisition_pitch_mm(&self) -> f64 {
        self.sound_speed_m_s / (2.0 * self.sample_freq_hz) * 1e3
    }

    /// Axial sample pitch after decimation, in mm.
    pub fn axial_pitch_mm(&self) -> f64 {
        self.sound_speed_m_s / (2.0 * self.downsample_freq_hz) * 1e3
    }

    /// Carrier wavenumber along depth (two-way travel), rad/mm.
    pub fn axial_wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI * 2.0 * self.center_freq_hz / (self.sound_speed_m_s * 1e3)
    }

    pub fn lateral_sigma_at(&self, depth_mm: f64) -> f64 {
        if self.depth_varying_psf {
            self.psf_lateral_sigma_mm
                * (1.0 + self.psf_broadening_per_mm * (depth_mm - self.focal_depth_mm).abs())
        } else {
            self.psf_lateral_sigma_mm
        }
    }

    /// Number of A-lines.
    pub fn lateral_lines(&self) -> usize {
        (self.phantom_width_mm / self.lateral_spacing_mm).round().max(1.0) as usize
    }

    pub fn line_position_mm(&self, col: usize) -> f64 {
        (col as f64 + 0.5) * self.lateral_spacing_mm
    }

    /// Resolution-cell area at `depth_mm` implied by the PSF: pi/4 times the
    /// product of the -6 dB widths of the speckle envelope autocorrelation.
    pub fn rescell_area_at(&self, depth_mm: f64) -> f64 {
        let ax = GAUSSIAN_FWHM_PER_SIGMA * self.psf_axial_sigma_mm;
        let lat = GAUSSIAN_FWHM_PER_SIGMA * self.lateral_sigma_at(depth_mm);
        std::f64::consts::FRAC_PI_4 * ax * lat
    }

    pub fn focal_rescell_area_mm2(&self) -> f64 {
        let ax = GAUSSIAN_FWHM_PER_SIGMA * self.psf_axial_sigma_mm;
        let lat = GAUSSIAN_FWHM_PER_SIGMA * self.psf_lateral_sigma_mm;
        std::f64::consts::FRAC_PI_4 * ax * lat
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_focal_cell_is_a_tenth_of_a_square_mm() {
        let area = SimConfig::default().focal_rescell_area_mm2();
        assert!((area - 0.1).abs() < 1e-3, "{area}");
    }

    #[test]
    fn default_patch_spans_five_mm_laterally() {
        let cfg = SimConfig::default();
        assert!((cfg.lateral_spacing_mm * 32.0 - 5.0).abs() < 1e-12);
        assert_eq!(cfg.decimation_factor(), 2);
    }

    #[test]
    fn rejects_non_dividing_rates() {
        let cfg = SimConfig {
            downsample_freq_hz: 30e6,
            ..SimConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(QusError::InvalidArgument(_))));
    }

    #[test]
    fn label_follows_density_threshold() {
        assert_eq!(Label::from_density(16.0), Label::Fds);
        assert_eq!(Label::from_density(10.0), Label::Fds);
        assert_eq!(Label::from_density(2.0), Label::Lds);
        for l in [Label::Lds, Label::Fds, Label::Unknown] {
            assert_eq!(Label::from_byte(l.to_byte()), Some(l));
        }
    }
}
