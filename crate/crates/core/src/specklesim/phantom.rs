use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Label, SimConfig};
use crate::error::{QusError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScattererPhantom {
    /// (axial_mm, lateral_mm)
    pub positions: Vec<(f64, f64)>,
    pub amplitudes: Vec<f64>,
    pub class_label: Label,
    pub density_per_rescell: f64,
}

impl ScattererPhantom {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Union of two scatterer sets. The label follows the summed density.
    pub fn merged(&self, other: &ScattererPhantom) -> ScattererPhantom {
        let density = self.density_per_rescell + other.density_per_rescell;
        ScattererPhantom {
            positions: self.positions.iter().chain(&other.positions).copied().collect(),
            amplitudes: self.amplitudes.iter().chain(&other.amplitudes).copied().collect(),
            class_label: Label::from_density(density),
            density_per_rescell: density,
        }
    }
}

/// Scatters `density_per_rescell * phantom_area / rescell_area_mm2` point
/// scatterers uniformly over the phantom with standard-normal amplitudes.
///
/// `density_jitter` is a relative half-width: the effective density is drawn
/// uniformly from `density * [1 - jitter, 1 + jitter]` once per phantom.
pub fn generate_phantom<R: Rng + ?Sized>(
    cfg: &SimConfig,
    density_per_rescell: f64,
    rescell_area_mm2: f64,
    density_jitter: f64,
    rng: &mut R,
) -> Result<ScattererPhantom> {
    if !(density_per_rescell.is_finite() && density_per_rescell > 0.0) {
        return Err(QusError::invalid(format!(
            "density_per_rescell must be positive, got {density_per_rescell}"
        )));
    }
    if !(rescell_area_mm2.is_finite() && rescell_area_mm2 > 0.0) {
        return Err(QusError::invalid(format!(
            "rescell_area_mm2 must be positive, got {rescell_area_mm2}"
        )));
    }
    if !(0.0..1.0).contains(&density_jitter) {
        return Err(QusError::invalid("density_jitter must lie in [0, 1)"));
    }
    cfg.validate()?;

    let density = if density_jitter > 0.0 {
        density_per_rescell * rng.random_range(1.0 - density_jitter..=1.0 + density_jitter)
    } else {
        density_per_rescell
    };
    let area = cfg.phantom_width_mm * cfg.phantom_depth_mm;
    let count = (density * area / rescell_area_mm2).round() as usize;

    let mut positions = Vec::with_capacity(count);
    let mut amplitudes = Vec::with_capacity(count);
    for _ in 0..count {
        let z = rng.random::<f64>() * cfg.phantom_depth_mm;
        let x = rng.random::<f64>() * cfg.phantom_width_mm;
        positions.push((z, x));
        amplitudes.push(rng.sample::<f64, _>(StandardNormal));
    }
    Ok(ScattererPhantom {
        positions,
        amplitudes,
        class_label: Label::from_density(density),
        density_per_rescell: density,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn count_matches_expectation() {
        let cfg = SimConfig::default();
        let p = generate_phantom(&cfg, 16.0, 0.1, 0.0, &mut seeded(1)).unwrap();
        assert_eq!(p.len(), 144_000);
        assert_eq!(p.class_label, Label::Fds);
        assert!(p
            .positions
            .iter()
            .all(|&(z, x)| (0.0..30.0).contains(&z) && (0.0..30.0).contains(&x)));
    }

    #[test]
    fn low_density_is_lds() {
        let cfg = SimConfig::default();
        let p = generate_phantom(&cfg, 2.0, 0.1, 0.0, &mut seeded(2)).unwrap();
        assert_eq!(p.class_label, Label::Lds);
        assert_eq!(p.len(), 18_000);
    }

    #[test]
    fn jittered_density_stays_within_ten_percent() {
        let cfg = SimConfig {
            phantom_width_mm: 2.0,
            phantom_depth_mm: 2.0,
            ..SimConfig::default()
        };
        let mut rng = seeded(3);
        for _ in 0..200 {
            let p = generate_phantom(&cfg, 2.0, 0.1, 0.1, &mut rng).unwrap();
            assert!((1.8..=2.2).contains(&p.density_per_rescell));
            assert_eq!(p.class_label, Label::Lds);
        }
    }

    #[test]
    fn rejects_non_positive_inputs() {
        let cfg = SimConfig::default();
        assert!(generate_phantom(&cfg, 0.0, 0.1, 0.0, &mut seeded(0)).is_err());
        assert!(generate_phantom(&cfg, 2.0, -1.0, 0.0, &mut seeded(0)).is_err());
    }
}
