use ndarray::{s, Array2};
use rand::Rng;

use super::Label;
use crate::error::{QusError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopePatch {
    /// Envelope samples, axial x lateral, all non-negative.
    pub values: Array2<f64>,
    pub label: Label,
    /// Depth of the top row.
    pub depth_mm: f64,
    pub source_id: String,
}

impl EnvelopePatch {
    pub fn new(values: Array2<f64>, label: Label, depth_mm: f64, source_id: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(QusError::invalid("empty patch"));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(QusError::invalid(format!("envelope sample {v} is not a finite non-negative value")));
        }
        Ok(Self {
            values,
            label,
            depth_mm,
            source_id: source_id.into(),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Same patch mirrored along the lateral axis.
    pub fn flipped_lateral(&self) -> Self {
        Self {
            values: self.values.slice(s![.., ..;-1]).to_owned(),
            ..self.clone()
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.mapv(|v| v * factor),
            ..self.clone()
        }
    }
}

/// Crops `count` patches at uniformly random offsets of an envelope grid.
pub fn extract_patches<R: Rng + ?Sized>(
    env: &Array2<f64>,
    label: Label,
    count: usize,
    patch_shape: (usize, usize),
    axial_pitch_mm: f64,
    source_id: &str,
    rng: &mut R,
) -> Result<Vec<EnvelopePatch>> {
    let (rows, cols) = env.dim();
    let (pr, pc) = patch_shape;
    if count == 0 {
        return Err(QusError::invalid("patch count must be at least 1"));
    }
    if pr == 0 || pc == 0 || rows < pr || cols < pc {
        return Err(QusError::invalid(format!(
            "grid {rows}x{cols} cannot hold a {pr}x{pc} patch"
        )));
    }
    (0..count)
        .map(|_| {
            let r = rng.random_range(0..=rows - pr);
            let c = rng.random_range(0..=cols - pc);
            let values = env.slice(s![r..r + pr, c..c + pc]).to_owned();
            EnvelopePatch::new(values, label, r as f64 * axial_pitch_mm, source_id)
        })
        .collect()
}
