//! Neural classifiers trained with exact backpropagation: a feature MLP, a
//! residual CNN over envelope channels, and a fusion of the two.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod cnn;
mod fusion;
pub mod input;
pub mod layers;
mod mlp;

use ndarray::{Array1, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{QusError, Result};
use crate::rng::{self, QusRng};

pub use adam::AdamState;
pub use cnn::{CnnConfig, CnnModel, ResBlock};
pub use fusion::{build_fusion, FusionConfig, FusionModel};
pub use input::{make_batch, make_input, ChannelMode};
pub use mlp::{feature_matrix, MlpConfig, MlpModel};

/// Probability clamp used by the loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and active dropout.
    Train,
    /// Running statistics, no dropout.
    Infer,
}

/// Mutable view of one parameter tensor. `grad` is `None` for buffers
/// (batch-norm running statistics) and for frozen parameters.
pub struct ParamRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: &'a mut [f64],
    pub grad: Option<&'a mut [f64]>,
}

/// Model inputs for one mini-batch. CNNs read `images` (N, C, H, W), MLPs read
/// normalized `features` (N, 4), fusion models read both.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub images: Option<Array4<f64>>,
    pub features: Option<Array2<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.images
            .as_ref()
            .map(|x| x.dim().0)
            .or_else(|| self.features.as_ref().map(|f| f.nrows()))
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn images(&self) -> Result<&Array4<f64>> {
        self.images
            .as_ref()
            .ok_or_else(|| QusError::invalid("model needs image input"))
    }

    pub(crate) fn features(&self) -> Result<&Array2<f64>> {
        self.features
            .as_ref()
            .ok_or_else(|| QusError::invalid("model needs feature input"))
    }
}

pub trait Network {
    /// Logits, one per sample.
    fn forward(&mut self, batch: &Batch, mode: Mode, rng: &mut QusRng) -> Result<Array1<f64>>;

    /// Back-propagates d(loss)/d(logits) from the most recent forward call,
    /// accumulating into parameter gradients.
    fn backward(&mut self, dlogits: &Array1<f64>) -> Result<()>;

    /// All parameters and buffers in canonical order.
    fn params(&mut self) -> Vec<ParamRef<'_>>;

    /// On/off state of every ReLU unit in the last forward pass. Finite
    /// differences are only meaningful when a perturbation leaves it unchanged.
    fn relu_pattern(&self, _out: &mut Vec<bool>) {}

    fn zero_grad(&mut self) {
        for p in self.params() {
            if let Some(g) = p.grad {
                g.fill(0.0);
            }
        }
    }

    /// FDS probabilities in inference mode.
    fn predict(&mut self, batch: &Batch) -> Result<Array1<f64>> {
        // inference never draws from the rng
        let mut rng = rng::seeded(0);
        Ok(self.forward(batch, Mode::Infer, &mut rng)?.mapv(layers::sigmoid))
    }
}

/// Mean binary cross-entropy on clamped sigmoid outputs and its gradient
/// with respect to the logits.
pub fn bce_loss(logits: &Array1<f64>, labels: &Array1<f64>) -> Result<(f64, Array1<f64>)> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(QusError::invalid("logits and labels must be non-empty and equal length"));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(QusError::invalid("labels must be 0 or 1"));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array1::zeros(logits.len());
    for i in 0..logits.len() {
        let p = layers::sigmoid(logits[i]);
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let y = labels[i];
        loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        if p == pc {
            grad[i] = (p - y) / n;
        }
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(QusError::numeric("loss", "non-finite loss"));
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Mlp,
    Cnn,
    Fusion,
}

#[derive(Debug, Clone)]
pub enum NetModel {
    Mlp(MlpModel),
    Cnn(CnnModel),
    Fusion(FusionModel),
}

impl NetModel {
    pub fn kind(&self) -> NetKind {
        match self {
            NetModel::Mlp(_) => NetKind::Mlp,
            NetModel::Cnn(_) => NetKind::Cnn,
            NetModel::Fusion(_) => NetKind::Fusion,
        }
    }

    pub fn needs_images(&self) -> bool {
        !matches!(self, NetModel::Mlp(_))
    }

    pub fn needs_features(&self) -> bool {
        !matches!(self, NetModel::Cnn(_))
    }

    pub fn is_trained(&self) -> bool {
        match self {
            NetModel::Mlp(m) => m.trained,
            NetModel::Cnn(m) => m.trained,
            NetModel::Fusion(m) => m.trained,
        }
    }

    pub fn set_trained(&mut self, trained: bool) {
        match self {
            NetModel::Mlp(m) => m.trained = trained,
            NetModel::Cnn(m) => m.trained = trained,
            NetModel::Fusion(m) => m.trained = trained,
        }
    }

    /// Snapshot of every parameter and buffer, in canonical order.
    pub fn flat_params(&mut self) -> Vec<f64> {
        self.params().into_iter().flat_map(|p| p.value.to_vec()).collect()
    }

    pub fn load_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let mut params = self.params();
        let total: usize = params.iter().map(|p| p.value.len()).sum();
        if total != flat.len() {
            return Err(QusError::invalid(format!("expected {total} values, got {}", flat.len())));
        }
        let mut offset = 0;
        for p in params.iter_mut() {
            let n = p.value.len();
            p.value.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

impl Network for NetModel {
    fn forward(&mut self, batch: &Batch, mode: Mode, rng: &mut QusRng) -> Result<Array1<f64>> {
        match self {
            NetModel::Mlp(m) => m.forward(batch, mode, rng),
            NetModel::Cnn(m) => m.forward(batch, mode, rng),
            NetModel::Fusion(m) => m.forward(batch, mode, rng),
        }
    }

    fn backward(&mut self, dlogits: &Array1<f64>) -> Result<()> {
        match self {
            NetModel::Mlp(m) => m.backward(dlogits),
            NetModel::Cnn(m) => m.backward(dlogits),
            NetModel::Fusion(m) => m.backward(dlogits),
        }
    }

    fn relu_pattern(&self, out: &mut Vec<bool>) {
        match self {
            NetModel::Mlp(m) => m.relu_pattern(out),
            NetModel::Cnn(m) => m.relu_pattern(out),
            NetModel::Fusion(m) => m.relu_pattern(out),
        }
    }

    fn params(&mut self) -> Vec<ParamRef<'_>> {
        match self {
            NetModel::Mlp(m) => m.params(),
            NetModel::Cnn(m) => m.params(),
            NetModel::Fusion(m) => m.params(),
        }
    }
}

pub(crate) fn column(z: &Array2<f64>) -> Array1<f64> {
    z.column(0).to_owned()
}

pub(crate) fn as_column(d: &Array1<f64>) -> Array2<f64> {
    d.clone().insert_axis(ndarray::Axis(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_at_half_is_ln_two() {
        let (loss, grad) = bce_loss(&Array1::from(vec![0.0]), &Array1::from(vec![1.0])).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((grad[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_predictions_have_near_zero_loss() {
        let (loss, grad) =
            bce_loss(&Array1::from(vec![40.0, -40.0]), &Array1::from(vec![1.0, 0.0])).unwrap();
        assert!(loss < 1e-6);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn bce_rejects_bad_labels() {
        assert!(bce_loss(&Array1::from(vec![0.0]), &Array1::from(vec![0.5])).is_err());
    }
}
