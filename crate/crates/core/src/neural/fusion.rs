use ndarray::{concatenate, s, Array1, Axis, Ix2};
use serde::{Deserialize, Serialize};

use super::layers::{check_finite, Dense, Dropout, Init, Relu};
use super::{as_column, column, Batch, CnnModel, Mode, MlpModel, Network, ParamRef};
use crate::error::{QusError, Result};
use crate::rng::QusRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { hidden: 32, dropout: 0.5 }
    }
}

/// CNN feature vector concatenated with the MLP's second hidden layer,
/// followed by dense(ReLU, dropout) and a zero-initialized output layer.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub config: FusionConfig,
    pub cnn: CnnModel,
    pub mlp: MlpModel,
    pub fc1: Dense,
    fc1_relu: Relu<Ix2>,
    dropout: Dropout,
    pub fc2: Dense,
    /// Frozen branches run in inference mode and receive no updates.
    pub frozen: bool,
    pub trained: bool,
}

/// Fuses two trained branches behind a fresh head. Branches start frozen.
pub fn build_fusion(cnn: CnnModel, mlp: MlpModel, config: FusionConfig, rng: &mut QusRng) -> Result<FusionModel> {
    if !cnn.trained || !mlp.trained {
        return Err(QusError::InvalidState("both fusion branches must be trained first".into()));
    }
    Ok(FusionModel::new(cnn, mlp, config, rng))
}

impl FusionModel {
    pub(crate) fn new(cnn: CnnModel, mlp: MlpModel, config: FusionConfig, rng: &mut QusRng) -> Self {
        let width = cnn.config.feature_dim + mlp.config.hidden2;
        Self {
            fc1: Dense::new(width, config.hidden, Init::He, rng),
            fc1_relu: Relu::new(),
            dropout: Dropout::new(config.dropout),
            fc2: Dense::new(config.hidden, 1, Init::Zero, rng),
            config,
            cnn,
            mlp,
            frozen: true,
            trained: false,
        }
    }

    pub fn fused_width(&self) -> usize {
        self.fc1.inputs()
    }

    /// Concatenated branch representation, (N, feature_dim + hidden2).
    pub fn fused(&mut self, batch: &Batch, mode: Mode) -> Result<ndarray::Array2<f64>> {
        let branch_mode = if self.frozen { Mode::Infer } else { mode };
        let f = self.cnn.features(batch.images()?, branch_mode)?;
        let h = self.mlp.hidden(batch.features()?, branch_mode)?;
        if f.nrows() != h.nrows() {
            return Err(QusError::invalid("image and feature batches differ in size"));
        }
        Ok(concatenate![Axis(1), f, h])
    }

    /// Head applied to precomputed fused representations.
    pub fn head_forward(&mut self, fused: &ndarray::Array2<f64>, mode: Mode, rng: &mut QusRng) -> Result<Array1<f64>> {
        let h = self.fc1_relu.forward(&self.fc1.forward(fused)?);
        let h = self.dropout.forward(&h, mode, rng);
        let z = self.fc2.forward(&h)?;
        check_finite(&z, "fusion.output")?;
        Ok(column(&z))
    }

    pub fn head_backward(&mut self, dlogits: &Array1<f64>) -> Result<ndarray::Array2<f64>> {
        let d = self.fc2.backward(&as_column(dlogits))?;
        let d = self.dropout.backward(&d);
        let d = self.fc1_relu.backward(&d)?;
        self.fc1.backward(&d)
    }

    pub fn head_params(&mut self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.fc1.params("head.fc1", true, &mut out);
        self.fc2.params("head.fc2", true, &mut out);
        out
    }
}

impl Network for FusionModel {
    fn forward(&mut self, batch: &Batch, mode: Mode, rng: &mut QusRng) -> Result<Array1<f64>> {
        let fused = self.fused(batch, mode)?;
        self.head_forward(&fused, mode, rng)
    }

    fn backward(&mut self, dlogits: &Array1<f64>) -> Result<()> {
        let d = self.head_backward(dlogits)?;
        if !self.frozen {
            let split = self.cnn.config.feature_dim;
            self.cnn.features_backward(&d.slice(s![.., ..split]).to_owned())?;
            self.mlp.hidden_backward(&d.slice(s![.., split..]).to_owned())?;
        }
        Ok(())
    }

    fn relu_pattern(&self, out: &mut Vec<bool>) {
        self.cnn.features_pattern(out);
        self.fc1_relu.pattern(out);
    }

    fn params(&mut self) -> Vec<ParamRef<'_>> {
        let trainable = !self.frozen;
        let mut out = Vec::new();
        self.cnn.collect("cnn.", trainable, &mut out);
        self.mlp.collect("mlp.", trainable, &mut out);
        self.fc1.params("head.fc1", true, &mut out);
        self.fc2.params("head.fc2", true, &mut out);
        out
    }
}
