use ndarray::{concatenate, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::layers::{check_finite, BatchNorm, Dense, Dropout, Init, Tanh};
use super::{as_column, column, Batch, Mode, Network, ParamRef};
use crate::error::Result;
use crate::rng::QusRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub inputs: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub dropout: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { inputs: 4, hidden1: 128, hidden2: 32, dropout: 0.5 }
    }
}

/// dense -> BN -> tanh -> dense -> BN -> tanh -> dropout -> dense -> sigmoid
#[derive(Debug, Clone)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub dense1: Dense,
    pub bn1: BatchNorm,
    tanh1: Tanh,
    pub dense2: Dense,
    pub bn2: BatchNorm,
    tanh2: Tanh,
    dropout: Dropout,
    pub dense3: Dense,
    pub trained: bool,
}

impl MlpModel {
    pub fn new(config: MlpConfig, rng: &mut QusRng) -> Self {
        Self {
            dense1: Dense::new(config.inputs, config.hidden1, Init::Xavier, rng),
            bn1: BatchNorm::new(config.hidden1),
            tanh1: Tanh::default(),
            dense2: Dense::new(config.hidden1, config.hidden2, Init::Xavier, rng),
            bn2: BatchNorm::new(config.hidden2),
            tanh2: Tanh::default(),
            dropout: Dropout::new(config.dropout),
            dense3: Dense::new(config.hidden2, 1, Init::Xavier, rng),
            config,
            trained: false,
        }
    }

    /// Second hidden representation (after tanh, before dropout).
    pub fn hidden(&mut self, x: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        let h = self.dense1.forward(x)?;
        let h = self.bn1.forward2(&h, mode)?;
        let h = self.tanh1.forward(&h);
        let h = self.dense2.forward(&h)?;
        let h = self.bn2.forward2(&h, mode)?;
        let h = self.tanh2.forward(&h);
        check_finite(&h, "mlp.hidden")?;
        Ok(h)
    }

    pub fn hidden_backward(&mut self, dh: &Array2<f64>) -> Result<Array2<f64>> {
        let d = self.tanh2.backward(dh)?;
        let d = self.bn2.backward2(&d)?;
        let d = self.dense2.backward(&d)?;
        let d = self.tanh1.backward(&d)?;
        let d = self.bn1.backward2(&d)?;
        self.dense1.backward(&d)
    }

    pub(crate) fn collect<'a>(&'a mut self, prefix: &str, trainable: bool, out: &mut Vec<ParamRef<'a>>) {
        self.dense1.params(&format!("{prefix}dense1"), trainable, out);
        self.bn1.params(&format!("{prefix}bn1"), trainable, out);
        self.dense2.params(&format!("{prefix}dense2"), trainable, out);
        self.bn2.params(&format!("{prefix}bn2"), trainable, out);
        self.dense3.params(&format!("{prefix}dense3"), trainable, out);
    }
}

/// Stacks feature vectors into an (N, 4) matrix.
pub fn feature_matrix(rows: &[[f64; 4]]) -> Array2<f64> {
    let views: Vec<_> = rows.iter().map(|r| ndarray::ArrayView1::from(&r[..]).insert_axis(Axis(0))).collect();
    concatenate(Axis(0), &views).unwrap_or_else(|_| Array2::zeros((0, 4)))
}

impl Network for MlpModel {
    fn forward(&mut self, batch: &Batch, mode: Mode, rng: &mut QusRng) -> Result<Array1<f64>> {
        let h = self.hidden(batch.features()?, mode)?;
        let h = self.dropout.forward(&h, mode, rng);
        let z = self.dense3.forward(&h)?;
        check_finite(&z, "mlp.output")?;
        Ok(column(&z))
    }

    fn backward(&mut self, dlogits: &Array1<f64>) -> Result<()> {
        let d = self.dense3.backward(&as_column(dlogits))?;
        let d = self.dropout.backward(&d);
        self.hidden_backward(&d)?;
        Ok(())
    }

    fn params(&mut self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.collect("", true, &mut out);
        out
    }
}
