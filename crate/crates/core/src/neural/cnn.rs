use ndarray::{Array1, Array2, Array4};
use serde::{Deserialize, Serialize};

use super::layers::{check_finite, AvgPool2, BatchNorm, Conv3x3, Dense, Dropout, GlobalAvgPool, Init, Relu};
use super::{as_column, column, Batch, Mode, Network, ParamRef};
use crate::error::{QusError, Result};
use crate::rng::QusRng;
use ndarray::{Ix2, Ix4};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub in_channels: usize,
    /// Residual widths of the three blocks; the stem outputs `widths[0]`.
    pub widths: [usize; 3],
    pub feature_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self { in_channels: 1, widths: [16, 32, 64], feature_dim: 64, hidden: 32, dropout: 0.5 }
    }
}

/// conv-BN-ReLU, conv-BN, identity skip, ReLU, then conv-BN-ReLU widening to
/// `out` channels and 2x2 average pooling.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv3x3,
    pub bn1: BatchNorm,
    relu1: Relu<Ix4>,
    pub conv2: Conv3x3,
    pub bn2: BatchNorm,
    relu_sum: Relu<Ix4>,
    pub conv3: Conv3x3,
    pub bn3: BatchNorm,
    relu3: Relu<Ix4>,
    pool: AvgPool2,
}

impl ResBlock {
    pub fn new(width: usize, out: usize, rng: &mut QusRng) -> Self {
        Self {
            conv1: Conv3x3::new(width, width, Init::He, rng),
            bn1: BatchNorm::new(width),
            relu1: Relu::new(),
            conv2: Conv3x3::new(width, width, Init::He, rng),
            bn2: BatchNorm::new(width),
            relu_sum: Relu::new(),
            conv3: Conv3x3::new(width, out, Init::He, rng),
            bn3: BatchNorm::new(out),
            relu3: Relu::new(),
            pool: AvgPool2::default(),
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> Result<Array4<f64>> {
        let a = self.conv1.forward(x)?;
        let a = self.relu1.forward(&self.bn1.forward4(&a, mode)?);
        let b = self.conv2.forward(&a)?;
        let b = self.bn2.forward4(&b, mode)? + x;
        let c = self.relu_sum.forward(&b);
        let d = self.conv3.forward(&c)?;
        let d = self.relu3.forward(&self.bn3.forward4(&d, mode)?);
        self.pool.forward(&d)
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Result<Array4<f64>> {
        let d = self.pool.backward(dy)?;
        let d = self.relu3.backward(&d)?;
        let d = self.bn3.backward4(&d)?;
        let dc = self.conv3.backward(&d)?;
        let db = self.relu_sum.backward(&dc)?;
        let d = self.bn2.backward4(&db)?;
        let d = self.conv2.backward(&d)?;
        let d = self.relu1.backward(&d)?;
        let d = self.bn1.backward4(&d)?;
        let dx = self.conv1.backward(&d)?;
        Ok(dx + db)
    }

    pub fn relu_pattern(&self, out: &mut Vec<bool>) {
        self.relu1.pattern(out);
        self.relu_sum.pattern(out);
        self.relu3.pattern(out);
    }

    pub(crate) fn collect<'a>(&'a mut self, prefix: &str, trainable: bool, out: &mut Vec<ParamRef<'a>>) {
        self.conv1.params(&format!("{prefix}.conv1"), trainable, out);
        self.bn1.params(&format!("{prefix}.bn1"), trainable, out);
        self.conv2.params(&format!("{prefix}.conv2"), trainable, out);
        self.bn2.params(&format!("{prefix}.bn2"), trainable, out);
        self.conv3.params(&format!("{prefix}.conv3"), trainable, out);
        self.bn3.params(&format!("{prefix}.bn3"), trainable, out);
    }
}

/// Stem conv block, three residual blocks, tail conv block, global average
/// pooling to `feature_dim`, then dense(ReLU, dropout) and a single logit.
#[derive(Debug, Clone)]
pub struct CnnModel {
    pub config: CnnConfig,
    pub stem_conv: Conv3x3,
    pub stem_bn: BatchNorm,
    stem_relu: Relu<Ix4>,
    pub blocks: Vec<ResBlock>,
    pub tail_conv: Conv3x3,
    pub tail_bn: BatchNorm,
    tail_relu: Relu<Ix4>,
    gap: GlobalAvgPool,
    pub fc1: Dense,
    fc1_relu: Relu<Ix2>,
    dropout: Dropout,
    pub fc2: Dense,
    pub trained: bool,
}

impl CnnModel {
    pub fn new(config: CnnConfig, rng: &mut QusRng) -> Self {
        let [w0, w1, w2] = config.widths;
        let stem_conv = Conv3x3::new(config.in_channels, w0, Init::He, rng);
        let blocks = vec![
            ResBlock::new(w0, w1, rng),
            ResBlock::new(w1, w2, rng),
            ResBlock::new(w2, w2, rng),
        ];
        Self {
            stem_conv,
            stem_bn: BatchNorm::new(w0),
            stem_relu: Relu::new(),
            blocks,
            tail_conv: Conv3x3::new(w2, config.feature_dim, Init::He, rng),
            tail_bn: BatchNorm::new(config.feature_dim),
            tail_relu: Relu::new(),
            gap: GlobalAvgPool::default(),
            fc1: Dense::new(config.feature_dim, config.hidden, Init::He, rng),
            fc1_relu: Relu::new(),
            dropout: Dropout::new(config.dropout),
            fc2: Dense::new(config.hidden, 1, Init::Xavier, rng),
            config,
            trained: false,
        }
    }

    /// Spatial size after the three pooling stages.
    pub fn pooled_dims(rows: usize, cols: usize) -> (usize, usize) {
        (rows / 8, cols / 8)
    }

    /// Input to the tail conv block: the last residual block's pooled output.
    pub fn trunk(&mut self, x: &Array4<f64>, mode: Mode) -> Result<Array4<f64>> {
        let (_, c, h, w) = x.dim();
        if c != self.config.in_channels {
            return Err(QusError::invalid(format!(
                "CNN expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        if h % 8 != 0 || w % 8 != 0 {
            return Err(QusError::invalid(format!("CNN input {h}x{w} must be divisible by 8")));
        }
        let s = self.stem_conv.forward(x)?;
        let mut a = self.stem_relu.forward(&self.stem_bn.forward4(&s, mode)?);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            a = b.forward(&a, mode)?;
            check_finite(&a, &format!("cnn.block{}", i + 1))?;
        }
        Ok(a)
    }

    /// Global-average-pooled feature vector, (N, feature_dim).
    pub fn features(&mut self, x: &Array4<f64>, mode: Mode) -> Result<Array2<f64>> {
        let a = self.trunk(x, mode)?;
        let t = self.tail_conv.forward(&a)?;
        let t = self.tail_relu.forward(&self.tail_bn.forward4(&t, mode)?);
        let f = self.gap.forward(&t);
        check_finite(&f, "cnn.features")?;
        Ok(f)
    }

    pub(crate) fn features_pattern(&self, out: &mut Vec<bool>) {
        self.stem_relu.pattern(out);
        for b in &self.blocks {
            b.relu_pattern(out);
        }
        self.tail_relu.pattern(out);
    }

    pub fn features_backward(&mut self, df: &Array2<f64>) -> Result<Array4<f64>> {
        let d = self.gap.backward(df)?;
        let d = self.tail_relu.backward(&d)?;
        let d = self.tail_bn.backward4(&d)?;
        let mut d = self.tail_conv.backward(&d)?;
        for b in self.blocks.iter_mut().rev() {
            d = b.backward(&d)?;
        }
        let d = self.stem_relu.backward(&d)?;
        let d = self.stem_bn.backward4(&d)?;
        self.stem_conv.backward(&d)
    }

    pub(crate) fn collect<'a>(&'a mut self, prefix: &str, trainable: bool, out: &mut Vec<ParamRef<'a>>) {
        self.stem_conv.params(&format!("{prefix}stem.conv"), trainable, out);
        self.stem_bn.params(&format!("{prefix}stem.bn"), trainable, out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect(&format!("{prefix}block{}", i + 1), trainable, out);
        }
        self.tail_conv.params(&format!("{prefix}tail.conv"), trainable, out);
        self.tail_bn.params(&format!("{prefix}tail.bn"), trainable, out);
        self.fc1.params(&format!("{prefix}fc1"), trainable, out);
        self.fc2.params(&format!("{prefix}fc2"), trainable, out);
    }
}

impl Network for CnnModel {
    fn forward(&mut self, batch: &Batch, mode: Mode, rng: &mut QusRng) -> Result<Array1<f64>> {
        let f = self.features(batch.images()?, mode)?;
        let h = self.fc1_relu.forward(&self.fc1.forward(&f)?);
        let h = self.dropout.forward(&h, mode, rng);
        let z = self.fc2.forward(&h)?;
        check_finite(&z, "cnn.output")?;
        Ok(column(&z))
    }

    fn backward(&mut self, dlogits: &Array1<f64>) -> Result<()> {
        let d = self.fc2.backward(&as_column(dlogits))?;
        let d = self.dropout.backward(&d);
        let d = self.fc1_relu.backward(&d)?;
        let d = self.fc1.backward(&d)?;
        self.features_backward(&d)?;
        Ok(())
    }

    fn relu_pattern(&self, out: &mut Vec<bool>) {
        self.features_pattern(out);
        self.fc1_relu.pattern(out);
    }

    fn params(&mut self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.collect("", true, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn full_size_input_pools_to_32_by_4() {
        assert_eq!(CnnModel::pooled_dims(256, 32), (32, 4));
        let cfg = CnnConfig { widths: [2, 2, 3], feature_dim: 64, ..CnnConfig::default() };
        let mut rng = seeded(1);
        let mut cnn = CnnModel::new(cfg, &mut rng);
        let x = Array4::from_shape_fn((1, 1, 256, 32), |(_, _, r, c)| ((r * 3 + c) % 7) as f64 / 7.0);
        assert_eq!(cnn.trunk(&x, Mode::Infer).unwrap().dim(), (1, 3, 32, 4));
        assert_eq!(cnn.features(&x, Mode::Infer).unwrap().dim(), (1, 64));
    }

    #[test]
    fn zero_output_layer_gives_one_half() {
        let mut rng = seeded(2);
        let mut cnn = CnnModel::new(CnnConfig { widths: [2, 2, 2], feature_dim: 4, hidden: 3, ..CnnConfig::default() }, &mut rng);
        cnn.fc2.w.value.fill(0.0);
        cnn.fc2.b.value.fill(0.0);
        let x = Array4::from_shape_fn((3, 1, 16, 8), |(n, _, r, c)| ((n + r * c) % 5) as f64);
        let p = cnn.predict(&Batch { images: Some(x), features: None }).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let mut rng = seeded(3);
        let mut cnn = CnnModel::new(CnnConfig { in_channels: 2, widths: [2, 2, 2], feature_dim: 4, hidden: 3, ..CnnConfig::default() }, &mut rng);
        let x = Array4::zeros((1, 1, 16, 8));
        assert!(matches!(
            cnn.forward(&Batch { images: Some(x), features: None }, Mode::Infer, &mut rng),
            Err(QusError::InvalidArgument(_))
        ));
    }
}
