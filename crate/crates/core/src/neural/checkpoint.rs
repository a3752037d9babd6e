//! Model checkpoints: `QUSM` magic, u32 format version, u32 header length,
//! a JSON header, then every tensor as little-endian f32 in manifest order.
//!
//! Neural networks list their tensors in `Network::params` order (batch-norm
//! running statistics included). Baseline classifiers use the same container
//! with their own tensor names.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    CnnConfig, CnnModel, FusionConfig, FusionModel, MlpConfig, MlpModel, NetModel, Network,
};
use crate::envstats::{FeatureConfig, FeatureNormalizer};
use crate::error::{QusError, Result};
use crate::neural::ChannelMode;
use crate::rng;

pub const MAGIC: &[u8; 4] = b"QUSM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    /// Registry id such as `mlp`, `cnn4`, `svm`.
    pub model_id: String,
    pub architecture: serde_json::Value,
    pub channel_mode: Option<ChannelMode>,
    pub seed: u64,
    pub trained: bool,
    pub normalizer: Option<FeatureNormalizer>,
    /// Feature extraction settings the normalizer was fitted with.
    #[serde(default)]
    pub features: Option<FeatureConfig>,
    pub tensors: Vec<TensorSpec>,
    /// Free-form training summary (best epoch, hyperparameters, ...).
    #[serde(default)]
    pub info: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn new(header: CheckpointHeader, values: Vec<f64>) -> Result<Self> {
        let expected: usize = header.tensors.iter().map(TensorSpec::len).sum();
        if expected != values.len() {
            return Err(QusError::invalid(format!(
                "tensor manifest describes {expected} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(QusError::numeric("checkpoint", "non-finite parameter"));
        }
        Ok(Self { header, values })
    }

    /// Values of one named tensor.
    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let mut offset = 0;
        for t in &self.header.tensors {
            if t.name == name {
                return Some(&self.values[offset..offset + t.len()]);
            }
            offset += t.len();
        }
        None
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)
            .map_err(|e| QusError::invalid(format!("cannot encode header: {e}")))?;
        let mut out = Vec::with_capacity(12 + header.len() + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: &str| QusError::format(origin, msg);
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("not a model checkpoint"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        if word(4) != FORMAT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {}", word(4))));
        }
        let hlen = word(8) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| bad(&format!("invalid header: {e}")))?;
        let blob = &bytes[12 + hlen..];
        let expected: usize = header.tensors.iter().map(TensorSpec::len).sum();
        if blob.len() != 4 * expected {
            return Err(bad(&format!(
                "blob holds {} bytes, manifest needs {}",
                blob.len(),
                4 * expected
            )));
        }
        let values = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Checkpoint::new(header, values).map_err(|e| bad(&e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| QusError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| QusError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Rounds every value to the nearest f32 so that a model saved and reloaded
/// is bit-identical to the in-memory one.
pub fn round_to_f32(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NetArchitecture {
    Mlp { mlp: MlpConfig },
    Cnn { cnn: CnnConfig },
    Fusion { cnn: CnnConfig, mlp: MlpConfig, fusion: FusionConfig, frozen: bool },
}

impl NetModel {
    pub fn architecture(&self) -> NetArchitecture {
        match self {
            NetModel::Mlp(m) => NetArchitecture::Mlp { mlp: m.config },
            NetModel::Cnn(m) => NetArchitecture::Cnn { cnn: m.config.clone() },
            NetModel::Fusion(f) => NetArchitecture::Fusion {
                cnn: f.cnn.config.clone(),
                mlp: f.mlp.config,
                fusion: f.config,
                frozen: f.frozen,
            },
        }
    }

    /// Fresh, untrained model with the given architecture.
    pub fn from_architecture(arch: &NetArchitecture, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        match arch {
            NetArchitecture::Mlp { mlp } => NetModel::Mlp(MlpModel::new(*mlp, &mut rng)),
            NetArchitecture::Cnn { cnn } => NetModel::Cnn(CnnModel::new(cnn.clone(), &mut rng)),
            NetArchitecture::Fusion { cnn, mlp, fusion, frozen } => {
                let c = CnnModel::new(cnn.clone(), &mut rng);
                let m = MlpModel::new(*mlp, &mut rng);
                let mut f = FusionModel::new(c, m, *fusion, &mut rng);
                f.frozen = *frozen;
                NetModel::Fusion(f)
            }
        }
    }

    pub fn tensor_manifest(&mut self) -> Vec<TensorSpec> {
        self.params()
            .into_iter()
            .map(|p| TensorSpec { name: p.name, shape: p.shape })
            .collect()
    }

    pub fn round_params_to_f32(&mut self) {
        for p in self.params() {
            round_to_f32(p.value);
        }
    }

    pub fn to_checkpoint(
        &mut self,
        model_id: &str,
        channel_mode: Option<ChannelMode>,
        seed: u64,
        normalizer: Option<FeatureNormalizer>,
        info: serde_json::Value,
    ) -> Result<Checkpoint> {
        let architecture = serde_json::to_value(self.architecture())
            .map_err(|e| QusError::invalid(format!("cannot encode architecture: {e}")))?;
        let header = CheckpointHeader {
            version: FORMAT_VERSION,
            model_id: model_id.to_string(),
            architecture,
            channel_mode,
            seed,
            trained: self.is_trained(),
            normalizer,
            features: None,
            tensors: self.tensor_manifest(),
            info,
        };
        Checkpoint::new(header, self.flat_params())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let arch: NetArchitecture = serde_json::from_value(ckpt.header.architecture.clone())
            .map_err(|e| QusError::invalid(format!("not a neural architecture: {e}")))?;
        let mut model = NetModel::from_architecture(&arch, 0);
        let manifest = model.tensor_manifest();
        if manifest != ckpt.header.tensors {
            return Err(QusError::invalid(
                "checkpoint tensor manifest does not match its architecture",
            ));
        }
        model.load_flat_params(&ckpt.values)?;
        if ckpt.header.trained {
            model.set_trained(true);
            if let NetModel::Fusion(f) = &mut model {
                f.cnn.trained = true;
                f.mlp.trained = true;
            }
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Batch, Network};
    use ndarray::{Array2, Array4};

    fn small_cnn() -> NetModel {
        let cfg = CnnConfig { in_channels: 2, widths: [2, 3, 3], feature_dim: 4, hidden: 3, dropout: 0.5 };
        NetModel::from_architecture(&NetArchitecture::Cnn { cnn: cfg }, 5)
    }

    #[test]
    fn round_trip_after_f32_rounding_is_exact() {
        let mut m = small_cnn();
        m.round_params_to_f32();
        m.set_trained(true);
        let ck = m.to_checkpoint("cnn5", Some(ChannelMode::Both), 5, None, serde_json::json!({})).unwrap();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        let mut loaded = NetModel::from_checkpoint(&back).unwrap();
        assert!(loaded.is_trained());
        let x = Array4::from_shape_fn((2, 2, 8, 8), |(n, c, r, k)| ((n + c + r * k) % 5) as f64 / 5.0);
        let batch = Batch { images: Some(x), features: None };
        assert_eq!(m.predict(&batch).unwrap(), loaded.predict(&batch).unwrap());
    }

    #[test]
    fn manifest_mismatch_is_rejected() {
        let mut m = small_cnn();
        let mut ck = m.to_checkpoint("cnn5", None, 0, None, serde_json::Value::Null).unwrap();
        ck.header.tensors.swap(0, 1);
        assert!(NetModel::from_checkpoint(&ck).is_err());
    }

    #[test]
    fn truncated_bytes_are_a_format_error() {
        let mut m = NetModel::from_architecture(&NetArchitecture::Mlp { mlp: MlpConfig::default() }, 1);
        let bytes = m.to_checkpoint("mlp", None, 1, None, serde_json::Value::Null).unwrap().to_bytes().unwrap();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3], Path::new("x")).unwrap_err();
        assert!(matches!(err, QusError::Format { .. }));
        let feats = Array2::<f64>::zeros((2, 4));
        assert_eq!(m.predict(&Batch { images: None, features: Some(feats) }).unwrap().len(), 2);
    }
}
