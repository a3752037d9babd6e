use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{ForestConfig, RandomForest, SvmModel, Tree, TreeNode};
use crate::envstats::{featurize, FeatureVector};
use crate::error::{QusError, Result};
use crate::neural::checkpoint::{Checkpoint, CheckpointHeader, TensorSpec, FORMAT_VERSION};
use crate::neural::{ChannelMode, NetModel};
use crate::specklesim::EnvelopePatch;
use crate::training::{predict_patches, ModelInputs};

pub const MODEL_FILE: &str = "model.qusm";

/// Registry of trainable models. `cnn1`..`cnn6` cover the input channels
/// {A, A·ln A, both} with and without the statistics branch; even numbers
/// are fusion models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelId {
    Mlp,
    Svm,
    Rf,
    Cnn(u8),
}

impl ModelId {
    pub const ALL: [ModelId; 9] = [
        ModelId::Mlp,
        ModelId::Svm,
        ModelId::Rf,
        ModelId::Cnn(1),
        ModelId::Cnn(2),
        ModelId::Cnn(3),
        ModelId::Cnn(4),
        ModelId::Cnn(5),
        ModelId::Cnn(6),
    ];

    pub fn channel_mode(self) -> Option<ChannelMode> {
        match self {
            ModelId::Cnn(1 | 2) => Some(ChannelMode::A),
            ModelId::Cnn(3 | 4) => Some(ChannelMode::ALogA),
            ModelId::Cnn(_) => Some(ChannelMode::Both),
            _ => None,
        }
    }

    pub fn is_fusion(self) -> bool {
        matches!(self, ModelId::Cnn(k) if k % 2 == 0)
    }

    pub fn uses_features(self) -> bool {
        !matches!(self, ModelId::Cnn(k) if k % 2 == 1)
    }

    /// The image-only model a fusion model is built on.
    pub fn cnn_branch(self) -> Option<ModelId> {
        match self {
            ModelId::Cnn(k) if k % 2 == 0 => Some(ModelId::Cnn(k - 1)),
            _ => None,
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelId::Mlp => f.write_str("mlp"),
            ModelId::Svm => f.write_str("svm"),
            ModelId::Rf => f.write_str("rf"),
            ModelId::Cnn(k) => write!(f, "cnn{k}"),
        }
    }
}

impl FromStr for ModelId {
    type Err = QusError;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| {
                QusError::Usage(format!("unknown model id {s:?}; expected mlp, svm, rf or cnn1..cnn6"))
            })
    }
}

pub enum Classifier {
    Net(NetModel),
    Svm(SvmModel),
    Forest(RandomForest),
}

/// A trained classifier together with everything needed to turn patches
/// into its inputs.
pub struct SavedModel {
    pub id: ModelId,
    pub classifier: Classifier,
    pub inputs: ModelInputs,
    pub seed: u64,
    /// Training summary stored in the checkpoint header.
    pub info: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum BaselineArchitecture {
    Svm { c: f64, gamma: f64 },
    Forest { config: ForestConfig },
}

fn bad(msg: impl Into<String>) -> QusError {
    QusError::invalid(msg)
}

impl SavedModel {
    /// Patch shape the model was trained on, if recorded.
    pub fn patch_shape(&self) -> Option<(usize, usize)> {
        let s = self.info.get("patch_shape")?.as_array()?;
        Some((s.first()?.as_u64()? as usize, s.get(1)?.as_u64()? as usize))
    }

    /// Source ids of the patches the model was trained on.
    pub fn train_sources(&self) -> Vec<String> {
        self.info
            .get("train_sources")
            .and_then(|v| v.as_array())
            .map(|a| a.iter().filter_map(|s| s.as_str().map(str::to_string)).collect())
            .unwrap_or_default()
    }

    /// Whether `score` returns FDS probabilities (the SVM returns raw
    /// decision values).
    pub fn outputs_probability(&self) -> bool {
        !matches!(self.classifier, Classifier::Svm(_))
    }

    /// Rejects patch shapes the model cannot consume or was not trained on.
    pub fn check_patch_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if let Some((r, c)) = self.patch_shape() {
            if (r, c) != (rows, cols) {
                return Err(bad(format!("model {} was trained on {r}x{c} patches, data has {rows}x{cols}", self.id)));
            }
        }
        if self.inputs.channel_mode.is_some() && (rows % 8 != 0 || cols % 8 != 0 || rows == 0 || cols == 0) {
            return Err(bad(format!("{rows}x{cols} patches are not divisible by 8")));
        }
        Ok(())
    }

    fn normalized_features(&self, patches: &[EnvelopePatch]) -> Result<Vec<FeatureVector>> {
        let norm = self
            .inputs
            .normalizer
            .ok_or_else(|| QusError::InvalidState(format!("model {} has no fitted normalizer", self.id)))?;
        patches
            .iter()
            .map(|p| norm.apply(&featurize(p, &self.inputs.features)?))
            .collect()
    }

    /// One score per patch; higher means more likely FDS.
    pub fn score(&mut self, patches: &[EnvelopePatch], chunk: usize) -> Result<Vec<f64>> {
        if let Some(p) = patches.first() {
            let (r, c) = p.shape();
            self.check_patch_shape(r, c)?;
        }
        match &mut self.classifier {
            Classifier::Net(net) => predict_patches(net, &self.inputs, patches, chunk),
            Classifier::Svm(svm) => {
                let svm = svm.clone();
                self.normalized_features(patches)?.iter().map(|f| svm.score(f)).collect()
            }
            Classifier::Forest(rf) => {
                let rf = rf.clone();
                self.normalized_features(patches)?.iter().map(|f| rf.predict_proba(f)).collect()
            }
        }
    }

    pub fn to_checkpoint(&mut self) -> Result<Checkpoint> {
        let id = self.id.to_string();
        let features = self.inputs.normalizer.map(|_| self.inputs.features);
        match &mut self.classifier {
            Classifier::Net(net) => {
                let mut ck = net.to_checkpoint(
                    &id,
                    self.inputs.channel_mode,
                    self.seed,
                    self.inputs.normalizer,
                    self.info.clone(),
                )?;
                ck.header.features = features;
                Ok(ck)
            }
            Classifier::Svm(svm) => {
                let n = svm.support_vectors.len();
                let mut values: Vec<f64> = svm.support_vectors.iter().flatten().copied().collect();
                values.extend(&svm.coef);
                values.push(svm.bias);
                let tensors = vec![
                    TensorSpec { name: "support_vectors".into(), shape: vec![n, 4] },
                    TensorSpec { name: "coef".into(), shape: vec![n] },
                    TensorSpec { name: "bias".into(), shape: vec![1] },
                ];
                let arch = BaselineArchitecture::Svm { c: svm.c, gamma: svm.gamma };
                Checkpoint::new(self.header(&id, arch, features, tensors), values)
            }
            Classifier::Forest(rf) => {
                let mut values = Vec::new();
                let mut tensors = Vec::new();
                for (k, tree) in rf.trees.iter().enumerate() {
                    tensors.push(TensorSpec { name: format!("tree{k}.nodes"), shape: vec![tree.nodes.len(), 3] });
                    for node in &tree.nodes {
                        values.push(node.feature.map_or(-1.0, |f| f as f64));
                        values.push(node.threshold);
                        values.push(node.value);
                    }
                }
                let arch = BaselineArchitecture::Forest { config: rf.config };
                Checkpoint::new(self.header(&id, arch, features, tensors), values)
            }
        }
    }

    fn header(
        &self,
        id: &str,
        arch: BaselineArchitecture,
        features: Option<crate::envstats::FeatureConfig>,
        tensors: Vec<TensorSpec>,
    ) -> CheckpointHeader {
        CheckpointHeader {
            version: FORMAT_VERSION,
            model_id: id.to_string(),
            architecture: serde_json::to_value(arch).expect("architecture serializes"),
            channel_mode: None,
            seed: self.seed,
            trained: true,
            normalizer: self.inputs.normalizer,
            features,
            tensors,
            info: self.info.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let h = &ck.header;
        let id: ModelId = h
            .model_id
            .parse()
            .map_err(|_| bad(format!("checkpoint names unknown model {:?}", h.model_id)))?;
        let kind = h.architecture.get("kind").and_then(|k| k.as_str()).unwrap_or_default();
        let classifier = match kind {
            "svm" | "forest" => {
                let arch: BaselineArchitecture = serde_json::from_value(h.architecture.clone())
                    .map_err(|e| bad(format!("invalid baseline architecture: {e}")))?;
                match arch {
                    BaselineArchitecture::Svm { c, gamma } => Classifier::Svm(svm_from(ck, c, gamma)?),
                    BaselineArchitecture::Forest { config } => Classifier::Forest(forest_from(ck, config)?),
                }
            }
            _ => Classifier::Net(NetModel::from_checkpoint(ck)?),
        };
        let expected_kind = match id {
            ModelId::Svm => "svm",
            ModelId::Rf => "forest",
            ModelId::Mlp => "mlp",
            m if m.is_fusion() => "fusion",
            _ => "cnn",
        };
        if kind != expected_kind {
            return Err(bad(format!("model {id} stored with a {kind:?} architecture")));
        }
        if id.channel_mode() != h.channel_mode {
            return Err(bad(format!("model {id} stored with channel mode {:?}", h.channel_mode)));
        }
        if id.uses_features() && h.normalizer.is_none() {
            return Err(QusError::InvalidState(format!("model {id} checkpoint has no fitted normalizer")));
        }
        Ok(Self {
            id,
            classifier,
            inputs: ModelInputs {
                channel_mode: h.channel_mode,
                normalizer: h.normalizer,
                features: h.features.unwrap_or_default(),
            },
            seed: h.seed,
            info: h.info.clone(),
        })
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

fn tensor<'a>(ck: &'a Checkpoint, name: &str) -> Result<&'a [f64]> {
    ck.tensor(name).ok_or_else(|| bad(format!("checkpoint lacks tensor {name}")))
}

fn svm_from(ck: &Checkpoint, c: f64, gamma: f64) -> Result<SvmModel> {
    let sv = tensor(ck, "support_vectors")?;
    let coef = tensor(ck, "coef")?;
    let bias = tensor(ck, "bias")?;
    if sv.len() != 4 * coef.len() || bias.len() != 1 {
        return Err(bad("inconsistent SVM tensors"));
    }
    Ok(SvmModel {
        support_vectors: sv.chunks_exact(4).map(|r| [r[0], r[1], r[2], r[3]]).collect(),
        coef: coef.to_vec(),
        bias: bias[0],
        gamma,
        c,
    })
}

fn forest_from(ck: &Checkpoint, config: ForestConfig) -> Result<RandomForest> {
    let mut trees = Vec::new();
    for (k, spec) in ck.header.tensors.iter().enumerate() {
        if spec.name != format!("tree{k}.nodes") || spec.shape.len() != 2 || spec.shape[1] != 3 {
            return Err(bad(format!("unexpected forest tensor {}", spec.name)));
        }
        let nodes = tensor(ck, &spec.name)?
            .chunks_exact(3)
            .map(|n| {
                let feature = match n[0] {
                    f if f == -1.0 => None,
                    f if (0.0..4.0).contains(&f) && f.fract() == 0.0 => Some(f as usize),
                    f => return Err(bad(format!("bad split feature {f}"))),
                };
                Ok(TreeNode { feature, threshold: n[1], value: n[2] })
            })
            .collect::<Result<Vec<_>>>()?;
        let splits = nodes.iter().filter(|n| n.feature.is_some()).count();
        if nodes.len() != 2 * splits + 1 {
            return Err(bad(format!("tree {k} is not a complete binary tree")));
        }
        trees.push(Tree { nodes });
    }
    if trees.is_empty() {
        return Err(bad("forest checkpoint holds no trees"));
    }
    Ok(RandomForest { config, trees })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envstats::{FeatureConfig, FeatureNormalizer};

    #[test]
    fn ids_round_trip_and_map_to_inputs() {
        for id in ModelId::ALL {
            assert_eq!(id.to_string().parse::<ModelId>().unwrap(), id);
        }
        assert_eq!(ModelId::Cnn(5).channel_mode(), Some(ChannelMode::Both));
        assert!(!ModelId::Cnn(5).is_fusion());
        assert!(ModelId::Cnn(6).is_fusion());
        assert_eq!(ModelId::Cnn(4).cnn_branch(), Some(ModelId::Cnn(3)));
        assert_eq!(ModelId::Cnn(3).channel_mode(), Some(ChannelMode::ALogA));
        assert!(!ModelId::Cnn(1).uses_features());
        assert!(ModelId::Svm.uses_features());
    }

    #[test]
    fn unknown_id_is_usage_error() {
        let err = "cnn7".parse::<ModelId>().unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    fn inputs() -> ModelInputs {
        ModelInputs {
            channel_mode: None,
            normalizer: Some(FeatureNormalizer { min: [0.0; 4], max: [1.0, 2.0, 3.0, 4.0] }),
            features: FeatureConfig::default(),
        }
    }

    #[test]
    fn baseline_checkpoints_round_trip() {
        let svm = SvmModel {
            support_vectors: vec![[0.25, 0.5, 0.75, 1.0], [0.0, 0.125, 0.5, 0.5]],
            coef: vec![1.5, -1.5],
            bias: 0.25,
            gamma: 2.0,
            c: 10.0,
        };
        let tree = Tree {
            nodes: vec![
                TreeNode { feature: Some(2), threshold: 0.5, value: 0.5 },
                TreeNode { feature: None, threshold: 0.0, value: 0.0 },
                TreeNode { feature: None, threshold: 0.0, value: 1.0 },
            ],
        };
        let rf = RandomForest { config: ForestConfig::default(), trees: vec![tree.clone(), tree] };
        for (id, classifier) in [(ModelId::Svm, Classifier::Svm(svm.clone())), (ModelId::Rf, Classifier::Forest(rf.clone()))] {
            let mut m = SavedModel { id, classifier, inputs: inputs(), seed: 3, info: serde_json::json!({"patch_shape": [64, 16]}) };
            let ck = m.to_checkpoint().unwrap();
            let back = SavedModel::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes().unwrap(), Path::new("mem")).unwrap()).unwrap();
            assert_eq!(back.inputs, m.inputs);
            assert_eq!(back.patch_shape(), Some((64, 16)));
            match (back.classifier, id) {
                (Classifier::Svm(s), ModelId::Svm) => assert_eq!(s, svm),
                (Classifier::Forest(f), ModelId::Rf) => assert_eq!(f, rf),
                _ => panic!("wrong classifier kind"),
            }
        }
    }

    #[test]
    fn feature_model_without_normalizer_is_invalid_state() {
        let mut m = SavedModel {
            id: ModelId::Svm,
            classifier: Classifier::Svm(SvmModel { support_vectors: vec![[0.0; 4]], coef: vec![1.0], bias: 0.0, gamma: 1.0, c: 1.0 }),
            inputs: ModelInputs { normalizer: None, ..inputs() },
            seed: 0,
            info: serde_json::Value::Null,
        };
        let ck = m.to_checkpoint().unwrap();
        assert!(matches!(SavedModel::from_checkpoint(&ck), Err(QusError::InvalidState(_))));
    }
}
