use std::collections::BTreeSet;

use ndarray::{s, Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::schedule::{EarlyStopping, Schedule, StopDecision};
use crate::envstats::{featurize, FeatureConfig, FeatureNormalizer};
use crate::error::{QusError, Result};
use crate::evaluation::{auc, ScoredSet};
use crate::neural::layers::sigmoid;
use crate::neural::{
    bce_loss, build_fusion, checkpoint::round_to_f32, make_batch, AdamState, Batch, ChannelMode, CnnModel,
    FusionConfig, FusionModel, MlpModel, Mode, NetModel, Network,
};
use crate::rng::{self, QusRng};
use crate::specklesim::EnvelopePatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub augment: AugmentConfig,
    pub augment_enabled: bool,
    pub seed: u64,
    /// Batch size used for validation and prediction.
    pub eval_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::default(),
            augment: AugmentConfig::default(),
            augment_enabled: true,
            seed: 0,
            eval_chunk: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.augment.validate()?;
        if self.eval_chunk == 0 {
            return Err(QusError::invalid("eval_chunk must be positive"));
        }
        Ok(())
    }
}

/// How patches become model inputs: image channels for CNNs, normalized
/// feature vectors for MLPs, both for fusion models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelInputs {
    pub channel_mode: Option<ChannelMode>,
    pub normalizer: Option<FeatureNormalizer>,
    pub features: FeatureConfig,
}

impl ModelInputs {
    pub fn images_only(&self) -> Self {
        Self { normalizer: None, ..*self }
    }

    pub fn features_only(&self) -> Self {
        Self { channel_mode: None, ..*self }
    }

    pub fn batch(&self, patches: &[&EnvelopePatch]) -> Result<Batch> {
        let images = match self.channel_mode {
            Some(mode) => Some(make_batch(patches.iter().copied(), mode)?),
            None => None,
        };
        let features = match &self.normalizer {
            Some(norm) => {
                let mut m = Array2::zeros((patches.len(), 4));
                for (i, p) in patches.iter().enumerate() {
                    let fv = norm.apply(&featurize(p, &self.features)?)?;
                    m.row_mut(i).assign(&Array1::from(fv.to_array().to_vec()));
                }
                Some(m)
            }
            None => None,
        };
        Ok(Batch { images, features })
    }

    pub fn check(&self, model: &NetModel) -> Result<()> {
        if model.needs_images() && self.channel_mode.is_none() {
            return Err(QusError::invalid("model needs an input channel mode"));
        }
        if model.needs_features() && self.normalizer.is_none() {
            return Err(QusError::InvalidState("model needs a fitted feature normalizer".into()));
        }
        Ok(())
    }
}

pub fn targets(patches: &[&EnvelopePatch]) -> Result<Array1<f64>> {
    patches
        .iter()
        .map(|p| p.label.target().ok_or_else(|| QusError::invalid(format!("patch from {} has no label", p.source_id))))
        .collect()
}

fn label_bytes(patches: &[EnvelopePatch]) -> Vec<u8> {
    patches.iter().map(|p| p.label.to_byte()).collect()
}

/// FDS probabilities for `patches`, computed in chunks.
pub fn predict_patches(model: &mut NetModel, inputs: &ModelInputs, patches: &[EnvelopePatch], chunk: usize) -> Result<Vec<f64>> {
    inputs.check(model)?;
    let mut out = Vec::with_capacity(patches.len());
    for part in patches.chunks(chunk.max(1)) {
        let refs: Vec<&EnvelopePatch> = part.iter().collect();
        out.extend(model.predict(&inputs.batch(&refs)?)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
    pub lr_start: f64,
    pub lr_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub stage: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub stopped_epoch: usize,
}

impl TrainHistory {
    pub fn csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_auc,lr_start,lr_end\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.train_loss, e.val_auc, e.lr_start, e.lr_end));
        }
        s
    }
}

/// One trainable unit driven by `run_schedule`.
trait TrainTask {
    fn train_len(&self) -> usize;
    /// One optimizer step on the given training indices; returns the loss.
    fn step(&mut self, indices: &[usize], lr: f64, rng: &mut QusRng) -> Result<f64>;
    fn validate(&mut self) -> Result<f64>;
    fn snapshot(&mut self) -> Vec<f64>;
    fn restore(&mut self, values: &[f64]) -> Result<()>;
}

fn run_schedule(
    stage: &str,
    task: &mut dyn TrainTask,
    sched: &Schedule,
    seed: u64,
    on_epoch: &mut dyn FnMut(&str, &EpochRecord),
) -> Result<TrainHistory> {
    sched.validate()?;
    let n = task.train_len();
    if n < 2 {
        return Err(QusError::invalid("need at least two training samples"));
    }
    let bs = sched.batch_size.min(n);
    let steps_per_epoch = n.div_ceil(bs);
    let mut order: Vec<usize> = (0..n).collect();
    let mut stopper = EarlyStopping::new(sched.patience, sched.max_epochs);
    let mut best = task.snapshot();
    let mut epochs = Vec::new();
    let mut step = 0usize;
    for epoch in 1..=sched.max_epochs {
        let mut shuffle_rng = rng::stream(seed, 2 * epoch as u64);
        let mut step_rng = rng::stream(seed, 2 * epoch as u64 + 1);
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut count) = (0.0, 0usize);
        let lr_start = sched.lr_at(step, steps_per_epoch);
        let mut lr_end = lr_start;
        for batch in order.chunks(bs) {
            // batch statistics need at least two samples
            if batch.len() < 2 {
                continue;
            }
            lr_end = sched.lr_at(step, steps_per_epoch);
            let loss = task.step(batch, lr_end, &mut step_rng)?;
            loss_sum += loss * batch.len() as f64;
            count += batch.len();
            step += 1;
        }
        let val_auc = task.validate()?;
        let rec = EpochRecord { epoch, train_loss: loss_sum / count as f64, val_auc, lr_start, lr_end };
        on_epoch(stage, &rec);
        epochs.push(rec);
        let decision = stopper.observe(epoch, val_auc);
        if stopper.best_epoch == epoch {
            best = task.snapshot();
        }
        if decision == StopDecision::Stop {
            break;
        }
    }
    task.restore(&best)?;
    Ok(TrainHistory {
        stage: stage.to_string(),
        stopped_epoch: epochs.len(),
        epochs,
        best_epoch: stopper.best_epoch,
        best_val_auc: stopper.best_auc,
    })
}

struct NetTask<'a> {
    model: &'a mut NetModel,
    inputs: ModelInputs,
    train: &'a [EnvelopePatch],
    val: &'a [EnvelopePatch],
    val_labels: Vec<u8>,
    val_batches: Vec<Batch>,
    augment: Option<AugmentConfig>,
    adam: AdamState,
}

impl<'a> NetTask<'a> {
    fn new(model: &'a mut NetModel, inputs: ModelInputs, train: &'a [EnvelopePatch], val: &'a [EnvelopePatch], cfg: &TrainConfig) -> Result<Self> {
        inputs.check(model)?;
        let val_batches = val
            .chunks(cfg.eval_chunk)
            .map(|c| inputs.batch(&c.iter().collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            inputs,
            train,
            val,
            val_labels: label_bytes(val),
            val_batches,
            augment: cfg.augment_enabled.then_some(cfg.augment),
            adam: AdamState::default(),
        })
    }
}

impl TrainTask for NetTask<'_> {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn step(&mut self, indices: &[usize], lr: f64, rng: &mut QusRng) -> Result<f64> {
        let augmented: Vec<EnvelopePatch>;
        let refs: Vec<&EnvelopePatch> = match &self.augment {
            Some(cfg) => {
                augmented = indices.iter().map(|&i| augment(&self.train[i], cfg, rng)).collect();
                augmented.iter().collect()
            }
            None => indices.iter().map(|&i| &self.train[i]).collect(),
        };
        let batch = self.inputs.batch(&refs)?;
        let y = targets(&refs)?;
        self.model.zero_grad();
        let z = self.model.forward(&batch, Mode::Train, rng)?;
        let (loss, dz) = bce_loss(&z, &y)?;
        self.model.backward(&dz)?;
        self.adam.step(self.model.params(), lr)?;
        // keeps the in-memory model identical to its f32 checkpoint
        self.model.round_params_to_f32();
        Ok(loss)
    }

    fn validate(&mut self) -> Result<f64> {
        let mut scores = Vec::with_capacity(self.val.len());
        for b in &self.val_batches {
            scores.extend(self.model.predict(b)?);
        }
        Ok(auc(&ScoredSet::new(scores, self.val_labels.clone())?))
    }

    fn snapshot(&mut self) -> Vec<f64> {
        self.model.flat_params()
    }

    fn restore(&mut self, values: &[f64]) -> Result<()> {
        self.model.load_flat_params(values)
    }
}

/// Trains `model` in place and returns its history. The model ends up holding
/// the weights of the best validation epoch and is marked trained.
pub fn train_network(
    model: &mut NetModel,
    inputs: &ModelInputs,
    train: &[EnvelopePatch],
    val: &[EnvelopePatch],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&str, &EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if let NetModel::Fusion(f) = model {
        if f.frozen {
            return Err(QusError::invalid("use train_fusion for a frozen fusion model"));
        }
    }
    let stage = format!("{:?}", model.kind()).to_lowercase();
    model.round_params_to_f32();
    let mut task = NetTask::new(model, *inputs, train, val, cfg)?;
    let hist = run_schedule(&stage, &mut task, &cfg.schedule, cfg.seed, on_epoch)?;
    if !hist.epochs.is_empty() {
        model.set_trained(true);
    }
    Ok(hist)
}

struct HeadTask<'a> {
    model: &'a mut FusionModel,
    train_x: Array2<f64>,
    train_y: Array1<f64>,
    val_x: Array2<f64>,
    val_labels: Vec<u8>,
    adam: AdamState,
}

impl TrainTask for HeadTask<'_> {
    fn train_len(&self) -> usize {
        self.train_x.nrows()
    }

    fn step(&mut self, indices: &[usize], lr: f64, rng: &mut QusRng) -> Result<f64> {
        let x = self.train_x.select(ndarray::Axis(0), indices);
        let y = self.train_y.select(ndarray::Axis(0), indices);
        for p in self.model.head_params() {
            if let Some(g) = p.grad {
                g.fill(0.0);
            }
        }
        let z = self.model.head_forward(&x, Mode::Train, rng)?;
        let (loss, dz) = bce_loss(&z, &y)?;
        self.model.head_backward(&dz)?;
        self.adam.step(self.model.head_params(), lr)?;
        for p in self.model.head_params() {
            round_to_f32(p.value);
        }
        Ok(loss)
    }

    fn validate(&mut self) -> Result<f64> {
        let mut rng = rng::seeded(0);
        let z = self.model.head_forward(&self.val_x, Mode::Infer, &mut rng)?;
        Ok(auc(&ScoredSet::new(z.mapv(sigmoid).to_vec(), self.val_labels.clone())?))
    }

    fn snapshot(&mut self) -> Vec<f64> {
        self.model.head_params().into_iter().flat_map(|p| p.value.to_vec()).collect()
    }

    fn restore(&mut self, values: &[f64]) -> Result<()> {
        let mut offset = 0;
        for p in self.model.head_params() {
            let n = p.value.len();
            p.value.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

fn fused_features(model: &mut FusionModel, inputs: &ModelInputs, patches: &[EnvelopePatch], chunk: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((patches.len(), model.fused_width()));
    let mut row = 0;
    for part in patches.chunks(chunk) {
        let refs: Vec<&EnvelopePatch> = part.iter().collect();
        let f = model.fused(&inputs.batch(&refs)?, Mode::Infer)?;
        out.slice_mut(s![row..row + part.len(), ..]).assign(&f);
        row += part.len();
    }
    Ok(out)
}

/// Trains only the fusion head of a model whose branches are frozen. Branch
/// representations are computed once from the un-augmented patches.
pub fn train_fusion_head(
    model: &mut FusionModel,
    inputs: &ModelInputs,
    train: &[EnvelopePatch],
    val: &[EnvelopePatch],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&str, &EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if !model.frozen {
        return Err(QusError::InvalidState("fusion head training expects frozen branches".into()));
    }
    if inputs.channel_mode.is_none() || inputs.normalizer.is_none() {
        return Err(QusError::InvalidState("fusion model needs a channel mode and a fitted feature normalizer".into()));
    }
    let train_refs: Vec<&EnvelopePatch> = train.iter().collect();
    let mut task = HeadTask {
        train_x: fused_features(model, inputs, train, cfg.eval_chunk)?,
        train_y: targets(&train_refs)?,
        val_x: fused_features(model, inputs, val, cfg.eval_chunk)?,
        val_labels: label_bytes(val),
        model,
        adam: AdamState::default(),
    };
    for p in task.model.head_params() {
        round_to_f32(p.value);
    }
    let hist = run_schedule("fusion", &mut task, &cfg.schedule, cfg.seed, on_epoch)?;
    if !hist.epochs.is_empty() {
        model.trained = true;
    }
    Ok(hist)
}

/// Staged fusion training: both branches must already be trained; they are
/// frozen while a fresh head is fitted.
pub fn train_fusion(
    cnn: CnnModel,
    mlp: MlpModel,
    fusion: FusionConfig,
    inputs: &ModelInputs,
    train: &[EnvelopePatch],
    val: &[EnvelopePatch],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&str, &EpochRecord),
) -> Result<(FusionModel, TrainHistory)> {
    let mut rng = rng::seeded(rng::derive_seed(cfg.seed, 0xF051));
    let mut model = build_fusion(cnn, mlp, fusion, &mut rng)?;
    let hist = train_fusion_head(&mut model, inputs, train, val, cfg, on_epoch)?;
    Ok((model, hist))
}

/// Fails with a data-leakage error if any adaptation patch shares a source
/// with the evaluation data.
pub fn check_leakage(adapt: &[EnvelopePatch], eval_sources: &BTreeSet<String>) -> Result<()> {
    if let Some(p) = adapt.iter().find(|p| eval_sources.contains(&p.source_id)) {
        return Err(QusError::DataLeakage(format!(
            "source {} is used for both fine-tuning and evaluation",
            p.source_id
        )));
    }
    Ok(())
}

/// Transfer learning at reduced learning rate. Fusion models have their CNN
/// and MLP branches fine-tuned separately, then the head refreshed.
pub fn finetune(
    model: &mut NetModel,
    inputs: &ModelInputs,
    adapt: &[EnvelopePatch],
    val: &[EnvelopePatch],
    eval_sources: &BTreeSet<String>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&str, &EpochRecord),
) -> Result<Vec<TrainHistory>> {
    if !model.is_trained() {
        return Err(QusError::InvalidState("only trained models can be fine-tuned".into()));
    }
    check_leakage(adapt, eval_sources)?;
    let val_sources: BTreeSet<String> = val.iter().map(|p| p.source_id.clone()).collect();
    check_leakage(adapt, &val_sources)?;
    let mut cfg = *cfg;
    cfg.schedule.fine_tune = true;
    match model {
        NetModel::Fusion(f) => {
            let mut cnn = NetModel::Cnn(f.cnn.clone());
            let mut mlp = NetModel::Mlp(f.mlp.clone());
            let h1 = train_network(&mut cnn, &inputs.images_only(), adapt, val, &cfg, on_epoch)?;
            let h2 = train_network(&mut mlp, &inputs.features_only(), adapt, val, &cfg, on_epoch)?;
            if let (NetModel::Cnn(c), NetModel::Mlp(m)) = (cnn, mlp) {
                f.cnn = c;
                f.mlp = m;
            }
            f.frozen = true;
            let h3 = train_fusion_head(f, inputs, adapt, val, &cfg, on_epoch)?;
            Ok(vec![h1, h2, h3])
        }
        _ => Ok(vec![train_network(model, inputs, adapt, val, &cfg, on_epoch)?]),
    }
}
