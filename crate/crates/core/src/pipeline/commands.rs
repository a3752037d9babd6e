use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::config::RunConfig;
use super::map::{probability_map, render_pgm, ProbabilityMap};
use super::model::{Classifier, ModelId, SavedModel, MODEL_FILE};
use crate::baselines::{forest_grid_search, svm_grid_search};
use crate::envstats::{features_csv, featurize_all, FeatureNormalizer, FeatureVector};
use crate::error::{QusError, Result};
use crate::evaluation::{write_report, EvalReport, ScoredSet};
use crate::neural::{CnnConfig, CnnModel, MlpModel, NetModel};
use crate::rng;
use crate::specklesim::store::{self, FRAME_MAGIC};
use crate::specklesim::{build_dataset, load_split, read_manifest, EnvelopePatch, Label, Manifest, SPLITS};
use crate::training::{finetune, train_fusion, train_network, EpochRecord, ModelInputs, TrainHistory};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| QusError::io(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| QusError::io(path, e))
}

fn pretty(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("value serializes")
}

/// Writes `run.json`: command, arguments, the full configuration and a
/// summary of the results.
pub fn write_run_json(out: &Path, command: &str, args: Value, cfg: &RunConfig, summary: Value) -> Result<()> {
    ensure_dir(out)?;
    let run = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
        "config": cfg.to_json(),
        "summary": summary,
    });
    write_file(&out.join("run.json"), pretty(&run))
}

fn path_json(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    ensure_dir(out)?;
    let manifest = build_dataset(&cfg.dataset, out)?;
    let splits: serde_json::Map<String, Value> = manifest
        .splits
        .iter()
        .map(|(k, v)| (k.clone(), json!({"patches": v.count, "fds": v.class_counts.fds, "lds": v.class_counts.lds})))
        .collect();
    let summary = json!({"splits": splits, "frames": manifest.frames.len(), "rescell_area_mm2": manifest.rescell_area_mm2});
    write_run_json(out, "simulate", json!({}), cfg, summary)?;
    Ok(manifest)
}

fn labels_of(patches: &[EnvelopePatch]) -> Vec<Label> {
    patches.iter().map(|p| p.label).collect()
}

/// Writes `features_<split>.csv` with raw statistics for every split and
/// `normalizer.json` fitted on the training split.
pub fn cmd_featurize(cfg: &RunConfig, data: &Path, out: &Path) -> Result<FeatureNormalizer> {
    cfg.features.validate()?;
    ensure_dir(out)?;
    let manifest = read_manifest(data)?;
    let mut normalizer = None;
    let mut counts = serde_json::Map::new();
    for split in SPLITS {
        let patches = load_split(data, &manifest, split)?;
        let feats = featurize_all(&patches, &cfg.features)?;
        write_file(&out.join(format!("features_{split}.csv")), features_csv(&feats, &labels_of(&patches))?)?;
        if split == "train" {
            normalizer = Some(FeatureNormalizer::fit(&feats)?);
        }
        counts.insert(split.to_string(), json!(patches.len()));
    }
    let normalizer = normalizer.expect("train split is featurized");
    write_file(&out.join("normalizer.json"), pretty(&normalizer))?;
    write_run_json(out, "featurize", json!({"data": path_json(data)}), cfg, json!({"patches": counts}))?;
    Ok(normalizer)
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub model: ModelId,
    /// Trained image-only checkpoint reused as the CNN branch of a fusion model.
    pub cnn_branch: Option<PathBuf>,
    /// Trained MLP checkpoint reused as the statistics branch of a fusion model.
    pub mlp_branch: Option<PathBuf>,
}

impl TrainArgs {
    fn to_json(&self) -> Value {
        json!({
            "data": path_json(&self.data),
            "model": self.model.to_string(),
            "cnn_branch": self.cnn_branch.as_deref().map(path_json),
            "mlp_branch": self.mlp_branch.as_deref().map(path_json),
        })
    }
}

fn init_seed(seed: u64, id: ModelId) -> u64 {
    let tag = ModelId::ALL.iter().position(|&m| m == id).expect("registered id") as u64 + 1;
    rng::derive_seed(seed, tag)
}

fn history_summary(h: &TrainHistory) -> Value {
    json!({
        "stage": h.stage,
        "best_epoch": h.best_epoch,
        "best_val_auc": h.best_val_auc,
        "stopped_epoch": h.stopped_epoch,
    })
}

fn histories_csv(hs: &[TrainHistory]) -> String {
    let mut out = String::from("stage,epoch,train_loss,val_auc,lr_start,lr_end\n");
    for h in hs {
        for e in &h.epochs {
            writeln!(out, "{},{},{},{},{},{}", h.stage, e.epoch, e.train_loss, e.val_auc, e.lr_start, e.lr_end).unwrap();
        }
    }
    out
}

fn source_list(patches: &[EnvelopePatch]) -> Vec<String> {
    let set: BTreeSet<&str> = patches.iter().map(|p| p.source_id.as_str()).collect();
    set.into_iter().map(str::to_string).collect()
}

struct TrainData {
    train: Vec<EnvelopePatch>,
    val: Vec<EnvelopePatch>,
    train_features: Option<Vec<FeatureVector>>,
}

impl TrainData {
    fn raw_features(&mut self, cfg: &RunConfig) -> Result<&[FeatureVector]> {
        if self.train_features.is_none() {
            self.train_features = Some(featurize_all(&self.train, &cfg.features)?);
        }
        Ok(self.train_features.as_deref().expect("just computed"))
    }
}

fn train_mlp(
    cfg: &RunConfig,
    data: &mut TrainData,
    hist: &mut Vec<TrainHistory>,
    on_epoch: &mut dyn FnMut(&str, &EpochRecord),
) -> Result<(MlpModel, ModelInputs)> {
    let normalizer = FeatureNormalizer::fit(data.raw_features(cfg)?)?;
    let inputs = ModelInputs { channel_mode: None, normalizer: Some(normalizer), features: cfg.features };
    let mut net = NetModel::Mlp(MlpModel::new(cfg.mlp, &mut rng::seeded(init_seed(cfg.train.seed, ModelId::Mlp))));
    hist.push(train_network(&mut net, &inputs, &data.train, &data.val, &cfg.train, on_epoch)?);
    match net {
        NetModel::Mlp(m) => Ok((m, inputs)),
        _ => unreachable!("built as an MLP"),
    }
}

fn train_cnn(
    cfg: &RunConfig,
    id: ModelId,
    data: &TrainData,
    hist: &mut Vec<TrainHistory>,
    on_epoch: &mut dyn FnMut(&str, &EpochRecord),
) -> Result<CnnModel> {
    let mode = id.channel_mode().expect("cnn ids have a channel mode");
    let config = CnnConfig { in_channels: mode.channels(), ..cfg.cnn.clone() };
    let mut net = NetModel::Cnn(CnnModel::new(config, &mut rng::seeded(init_seed(cfg.train.seed, id))));
    let inputs = ModelInputs { channel_mode: Some(mode), normalizer: None, features: cfg.features };
    hist.push(train_network(&mut net, &inputs, &data.train, &data.val, &cfg.train, on_epoch)?);
    match net {
        NetModel::Cnn(m) => Ok(m),
        _ => unreachable!("built as a CNN"),
    }
}

fn load_branch(path: &Path, want: ModelId) -> Result<SavedModel> {
    let m = SavedModel::load(path)?;
    if m.id != want {
        return Err(QusError::invalid(format!("{} holds {}, expected a {want} branch", path.display(), m.id)));
    }
    match &m.classifier {
        Classifier::Net(n) if n.is_trained() => Ok(m),
        _ => Err(QusError::InvalidState(format!("{} is not a trained {want} model", path.display()))),
    }
}

/// Trains one registry model on the dataset's train split, selecting epochs
/// or hyperparameters on its validation split. Writes `model.qusm` and
/// `history.csv`.
pub fn cmd_train(
    cfg: &RunConfig,
    args: &TrainArgs,
    out: &Path,
    on_epoch: &mut dyn FnMut(&str, &EpochRecord),
) -> Result<SavedModel> {
    cfg.train.validate()?;
    cfg.features.validate()?;
    ensure_dir(out)?;
    let manifest = read_manifest(&args.data)?;
    let mut data = TrainData {
        train: load_split(&args.data, &manifest, "train")?,
        val: load_split(&args.data, &manifest, "val")?,
        train_features: None,
    };
    let id = args.model;
    if (args.cnn_branch.is_some() || args.mlp_branch.is_some()) && !id.is_fusion() {
        return Err(QusError::Usage(format!("branch checkpoints only apply to fusion models, not {id}")));
    }
    let mut hist = Vec::new();
    let mut extra = serde_json::Map::new();
    let (classifier, inputs) = match id {
        ModelId::Mlp => {
            let (m, inputs) = train_mlp(cfg, &mut data, &mut hist, on_epoch)?;
            (Classifier::Net(NetModel::Mlp(m)), inputs)
        }
        ModelId::Svm | ModelId::Rf => {
            let normalizer = FeatureNormalizer::fit(data.raw_features(cfg)?)?;
            let train_x = normalizer.apply_all(data.raw_features(cfg)?)?;
            let val_x = normalizer.apply_all(&featurize_all(&data.val, &cfg.features)?)?;
            let (ty, vy) = (labels_of(&data.train), labels_of(&data.val));
            let classifier = if id == ModelId::Svm {
                let s = &cfg.svm;
                let (model, grid) = svm_grid_search((&train_x, &ty), (&val_x, &vy), &s.c_grid, &s.gamma_grid, &s.params)?;
                extra.insert("grid".into(), serde_json::to_value(grid).expect("grid serializes"));
                extra.insert("support_vectors".into(), json!(model.support_vectors.len()));
                Classifier::Svm(model)
            } else {
                let f = &cfg.forest;
                let (model, grid) = forest_grid_search((&train_x, &ty), (&val_x, &vy), &f.trees_grid, &f.depth_grid, &f.base)?;
                extra.insert("grid".into(), serde_json::to_value(grid).expect("grid serializes"));
                Classifier::Forest(model)
            };
            (classifier, ModelInputs { channel_mode: None, normalizer: Some(normalizer), features: cfg.features })
        }
        _ if !id.is_fusion() => {
            let m = train_cnn(cfg, id, &data, &mut hist, on_epoch)?;
            (Classifier::Net(NetModel::Cnn(m)), ModelInputs { channel_mode: id.channel_mode(), normalizer: None, features: cfg.features })
        }
        _ => {
            let branch_id = id.cnn_branch().expect("fusion ids have a branch");
            let cnn = match &args.cnn_branch {
                Some(p) => match load_branch(p, branch_id)?.classifier {
                    Classifier::Net(NetModel::Cnn(c)) => c,
                    _ => return Err(QusError::invalid(format!("{} is not a CNN", p.display()))),
                },
                None => train_cnn(cfg, branch_id, &data, &mut hist, on_epoch)?,
            };
            let (mlp, mlp_inputs) = match &args.mlp_branch {
                Some(p) => {
                    let m = load_branch(p, ModelId::Mlp)?;
                    match m.classifier {
                        Classifier::Net(NetModel::Mlp(mlp)) => (mlp, m.inputs),
                        _ => return Err(QusError::invalid(format!("{} is not an MLP", p.display()))),
                    }
                }
                None => train_mlp(cfg, &mut data, &mut hist, on_epoch)?,
            };
            let inputs = ModelInputs { channel_mode: id.channel_mode(), ..mlp_inputs };
            let (fusion, h) = train_fusion(cnn, mlp, cfg.fusion, &inputs, &data.train, &data.val, &cfg.train, on_epoch)?;
            hist.push(h);
            (Classifier::Net(NetModel::Fusion(fusion)), inputs)
        }
    };
    let mut info = json!({
        "patch_shape": manifest.patch_shape,
        "train_sources": source_list(&data.train),
        "histories": hist.iter().map(history_summary).collect::<Vec<_>>(),
    });
    info.as_object_mut().expect("object").extend(extra);
    let mut model = SavedModel { id, classifier, inputs, seed: cfg.train.seed, info };
    model.save(&out.join(MODEL_FILE))?;
    write_file(&out.join("history.csv"), histories_csv(&hist))?;
    let summary = json!({
        "model": id.to_string(),
        "histories": model.info["histories"],
        "grid": model.info.get("grid"),
    });
    write_run_json(out, "train", args.to_json(), cfg, summary)?;
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub split: String,
}

/// Scores one dataset split and writes `report.json`, `roc.csv` and
/// `scores.csv`.
pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs, out: &Path) -> Result<EvalReport> {
    let mut model = SavedModel::load(&args.model)?;
    let manifest = read_manifest(&args.data)?;
    let [rows, cols] = manifest.patch_shape;
    model.check_patch_shape(rows, cols)?;
    let patches = load_split(&args.data, &manifest, &args.split)?;
    let scores = model.score(&patches, cfg.train.eval_chunk)?;
    let labels = patches.iter().map(|p| p.label.to_byte()).collect();
    let set = ScoredSet::new(scores, labels)?;
    let report = EvalReport::compute(&set, &cfg.bootstrap)?;

    let trained_on: BTreeSet<String> = model.train_sources().into_iter().collect();
    let seen = source_list(&patches).into_iter().filter(|s| trained_on.contains(s)).count();
    let mut extra = json!({
        "model_id": model.id.to_string(),
        "split": args.split,
        "n_patches": patches.len(),
        "score_kind": if model.outputs_probability() { "probability" } else { "decision_value" },
    });
    if seen > 0 {
        extra["warning"] = json!(format!("{seen} evaluated source(s) were used to train this model"));
    }
    write_report(out, &report, extra.clone())?;
    let mut csv = String::from("source_id,label,score\n");
    for (p, s) in patches.iter().zip(&set.scores) {
        writeln!(csv, "{},{},{}", p.source_id, p.label.to_byte(), s).unwrap();
    }
    write_file(&out.join("scores.csv"), csv)?;
    let args_json = json!({"model": path_json(&args.model), "data": path_json(&args.data), "split": args.split});
    let summary = json!({"auc": report.auc, "ci": [report.ci_low, report.ci_high], "youden_j": report.youden_j, "warning": extra.get("warning")});
    write_run_json(out, "eval", args_json, cfg, summary)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct MapArgs {
    pub model: PathBuf,
    pub frame: PathBuf,
    /// Defaults to the configured map overlap.
    pub overlap: Option<f64>,
}

/// Sliding-window probability map of one stored frame: `map.csv`, `map.pgm`
/// and `map.json`.
pub fn cmd_map(cfg: &RunConfig, args: &MapArgs, out: &Path) -> Result<ProbabilityMap> {
    let mut model = SavedModel::load(&args.model)?;
    let records = store::read(&args.frame, FRAME_MAGIC)?;
    let [record] = records.as_slice() else {
        return Err(QusError::format(&args.frame, format!("expected one frame, found {}", records.len())));
    };
    let patch = model.patch_shape().unwrap_or((cfg.dataset.patch_rows, cfg.dataset.patch_cols));
    let source_id = args
        .frame
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "frame".into());
    let overlap = args.overlap.unwrap_or(cfg.map_overlap);
    let pitch = cfg.dataset.sim.axial_pitch_mm();
    let map = probability_map(&mut model, &record.values, &source_id, patch, overlap, pitch, cfg.train.eval_chunk)?;
    ensure_dir(out)?;
    write_file(&out.join("map.csv"), map.csv())?;
    write_file(&out.join("map.pgm"), render_pgm(&map))?;
    let mut meta = serde_json::to_value(&map).expect("map serializes");
    meta["model_id"] = json!(model.id.to_string());
    meta["frame_label"] = json!(record.label);
    meta["mean_probability"] = json!(map.mean());
    write_file(&out.join("map.json"), pretty(&meta))?;
    let args_json = json!({"model": path_json(&args.model), "frame": path_json(&args.frame), "overlap": overlap});
    write_run_json(out, "map", args_json, cfg, json!({"rows": map.rows, "cols": map.cols, "mean_probability": map.mean()}))?;
    Ok(map)
}

#[derive(Debug, Clone)]
pub struct FinetuneArgs {
    pub model: PathBuf,
    /// Adaptation dataset.
    pub data: PathBuf,
    pub adapt_split: String,
    pub val_split: String,
    /// Dataset whose evaluation split must stay unseen; defaults to `data`.
    pub eval_data: Option<PathBuf>,
    pub eval_split: String,
}

impl FinetuneArgs {
    pub fn new(model: PathBuf, data: PathBuf) -> Self {
        Self {
            model,
            data,
            adapt_split: "train".into(),
            val_split: "val".into(),
            eval_data: None,
            eval_split: "test".into(),
        }
    }
}

/// Fine-tunes a trained network on an adaptation dataset at reduced learning
/// rate. Fails if adaptation and evaluation data share a source.
pub fn cmd_finetune(
    cfg: &RunConfig,
    args: &FinetuneArgs,
    out: &Path,
    on_epoch: &mut dyn FnMut(&str, &EpochRecord),
) -> Result<SavedModel> {
    let mut model = SavedModel::load(&args.model)?;
    let manifest = read_manifest(&args.data)?;
    let [rows, cols] = manifest.patch_shape;
    model.check_patch_shape(rows, cols)?;
    let adapt = load_split(&args.data, &manifest, &args.adapt_split)?;
    let val = load_split(&args.data, &manifest, &args.val_split)?;
    let eval_dir = args.eval_data.as_deref().unwrap_or(&args.data);
    let eval_manifest = read_manifest(eval_dir)?;
    let eval_sources: BTreeSet<String> =
        eval_manifest.split(&args.eval_split)?.source_ids().map(str::to_string).collect();
    let Classifier::Net(net) = &mut model.classifier else {
        return Err(QusError::invalid(format!("model {} is not a neural network", model.id)));
    };
    let tcfg = cfg.finetune_config();
    let hist = finetune(net, &model.inputs, &adapt, &val, &eval_sources, &tcfg, on_epoch)?;
    ensure_dir(out)?;
    if hist.iter().any(|h| !h.epochs.is_empty()) {
        let mut sources = model.train_sources();
        sources.extend(source_list(&adapt));
        sources.sort();
        sources.dedup();
        model.info["train_sources"] = json!(sources);
        model.info["finetune"] = json!(hist.iter().map(history_summary).collect::<Vec<_>>());
    }
    model.save(&out.join(MODEL_FILE))?;
    write_file(&out.join("history.csv"), histories_csv(&hist))?;
    let args_json = json!({
        "model": path_json(&args.model),
        "data": path_json(&args.data),
        "adapt_split": args.adapt_split,
        "val_split": args.val_split,
        "eval_data": path_json(eval_dir),
        "eval_split": args.eval_split,
    });
    let summary = json!({"model": model.id.to_string(), "histories": hist.iter().map(history_summary).collect::<Vec<_>>()});
    write_run_json(out, "finetune", args_json, cfg, summary)?;
    Ok(model)
}
