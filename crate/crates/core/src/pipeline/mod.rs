//! End-to-end commands behind the `qus` binary: dataset simulation,
//! featurization, training, evaluation, parametric maps and fine-tuning.
//! Every command writes its outputs under one directory together with a
//! `run.json` echo of the configuration that produced them.

mod commands;
mod config;
mod map;
mod model;

pub use commands::{
    cmd_eval, cmd_featurize, cmd_finetune, cmd_map, cmd_simulate, cmd_train, write_run_json, EvalArgs,
    FinetuneArgs, MapArgs, TrainArgs,
};
pub use config::{ForestSearch, RunConfig, SvmSearch};
pub use map::{probability_map, render_pgm, ProbabilityMap};
pub use model::{Classifier, ModelId, SavedModel, MODEL_FILE};
