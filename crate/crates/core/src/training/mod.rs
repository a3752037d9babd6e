//! Training orchestration: augmentation, cyclic learning rate, early stopping
//! on validation AUC, staged fusion training and fine-tuning.

pub mod augment;
pub mod schedule;
mod trainer;

pub use augment::{augment, AugmentConfig};
pub use schedule::{cyclic_lr, EarlyStopping, Schedule, StopDecision};
pub use trainer::{
    check_leakage, finetune, predict_patches, targets, train_fusion, train_fusion_head, train_network,
    EpochRecord, ModelInputs, TrainConfig, TrainHistory,
};
