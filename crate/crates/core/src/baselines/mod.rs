//! Feature-space baselines: an RBF-kernel SVM trained by SMO and a CART
//! random forest.

mod forest;
mod svm;

pub use forest::{train_random_forest, forest_grid_search, ForestConfig, ForestGridResult, RandomForest, Tree, TreeNode};
pub use svm::{svm_grid_search, train_svm, SvmGridResult, SvmModel, SvmParams};

use crate::envstats::FeatureVector;
use crate::error::{QusError, Result};
use crate::specklesim::Label;

/// Validates a labelled feature set and returns its targets as booleans
/// (true = FDS).
pub(crate) fn binary_targets(features: &[FeatureVector], labels: &[Label]) -> Result<Vec<bool>> {
    if features.len() != labels.len() {
        return Err(QusError::invalid("features and labels differ in length"));
    }
    let targets = labels
        .iter()
        .map(|l| match l {
            Label::Fds => Ok(true),
            Label::Lds => Ok(false),
            Label::Unknown => Err(QusError::invalid("training labels must be FDS or LDS")),
        })
        .collect::<Result<Vec<_>>>()?;
    if !targets.iter().any(|&t| t) || targets.iter().all(|&t| t) {
        return Err(QusError::invalid("training data must contain both classes"));
    }
    Ok(targets)
}

pub(crate) fn require_normalized(fv: &FeatureVector) -> Result<()> {
    if fv.normalized {
        Ok(())
    } else {
        Err(QusError::invalid("baseline classifiers expect normalized feature vectors"))
    }
}
