//! ROC analysis: exact Mann-Whitney AUC, ROC vertices, Youden's index and
//! percentile-bootstrap confidence intervals.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QusError, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    /// 1 = positive (FDS), 0 = negative (LDS)
    pub labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(QusError::invalid(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(QusError::invalid("labels must be 0 or 1"));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(QusError::invalid("scores contain NaN"));
        }
        let set = Self { scores, labels };
        let (p, n) = set.class_counts();
        if p == 0 || n == 0 {
            return Err(QusError::invalid("both classes must be present"));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// (positives, negatives)
    pub fn class_counts(&self) -> (usize, usize) {
        let p = self.labels.iter().filter(|&&l| l == 1).count();
        (p, self.labels.len() - p)
    }

    pub fn reversed(&self) -> Self {
        Self {
            scores: self.scores.iter().map(|s| -s).collect(),
            labels: self.labels.clone(),
        }
    }

    /// Tie groups in ascending score order: (score, positives, negatives).
    fn groups(&self) -> Vec<(f64, usize, usize)> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        let mut groups: Vec<(f64, usize, usize)> = Vec::new();
        for i in idx {
            let s = self.scores[i];
            let pos = usize::from(self.labels[i] == 1);
            match groups.last_mut() {
                Some(g) if g.0 == s => {
                    g.1 += pos;
                    g.2 += 1 - pos;
                }
                _ => groups.push((s, pos, 1 - pos)),
            }
        }
        groups
    }
}

/// P(score+ > score-) + 0.5 P(tie), from tie-grouped ranks.
pub fn auc(set: &ScoredSet) -> f64 {
    let (p, n) = set.class_counts();
    let mut neg_below = 0usize;
    let mut wins = 0.0f64;
    for (_, gp, gn) in set.groups() {
        wins += (gp * neg_below) as f64 + 0.5 * (gp * gn) as f64;
        neg_below += gn;
    }
    wins / (p as f64 * n as f64)
}

/// ROC vertices from (0,0) to (1,1) sweeping thresholds from high to low.
pub fn roc_curve(set: &ScoredSet) -> Vec<(f64, f64)> {
    roc_with_thresholds(set).into_iter().map(|(f, t, _)| (f, t)).collect()
}

/// (fpr, tpr, threshold) where a sample is positive iff score > threshold.
fn roc_with_thresholds(set: &ScoredSet) -> Vec<(f64, f64, f64)> {
    let (p, n) = set.class_counts();
    let groups = set.groups();
    let mut pts = Vec::with_capacity(groups.len() + 1);
    pts.push((0.0, 0.0, f64::INFINITY));
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &(_, gp, gn)) in groups.iter().enumerate().rev() {
        tp += gp;
        fp += gn;
        let threshold = if k == 0 {
            f64::NEG_INFINITY
        } else {
            0.5 * (groups[k - 1].0 + groups[k].0)
        };
        pts.push((fp as f64 / n as f64, tp as f64 / p as f64, threshold));
    }
    pts
}

pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Maximum of sensitivity + specificity - 1 over thresholds at +inf, -inf and
/// midpoints between adjacent distinct scores. Ties keep the highest threshold.
pub fn youden(set: &ScoredSet) -> (f64, f64) {
    roc_with_thresholds(set)
        .into_iter()
        .fold((f64::NEG_INFINITY, f64::INFINITY), |best, (f, t, thr)| {
            let j = t - f;
            if j > best.0 {
                (j, thr)
            } else {
                best
            }
        })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap interval of the AUC. Resample `i` draws from its own
/// stream of `seed`; draws missing a class are repeated.
pub fn bootstrap_ci(set: &ScoredSet, n_resamples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if n_resamples == 0 {
        return Err(QusError::invalid("n_resamples must be positive"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(QusError::invalid("level must lie in (0, 1)"));
    }
    let n = set.len();
    let mut aucs: Vec<f64> = (0..n_resamples)
        .map(|i| {
            let mut rng = rng::stream(seed, i as u64);
            loop {
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let labels: Vec<u8> = idx.iter().map(|&k| set.labels[k]).collect();
                if labels.contains(&0) && labels.contains(&1) {
                    let scores = idx.iter().map(|&k| set.scores[k]).collect();
                    break auc(&ScoredSet { scores, labels });
                }
            }
        })
        .collect();
    aucs.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((percentile(&aucs, tail), percentile(&aucs, 1.0 - tail)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { n_resamples: 1000, level: 0.95, seed: 0 }
    }
}

mod float_or_inf {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Num(*v).serialize(s)
        } else if *v > 0.0 {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Repr::Text("-inf".into()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad threshold {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub youden_j: f64,
    #[serde(with = "float_or_inf")]
    pub youden_threshold: f64,
    pub n_positive: usize,
    pub n_negative: usize,
    pub bootstrap: BootstrapConfig,
    #[serde(skip)]
    pub roc_points: Vec<(f64, f64)>,
}

impl EvalReport {
    /// The interval is widened to contain the point estimate if the
    /// percentile bounds happen to exclude it.
    pub fn compute(set: &ScoredSet, boot: &BootstrapConfig) -> Result<Self> {
        let a = auc(set);
        let (lo, hi) = bootstrap_ci(set, boot.n_resamples, boot.level, boot.seed)?;
        let (j, thr) = youden(set);
        let (p, n) = set.class_counts();
        Ok(Self {
            auc: a,
            ci_low: lo.min(a),
            ci_high: hi.max(a),
            youden_j: j,
            youden_threshold: thr,
            n_positive: p,
            n_negative: n,
            bootstrap: *boot,
            roc_points: roc_curve(set),
        })
    }

    pub fn roc_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (f, t) in &self.roc_points {
            writeln!(out, "{f},{t}").unwrap();
        }
        out
    }
}

/// Writes `report.json` (report plus any extra fields) and `roc.csv`.
pub fn write_report(dir: &Path, report: &EvalReport, extra: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| QusError::io(dir, e))?;
    let mut value = serde_json::to_value(report).expect("report serializes");
    if let (Some(obj), serde_json::Value::Object(more)) = (value.as_object_mut(), extra) {
        obj.extend(more);
    }
    let path = dir.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).map_err(|e| QusError::io(&path, e))?;
    let path = dir.join("roc.csv");
    fs::write(&path, report.roc_csv()).map_err(|e| QusError::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force pair counting.
    fn pair_auc(set: &ScoredSet) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..set.len() {
            for j in 0..set.len() {
                if set.labels[i] == 1 && set.labels[j] == 0 {
                    pairs += 1.0;
                    if set.scores[i] > set.scores[j] {
                        wins += 1.0;
                    } else if set.scores[i] == set.scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    fn worked() -> ScoredSet {
        ScoredSet::new(vec![0.1, 0.4, 0.35, 0.8], vec![0, 0, 1, 1]).unwrap()
    }

    #[test]
    fn worked_example() {
        assert_eq!(auc(&worked()), 0.75);
        assert_eq!(youden(&worked()).0, 0.5);
    }

    #[test]
    fn perfect_and_tied_scores() {
        let perfect = ScoredSet::new(vec![0.1, 0.2, 0.8, 0.9], vec![0, 0, 1, 1]).unwrap();
        assert_eq!(auc(&perfect), 1.0);
        assert_eq!(youden(&perfect).0, 1.0);
        assert!(roc_curve(&perfect).contains(&(0.0, 1.0)));
        let tied = ScoredSet::new(vec![0.3; 6], vec![0, 1, 0, 1, 1, 0]).unwrap();
        assert_eq!(auc(&tied), 0.5);
        assert_eq!(youden(&tied).0, 0.0);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(ScoredSet::new(vec![0.1, 0.2], vec![1, 1]).is_err());
        assert!(ScoredSet::new(vec![0.1], vec![1, 0]).is_err());
    }

    #[test]
    fn bootstrap_degenerate_and_deterministic() {
        let perfect = ScoredSet::new(vec![0.1, 0.2, 0.8, 0.9], vec![0, 0, 1, 1]).unwrap();
        assert_eq!(bootstrap_ci(&perfect, 200, 0.95, 3).unwrap(), (1.0, 1.0));
        let a = bootstrap_ci(&worked(), 100, 0.95, 9).unwrap();
        let b = bootstrap_ci(&worked(), 100, 0.95, 9).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn report_json_round_trips() {
        let tied = ScoredSet::new(vec![0.3; 4], vec![0, 1, 0, 1]).unwrap();
        let r = EvalReport::compute(&tied, &BootstrapConfig { n_resamples: 20, ..Default::default() }).unwrap();
        assert_eq!(r.youden_threshold, f64::INFINITY);
        let text = serde_json::to_string(&r).unwrap();
        let back: EvalReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.auc, r.auc);
        assert_eq!(back.youden_threshold, r.youden_threshold);
        assert!(r.ci_low <= r.auc && r.auc <= r.ci_high);
    }

    fn arb_set() -> impl Strategy<Value = ScoredSet> {
        (2usize..60)
            .prop_flat_map(|n| {
                (
                    prop::collection::vec(0u32..20, n),
                    prop::collection::vec(0u8..2, n),
                )
            })
            .prop_filter_map("needs both classes", |(s, l)| {
                ScoredSet::new(s.into_iter().map(|v| v as f64 / 4.0).collect(), l).ok()
            })
    }

    proptest! {
        #[test]
        fn trapezoid_matches_pair_counting(set in arb_set()) {
            let pts = roc_curve(&set);
            prop_assert!((trapezoid_area(&pts) - pair_auc(&set)).abs() < 1e-12);
            prop_assert!((auc(&set) - pair_auc(&set)).abs() < 1e-12);
            prop_assert_eq!(pts[0], (0.0, 0.0));
            prop_assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
            for w in pts.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
        }

        #[test]
        fn auc_is_rank_based(set in arb_set()) {
            let mapped = ScoredSet {
                scores: set.scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect(),
                labels: set.labels.clone(),
            };
            prop_assert_eq!(auc(&set), auc(&mapped));
            prop_assert!((auc(&set.reversed()) - (1.0 - auc(&set))).abs() < 1e-12);
        }

        #[test]
        fn youden_matches_threshold_sweep(set in arb_set()) {
            // brute force: every midpoint plus +-inf, positive iff score > t
            let mut uniq = set.scores.clone();
            uniq.sort_by(f64::total_cmp);
            uniq.dedup();
            let mut thresholds = vec![f64::INFINITY, f64::NEG_INFINITY];
            thresholds.extend(uniq.windows(2).map(|w| 0.5 * (w[0] + w[1])));
            let (p, n) = set.class_counts();
            let best = thresholds.iter().map(|&t| {
                let tp = (0..set.len()).filter(|&i| set.labels[i] == 1 && set.scores[i] > t).count();
                let tn = (0..set.len()).filter(|&i| set.labels[i] == 0 && set.scores[i] <= t).count();
                tp as f64 / p as f64 + tn as f64 / n as f64 - 1.0
            }).fold(f64::NEG_INFINITY, f64::max);
            let (j, thr) = youden(&set);
            prop_assert!((j - best).abs() < 1e-12);
            let tp = (0..set.len()).filter(|&i| set.labels[i] == 1 && set.scores[i] > thr).count();
            let fp = (0..set.len()).filter(|&i| set.labels[i] == 0 && set.scores[i] > thr).count();
            prop_assert!((tp as f64 / p as f64 - fp as f64 / n as f64 - j).abs() < 1e-12);
        }
    }
}
