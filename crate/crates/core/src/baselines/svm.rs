use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{binary_targets, require_normalized};
use crate::envstats::FeatureVector;
use crate::error::{QusError, Result};
use crate::evaluation::{auc, ScoredSet};
use crate::specklesim::Label;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_iter: usize,
    /// Kernel rows kept in memory.
    pub cache_rows: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { c: 1.0, gamma: 1.0, tol: 1e-3, max_iter: 10_000_000, cache_rows: 2000 }
    }
}

/// `f(x) = Σ coef_i k(sv_i, x) + bias` with `k(a, b) = exp(-γ‖a − b‖²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Vec<[f64; 4]>,
    /// `α_i y_i` for each support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
}

fn rbf(a: &[f64; 4], b: &[f64; 4], gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d).exp()
}

impl SvmModel {
    pub fn decision(&self, x: &[f64; 4]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * rbf(sv, x, self.gamma))
            .sum::<f64>()
            + self.bias
    }

    /// Uncalibrated decision value, used as the ranking score.
    pub fn score(&self, fv: &FeatureVector) -> Result<f64> {
        require_normalized(fv)?;
        Ok(self.decision(&fv.to_array()))
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<Label> {
        Ok(if self.score(fv)? > 0.0 { Label::Fds } else { Label::Lds })
    }

    /// Largest violation of the soft-margin KKT conditions over a training
    /// set: `y f ≥ 1` at α = 0, `y f = 1` for free vectors, `y f ≤ 1` at α = C.
    /// `alpha` is aligned with `x`.
    pub fn kkt_violation(&self, x: &[[f64; 4]], y: &[bool], alpha: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            let s = if y[i] { 1.0 } else { -1.0 };
            let m = s * self.decision(&x[i]);
            let v = if alpha[i] <= 0.0 {
                (1.0 - m).max(0.0)
            } else if alpha[i] >= self.c {
                (m - 1.0).max(0.0)
            } else {
                (m - 1.0).abs()
            };
            worst = worst.max(v);
        }
        worst
    }
}

struct KernelRows<'a> {
    x: &'a [[f64; 4]],
    gamma: f64,
    cap: usize,
    rows: HashMap<usize, (u64, Vec<f64>)>,
    clock: u64,
}

impl<'a> KernelRows<'a> {
    fn row(&mut self, i: usize) -> &[f64] {
        self.clock += 1;
        let clock = self.clock;
        if !self.rows.contains_key(&i) {
            if self.rows.len() >= self.cap {
                let oldest = *self.rows.iter().min_by_key(|(_, (t, _))| *t).expect("non-empty").0;
                self.rows.remove(&oldest);
            }
            let xi = self.x[i];
            let r = self.x.iter().map(|xj| rbf(&xi, xj, self.gamma)).collect();
            self.rows.insert(i, (clock, r));
        }
        let entry = self.rows.get_mut(&i).expect("inserted");
        entry.0 = clock;
        &entry.1
    }
}

/// Dual coefficients from SMO with second-order working-set selection.
/// Returns `(alpha, bias)`.
fn smo(x: &[[f64; 4]], y: &[bool], p: &SvmParams) -> Result<(Vec<f64>, f64)> {
    let n = x.len();
    let s: Vec<f64> = y.iter().map(|&t| if t { 1.0 } else { -1.0 }).collect();
    let c = p.c;
    let mut alpha = vec![0.0; n];
    // gradient of ½αᵀQα − eᵀα with Q_ij = s_i s_j K_ij
    let mut grad = vec![-1.0; n];
    let mut k = KernelRows { x, gamma: p.gamma, cap: p.cache_rows.max(2), rows: HashMap::new(), clock: 0 };
    let up = |a: f64, s: f64| (s > 0.0 && a < c) || (s < 0.0 && a > 0.0);
    let low = |a: f64, s: f64| (s > 0.0 && a > 0.0) || (s < 0.0 && a < c);
    let mut converged = false;
    for _ in 0..p.max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(alpha[t], s[t]) && -s[t] * grad[t] > gmax {
                gmax = -s[t] * grad[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            if low(alpha[t], s[t]) {
                gmin = gmin.min(-s[t] * grad[t]);
            }
        }
        if i == usize::MAX || gmax - gmin < p.tol {
            converged = true;
            break;
        }
        let ki = k.row(i).to_vec();
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], s[t]) {
                continue;
            }
            let b = gmax + s[t] * grad[t];
            if b <= 0.0 {
                continue;
            }
            let a = (ki[i] + 1.0 - 2.0 * ki[t]).max(TAU);
            let obj = -b * b / a;
            if obj < best {
                best = obj;
                j = t;
            }
        }
        if j == usize::MAX {
            converged = true;
            break;
        }
        let kj = k.row(j).to_vec();
        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        let quad = (ki[i] + kj[j] - 2.0 * ki[j]).max(TAU);
        if s[i] != s[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 && alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = diff;
            } else if diff <= 0.0 && alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 && alpha[i] > c {
                alpha[i] = c;
                alpha[j] = c - diff;
            } else if diff <= 0.0 && alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c && alpha[i] > c {
                alpha[i] = c;
                alpha[j] = sum - c;
            } else if sum <= c && alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c && alpha[j] > c {
                alpha[j] = c;
                alpha[i] = sum - c;
            } else if sum <= c && alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let di = alpha[i] - ai_old;
        let dj = alpha[j] - aj_old;
        for t in 0..n {
            grad[t] += s[t] * (s[i] * ki[t] * di + s[j] * kj[t] * dj);
        }
    }
    if !converged {
        return Err(QusError::TrainingFailure(format!("SMO did not converge within {} iterations", p.max_iter)));
    }
    // bias from free vectors, or the midpoint of the feasible interval
    let (mut sum, mut nfree) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = s[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += yg;
            nfree += 1;
        } else if (alpha[t] >= c && s[t] < 0.0) || (alpha[t] <= 0.0 && s[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if nfree > 0 { sum / nfree as f64 } else { (ub + lb) / 2.0 };
    Ok((alpha, -rho))
}

/// Trains an RBF SVM on normalized features. The returned coefficients are
/// rounded to f32 so the model matches its checkpoint exactly.
pub fn train_svm(features: &[FeatureVector], labels: &[Label], params: &SvmParams) -> Result<SvmModel> {
    let (model, _, _) = train_svm_full(features, labels, params)?;
    Ok(model)
}

/// Like `train_svm`, also returning the un-rounded model and the full alpha
/// vector for KKT inspection.
pub(crate) fn train_svm_full(features: &[FeatureVector], labels: &[Label], params: &SvmParams) -> Result<(SvmModel, SvmModel, Vec<f64>)> {
    let y = binary_targets(features, labels)?;
    for fv in features {
        require_normalized(fv)?;
    }
    if !(params.c > 0.0 && params.gamma > 0.0 && params.tol > 0.0) {
        return Err(QusError::invalid("C, gamma and tol must be positive"));
    }
    let x: Vec<[f64; 4]> = features.iter().map(FeatureVector::to_array).collect();
    let (alpha, bias) = smo(&x, &y, params)?;
    let mut sv = Vec::new();
    let mut coef = Vec::new();
    for i in 0..x.len() {
        if alpha[i] > 0.0 {
            sv.push(x[i]);
            coef.push(if y[i] { alpha[i] } else { -alpha[i] });
        }
    }
    let exact = SvmModel { support_vectors: sv, coef, bias, gamma: params.gamma, c: params.c };
    let r = |v: f64| v as f32 as f64;
    let rounded = SvmModel {
        support_vectors: exact.support_vectors.iter().map(|s| s.map(r)).collect(),
        coef: exact.coef.iter().copied().map(r).collect(),
        bias: r(exact.bias),
        gamma: r(exact.gamma),
        c: exact.c,
    };
    Ok((rounded, exact, alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmGridResult {
    pub c: f64,
    pub gamma: f64,
    pub val_auc: f64,
}

/// Grid search over (C, γ) maximizing validation AUC; ties keep the earlier
/// grid point.
pub fn svm_grid_search(
    train: (&[FeatureVector], &[Label]),
    val: (&[FeatureVector], &[Label]),
    cs: &[f64],
    gammas: &[f64],
    base: &SvmParams,
) -> Result<(SvmModel, Vec<SvmGridResult>)> {
    let val_labels: Vec<u8> = val.1.iter().map(|l| l.to_byte()).collect();
    let mut results = Vec::new();
    let mut best: Option<(f64, SvmModel)> = None;
    for &c in cs {
        for &gamma in gammas {
            let model = train_svm(train.0, train.1, &SvmParams { c, gamma, ..*base })?;
            let scores = val.0.iter().map(|f| model.score(f)).collect::<Result<Vec<_>>>()?;
            let a = auc(&ScoredSet::new(scores, val_labels.clone())?);
            results.push(SvmGridResult { c, gamma, val_auc: a });
            if best.as_ref().is_none_or(|(b, _)| a > *b) {
                best = Some((a, model));
            }
        }
    }
    let (_, model) = best.ok_or_else(|| QusError::invalid("empty hyperparameter grid"))?;
    Ok((model, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn fv(a: [f64; 4]) -> FeatureVector {
        FeatureVector::from_array(a, true)
    }

    fn blobs(n: usize, seed: u64) -> (Vec<FeatureVector>, Vec<Label>) {
        let mut rng = seeded(seed);
        let mut f = Vec::new();
        let mut l = Vec::new();
        for i in 0..n {
            let pos = i % 2 == 0;
            let c = if pos { 0.65 } else { 0.35 };
            f.push(fv([0; 4].map(|_: i32| c + 0.15 * (rng.random::<f64>() - 0.5) * 2.0)));
            l.push(if pos { Label::Fds } else { Label::Lds });
        }
        (f, l)
    }

    #[test]
    fn two_points_get_opposite_signs() {
        let f = vec![fv([0.1, 0.1, 0.1, 0.1]), fv([0.9, 0.9, 0.9, 0.9])];
        let l = vec![Label::Lds, Label::Fds];
        let m = train_svm(&f, &l, &SvmParams::default()).unwrap();
        assert!(m.score(&f[0]).unwrap() < 0.0);
        assert!(m.score(&f[1]).unwrap() > 0.0);
    }

    #[test]
    fn xor_is_learned_with_rbf() {
        let f = vec![fv([0.0, 0.0, 0.5, 0.5]), fv([1.0, 1.0, 0.5, 0.5]), fv([0.0, 1.0, 0.5, 0.5]), fv([1.0, 0.0, 0.5, 0.5])];
        let l = vec![Label::Fds, Label::Fds, Label::Lds, Label::Lds];
        let m = train_svm(&f, &l, &SvmParams { c: 10.0, gamma: 2.0, ..SvmParams::default() }).unwrap();
        for (x, y) in f.iter().zip(&l) {
            assert_eq!(m.predict(x).unwrap(), *y);
        }
    }

    #[test]
    fn kkt_holds_at_convergence() {
        let (f, l) = blobs(120, 3);
        let p = SvmParams { c: 1.0, gamma: 10.0, tol: 1e-4, ..SvmParams::default() };
        let (_, exact, alpha) = train_svm_full(&f, &l, &p).unwrap();
        let x: Vec<[f64; 4]> = f.iter().map(FeatureVector::to_array).collect();
        let y: Vec<bool> = l.iter().map(|&l| l == Label::Fds).collect();
        assert!(exact.kkt_violation(&x, &y, &alpha) < 1e-3);
        assert!(exact.coef.iter().all(|c| c.abs() <= p.c + 1e-12));
    }

    #[test]
    fn positive_support_vector_scores_near_margin() {
        let (f, l) = blobs(60, 5);
        let (_, exact, alpha) = train_svm_full(&f, &l, &SvmParams { c: 100.0, gamma: 1.0, tol: 1e-5, ..SvmParams::default() }).unwrap();
        for i in 0..f.len() {
            if alpha[i] > 0.0 && l[i] == Label::Fds {
                assert!(exact.decision(&f[i].to_array()) >= 1.0 - 1e-3);
            }
        }
    }

    #[test]
    fn training_order_does_not_change_decisions() {
        let (f, l) = blobs(80, 7);
        let p = SvmParams { c: 1.0, gamma: 5.0, tol: 1e-6, ..SvmParams::default() };
        let m1 = train_svm(&f, &l, &p).unwrap();
        let mut idx: Vec<usize> = (0..f.len()).collect();
        idx.shuffle(&mut seeded(8));
        let f2: Vec<_> = idx.iter().map(|&i| f[i]).collect();
        let l2: Vec<_> = idx.iter().map(|&i| l[i]).collect();
        let m2 = train_svm(&f2, &l2, &p).unwrap();
        for x in &f {
            assert!((m1.score(x).unwrap() - m2.score(x).unwrap()).abs() < 1e-3);
            assert_eq!(m1.predict(x).unwrap(), m2.predict(x).unwrap());
        }
    }

    #[test]
    fn score_is_continuous() {
        let (f, l) = blobs(40, 9);
        let m = train_svm(&f, &l, &SvmParams::default()).unwrap();
        let x = fv([0.5, 0.4, 0.6, 0.5]);
        let y = fv([0.5 + 1e-9, 0.4, 0.6, 0.5]);
        assert!((m.score(&x).unwrap() - m.score(&y).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn rejects_single_class_and_raw_features() {
        let f = vec![fv([0.1; 4]), fv([0.2; 4])];
        assert!(train_svm(&f, &[Label::Fds, Label::Fds], &SvmParams::default()).is_err());
        let raw = vec![FeatureVector::from_array([0.1; 4], false), FeatureVector::from_array([0.9; 4], false)];
        assert!(train_svm(&raw, &[Label::Lds, Label::Fds], &SvmParams::default()).is_err());
    }

    #[test]
    fn iteration_limit_is_a_training_failure() {
        let (f, l) = blobs(50, 11);
        let err = train_svm(&f, &l, &SvmParams { max_iter: 1, ..SvmParams::default() }).unwrap_err();
        assert!(matches!(err, QusError::TrainingFailure(_)));
    }
}
