//! Envelope statistics of a patch: SNR (R), skewness (S), histogram entropy
//! and the Nakagami shape parameter with its likelihood-ratio statistic (T).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{QusError, Result};
use crate::specklesim::{EnvelopePatch, Label};

/// Relative floor for intensities entering the log terms of T.
const INTENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Power applied to the envelope before R and S.
    pub v: f64,
    pub entropy_bins: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { v: 0.5, entropy_bins: 100 }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v.is_finite() && self.v > 0.0) {
            return Err(QusError::invalid(format!("v must be positive, got {}", self.v)));
        }
        if self.entropy_bins < 2 {
            return Err(QusError::invalid("entropy_bins must be at least 2"));
        }
        Ok(())
    }
}

pub const FEATURE_NAMES: [&str; 4] = ["r", "s", "entropy", "t"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub r: f64,
    pub s: f64,
    pub entropy: f64,
    pub t: f64,
    pub normalized: bool,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; 4] {
        [self.r, self.s, self.entropy, self.t]
    }

    pub fn from_array(a: [f64; 4], normalized: bool) -> Self {
        Self { r: a[0], s: a[1], entropy: a[2], t: a[3], normalized }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NakagamiEstimate {
    pub m: f64,
    pub t: f64,
    pub k: usize,
    /// mean of ln(I), I = A^2
    pub mean_log_intensity: f64,
    /// ln of mean(I)
    pub log_mean_intensity: f64,
}

struct Moments {
    mean: f64,
    var: f64,
    third: f64,
}

fn moments(xs: impl Iterator<Item = f64> + Clone) -> Result<Moments> {
    let n = xs.clone().count();
    if n < 2 {
        return Err(QusError::degenerate("need at least two samples"));
    }
    let nf = n as f64;
    let mean = xs.clone().sum::<f64>() / nf;
    let (mut m2, mut m3) = (0.0, 0.0);
    for x in xs {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    let var = m2 / nf;
    if !(var > (1e-10 * mean).powi(2)) {
        return Err(QusError::degenerate("zero variance"));
    }
    Ok(Moments { mean, var, third: m3 / nf })
}

fn powered<'a>(patch: &'a EnvelopePatch, v: f64) -> impl Iterator<Item = f64> + Clone + 'a {
    patch.values.iter().map(move |&a| a.powf(v))
}

/// mean(A^v) / std(A^v)
pub fn snr_r(patch: &EnvelopePatch, v: f64) -> Result<f64> {
    let m = moments(powered(patch, v))?;
    Ok(m.mean / m.var.sqrt())
}

/// Third central moment of A^v over variance^1.5.
pub fn skewness_s(patch: &EnvelopePatch, v: f64) -> Result<f64> {
    let m = moments(powered(patch, v))?;
    Ok(m.third / m.var.powf(1.5))
}

/// Shannon entropy (natural log) of a `bins`-bin histogram of A^2 spanning
/// the patch's own intensity range.
pub fn entropy(patch: &EnvelopePatch, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(QusError::invalid("entropy needs at least two bins"));
    }
    let (lo, hi) = patch
        .values
        .iter()
        .map(|a| a * a)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| (lo.min(i), hi.max(i)));
    if !(hi > lo) {
        return Err(QusError::degenerate("constant intensity patch"));
    }
    let mut hist = vec![0usize; bins];
    let span = hi - lo;
    for a in patch.values.iter() {
        let idx = (((a * a - lo) / span) * bins as f64) as usize;
        hist[idx.min(bins - 1)] += 1;
    }
    let n = patch.values.len() as f64;
    Ok(-hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>())
}

/// Lanczos approximation (g = 7, 9 terms) of ln Gamma(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Generalized likelihood-ratio statistic against the Rayleigh hypothesis:
/// `2K (ln(m^m / Gamma(m)) + (m - 1)(mean ln I - ln mean I - 1))`.
pub fn glrt_statistic(m: f64, k: usize, mean_log_intensity: f64, log_mean_intensity: f64) -> f64 {
    2.0 * k as f64
        * (m * m.ln() - ln_gamma(m) + (m - 1.0) * (mean_log_intensity - log_mean_intensity - 1.0))
}

/// Moment estimate of the Nakagami shape `m = mean(I)^2 / var(I)` with I = A^2, plus T.
pub fn nakagami(patch: &EnvelopePatch) -> Result<NakagamiEstimate> {
    let intensity = || patch.values.iter().map(|a| a * a);
    let mom = moments(intensity())?;
    if !(mom.mean > 0.0) {
        return Err(QusError::degenerate("all-zero patch"));
    }
    let k = patch.values.len();
    let m = mom.mean * mom.mean / mom.var;
    // logs of I / mean(I) keep T free of the overall intensity scale
    let mean_log_ratio =
        intensity().map(|i| (i / mom.mean).max(INTENSITY_FLOOR).ln()).sum::<f64>() / k as f64;
    let log_mean_intensity = mom.mean.ln();
    Ok(NakagamiEstimate {
        m,
        t: glrt_statistic(m, k, mean_log_ratio, 0.0),
        mean_log_intensity: mean_log_ratio + log_mean_intensity,
        k,
        log_mean_intensity,
    })
}

/// (R, S, entropy, T) of the raw envelope. The shape m is estimated for T
/// but not part of the vector.
pub fn featurize(patch: &EnvelopePatch, cfg: &FeatureConfig) -> Result<FeatureVector> {
    cfg.validate()?;
    let mom = moments(powered(patch, cfg.v))?;
    let fv = FeatureVector {
        r: mom.mean / mom.var.sqrt(),
        s: mom.third / mom.var.powf(1.5),
        entropy: entropy(patch, cfg.entropy_bins)?,
        t: nakagami(patch)?.t,
        normalized: false,
    };
    if fv.to_array().iter().any(|v| !v.is_finite()) {
        return Err(QusError::degenerate("non-finite feature"));
    }
    Ok(fv)
}

pub fn featurize_all(patches: &[EnvelopePatch], cfg: &FeatureConfig) -> Result<Vec<FeatureVector>> {
    patches.iter().map(|p| featurize(p, cfg)).collect()
}

/// Per-feature min-max scaling fitted on training data only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub min: [f64; 4],
    pub max: [f64; 4],
}

impl FeatureNormalizer {
    pub fn fit(train: &[FeatureVector]) -> Result<Self> {
        if train.len() < 2 {
            return Err(QusError::degenerate("normalizer needs at least two vectors"));
        }
        if train.iter().any(|f| f.normalized) {
            return Err(QusError::invalid("normalizer must be fitted on raw features"));
        }
        let mut min = [f64::INFINITY; 4];
        let mut max = [f64::NEG_INFINITY; 4];
        for f in train {
            for (j, v) in f.to_array().into_iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        for j in 0..4 {
            if !(max[j] > min[j]) {
                return Err(QusError::degenerate(format!(
                    "feature {} is constant over the training set",
                    FEATURE_NAMES[j]
                )));
            }
        }
        Ok(Self { min, max })
    }

    /// `(x - min) / (max - min)`; values outside the training range are not clipped.
    pub fn apply(&self, fv: &FeatureVector) -> Result<FeatureVector> {
        if fv.normalized {
            return Err(QusError::invalid("feature vector is already normalized"));
        }
        let a = fv.to_array();
        let out = std::array::from_fn(|j| (a[j] - self.min[j]) / (self.max[j] - self.min[j]));
        Ok(FeatureVector::from_array(out, true))
    }

    pub fn apply_all(&self, fvs: &[FeatureVector]) -> Result<Vec<FeatureVector>> {
        fvs.iter().map(|f| self.apply(f)).collect()
    }
}

/// CSV with header `r,s,entropy,t,label`; shortest round-trip float formatting.
pub fn features_csv(features: &[FeatureVector], labels: &[Label]) -> Result<String> {
    if features.len() != labels.len() {
        return Err(QusError::invalid("features and labels differ in length"));
    }
    let mut out = String::from("r,s,entropy,t,label\n");
    for (f, l) in features.iter().zip(labels) {
        let label = match l {
            Label::Fds => "1",
            Label::Lds => "0",
            Label::Unknown => "",
        };
        writeln!(out, "{},{},{},{},{}", f.r, f.s, f.entropy, f.t, label).unwrap();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn patch(values: Vec<f64>, rows: usize, cols: usize) -> EnvelopePatch {
        EnvelopePatch::new(Array2::from_shape_vec((rows, cols), values).unwrap(), Label::Unknown, 0.0, "t")
            .unwrap()
    }

    #[test]
    fn constant_patch_is_degenerate() {
        let p = patch(vec![3.0; 64], 8, 8);
        assert!(matches!(snr_r(&p, 0.5), Err(QusError::DegenerateStatistic(_))));
        assert!(matches!(skewness_s(&p, 0.5), Err(QusError::DegenerateStatistic(_))));
        assert!(matches!(entropy(&p, 100), Err(QusError::DegenerateStatistic(_))));
        assert!(matches!(nakagami(&p), Err(QusError::DegenerateStatistic(_))));
    }

    #[test]
    fn all_zero_patch_is_degenerate() {
        let p = patch(vec![0.0; 16], 4, 4);
        assert!(nakagami(&p).is_err());
    }

    #[test]
    fn two_point_distribution_has_unit_snr() {
        let c = 1.7;
        let vals: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 0.0 } else { 2.0 * c }).collect();
        let p = patch(vals, 8, 8);
        assert!((snr_r(&p, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_samples_have_zero_skewness() {
        let vals: Vec<f64> = (0..50).flat_map(|i| [5.0 + i as f64 * 0.01, 5.0 - i as f64 * 0.01]).collect();
        let p = patch(vals, 10, 10);
        assert!(skewness_s(&p, 1.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn entropy_of_single_bin_and_uniform_mass() {
        // A^2 in {0, 1}: 99 zeros go to bin 0, one sample to the top bin
        let mut vals = vec![0.0; 99];
        vals.push(1.0);
        let h = entropy(&patch(vals, 10, 10), 100).unwrap();
        let p: f64 = 0.99;
        assert!((h - (-(p * p.ln()) - 0.01 * 0.01f64.ln())).abs() < 1e-12);

        // one sample per bin centre: A^2 = (k + 0.5) / 100 except the endpoints
        let mut vals: Vec<f64> = (0..100).map(|k| ((k as f64 + 0.5) / 100.0).sqrt()).collect();
        vals[0] = 0.0;
        vals[99] = 1.0;
        let h = entropy(&patch(vals, 10, 10), 100).unwrap();
        assert!((h - 100f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ln_gamma_reference_values() {
        let cases = [
            (0.5, std::f64::consts::PI.sqrt().ln()),
            (1.0, 0.0),
            (2.0, 0.0),
            (5.0, 24f64.ln()),
            (10.0, 362_880f64.ln()),
            (0.1, 9.513_507_698_668_732f64.ln()),
            (50.0, 144.565_743_946_344_9),
        ];
        for (x, want) in cases {
            let got = ln_gamma(x);
            let tol = 1e-10 * want.abs().max(1.0);
            assert!((got - want).abs() < tol, "lnGamma({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn glrt_vanishes_at_unit_shape() {
        assert_eq!(glrt_statistic(1.0, 1000, -0.3, 0.4), 0.0);
    }

    #[test]
    fn normalizer_round_trip_and_extrapolation() {
        let raw: Vec<FeatureVector> = (0..10)
            .map(|i| FeatureVector::from_array([i as f64, (i * i) as f64, 1.0 + i as f64 * 0.1, -(i as f64)], false))
            .collect();
        let nrm = FeatureNormalizer::fit(&raw).unwrap();
        let out = nrm.apply_all(&raw).unwrap();
        for j in 0..4 {
            let col: Vec<f64> = out.iter().map(|f| f.to_array()[j]).collect();
            assert_eq!(col.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
            assert_eq!(col.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
        }
        let above = nrm.apply(&FeatureVector::from_array([20.0, 0.0, 1.0, 0.0], false)).unwrap();
        assert!(above.r > 1.0);
        assert!(nrm.apply(&above).is_err());
    }

    #[test]
    fn normalizer_rejects_identical_vectors() {
        let fv = FeatureVector::from_array([1.0, 2.0, 3.0, 4.0], false);
        assert!(matches!(FeatureNormalizer::fit(&[fv, fv]), Err(QusError::DegenerateStatistic(_))));
    }

    #[test]
    fn csv_round_trips_floats() {
        let fv = FeatureVector::from_array([0.1 + 0.2, 1e-300, -3.5, 12345.678901234567], false);
        let csv = features_csv(&[fv], &[Label::Fds]).unwrap();
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        let parsed: Vec<f64> = row[..4].iter().map(|s| s.parse().unwrap()).collect();
        assert_eq!(parsed, fv.to_array().to_vec());
        assert_eq!(row[4], "1");
        assert!(csv.starts_with("r,s,entropy,t,label\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn features_are_scale_and_flip_invariant(
            seed in any::<u64>(), scale in 1e-3f64..1e3
        ) {
            use rand::Rng;
            let mut rng = crate::rng::seeded(seed);
            let vals: Vec<f64> = (0..256).map(|_| rng.random::<f64>() * 3.0 + 0.01).collect();
            let p = patch(vals, 32, 8);
            let cfg = FeatureConfig::default();
            let base = featurize(&p, &cfg).unwrap();
            for other in [featurize(&p.scaled(scale), &cfg).unwrap(), featurize(&p.flipped_lateral(), &cfg).unwrap()] {
                let (a, b) = (base.to_array(), other.to_array());
                for j in 0..4 {
                    prop_assert!((a[j] - b[j]).abs() <= 1e-9 * a[j].abs().max(1.0), "{j}: {} vs {}", a[j], b[j]);
                }
            }
        }
    }
}
