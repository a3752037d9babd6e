//! Central finite-difference gradient checks for layers and whole models.
//!
//! Each check compares the analytic gradient of a scalar loss with
//! `(L(θ+h) − L(θ−h)) / 2h` for every input and parameter element, and
//! reports the worst per-tensor relative error
//! `‖g_analytic − g_numeric‖ / (‖g_analytic‖ + ‖g_numeric‖)`.
//! Elements whose ±h perturbation switches any ReLU unit on or off are
//! skipped, since the loss is not differentiable across that interval.

use ndarray::{Array1, Array2, Array4, ArrayD, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;

use super::layers::{AvgPool2, BatchNorm, Conv3x3, Dense, Dropout, Init, Relu, Tanh};
use super::{bce_loss, build_fusion, Batch, CnnConfig, CnnModel, MlpConfig, MlpModel, Mode, Network, ParamRef, ResBlock};
use crate::error::Result;
use crate::rng::{seeded, QusRng};

pub const FD_STEP: f64 = 1e-4;
// Tensors whose true gradient is zero (conv biases feeding a batch norm)
// still show finite-difference round-off near 1e-12.
const NORM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    /// Worst relative error over all checked tensors.
    pub max_rel_error: f64,
    /// Tensor that produced `max_rel_error`.
    pub worst_tensor: String,
    pub elements: usize,
    /// Elements skipped because a perturbation crossed a ReLU kink.
    pub skipped: usize,
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nn).max(NORM_FLOOR)
}

struct Tracker {
    name: String,
    worst: f64,
    worst_tensor: String,
    elements: usize,
    skipped: usize,
}

impl Tracker {
    fn new(name: &str) -> Self {
        Self { name: name.into(), worst: 0.0, worst_tensor: String::new(), elements: 0, skipped: 0 }
    }

    fn record(&mut self, tensor: &str, analytic: &[f64], numeric: &[f64]) {
        if analytic.is_empty() {
            return;
        }
        let e = rel_error(analytic, numeric);
        self.elements += analytic.len();
        if e > self.worst || self.worst_tensor.is_empty() {
            self.worst = e.max(self.worst);
            self.worst_tensor = tensor.into();
        }
    }

    fn finish(self) -> GradCheck {
        GradCheck {
            name: self.name,
            max_rel_error: self.worst,
            worst_tensor: self.worst_tensor,
            elements: self.elements,
            skipped: self.skipped,
        }
    }
}

fn zero_grads(params: Vec<ParamRef<'_>>) {
    for p in params {
        if let Some(g) = p.grad {
            g.fill(0.0);
        }
    }
}

fn grads(params: Vec<ParamRef<'_>>) -> Vec<(String, Option<Vec<f64>>)> {
    params.into_iter().map(|p| (p.name, p.grad.map(|g| g.to_vec()))).collect()
}

fn nudge(params: Vec<ParamRef<'_>>, k: usize, j: usize, delta: f64) {
    let mut params = params;
    params[k].value[j] += delta;
}

/// A layer wrapped for checking with a fixed random projection loss.
trait Probe {
    fn run(&mut self, x: &ArrayD<f64>) -> Result<ArrayD<f64>>;
    fn back(&mut self, dy: &ArrayD<f64>) -> Result<ArrayD<f64>>;
    fn params(&mut self) -> Vec<ParamRef<'_>>;
    fn pattern(&self, _out: &mut Vec<bool>) {}
}

fn pattern_of(f: impl FnOnce(&mut Vec<bool>)) -> Vec<bool> {
    let mut out = Vec::new();
    f(&mut out);
    out
}

/// Collects central differences for the elements whose perturbation kept the
/// activation pattern, paired with their analytic values.
struct Pairs {
    analytic: Vec<f64>,
    numeric: Vec<f64>,
}

impl Pairs {
    fn new() -> Self {
        Self { analytic: Vec::new(), numeric: Vec::new() }
    }

    fn push(&mut self, t: &mut Tracker, analytic: f64, lp: f64, lm: f64, kink: bool) {
        if kink {
            t.skipped += 1;
        } else {
            self.analytic.push(analytic);
            self.numeric.push((lp - lm) / (2.0 * FD_STEP));
        }
    }
}

fn check_probe(name: &str, probe: &mut dyn Probe, x: &ArrayD<f64>, rng: &mut QusRng) -> Result<GradCheck> {
    let y = probe.run(x)?;
    let r = ArrayD::from_shape_simple_fn(y.raw_dim(), || rng.sample::<f64, _>(StandardNormal));
    let loss = |p: &mut dyn Probe, x: &ArrayD<f64>| -> Result<f64> { Ok((p.run(x)? * &r).sum()) };

    zero_grads(probe.params());
    probe.run(x)?;
    let base = pattern_of(|o| probe.pattern(o));
    let dx = probe.back(&r)?;
    let dx = dx.as_standard_layout().into_owned();
    let analytic = grads(probe.params());

    let mut t = Tracker::new(name);
    let mut xp = x.clone();
    let mut pairs = Pairs::new();
    for (i, &a) in dx.iter().enumerate() {
        let orig = xp.as_slice().expect("standard layout")[i];
        xp.as_slice_mut().expect("standard layout")[i] = orig + FD_STEP;
        let lp = loss(probe, &xp)?;
        let mut kink = pattern_of(|o| probe.pattern(o)) != base;
        xp.as_slice_mut().expect("standard layout")[i] = orig - FD_STEP;
        let lm = loss(probe, &xp)?;
        kink |= pattern_of(|o| probe.pattern(o)) != base;
        xp.as_slice_mut().expect("standard layout")[i] = orig;
        pairs.push(&mut t, a, lp, lm, kink);
    }
    t.record("input", &pairs.analytic, &pairs.numeric);

    for (k, (pname, g)) in analytic.iter().enumerate() {
        let Some(g) = g else { continue };
        let mut pairs = Pairs::new();
        for (j, &a) in g.iter().enumerate() {
            nudge(probe.params(), k, j, FD_STEP);
            let lp = loss(probe, x)?;
            let mut kink = pattern_of(|o| probe.pattern(o)) != base;
            nudge(probe.params(), k, j, -2.0 * FD_STEP);
            let lm = loss(probe, x)?;
            kink |= pattern_of(|o| probe.pattern(o)) != base;
            nudge(probe.params(), k, j, FD_STEP);
            pairs.push(&mut t, a, lp, lm, kink);
        }
        t.record(pname, &pairs.analytic, &pairs.numeric);
    }
    Ok(t.finish())
}

fn to2(x: &ArrayD<f64>) -> Array2<f64> {
    x.clone().into_dimensionality().expect("rank 2")
}

fn to4(x: &ArrayD<f64>) -> Array4<f64> {
    x.clone().into_dimensionality().expect("rank 4")
}

struct DenseProbe(Dense);
impl Probe for DenseProbe {
    fn run(&mut self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.0.forward(&to2(x))?.into_dyn())
    }
    fn back(&mut self, dy: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.0.backward(&to2(dy))?.into_dyn())
    }
    fn params(&mut self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.0.params("dense", true, &mut out);
        out
    }
}

struct Bn2Probe(BatchNorm);
impl Probe for Bn2Probe {
    fn run(&mut self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.0.forward2(&to2(x), Mode::Train)?.into_dyn())
    }
    fn back(&mut self, dy: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.0.backward2(&to2(dy))?.into_dyn())
    }
    fn params(&mut self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.0.params("bn", true, &mut out);
        out
    }
}

struct Bn4Probe(BatchNorm);
impl Probe for Bn4Probe {
    fn run(&mut self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.0.forward4(&to4(x), Mode::Train)?.into_dyn())
    }
    fn back(&mut self, dy: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.0.backward4(&to4(dy))?.into_dyn())
    }
    fn params(&mut self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.0.params("bn", true, &mut out);
        out
    }
}

struct ConvProbe(Conv3x3);
impl Probe for ConvProbe {
    fn run(&mut self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.0.forward(&to4(x))?.into_dyn())
    }
    fn back(&mut self, dy: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.0.backward(&to4(dy))?.into_dyn())
    }
    fn params(&mut self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.0.params("conv", true, &mut out);
        out
    }
}

struct PoolProbe(AvgPool2);
impl Probe for PoolProbe {
    fn run(&mut self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.0.forward(&to4(x))?.into_dyn())
    }
    fn back(&mut self, dy: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.0.backward(&to4(dy))?.into_dyn())
    }
    fn params(&mut self) -> Vec<ParamRef<'_>> {
        Vec::new()
    }
}

struct TanhProbe(Tanh);
impl Probe for TanhProbe {
    fn run(&mut self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.0.forward(&to2(x)).into_dyn())
    }
    fn back(&mut self, dy: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.0.backward(&to2(dy))?.into_dyn())
    }
    fn params(&mut self) -> Vec<ParamRef<'_>> {
        Vec::new()
    }
}

struct ReluProbe(Relu<IxDyn>);
impl Probe for ReluProbe {
    fn run(&mut self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.0.forward(x))
    }
    fn back(&mut self, dy: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        self.0.backward(dy)
    }
    fn params(&mut self) -> Vec<ParamRef<'_>> {
        Vec::new()
    }
    fn pattern(&self, out: &mut Vec<bool>) {
        self.0.pattern(out);
    }
}

/// The mask is redrawn from the same seed on every call, so it is fixed.
struct DropoutProbe(Dropout, u64);
impl Probe for DropoutProbe {
    fn run(&mut self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let mut rng = seeded(self.1);
        Ok(self.0.forward(&to2(x), Mode::Train, &mut rng).into_dyn())
    }
    fn back(&mut self, dy: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.0.backward(&to2(dy)).into_dyn())
    }
    fn params(&mut self) -> Vec<ParamRef<'_>> {
        Vec::new()
    }
}

struct BlockProbe(ResBlock);
impl Probe for BlockProbe {
    fn run(&mut self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.0.forward(&to4(x), Mode::Train)?.into_dyn())
    }
    fn back(&mut self, dy: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.0.backward(&to4(dy))?.into_dyn())
    }
    fn params(&mut self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        self.0.collect("block", true, &mut out);
        out
    }
    fn pattern(&self, out: &mut Vec<bool>) {
        self.0.relu_pattern(out);
    }
}

fn normal(shape: &[usize], rng: &mut QusRng) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.sample::<f64, _>(StandardNormal))
}

/// Gradient of the clamped BCE with respect to the logits.
pub fn check_bce(logits: &Array1<f64>, labels: &Array1<f64>) -> Result<GradCheck> {
    let (_, analytic) = bce_loss(logits, labels)?;
    let mut numeric = Vec::with_capacity(logits.len());
    for i in 0..logits.len() {
        let mut z = logits.clone();
        z[i] += FD_STEP;
        let lp = bce_loss(&z, labels)?.0;
        z[i] -= 2.0 * FD_STEP;
        let lm = bce_loss(&z, labels)?.0;
        numeric.push((lp - lm) / (2.0 * FD_STEP));
    }
    let mut t = Tracker::new("sigmoid+bce");
    t.record("logits", analytic.as_slice().expect("contiguous"), &numeric);
    Ok(t.finish())
}

/// Checks every layer type in isolation on seeded micro-instances.
pub fn layer_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = seeded(seed);
    let mut out = Vec::new();

    let mut p = DenseProbe(Dense::new(5, 3, Init::Xavier, &mut rng));
    let x = normal(&[4, 5], &mut rng);
    out.push(check_probe("dense", &mut p, &x, &mut rng)?);

    let mut p = Conv3x3::new(2, 3, Init::He, &mut rng);
    p.b.value.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal));
    let x = normal(&[2, 2, 5, 4], &mut rng);
    out.push(check_probe("conv3x3", &mut ConvProbe(p), &x, &mut rng)?);

    let mut bn = BatchNorm::new(3);
    bn.gamma.value.mapv_inplace(|_| 1.0 + 0.5 * rng.sample::<f64, _>(StandardNormal));
    bn.beta.value.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal));
    let x = normal(&[6, 3], &mut rng);
    out.push(check_probe("batchnorm1d", &mut Bn2Probe(bn.clone()), &x, &mut rng)?);
    let x = normal(&[2, 3, 3, 2], &mut rng);
    out.push(check_probe("batchnorm2d", &mut Bn4Probe(bn), &x, &mut rng)?);

    let x = normal(&[2, 3, 4, 6], &mut rng);
    out.push(check_probe("avgpool2x2", &mut PoolProbe(AvgPool2::default()), &x, &mut rng)?);

    let x = normal(&[4, 5], &mut rng);
    out.push(check_probe("tanh", &mut TanhProbe(Tanh::default()), &x, &mut rng)?);

    let x = normal(&[3, 7], &mut rng);
    out.push(check_probe("relu", &mut ReluProbe(Relu::new()), &x, &mut rng)?);

    let x = normal(&[4, 6], &mut rng);
    out.push(check_probe("dropout", &mut DropoutProbe(Dropout::new(0.5), seed ^ 0x5eed), &x, &mut rng)?);

    let block = ResBlock::new(2, 3, &mut rng);
    let x = normal(&[2, 2, 4, 4], &mut rng);
    out.push(check_probe("residual block", &mut BlockProbe(block), &x, &mut rng)?);

    let logits = Array1::from_shape_simple_fn(6, || 2.0 * rng.sample::<f64, _>(StandardNormal));
    let labels = Array1::from_iter((0..6).map(|i| (i % 2) as f64));
    out.push(check_bce(&logits, &labels)?);
    Ok(out)
}

/// Checks d(BCE)/dθ for every trainable parameter of `net`.
pub fn check_model(name: &str, net: &mut dyn Network, batch: &Batch, labels: &Array1<f64>, seed: u64) -> Result<GradCheck> {
    let loss = |net: &mut dyn Network| -> Result<f64> {
        let mut rng = seeded(seed);
        let z = net.forward(batch, Mode::Train, &mut rng)?;
        Ok(bce_loss(&z, labels)?.0)
    };
    net.zero_grad();
    let mut rng = seeded(seed);
    let z = net.forward(batch, Mode::Train, &mut rng)?;
    let (_, dz) = bce_loss(&z, labels)?;
    let base = pattern_of(|o| net.relu_pattern(o));
    net.backward(&dz)?;
    let analytic = grads(net.params());

    let mut t = Tracker::new(name);
    for (k, (pname, g)) in analytic.iter().enumerate() {
        let Some(g) = g else { continue };
        let mut pairs = Pairs::new();
        for (j, &a) in g.iter().enumerate() {
            nudge(net.params(), k, j, FD_STEP);
            let lp = loss(net)?;
            let mut kink = pattern_of(|o| net.relu_pattern(o)) != base;
            nudge(net.params(), k, j, -2.0 * FD_STEP);
            let lm = loss(net)?;
            kink |= pattern_of(|o| net.relu_pattern(o)) != base;
            nudge(net.params(), k, j, FD_STEP);
            pairs.push(&mut t, a, lp, lm, kink);
        }
        t.record(pname, &pairs.analytic, &pairs.numeric);
    }
    Ok(t.finish())
}

fn micro_mlp(rng: &mut QusRng) -> MlpModel {
    MlpModel::new(MlpConfig { inputs: 4, hidden1: 6, hidden2: 5, dropout: 0.5 }, rng)
}

fn micro_cnn(channels: usize, rng: &mut QusRng) -> CnnModel {
    CnnModel::new(
        CnnConfig { in_channels: channels, widths: [2, 3, 3], feature_dim: 4, hidden: 4, dropout: 0.5 },
        rng,
    )
}

fn micro_batch(n: usize, channels: usize, rng: &mut QusRng) -> Batch {
    let images = Array4::from_shape_simple_fn((n, channels, 16, 16), || rng.random::<f64>());
    let features = Array2::from_shape_simple_fn((n, 4), || rng.random::<f64>());
    Batch { images: Some(images), features: Some(features) }
}

/// Checks the MLP, 1- and 2-channel CNNs and the fusion model (branches
/// unfrozen, so gradients flow through the concatenation).
pub fn model_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = seeded(seed);
    let n = 4;
    let labels = Array1::from_iter((0..n).map(|i| (i % 2) as f64));
    let mut out = Vec::new();

    let mut mlp = micro_mlp(&mut rng);
    let batch = micro_batch(n, 1, &mut rng);
    out.push(check_model("mlp", &mut mlp, &batch, &labels, seed)?);

    let mut cnn = micro_cnn(1, &mut rng);
    out.push(check_model("cnn 1-channel", &mut cnn, &batch, &labels, seed)?);

    let mut cnn = micro_cnn(2, &mut rng);
    let batch = micro_batch(n, 2, &mut rng);
    out.push(check_model("cnn 2-channel", &mut cnn, &batch, &labels, seed)?);

    cnn.trained = true;
    mlp.trained = true;
    let mut fusion = build_fusion(cnn, mlp, Default::default(), &mut rng)?;
    // a zero output layer would hide every upstream gradient
    fusion.fc2.w.value.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    fusion.frozen = false;
    out.push(check_model("fusion", &mut fusion, &batch, &labels, seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_pass_finite_difference_check() {
        for c in layer_suite(11).unwrap() {
            assert!(c.max_rel_error < 1e-4, "{c:?}");
            assert!(c.skipped * 20 < c.elements, "{c:?}");
            assert!(c.elements > 0);
        }
    }

    #[test]
    fn models_pass_finite_difference_check() {
        for c in model_suite(8).unwrap() {
            assert!(c.max_rel_error < 1e-4, "{c:?}");
            assert!(c.skipped * 20 < c.elements, "{c:?}");
        }
    }

    #[test]
    fn broken_gradient_is_detected() {
        assert!(rel_error(&[1.0, 2.0], &[1.0, 2.1]) > 1e-2);
        assert_eq!(rel_error(&[0.0], &[0.0]), 0.0);
    }
}
