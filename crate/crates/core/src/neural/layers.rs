//! Layers with hand-written backward passes.
//!
//! Every layer caches what its backward pass needs during `forward` and
//! accumulates parameter gradients into `Param::grad` in `backward`.
//! Image tensors are NCHW.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array, Array1, Array2, Array4, Axis, Dimension, Ix1, Ix2, Zip};
use rand::Rng;
use rand_distr::Uniform;

use super::{Mode, ParamRef};
use crate::error::{QusError, Result};
use crate::rng::QusRng;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<D: Dimension> {
    pub value: Array<f64, D>,
    pub grad: Array<f64, D>,
}

impl<D: Dimension> Param<D> {
    pub fn new(value: Array<f64, D>) -> Self {
        let grad = Array::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub(crate) fn push<'a>(&'a mut self, name: String, trainable: bool, out: &mut Vec<ParamRef<'a>>) {
        let shape = self.value.shape().to_vec();
        out.push(ParamRef {
            name,
            shape,
            value: self.value.as_slice_mut().expect("standard layout"),
            grad: trainable.then(|| self.grad.as_slice_mut().expect("standard layout")),
        });
    }
}

pub(crate) fn push_buffer<'a, D: Dimension>(
    arr: &'a mut Array<f64, D>,
    name: String,
    out: &mut Vec<ParamRef<'a>>,
) {
    let shape = arr.shape().to_vec();
    out.push(ParamRef {
        name,
        shape,
        value: arr.as_slice_mut().expect("standard layout"),
        grad: None,
    });
}

pub(crate) fn check_finite<D: Dimension>(a: &Array<f64, D>, layer: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(QusError::numeric(layer, "non-finite activation"))
    }
}

fn missing_cache(layer: &str) -> QusError {
    QusError::InvalidState(format!("{layer}: backward called before forward"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// He-uniform, for ReLU layers.
    He,
    /// Xavier-uniform, for tanh and sigmoid layers.
    Xavier,
    Zero,
}

fn init_matrix(rows: usize, cols: usize, fan_in: usize, fan_out: usize, init: Init, rng: &mut QusRng) -> Array2<f64> {
    let limit = match init {
        Init::He => (6.0 / fan_in as f64).sqrt(),
        Init::Xavier => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        Init::Zero => return Array2::zeros((rows, cols)),
    };
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(dist))
}

/// Fully connected layer, `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Param<Ix2>,
    pub b: Param<Ix1>,
    input: Option<Array2<f64>>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, init: Init, rng: &mut QusRng) -> Self {
        Self {
            w: Param::new(init_matrix(outputs, inputs, inputs, outputs, init, rng)),
            b: Param::new(Array1::zeros(outputs)),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.value.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.value.nrows()
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.inputs() {
            return Err(QusError::invalid(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs(),
                x.ncols()
            )));
        }
        let y = x.dot(&self.w.value.t()) + &self.b.value;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Result<Array2<f64>> {
        let x = self.input.as_ref().ok_or_else(|| missing_cache("dense"))?;
        general_mat_mul(1.0, &dy.t(), x, 1.0, &mut self.w.grad);
        self.b.grad += &dy.sum_axis(Axis(0));
        Ok(dy.dot(&self.w.value))
    }

    pub fn params<'a>(&'a mut self, prefix: &str, trainable: bool, out: &mut Vec<ParamRef<'a>>) {
        self.w.push(format!("{prefix}.weight"), trainable, out);
        self.b.push(format!("{prefix}.bias"), trainable, out);
    }
}

/// Per-channel statistics shared by the 1d and 2d batch norms.
#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Vec<f64>,
    inv_std: Array1<f64>,
    train: bool,
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param<Ix1>,
    pub beta: Param<Ix1>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Array1::ones(channels)),
            beta: Param::new(Array1::zeros(channels)),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    /// `x` is laid out as `outer x channels x inner`; statistics are taken
    /// over the outer and inner axes.
    fn forward_raw(&mut self, x: &[f64], outer: usize, inner: usize, mode: Mode) -> Vec<f64> {
        let c = self.channels();
        let m = (outer * inner) as f64;
        let at = |o: usize, ch: usize, i: usize| (o * c + ch) * inner + i;
        let (mean, var) = if mode == Mode::Train {
            let mut mean = Array1::<f64>::zeros(c);
            let mut var = Array1::<f64>::zeros(c);
            for ch in 0..c {
                let mut sum = 0.0;
                for o in 0..outer {
                    sum += x[at(o, ch, 0)..at(o, ch, 0) + inner].iter().sum::<f64>();
                }
                let mu = sum / m;
                let mut sq = 0.0;
                for o in 0..outer {
                    sq += x[at(o, ch, 0)..at(o, ch, 0) + inner].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = sq / m;
            }
            let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            self.running_mean = &self.running_mean * (1.0 - BN_MOMENTUM) + &mean * BN_MOMENTUM;
            self.running_var = &self.running_var * (1.0 - BN_MOMENTUM) + &var * (BN_MOMENTUM * unbiased);
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let mut x_hat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for ch in 0..c {
                let (mu, is, g, b) = (mean[ch], inv_std[ch], self.gamma.value[ch], self.beta.value[ch]);
                let base = at(o, ch, 0);
                for i in base..base + inner {
                    let h = (x[i] - mu) * is;
                    x_hat[i] = h;
                    y[i] = g * h + b;
                }
            }
        }
        self.cache = Some(BnCache { x_hat, inv_std, train: mode == Mode::Train });
        y
    }

    fn backward_raw(&mut self, dy: &[f64], outer: usize, inner: usize) -> Result<Vec<f64>> {
        let c = self.channels();
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("batchnorm"))?;
        let m = (outer * inner) as f64;
        let at = |o: usize, ch: usize| (o * c + ch) * inner;
        let mut dx = vec![0.0; dy.len()];
        for ch in 0..c {
            let (mut sum_dy, mut sum_dy_xh) = (0.0, 0.0);
            for o in 0..outer {
                let base = at(o, ch);
                for i in base..base + inner {
                    sum_dy += dy[i];
                    sum_dy_xh += dy[i] * cache.x_hat[i];
                }
            }
            self.gamma.grad[ch] += sum_dy_xh;
            self.beta.grad[ch] += sum_dy;
            let g = self.gamma.value[ch];
            let is = cache.inv_std[ch];
            for o in 0..outer {
                let base = at(o, ch);
                for i in base..base + inner {
                    dx[i] = if cache.train {
                        g * is / m * (m * dy[i] - sum_dy - cache.x_hat[i] * sum_dy_xh)
                    } else {
                        g * is * dy[i]
                    };
                }
            }
        }
        Ok(dx)
    }

    pub fn forward2(&mut self, x: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        let (n, c) = x.dim();
        if c != self.channels() {
            return Err(QusError::invalid(format!("batchnorm expects {} features, got {c}", self.channels())));
        }
        let x = x.as_standard_layout();
        let y = self.forward_raw(x.as_slice().unwrap(), n, 1, mode);
        Ok(Array2::from_shape_vec((n, c), y).unwrap())
    }

    pub fn backward2(&mut self, dy: &Array2<f64>) -> Result<Array2<f64>> {
        let (n, c) = dy.dim();
        let dy = dy.as_standard_layout();
        let dx = self.backward_raw(dy.as_slice().unwrap(), n, 1)?;
        Ok(Array2::from_shape_vec((n, c), dx).unwrap())
    }

    pub fn forward4(&mut self, x: &Array4<f64>, mode: Mode) -> Result<Array4<f64>> {
        let (n, c, h, w) = x.dim();
        if c != self.channels() {
            return Err(QusError::invalid(format!("batchnorm expects {} channels, got {c}", self.channels())));
        }
        let x = x.as_standard_layout();
        let y = self.forward_raw(x.as_slice().unwrap(), n, h * w, mode);
        Ok(Array4::from_shape_vec((n, c, h, w), y).unwrap())
    }

    pub fn backward4(&mut self, dy: &Array4<f64>) -> Result<Array4<f64>> {
        let (n, c, h, w) = dy.dim();
        let dy = dy.as_standard_layout();
        let dx = self.backward_raw(dy.as_slice().unwrap(), n, h * w)?;
        Ok(Array4::from_shape_vec((n, c, h, w), dx).unwrap())
    }

    pub fn params<'a>(&'a mut self, prefix: &str, trainable: bool, out: &mut Vec<ParamRef<'a>>) {
        self.gamma.push(format!("{prefix}.gamma"), trainable, out);
        self.beta.push(format!("{prefix}.beta"), trainable, out);
        push_buffer(&mut self.running_mean, format!("{prefix}.running_mean"), out);
        push_buffer(&mut self.running_var, format!("{prefix}.running_var"), out);
    }
}

/// 3x3 convolution, stride 1, zero "same" padding, via im2col and GEMM.
#[derive(Debug, Clone)]
pub struct Conv3x3 {
    /// (out_channels, in_channels * 9)
    pub w: Param<Ix2>,
    pub b: Param<Ix1>,
    input: Option<Array4<f64>>,
}

/// Valid output column range and source offset for kernel column `kx`.
fn kx_span(kx: usize, w: usize) -> (usize, usize) {
    match kx {
        0 => (1, w),
        1 => (0, w),
        _ => (0, w - 1),
    }
}

/// `x` is one standard-layout (C, H, W) image; `cols` is (C*9, H*W).
fn im2col(x: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                let (x0, x1) = kx_span(kx, w);
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y + ky;
                    if sy < 1 || sy > h {
                        dst.fill(0.0);
                        continue;
                    }
                    // output x reads input x + kx - 1
                    let src = &plane[(sy - 1) * w..sy * w];
                    dst[..x0].fill(0.0);
                    dst[x1..].fill(0.0);
                    dst[x0..x1].copy_from_slice(&src[x0 + kx - 1..x1 + kx - 1]);
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                let (x0, x1) = kx_span(kx, w);
                for y in 0..h {
                    let sy = y + ky;
                    if sy < 1 || sy > h {
                        continue;
                    }
                    let dst = &mut plane[(sy - 1) * w..sy * w];
                    for (d, v) in dst[x0 + kx - 1..x1 + kx - 1].iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

impl Conv3x3 {
    pub fn new(in_channels: usize, out_channels: usize, init: Init, rng: &mut QusRng) -> Self {
        let fan_in = in_channels * 9;
        let fan_out = out_channels * 9;
        Self {
            w: Param::new(init_matrix(out_channels, fan_in, fan_in, fan_out, init, rng)),
            b: Param::new(Array1::zeros(out_channels)),
            input: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.w.value.ncols() / 9
    }

    pub fn out_channels(&self) -> usize {
        self.w.value.nrows()
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let (n, c, h, w) = x.dim();
        if c != self.in_channels() {
            return Err(QusError::invalid(format!(
                "convolution expects {} channels, got {c}",
                self.in_channels()
            )));
        }
        let co = self.out_channels();
        let mut out = Array4::<f64>::zeros((n, co, h, w));
        let mut cols = Array2::<f64>::zeros((c * 9, h * w));
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().unwrap();
        let per = c * h * w;
        for i in 0..n {
            im2col(&xs[i * per..(i + 1) * per], c, h, w, cols.as_slice_mut().unwrap());
            let mut o = out
                .index_axis_mut(Axis(0), i)
                .into_shape_with_order((co, h * w))
                .unwrap();
            // transposed product: the large spatial axis goes on the GEMM rows
            general_mat_mul(1.0, &cols.t(), &self.w.value.t(), 0.0, &mut o.view_mut().reversed_axes());
            Zip::from(o.rows_mut()).and(&self.b.value).for_each(|mut row, &b| row += b);
        }
        self.input = Some(Array4::from_shape_vec((n, c, h, w), xs.to_vec()).unwrap());
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Result<Array4<f64>> {
        let x = self.input.as_ref().ok_or_else(|| missing_cache("conv3x3"))?;
        let (n, c, h, w) = x.dim();
        let co = self.out_channels();
        let mut dx = Array4::<f64>::zeros((n, c, h, w));
        let mut cols = Array2::<f64>::zeros((c * 9, h * w));
        let mut dcols = Array2::<f64>::zeros((c * 9, h * w));
        let xs = x.as_slice().expect("cached input is standard layout");
        let per = c * h * w;
        let dxs = dx.as_slice_mut().unwrap();
        for i in 0..n {
            im2col(&xs[i * per..(i + 1) * per], c, h, w, cols.as_slice_mut().unwrap());
            let d = dy.index_axis(Axis(0), i);
            let d = d.to_shape((co, h * w)).unwrap();
            general_mat_mul(1.0, &cols, &d.t(), 1.0, &mut self.w.grad.view_mut().reversed_axes());
            self.b.grad += &d.sum_axis(Axis(1));
            general_mat_mul(1.0, &d.t(), &self.w.value, 0.0, &mut dcols.view_mut().reversed_axes());
            col2im(dcols.as_slice().unwrap(), c, h, w, &mut dxs[i * per..(i + 1) * per]);
        }
        Ok(dx)
    }

    pub fn params<'a>(&'a mut self, prefix: &str, trainable: bool, out: &mut Vec<ParamRef<'a>>) {
        self.w.push(format!("{prefix}.weight"), trainable, out);
        self.b.push(format!("{prefix}.bias"), trainable, out);
    }
}

/// 2x2 average pooling with stride 2.
#[derive(Debug, Clone, Default)]
pub struct AvgPool2 {
    input_dim: Option<(usize, usize, usize, usize)>,
}

impl AvgPool2 {
    pub fn forward(&mut self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let (n, c, h, w) = x.dim();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(QusError::invalid(format!("average pooling needs even dims, got {h}x{w}")));
        }
        let mut out = Array4::<f64>::zeros((n, c, h / 2, w / 2));
        Zip::indexed(&mut out).for_each(|(i, j, y, xx), o| {
            *o = 0.25
                * (x[[i, j, 2 * y, 2 * xx]]
                    + x[[i, j, 2 * y, 2 * xx + 1]]
                    + x[[i, j, 2 * y + 1, 2 * xx]]
                    + x[[i, j, 2 * y + 1, 2 * xx + 1]]);
        });
        self.input_dim = Some((n, c, h, w));
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Result<Array4<f64>> {
        let dim = self.input_dim.ok_or_else(|| missing_cache("avgpool"))?;
        Ok(Array4::from_shape_fn(dim, |(i, j, y, x)| 0.25 * dy[[i, j, y / 2, x / 2]]))
    }
}

/// Mean over the spatial axes: (N, C, H, W) -> (N, C).
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_dim: Option<(usize, usize, usize, usize)>,
}

impl GlobalAvgPool {
    pub fn forward(&mut self, x: &Array4<f64>) -> Array2<f64> {
        let (n, c, h, w) = x.dim();
        self.input_dim = Some((n, c, h, w));
        let hw = (h * w) as f64;
        Array2::from_shape_fn((n, c), |(i, j)| x.slice(s![i, j, .., ..]).sum() / hw)
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Result<Array4<f64>> {
        let (n, c, h, w) = self.input_dim.ok_or_else(|| missing_cache("global avgpool"))?;
        let hw = (h * w) as f64;
        Ok(Array4::from_shape_fn((n, c, h, w), |(i, j, _, _)| dy[[i, j]] / hw))
    }
}

#[derive(Debug, Clone)]
pub struct Relu<D: Dimension> {
    mask: Option<Array<f64, D>>,
}

impl<D: Dimension> Relu<D> {
    pub fn new() -> Self {
        Self { mask: None }
    }

    pub fn forward(&mut self, x: &Array<f64, D>) -> Array<f64, D> {
        self.mask = Some(x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        x.mapv(|v| v.max(0.0))
    }

    pub fn backward(&mut self, dy: &Array<f64, D>) -> Result<Array<f64, D>> {
        let mask = self.mask.as_ref().ok_or_else(|| missing_cache("relu"))?;
        Ok(dy * mask)
    }

    /// Appends the on/off state of every unit from the last forward pass.
    pub fn pattern(&self, out: &mut Vec<bool>) {
        if let Some(m) = &self.mask {
            out.extend(m.iter().map(|&v| v > 0.0));
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tanh {
    output: Option<Array2<f64>>,
}

impl Tanh {
    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let y = x.mapv(f64::tanh);
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Result<Array2<f64>> {
        let y = self.output.as_ref().ok_or_else(|| missing_cache("tanh"))?;
        Ok(Zip::from(dy).and(y).map_collect(|d, y| d * (1.0 - y * y)))
    }
}

/// Inverted dropout: kept units are scaled by 1 / (1 - rate) during training.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    mask: Option<Array2<f64>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        Self { rate, mask: None }
    }

    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode, rng: &mut QusRng) -> Array2<f64> {
        if mode == Mode::Infer || self.rate == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let y = x * &mask;
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        match &self.mask {
            Some(m) => dy * m,
            None => dy.clone(),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand_distr::StandardNormal;

    fn randn4(shape: (usize, usize, usize, usize), rng: &mut QusRng) -> Array4<f64> {
        Array4::from_shape_simple_fn(shape, || rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = seeded(1);
        let mut conv = Conv3x3::new(2, 3, Init::He, &mut rng);
        conv.b.value = Array1::from(vec![0.1, -0.2, 0.3]);
        let x = randn4((2, 2, 5, 4), &mut rng);
        let y = conv.forward(&x).unwrap();
        for n in 0..2 {
            for o in 0..3 {
                for yy in 0..5 {
                    for xx in 0..4 {
                        let mut acc = conv.b.value[o];
                        for ci in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = yy as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy >= 0 && sy < 5 && sx >= 0 && sx < 4 {
                                        acc += conv.w.value[[o, ci * 9 + ky * 3 + kx]]
                                            * x[[n, ci, sy as usize, sx as usize]];
                                    }
                                }
                            }
                        }
                        assert!((y[[n, o, yy, xx]] - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn avg_pool_preserves_mass() {
        let mut rng = seeded(2);
        let x = randn4((2, 3, 8, 6), &mut rng);
        let mut pool = AvgPool2::default();
        let y = pool.forward(&x).unwrap();
        assert_eq!(y.dim(), (2, 3, 4, 3));
        assert!((y.sum() * 4.0 - x.sum()).abs() < 1e-10);
        assert!((y[[1, 2, 1, 2]] - 0.25 * x.slice(s![1, 2, 2..4, 4..6]).sum()).abs() < 1e-12);
        assert!(pool.forward(&randn4((1, 1, 3, 4), &mut rng)).is_err());
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let mut rng = seeded(3);
        let x = randn4((4, 3, 6, 5), &mut rng).mapv(|v| 3.0 * v + 2.0);
        let mut bn = BatchNorm::new(3);
        let y = bn.forward4(&x, Mode::Train).unwrap();
        for c in 0..3 {
            let ch = y.index_axis(Axis(1), c);
            let mean = ch.mean().unwrap();
            let var = ch.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-5, "{var}");
        }
    }

    #[test]
    fn dropout_identity_cases_and_expectation() {
        let mut rng = seeded(4);
        let x = Array2::from_elem((100, 100), 2.0);
        let mut d0 = Dropout::new(0.0);
        assert_eq!(d0.forward(&x, Mode::Train, &mut rng), x);
        let mut d = Dropout::new(0.5);
        assert_eq!(d.forward(&x, Mode::Infer, &mut rng), x);
        let mut total = 0.0;
        for _ in 0..100 {
            total += d.forward(&x, Mode::Train, &mut rng).mean().unwrap();
        }
        // 10^4 entries per mask x 100 masks
        assert!((total / 100.0 / 2.0 - 1.0).abs() < 0.01);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
