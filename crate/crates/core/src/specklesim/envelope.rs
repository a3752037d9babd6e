use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::RfFrame;
use crate::error::{QusError, Result};

const MIN_LINE_LEN: usize = 8;

fn analytic_with(planner: &mut FftPlanner<f64>, line: &[f64]) -> Vec<f64> {
    let n = line.len();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = line.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    // keep DC (and Nyquist for even n), double positive, drop negative frequencies
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        let gain = if k == 0 || (n % 2 == 0 && k == half) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *v *= gain;
    }
    inv.process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c.norm() * scale).collect()
}

/// Magnitude of the FFT-based analytic signal of one line.
pub fn analytic_magnitude(line: &[f64]) -> Result<Vec<f64>> {
    if line.len() < MIN_LINE_LEN {
        return Err(QusError::invalid(format!(
            "A-line has {} samples, need at least {MIN_LINE_LEN}",
            line.len()
        )));
    }
    Ok(analytic_with(&mut FftPlanner::new(), line))
}

/// Per-column envelope of an RF frame.
pub fn compute_envelope(rf: &RfFrame) -> Result<Array2<f64>> {
    if rf.rows() < MIN_LINE_LEN {
        return Err(QusError::invalid(format!(
            "A-lines have {} samples, need at least {MIN_LINE_LEN}",
            rf.rows()
        )));
    }
    let mut planner = FftPlanner::new();
    let mut env = Array2::<f64>::zeros(rf.samples.raw_dim());
    for (src, mut dst) in rf.samples.axis_iter(Axis(1)).zip(env.axis_iter_mut(Axis(1))) {
        let line: Vec<f64> = src.iter().copied().collect();
        for (d, v) in dst.iter_mut().zip(analytic_with(&mut planner, &line)) {
            *d = v;
        }
    }
    Ok(env)
}
