use ndarray::{Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{QusError, Result};
use crate::specklesim::EnvelopePatch;

/// Floor applied before the log in the A*ln(A) channel.
pub const ALOGA_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// Min-max normalized envelope.
    A,
    /// `a * ln(max(a, eps))` of the normalized envelope.
    ALogA,
    Both,
}

impl ChannelMode {
    pub fn channels(self) -> usize {
        match self {
            ChannelMode::Both => 2,
            _ => 1,
        }
    }
}

fn a_log_a(a: f64) -> f64 {
    a * a.max(ALOGA_EPS).ln()
}

/// Network input of one patch, shaped (channels, rows, cols).
pub fn make_input(patch: &EnvelopePatch, mode: ChannelMode) -> Result<Array3<f64>> {
    let v = &patch.values;
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if !(hi > lo) {
        return Err(QusError::DegenerateInput("constant patch cannot be normalized".into()));
    }
    let span = hi - lo;
    let norm = v.mapv(|x| (x - lo) / span);
    let (rows, cols) = norm.dim();
    let mut out = Array3::<f64>::zeros((mode.channels(), rows, cols));
    match mode {
        ChannelMode::A => out.index_axis_mut(Axis(0), 0).assign(&norm),
        ChannelMode::ALogA => out.index_axis_mut(Axis(0), 0).assign(&norm.mapv(a_log_a)),
        ChannelMode::Both => {
            out.index_axis_mut(Axis(0), 0).assign(&norm);
            out.index_axis_mut(Axis(0), 1).assign(&norm.mapv(a_log_a));
        }
    }
    Ok(out)
}

pub fn make_batch<'a>(
    patches: impl ExactSizeIterator<Item = &'a EnvelopePatch>,
    mode: ChannelMode,
) -> Result<Array4<f64>> {
    let n = patches.len();
    let mut out: Option<Array4<f64>> = None;
    for (i, p) in patches.enumerate() {
        let x = make_input(p, mode)?;
        let dst = out.get_or_insert_with(|| {
            let (c, h, w) = x.dim();
            Array4::zeros((n, c, h, w))
        });
        if dst.index_axis(Axis(0), 0).dim() != x.dim() {
            return Err(QusError::invalid("patches in a batch differ in shape"));
        }
        dst.index_axis_mut(Axis(0), i).assign(&x);
    }
    out.ok_or_else(|| QusError::invalid("empty batch"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specklesim::Label;
    use ndarray::Array2;

    fn patch(vals: Vec<f64>) -> EnvelopePatch {
        let n = vals.len();
        EnvelopePatch::new(Array2::from_shape_vec((n, 1), vals).unwrap(), Label::Fds, 0.0, "x").unwrap()
    }

    #[test]
    fn channel_a_spans_unit_interval() {
        let x = make_input(&patch(vec![3.0, 5.0, 4.0, 7.0]), ChannelMode::Both).unwrap();
        let a = x.index_axis(Axis(0), 0);
        assert_eq!(a.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(a.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
        // a = 1 -> 1 ln 1 = 0; a = 0 -> 0 by the floor convention
        assert_eq!(x[[1, 3, 0]], 0.0);
        assert_eq!(x[[1, 0, 0]], 0.0);
        assert!((x[[1, 1, 0]] - 0.5 * 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn constant_patch_is_rejected() {
        assert!(matches!(
            make_input(&patch(vec![2.0; 4]), ChannelMode::A),
            Err(QusError::DegenerateInput(_))
        ));
    }

    #[test]
    fn channel_counts() {
        let p = patch(vec![0.0, 1.0]);
        assert_eq!(make_input(&p, ChannelMode::A).unwrap().dim(), (1, 2, 1));
        assert_eq!(make_input(&p, ChannelMode::ALogA).unwrap().dim(), (1, 2, 1));
        assert_eq!(make_batch([&p, &p].into_iter(), ChannelMode::Both).unwrap().dim(), (2, 2, 2, 1));
    }
}
