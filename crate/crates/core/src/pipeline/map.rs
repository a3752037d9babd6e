use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::model::SavedModel;
use crate::error::{QusError, Result};
use crate::specklesim::{EnvelopePatch, Label};

/// FDS probabilities of sliding windows over one frame, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMap {
    pub source_id: String,
    pub overlap: f64,
    pub patch: [usize; 2],
    pub stride: [usize; 2],
    pub frame: [usize; 2],
    pub rows: usize,
    pub cols: usize,
    #[serde(skip)]
    pub values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.cols) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

fn window_stride(patch: usize, overlap: f64) -> usize {
    ((patch as f64 * (1.0 - overlap)).round() as usize).max(1)
}

/// Runs `model` on every window of `frame` with the given overlap.
pub fn probability_map(
    model: &mut SavedModel,
    frame: &Array2<f64>,
    source_id: &str,
    patch: (usize, usize),
    overlap: f64,
    axial_pitch_mm: f64,
    chunk: usize,
) -> Result<ProbabilityMap> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(QusError::invalid(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    if !model.outputs_probability() {
        return Err(QusError::invalid(format!("model {} does not output probabilities", model.id)));
    }
    let (fr, fc) = frame.dim();
    let (pr, pc) = patch;
    if pr == 0 || pc == 0 || fr < pr || fc < pc {
        return Err(QusError::invalid(format!("{fr}x{fc} frame is smaller than the {pr}x{pc} patch")));
    }
    let stride = (window_stride(pr, overlap), window_stride(pc, overlap));
    let rows = (fr - pr) / stride.0 + 1;
    let cols = (fc - pc) / stride.1 + 1;
    let offsets: Vec<(usize, usize)> =
        (0..rows).flat_map(|i| (0..cols).map(move |j| (i * stride.0, j * stride.1))).collect();
    let mut values = Vec::with_capacity(offsets.len());
    for part in offsets.chunks(chunk.max(1)) {
        let patches = part
            .iter()
            .map(|&(r, c)| {
                let window = frame.slice(s![r..r + pr, c..c + pc]).to_owned();
                EnvelopePatch::new(window, Label::Unknown, r as f64 * axial_pitch_mm, source_id)
            })
            .collect::<Result<Vec<_>>>()?;
        values.extend(model.score(&patches, chunk)?);
    }
    Ok(ProbabilityMap {
        source_id: source_id.to_string(),
        overlap,
        patch: [pr, pc],
        stride: [stride.0, stride.1],
        frame: [fr, fc],
        rows,
        cols,
        values,
    })
}

/// Index of the window whose centre is closest to pixel `x`.
fn nearest_window(x: usize, patch: usize, stride: usize, n: usize) -> usize {
    let pos = (x as f64 - (patch as f64 - 1.0) / 2.0) / stride as f64;
    (pos.round().max(0.0) as usize).min(n - 1)
}

/// Binary PGM covering the whole frame, each pixel taking the probability of
/// the nearest window centre (0 = LDS, 255 = FDS).
pub fn render_pgm(map: &ProbabilityMap) -> Vec<u8> {
    let [h, w] = map.frame;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let cols: Vec<usize> = (0..w).map(|x| nearest_window(x, map.patch[1], map.stride[1], map.cols)).collect();
    for y in 0..h {
        let i = nearest_window(y, map.patch[0], map.stride[0], map.rows);
        out.extend(cols.iter().map(|&j| (map.get(i, j).clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_arithmetic() {
        assert_eq!(window_stride(256, 0.5), 128);
        assert_eq!(window_stride(32, 0.5), 16);
        assert_eq!(window_stride(256, 0.875), 32);
        assert_eq!(window_stride(32, 0.875), 4);
        assert_eq!(window_stride(32, 0.0), 32);
    }

    #[test]
    fn nearest_window_clamps_to_grid() {
        // windows of 4 with stride 2 have centres at 1.5, 3.5, 5.5
        assert_eq!(nearest_window(0, 4, 2, 3), 0);
        assert_eq!(nearest_window(4, 4, 2, 3), 1);
        assert_eq!(nearest_window(7, 4, 2, 3), 2);
        assert_eq!(nearest_window(100, 4, 2, 3), 2);
    }

    #[test]
    fn pgm_has_frame_size_and_extremes() {
        let map = ProbabilityMap {
            source_id: "f".into(),
            overlap: 0.0,
            patch: [2, 2],
            stride: [2, 2],
            frame: [4, 2],
            rows: 2,
            cols: 1,
            values: vec![0.0, 1.0],
        };
        let pgm = render_pgm(&map);
        let header = b"P5\n2 4\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(&pgm[header.len()..], &[0, 0, 0, 0, 255, 255, 255, 255]);
    }
}
