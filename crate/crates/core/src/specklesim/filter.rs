//! Butterworth low-pass as cascaded biquads, applied forward-backward.

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    fn run(&self, x: &mut [f64]) {
        // transposed direct form II
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let out = self.b0 * input + s1;
            s1 = self.b1 * input - self.a1 * out + s2;
            s2 = self.b2 * input - self.a2 * out;
            *v = out;
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LowPass {
    sections: Vec<Biquad>,
}

impl LowPass {
    /// Even-order Butterworth low-pass with cutoff `cutoff_hz` at `sample_hz`.
    pub(crate) fn butterworth(order: usize, cutoff_hz: f64, sample_hz: f64) -> Self {
        assert!(order >= 2 && order % 2 == 0, "order must be even");
        let k = (std::f64::consts::PI * cutoff_hz / sample_hz).tan();
        let sections = (0..order / 2)
            .map(|i| {
                let theta = (2 * i + 1) as f64 * std::f64::consts::PI / (2 * order) as f64;
                let q = 1.0 / (2.0 * theta.sin());
                let norm = 1.0 / (1.0 + k / q + k * k);
                let b0 = k * k * norm;
                Biquad {
                    b0,
                    b1: 2.0 * b0,
                    b2: b0,
                    a1: 2.0 * (k * k - 1.0) * norm,
                    a2: (1.0 - k / q + k * k) * norm,
                }
            })
            .collect();
        Self { sections }
    }

    /// Zero-phase filtering: forward pass, then the same cascade on the reversed signal.
    pub(crate) fn filtfilt(&self, x: &mut [f64]) {
        for s in &self.sections {
            s.run(x);
        }
        x.reverse();
        for s in &self.sections {
            s.run(x);
        }
        x.reverse();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone_gain(f: f64, fs: f64, lp: &LowPass) -> f64 {
        let n = 4000;
        let w = 2.0 * std::f64::consts::PI * f / fs;
        let mut x: Vec<f64> = (0..n).map(|i| (w * i as f64).sin()).collect();
        lp.filtfilt(&mut x);
        let peak = x[1000..3000].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        peak
    }

    #[test]
    fn passes_carrier_and_rejects_alias_band() {
        let lp = LowPass::butterworth(8, 11.25e6, 100e6);
        assert!((tone_gain(6.67e6, 100e6, &lp) - 1.0).abs() < 1e-3);
        assert!(tone_gain(30e6, 100e6, &lp) < 1e-6);
        // -3 dB per pass at the cutoff, so -6 dB after two passes
        assert!((tone_gain(11.25e6, 100e6, &lp) - 0.5).abs() < 0.02);
    }

    #[test]
    fn dc_gain_is_unity() {
        let lp = LowPass::butterworth(8, 11.25e6, 100e6);
        let mut x = vec![1.0; 3000];
        lp.filtfilt(&mut x);
        assert!((x[1500] - 1.0).abs() < 1e-9);
    }
}
