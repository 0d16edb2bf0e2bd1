use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamOptions {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamOptions {
    fn default() -> Self {
        AdamOptions { lr: 0.05, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected ADAM moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub opts: AdamOptions,
}

impl AdamState {
    pub fn new(dim: usize, opts: AdamOptions) -> Self {
        AdamState { step: 0, m: vec![0.0; dim], v: vec![0.0; dim], opts }
    }

    /// Consumes one gradient and returns the parameter update.
    pub fn step(&mut self, grad: &[f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.m.len(), "gradient length must match the moments");
        let AdamOptions { lr, beta1, beta2, eps } = self.opts;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        grad.iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(&g, (m, v))| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                -lr * (*m / c1) / ((*v / c2).sqrt() + eps)
            })
            .collect()
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(mut state: AdamState, grad: &[f64]) -> (Vec<f64>, AdamState) {
    let d = state.step(grad);
    (d, state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_normalized_gradient() {
        let g = [0.5, -2.0, 1e-3];
        let (d, s) = adam_step(AdamState::new(3, AdamOptions::default()), &g);
        for (di, gi) in d.iter().zip(g) {
            let want = -0.05 * gi / (gi.abs() + 1e-8);
            assert!((di - want).abs() < 1e-15);
        }
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut s = AdamState::new(1, AdamOptions::default());
        s.step(&[1.0]);
        let (m, v) = (s.m[0], s.v[0]);
        let d = s.step(&[0.0]);
        assert_eq!(s.m[0], 0.9 * m);
        assert_eq!(s.v[0], 0.999 * v);
        assert!(d[0] < 0.0);
        let mut fresh = AdamState::new(1, AdamOptions::default());
        assert_eq!(fresh.step(&[0.0]), vec![0.0]);
    }

    #[test]
    fn quadratic_converges() {
        // reference: a scalar loop written out independently
        let (mut p, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let mut s = AdamState::new(1, AdamOptions { lr: 0.1, ..Default::default() });
        let mut q = 0.0;
        for k in 1..=500 {
            let g = 2.0 * (p - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            p -= 0.1 * (m / (1.0 - 0.9f64.powi(k))) / ((v / (1.0 - 0.999f64.powi(k))).sqrt() + 1e-8);
            q += s.step(&[2.0 * (q - 3.0)])[0];
        }
        assert!((q - 3.0).abs() < 0.01);
        assert!((q - p).abs() < 1e-12);
    }
}
