//! Adaptive-moment optimizer shared by adapter training and scene editing.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied as `p -= lr * wd * p`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment buffers for one flat parameter vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One update with a per-element learning rate.
    pub fn step(
        &mut self,
        cfg: &AdamConfig,
        params: &mut [f64],
        grads: &[f64],
        lr: impl Fn(usize) -> f64,
    ) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let lr_i = lr(i);
            if cfg.weight_decay != 0.0 {
                params[i] -= lr_i * cfg.weight_decay * params[i];
            }
            params[i] -= lr_i * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }

    /// Rebuilds the buffers after a reindexing of the parameters: row `i` of
    /// the new layout takes the moments of old row `origin[i]`. Each row holds
    /// `width` consecutive entries.
    pub fn remap(&mut self, origin: &[usize], width: usize) {
        let pick = |src: &[f64]| {
            origin
                .iter()
                .flat_map(|&o| src[o * width..(o + 1) * width].iter().copied())
                .collect::<Vec<_>>()
        };
        self.m = pick(&self.m);
        self.v = pick(&self.v);
    }
}

/// Adam over rows of `width` parameters where only some rows take part in a
/// given step. Rows outside the mask are left bit-for-bit untouched (moments
/// included), and bias correction uses each row's own update count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MaskedAdam {
    pub width: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub counts: Vec<u64>,
}

impl MaskedAdam {
    pub fn new(rows: usize, width: usize) -> Self {
        Self {
            width,
            m: vec![0.0; rows * width],
            v: vec![0.0; rows * width],
            counts: vec![0; rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.counts.len()
    }

    /// `lr(j)` is the learning rate for column `j` of a row.
    pub fn step(
        &mut self,
        cfg: &AdamConfig,
        params: &mut [f64],
        grads: &[f64],
        active: &[bool],
        lr: impl Fn(usize) -> f64,
    ) {
        let w = self.width;
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        assert_eq!(active.len(), self.counts.len());
        for (r, _) in active.iter().enumerate().filter(|(_, &a)| a) {
            self.counts[r] += 1;
            let t = self.counts[r] as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            for j in 0..w {
                let i = r * w + j;
                let g = grads[i];
                self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
                self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
                let lr_j = lr(j);
                if cfg.weight_decay != 0.0 {
                    params[i] -= lr_j * cfg.weight_decay * params[i];
                }
                params[i] -= lr_j * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + cfg.eps);
            }
        }
    }

    /// Row `i` of the new layout takes the state of old row `origin[i]`.
    pub fn remap(&mut self, origin: &[usize]) {
        let w = self.width;
        let pick = |src: &[f64]| {
            origin
                .iter()
                .flat_map(|&o| src[o * w..(o + 1) * w].iter().copied())
                .collect::<Vec<_>>()
        };
        self.m = pick(&self.m);
        self.v = pick(&self.v);
        self.counts = origin.iter().map(|&o| self.counts[o]).collect();
    }
}
