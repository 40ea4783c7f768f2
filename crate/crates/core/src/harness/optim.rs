//! Decoupled-weight-decay Adam with linear warmup then linear decay to zero.

use crate::model::ModelWeights;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

pub struct AdamW {
    peak_lr: f64,
    weight_decay: f64,
    warmup_steps: usize,
    total_steps: usize,
    /// Completed optimizer steps.
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Decay applies to matrix-shaped parameters only (no biases, no
    /// layer-norm gains).
    decay: Vec<bool>,
}

impl AdamW {
    pub fn new(
        weights: &ModelWeights,
        peak_lr: f64,
        weight_decay: f64,
        warmup_steps: usize,
        total_steps: usize,
    ) -> AdamW {
        let mut m = Vec::new();
        let mut decay = Vec::new();
        weights.for_each(|_, t| {
            m.push(vec![0.0; t.numel()]);
            decay.push(t.shape().len() == 2);
        });
        AdamW {
            peak_lr,
            weight_decay,
            warmup_steps,
            total_steps,
            step: 0,
            v: m.clone(),
            m,
            decay,
        }
    }

    /// Linear warmup from zero over `warmup_steps`, then linear decay to
    /// zero at `total_steps`. `step` counts completed updates, so the very
    /// first update runs at lr 0.
    pub fn lr_at(&self, step: usize) -> f64 {
        let factor = if step < self.warmup_steps {
            step as f64 / self.warmup_steps.max(1) as f64
        } else if self.total_steps > self.warmup_steps {
            let remaining = self.total_steps.saturating_sub(step) as f64;
            (remaining / (self.total_steps - self.warmup_steps) as f64).max(0.0)
        } else {
            0.0
        };
        self.peak_lr * factor
    }

    pub fn current_lr(&self) -> f64 {
        self.lr_at(self.step)
    }

    /// Apply one update. `grads` is aligned with the canonical parameter
    /// order. Parameters with no gradient history (all-zero gradient and
    /// all-zero moments) are skipped entirely, so a head that never receives
    /// gradient keeps its exact initial bytes.
    pub fn apply(&mut self, weights: &mut ModelWeights, grads: &[Vec<f64>]) {
        let lr = self.lr_at(self.step);
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - BETA1.powf(t);
        let bias2 = 1.0 - BETA2.powf(t);

        let mut idx = 0;
        weights.for_each_mut(|_, tensor| {
            let g = &grads[idx];
            assert_eq!(g.len(), tensor.numel(), "gradient length mismatch");
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let untouched = g.iter().all(|&x| x == 0.0)
                && m.iter().all(|&x| x == 0.0)
                && v.iter().all(|&x| x == 0.0);
            if !untouched {
                let wd = if self.decay[idx] {
                    self.weight_decay
                } else {
                    0.0
                };
                for (i, p) in tensor.data_mut().iter_mut().enumerate() {
                    m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                    v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                    let m_hat = m[i] / bias1;
                    let v_hat = v[i] / bias2;
                    *p -= lr * m_hat / (v_hat.sqrt() + EPS);
                    if wd > 0.0 {
                        *p -= lr * wd * *p;
                    }
                }
            }
            idx += 1;
        });
    }
}
