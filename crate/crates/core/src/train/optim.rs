use crate::net::ParamStore;

/// Linear warmup from 0 to `base` over `warmup` steps (1-based), then constant.
pub fn lr_at(base: f64, warmup: u64, step: u64) -> f64 {
    if warmup == 0 || step >= warmup {
        base
    } else {
        base * step as f64 / warmup as f64
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamStore, weight_decay: f64) -> AdamW {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, t: 0, m: zeros.clone(), v: zeros }
    }

    /// Scales `grads` in place so their global L2 norm is at most `max_norm`;
    /// returns the norm before clipping.
    pub fn clip(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
        let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max_norm {
            let s = max_norm / norm;
            grads.iter_mut().flatten().for_each(|g| *g *= s);
        }
        norm
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                let w = &mut p.value.data[i];
                *w -= lr * (update + self.weight_decay * *w);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn warmup_is_linear_then_flat() {
        assert_eq!(lr_at(1e-3, 10, 1), 1e-4);
        assert_eq!(lr_at(1e-3, 10, 5), 5e-4);
        assert_eq!(lr_at(1e-3, 10, 10), 1e-3);
        assert_eq!(lr_at(1e-3, 10, 500), 1e-3);
        assert_eq!(lr_at(1e-3, 0, 1), 1e-3);
    }

    #[test]
    fn clip_caps_global_norm() {
        let mut g = vec![vec![3.0, 0.0], vec![4.0]];
        assert_eq!(AdamW::clip(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
        let mut small = vec![vec![0.1]];
        AdamW::clip(&mut small, 1.0);
        assert_eq!(small[0][0], 0.1);
    }

    // First step of Adam moves each weight by lr·sign(g) (bias-corrected m̂/√v̂ = ±1),
    // plus the decoupled decay lr·wd·w.
    #[test]
    fn first_step_is_sign_update() {
        let mut store = ParamStore::new();
        let id = store.add("w", vec![2], Init::Ones, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut opt = AdamW::new(&store, 0.01);
        opt.step(&mut store, &[vec![0.5, -2.0]], 0.1);
        let w = &store.get(id).value.data;
        assert!((w[0] - (1.0 - 0.1 * (1.0 / (1.0 + 2e-8)) - 0.001)).abs() < 1e-9);
        assert!((w[1] - (1.0 + 0.1 - 0.001)).abs() < 1e-9);
    }
}
