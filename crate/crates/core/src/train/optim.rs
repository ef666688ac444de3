use crate::tensor::{Gradients, ParamStore};

/// Adam with decoupled weight decay and a linear warmup to a constant rate.
///
/// Weight decay applies to matrices only; vectors (biases, layer-norm
/// gains) are left undecayed.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    step: usize,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &ParamStore<f32>, lr: f64, weight_decay: f64, warmup_steps: usize) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            warmup_steps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Learning rate used at 1-based step `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        if self.warmup_steps == 0 || t >= self.warmup_steps {
            self.lr
        } else {
            self.lr * t as f64 / self.warmup_steps as f64
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &Gradients<f32>) {
        self.step += 1;
        let t = self.step as i32;
        let lr = self.lr_at(self.step);
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let decay = params.get(id).shape().len() >= 2;
            let g = grads.get(id);
            let m = &mut self.m[id.index()];
            let v = &mut self.v[id.index()];
            let p = params.get_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = g.map_or(0.0, |g| g[k] as f64);
                let mk = self.beta1 * m[k] as f64 + (1.0 - self.beta1) * gk;
                let vk = self.beta2 * v[k] as f64 + (1.0 - self.beta2) * gk * gk;
                m[k] = mk as f32;
                v[k] = vk as f32;
                let mut x = p[k] as f64;
                if decay && self.weight_decay > 0.0 {
                    x -= lr * self.weight_decay * x;
                }
                x -= lr * (mk / bc1) / ((vk / bc2).sqrt() + self.eps);
                p[k] = x as f32;
            }
        }
    }
}
