use crate::numerics::{ParamId, ParamStore, Tensor};

/// Adam with decoupled weight decay and bias-corrected moments.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    steps: u32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    /// Applies one update. Parameters without a gradient keep their values
    /// and moments.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads {
            let i = id.index();
            if self.first.len() <= i {
                self.first.resize(i + 1, Vec::new());
                self.second.resize(i + 1, Vec::new());
            }
            if self.first[i].is_empty() {
                self.first[i] = vec![0.0; g.len()];
                self.second[i] = vec![0.0; g.len()];
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let p = store.data_mut(*id);
            for (j, &gj) in g.data().iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                p[j] -= self.learning_rate * (update + self.weight_decay * p[j]);
            }
        }
    }
}
