/// AdamW with decoupled weight decay.
pub(crate) struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m1: Vec<f64>,
    m2: Vec<f64>,
    step: i32,
}

impl AdamW {
    pub(crate) fn new(n: usize, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            m1: vec![0.0; n],
            m2: vec![0.0; n],
            step: 0,
        }
    }

    pub(crate) fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m1[i] = self.beta1 * self.m1[i] + (1.0 - self.beta1) * grad[i];
            self.m2[i] = self.beta2 * self.m2[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let update = (self.m1[i] / bc1) / ((self.m2[i] / bc2).sqrt() + self.eps);
            params[i] -= lr * (update + self.weight_decay * params[i]);
        }
    }
}
