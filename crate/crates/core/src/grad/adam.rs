use super::{GradError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { alpha: 0.1, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self { alpha, ..Self::default() }
    }
}

/// Adam with bias-corrected first and second moments, one moment pair per
/// parameter tensor. The step counter starts at 0 and is 1 on the first update.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    k: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { config, m: zeros(), v: zeros(), k: 0 }
    }

    /// Restores optimizer state, e.g. from a checkpoint.
    pub fn from_parts(config: AdamConfig, m: Vec<Tensor>, v: Vec<Tensor>, k: u64) -> Result<Self, GradError> {
        for (a, b) in m.iter().zip(&v) {
            if a.shape() != b.shape() {
                return Err(GradError::ShapeMismatch { op: "adam", lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
            }
        }
        if m.len() != v.len() {
            return Err(GradError::ShapeMismatch { op: "adam", lhs: vec![m.len()], rhs: vec![v.len()] });
        }
        Ok(Self { config, m, v, k })
    }

    pub fn steps(&self) -> u64 {
        self.k
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), GradError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(GradError::ShapeMismatch {
                op: "adam",
                lhs: vec![self.m.len()],
                rhs: vec![params.len(), grads.len()],
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(GradError::ShapeMismatch { op: "adam", lhs: p.shape().to_vec(), rhs: g.shape().to_vec() });
            }
        }
        self.k += 1;
        let AdamConfig { alpha, beta1, beta2, epsilon } = self.config;
        let k = i32::try_from(self.k).unwrap_or(i32::MAX);
        let c1 = 1.0 - beta1.powi(k);
        let c2 = 1.0 - beta2.powi(k);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * gd[i];
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gd[i] * gd[i];
                let m_hat = md[i] / c1;
                let v_hat = vd[i] / c2;
                pd[i] -= alpha * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
