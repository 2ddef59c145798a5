use super::tape::NnError;
use super::tensor::{ParamStore, Real};

/// Bias-corrected Adam. Moments are allocated lazily on the first step so a
/// fresh state can be attached to any parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: Self::BETA1, beta2: Self::BETA2, eps: Self::EPS, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> Option<(&[Vec<f32>], &[Vec<f32>])> {
        (!self.m.is_empty()).then_some((self.m.as_slice(), self.v.as_slice()))
    }

    /// Restores a saved state. Moment shapes are checked on the next step.
    pub fn restore(
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        moments: Option<(Vec<Vec<f32>>, Vec<Vec<f32>>)>,
    ) -> Self {
        let (m, v) = moments.unwrap_or_default();
        Self { lr, beta1, beta2, eps, step, m, v }
    }

    /// Applies one update from the gradients accumulated in `params`.
    /// Parameters with `requires_grad = false` are skipped.
    pub fn step<T: Real>(&mut self, params: &mut ParamStore<T>) -> Result<(), NnError> {
        for (name, t) in params.iter() {
            if t.requires_grad && !t.grad.iter().all(|g| g.is_finite()) {
                return Err(NnError::NonFiniteGrad(name.to_string()));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
            self.v = self.m.clone();
        }
        let sizes_match = self.m.len() == params.len()
            && params.iter().zip(&self.m).all(|((_, t), m)| m.len() == t.numel());
        if !sizes_match {
            return Err(NnError::Invalid("optimizer moments do not match parameter shapes".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((_, p), (m, v)) in params.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if !p.requires_grad {
                continue;
            }
            for i in 0..p.data.len() {
                let g = p.grad[i].f64();
                let mi = self.beta1 * m[i] as f64 + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v[i] as f64 + (1.0 - self.beta2) * g * g;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = self.lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
                p.data[i] = T::of(p.data[i].f64() - update);
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(params: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .flat_map(|(_, t)| t.grad.iter())
        .map(|g| g.f64() * g.f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::of(max_norm / norm);
        for (_, t) in params.iter_mut() {
            for g in &mut t.grad {
                *g *= s;
            }
        }
    }
    norm
}
