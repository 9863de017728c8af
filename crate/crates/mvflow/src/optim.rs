//! AdamW optimizer and the finite-difference gradient oracle.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Hyperparameters for decoupled-weight-decay Adam.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.001 }
    }
}

/// Per-parameter first/second moments plus the shared step counter.
pub struct AdamW<E: Scalar> {
    pub cfg: AdamWConfig,
    step: u64,
    first: Vec<Option<Tensor<E>>>,
    second: Vec<Option<Tensor<E>>>,
}

impl<E: Scalar> AdamW<E> {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self { cfg, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn ensure_slot(&mut self, id: ParamId, shape: &[usize]) {
        if self.first.len() <= id {
            self.first.resize_with(id + 1, || None);
            self.second.resize_with(id + 1, || None);
        }
        self.first[id].get_or_insert_with(|| Tensor::zeros(shape));
        self.second[id].get_or_insert_with(|| Tensor::zeros(shape));
    }

    /// Bias-corrected Adam update followed by decoupled weight decay,
    /// applied to the given parameter ids with their gradients.
    pub fn step(
        &mut self,
        params: &mut ParamSet<E>,
        updates: &[(ParamId, Tensor<E>)],
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let b1 = E::from_f64(self.cfg.beta1);
        let b2 = E::from_f64(self.cfg.beta2);
        let one_m_b1 = E::from_f64(1.0 - self.cfg.beta1);
        let one_m_b2 = E::from_f64(1.0 - self.cfg.beta2);
        let corr1 = E::from_f64(1.0 / (1.0 - self.cfg.beta1.powi(t)));
        let corr2 = E::from_f64(1.0 / (1.0 - self.cfg.beta2.powi(t)));
        let lr = E::from_f64(self.cfg.lr);
        let eps = E::from_f64(self.cfg.eps);
        let decay = E::from_f64(self.cfg.lr * self.cfg.weight_decay);

        for (id, grad) in updates {
            let shape = params.tensor(*id).shape().to_vec();
            if grad.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "gradient shape {:?} does not match parameter {} {:?}",
                    grad.shape(),
                    params.name(*id),
                    shape
                )));
            }
            self.ensure_slot(*id, &shape);
            let m = self.first[*id].as_mut().unwrap();
            let v = self.second[*id].as_mut().unwrap();
            let p = params.tensor_mut(*id);
            for ((pv, gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                let g = *gv;
                *mv = b1 * *mv + one_m_b1 * g;
                *vv = b2 * *vv + one_m_b2 * g * g;
                let mhat = *mv * corr1;
                let vhat = *vv * corr2;
                let old = *pv;
                *pv = old - lr * mhat / (vhat.sqrt() + eps) - decay * old;
            }
        }
        Ok(())
    }

    /// Moments for checkpointing; zeros if the parameter was never stepped.
    pub fn moments(&self, id: ParamId, shape: &[usize]) -> (Tensor<E>, Tensor<E>) {
        let m = self.first.get(id).and_then(|t| t.clone()).unwrap_or_else(|| Tensor::zeros(shape));
        let v = self.second.get(id).and_then(|t| t.clone()).unwrap_or_else(|| Tensor::zeros(shape));
        (m, v)
    }

    pub fn restore(&mut self, id: ParamId, m: Tensor<E>, v: Tensor<E>, step: u64) {
        if self.first.len() <= id {
            self.first.resize_with(id + 1, || None);
            self.second.resize_with(id + 1, || None);
        }
        self.first[id] = Some(m);
        self.second[id] = Some(v);
        self.step = step;
    }
}

/// Central finite differences of a scalar-valued function, element by
/// element. The oracle for every gradient check in the workspace; it never
/// touches the tape.
pub fn finite_diff_grad<E: Scalar, F: FnMut(&Tensor<E>) -> E>(
    mut f: F,
    x: &Tensor<E>,
    eps: f64,
) -> Tensor<E> {
    assert!(eps > 0.0, "finite_diff_grad eps must be positive");
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + E::from_f64(eps);
        let hi = f(&probe).to_f64();
        probe.data_mut()[i] = orig - E::from_f64(eps);
        let lo = f(&probe).to_f64();
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = E::from_f64((hi - lo) / (2.0 * eps));
    }
    grad
}

/// Largest elementwise mismatch between an analytic gradient and its
/// finite-difference counterpart, in the relative metric used by all
/// gradient-integrity checks.
pub fn grad_mismatch<E: Scalar>(analytic: &Tensor<E>, numeric: &Tensor<E>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let (a, n) = (a.to_f64(), n.to_f64());
        let denom = a.abs().max(n.abs()).max(1e-3);
        let rel = (a - n).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}
