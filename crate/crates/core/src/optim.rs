//! SGD with momentum, Adam, and a step-decay learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use crate::params::ParamStore;
use crate::{Error, Result};

/// One SGD update over `params`:
/// `v ← momentum·v + grad; p ← p − lr·v`, then gradients are cleared.
///
/// `velocity` is created on first use and must keep the store's order.
pub fn sgd_step(params: &mut ParamStore, velocity: &mut Vec<Vec<f64>>, lr: f64, momentum: f64) -> Result<()> {
    if velocity.is_empty() {
        *velocity = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
    }
    if let Some(p) = params.iter().find(|p| p.tensor.grad.is_none()) {
        return Err(Error::MissingGrad(p.name.clone()));
    }
    for (p, v) in params.iter_mut().zip(velocity.iter_mut()) {
        let grad = p.tensor.grad.take().expect("checked above");
        for ((x, vel), g) in p.tensor.data_mut().iter_mut().zip(v.iter_mut()).zip(&grad) {
            *vel = momentum * *vel + g;
            *x -= lr * *vel;
        }
    }
    Ok(())
}

/// Adam moment estimates, bias-corrected.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        state.v = state.m.clone();
    }
    if let Some(p) = params.iter().find(|p| p.tensor.grad.is_none()) {
        return Err(Error::MissingGrad(p.name.clone()));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - crate::math::powf(b1, state.t as f64);
    let c2 = 1.0 - crate::math::powf(b2, state.t as f64);
    for ((p, m), v) in params.iter_mut().zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        let grad = p.tensor.grad.take().expect("checked above");
        for (((x, m), v), g) in p.tensor.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(&grad) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *x -= lr * (*m / c1) / (crate::math::sqrt(*v / c2) + state.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Sgd { momentum: f64, velocity: Vec<Vec<f64>> },
    Adam(AdamState),
}

/// Stateful optimizer with ×0.1 learning-rate decay at each milestone
/// step and optional global gradient-norm clipping.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub method: Method,
    steps: usize,
}

impl Optimizer {
    pub fn sgd(base_lr: f64, momentum: f64, milestones: Vec<usize>) -> Self {
        Self::with(base_lr, milestones, Method::Sgd {
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn adam(base_lr: f64, milestones: Vec<usize>) -> Self {
        Self::with(base_lr, milestones, Method::Adam(AdamState::default()))
    }

    fn with(base_lr: f64, milestones: Vec<usize>, method: Method) -> Self {
        Self {
            base_lr,
            milestones,
            clip_norm: None,
            method,
            steps: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        let decays = self.milestones.iter().filter(|&&m| self.steps >= m).count();
        let mut lr = self.base_lr;
        for _ in 0..decays {
            lr *= 0.1;
        }
        lr
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if let Some(max) = self.clip_norm {
            let sq: f64 = params
                .iter()
                .filter_map(|p| p.tensor.grad.as_ref())
                .flat_map(|g| g.iter())
                .map(|g| g * g)
                .sum();
            let norm = crate::math::sqrt(sq);
            if norm > max {
                let s = max / norm;
                for p in params.iter_mut() {
                    if let Some(g) = p.tensor.grad.as_mut() {
                        g.iter_mut().for_each(|v| *v *= s);
                    }
                }
            }
        }
        let lr = self.lr();
        match &mut self.method {
            Method::Sgd { momentum, velocity } => sgd_step(params, velocity, lr, *momentum)?,
            Method::Adam(state) => adam_step(params, state, lr)?,
        }
        self.steps += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::from_vec(vec![value]));
        s
    }

    fn value(s: &ParamStore) -> f64 {
        s.iter().next().unwrap().tensor.data()[0]
    }

    #[test]
    fn plain_step() {
        let mut s = single(0.0);
        s.iter_mut().next().unwrap().tensor.accumulate_grad(&[1.0]);
        let mut v = Vec::new();
        sgd_step(&mut s, &mut v, 0.1, 0.0).unwrap();
        assert!((value(&s) + 0.1).abs() < 1e-15);
        assert!(s.iter().next().unwrap().tensor.grad.is_none());
    }

    #[test]
    fn momentum_recurrence() {
        let mut s = single(0.0);
        let mut v = Vec::new();
        let mut seen = Vec::new();
        for _ in 0..2 {
            s.iter_mut().next().unwrap().tensor.accumulate_grad(&[1.0]);
            sgd_step(&mut s, &mut v, 1.0, 0.9).unwrap();
            seen.push(value(&s));
        }
        assert!((seen[0] + 1.0).abs() < 1e-12);
        assert!((seen[1] + 2.9).abs() < 1e-12);
    }

    #[test]
    fn missing_grad_is_rejected() {
        let mut s = single(0.0);
        let mut v = Vec::new();
        assert!(matches!(sgd_step(&mut s, &mut v, 0.1, 0.9), Err(Error::MissingGrad(_))));
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut s = single(3.0);
        let mut opt = Optimizer::sgd(0.05, 0.0, vec![]);
        let mut prev = 9.0;
        for _ in 0..50 {
            let x = value(&s);
            s.iter_mut().next().unwrap().tensor.accumulate_grad(&[2.0 * x]);
            opt.step(&mut s).unwrap();
            let f = value(&s) * value(&s);
            assert!(f < prev);
            prev = f;
        }
    }

    #[test]
    fn milestone_decay() {
        let mut opt = Optimizer::sgd(1e-2, 0.9, vec![2, 4]);
        let mut s = single(0.0);
        let mut lrs = Vec::new();
        for _ in 0..5 {
            lrs.push(opt.lr());
            s.iter_mut().next().unwrap().tensor.accumulate_grad(&[0.0]);
            opt.step(&mut s).unwrap();
        }
        assert_eq!(lrs[0], 1e-2);
        assert!((lrs[2] - 1e-3).abs() < 1e-15);
        assert!((lrs[4] - 1e-4).abs() < 1e-16);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut s = single(1.0);
        let mut opt = Optimizer::adam(0.1, vec![]);
        s.iter_mut().next().unwrap().tensor.accumulate_grad(&[123.0]);
        opt.step(&mut s).unwrap();
        assert!((value(&s) - 0.9).abs() < 1e-9);
        for _ in 0..100 {
            let x = value(&s);
            s.iter_mut().next().unwrap().tensor.accumulate_grad(&[2.0 * x]);
            opt.step(&mut s).unwrap();
        }
        assert!(value(&s).abs() < 0.2);
    }
}
