use crate::numerics::{Param, Tensor};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(shape: &[usize], config: AdamConfig) -> Self {
        AdamState { m: Tensor::zeros(shape), v: Tensor::zeros(shape), t: 0, config }
    }
}

/// One bias-corrected Adam update of `param` from its accumulated gradient.
pub fn adam_step(param: &mut Param, state: &mut AdamState) {
    assert_eq!(param.value.shape(), state.m.shape(), "Adam state does not match parameter");
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let g = param.grad.data();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, &g), m), v) in param.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam over an ordered list of parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Param>, config: AdamConfig) -> Self {
        Adam { states: params.into_iter().map(|p| AdamState::new(p.value.shape(), config)).collect() }
    }

    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param>) {
        let mut n = 0;
        for (p, s) in params.into_iter().zip(self.states.iter_mut()) {
            adam_step(p, s);
            n += 1;
        }
        assert_eq!(n, self.states.len(), "parameter count changed under the optimizer");
    }

    pub fn steps_taken(&self) -> u64 {
        self.states.first().map_or(0, |s| s.t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64, g: f64) -> Param {
        let mut p = Param::new(Tensor::filled(&[1], v));
        p.grad.fill(g);
        p
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut p = scalar(0.25, 0.0);
        let mut s = AdamState::new(&[1], AdamConfig::default());
        adam_step(&mut p, &mut s);
        assert_eq!(p.value.data()[0], 0.25);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // m = 0.1, v = 0.001; bias-corrected m_hat = 1, v_hat = 1
        let cfg = AdamConfig::default();
        let mut p = scalar(0.0, 1.0);
        let mut s = AdamState::new(&[1], cfg);
        adam_step(&mut p, &mut s);
        let expect = -cfg.lr * 1.0 / (1.0 + cfg.eps);
        assert!((p.value.data()[0] - expect).abs() < 1e-18);
    }

    #[test]
    fn two_steps_constant_gradient_moments() {
        let cfg = AdamConfig::default();
        let g = 0.5;
        let mut p = scalar(1.0, g);
        let mut s = AdamState::new(&[1], cfg);
        adam_step(&mut p, &mut s);
        adam_step(&mut p, &mut s);
        assert_eq!(s.t, 2);
        // geometric sums: m_2 = (1-b1)(1+b1) g, v_2 = (1-b2)(1+b2) g^2
        let m2 = (1.0 - cfg.beta1) * (1.0 + cfg.beta1) * g;
        let v2 = (1.0 - cfg.beta2) * (1.0 + cfg.beta2) * g * g;
        assert!((s.m.data()[0] - m2).abs() < 1e-15);
        assert!((s.v.data()[0] - v2).abs() < 1e-15);
    }
}
