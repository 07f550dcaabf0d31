use crate::autodiff::Tensor;
use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for each parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return shape_err(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].len() != p.numel() {
            return shape_err(format!("parameter {i}: shape {:?} vs gradient {:?}", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *x -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::zeros(&[3])], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert!(st.m[0].iter().chain(&st.v[0]).all(|&x| x == 0.0));
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![Tensor::new(vec![2], vec![0.0, 0.0]).unwrap()];
        let mut st = AdamState::new(&p);
        let g = Tensor::new(vec![2], vec![3.0, -0.2]).unwrap();
        adam_step(&mut p, &[g], &mut st, &AdamConfig::default()).unwrap();
        assert!((p[0].data()[0] + 0.01).abs() < 1e-9);
        assert!((p[0].data()[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &[Tensor::zeros(&[3])], &mut st, &AdamConfig::default()).is_err());
    }
}
