use super::{Scalar, Tensor};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per parameter tensor.
pub struct AdamState<S> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[Tensor<S>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![S::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![S::zero(); p.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters. `grads[i]` may be `None` when the
    /// parameter did not participate in the loss; its moments still decay.
    pub fn step(&mut self, cfg: &AdamParams, params: &mut [Tensor<S>], grads: &[Option<&[S]>]) {
        assert_eq!(params.len(), self.m.len(), "optimizer state size mismatch");
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        self.step += 1;
        let b1 = S::from_f64(cfg.beta1);
        let b2 = S::from_f64(cfg.beta2);
        let one_m_b1 = S::from_f64(1.0 - cfg.beta1);
        let one_m_b2 = S::from_f64(1.0 - cfg.beta2);
        let corr1 = S::from_f64(1.0 / (1.0 - cfg.beta1.powi(self.step as i32)));
        let corr2 = S::from_f64(1.0 / (1.0 - cfg.beta2.powi(self.step as i32)));
        let lr = S::from_f64(cfg.lr);
        let eps = S::from_f64(cfg.eps);
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            match grads[i] {
                Some(g) => {
                    assert_eq!(g.len(), p.numel(), "gradient shape mismatch");
                    for (k, pv) in p.data_mut().iter_mut().enumerate() {
                        let gk = g[k];
                        m[k] = b1 * m[k] + one_m_b1 * gk;
                        v[k] = b2 * v[k] + one_m_b2 * gk * gk;
                        let mhat = m[k] * corr1;
                        let vhat = v[k] * corr2;
                        *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
                None => {
                    for (k, pv) in p.data_mut().iter_mut().enumerate() {
                        m[k] = b1 * m[k];
                        v[k] = b2 * v[k];
                        let mhat = m[k] * corr1;
                        let vhat = v[k] * corr2;
                        *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![Tensor::from_vec(vec![1.0f64, -2.0, 3.0])];
        let mut state = AdamState::new(&params);
        let zeros = vec![0.0; 3];
        for _ in 0..5 {
            state.step(
                &AdamParams::default(),
                &mut params,
                &[Some(zeros.as_slice())],
            );
        }
        assert_eq!(params[0].data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // m1 = (1-b1) g, v1 = (1-b2) g^2; after bias correction mhat = g,
        // vhat = g^2, so the update is -lr * g / (|g| + eps).
        let cfg = AdamParams {
            lr: 0.01,
            ..Default::default()
        };
        let g = 0.37f64;
        let mut params = vec![Tensor::from_vec(vec![1.0f64])];
        let mut state = AdamState::new(&params);
        state.step(&cfg, &mut params, &[Some(&[g])]);
        let expected = 1.0 - cfg.lr * g / (g.abs() + cfg.eps);
        assert!((params[0].data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn moments_decay_to_zero_without_gradient() {
        let mut params = vec![Tensor::from_vec(vec![5.0f64])];
        let mut state = AdamState::new(&params);
        state.step(&AdamParams::default(), &mut params, &[Some(&[1.0])]);
        for _ in 0..20_000 {
            state.step(&AdamParams::default(), &mut params, &[None]);
        }
        assert!(state.m[0][0].abs() < 1e-12);
        assert!(state.v[0][0].abs() < 1e-10);
    }
}
