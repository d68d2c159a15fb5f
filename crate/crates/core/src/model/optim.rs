use crate::error::{check_dim, PattError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(momentum: f64) -> Self {
        OptimizerKind::Sgd { momentum }
    }
}

/// First/second moment buffers for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        let second = match kind {
            OptimizerKind::Adam { .. } => vec![0.0; n_params],
            OptimizerKind::Sgd { .. } => Vec::new(),
        };
        Optimizer {
            kind,
            first: vec![0.0; n_params],
            second,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        check_dim(self.first.len(), params.len())?;
        check_dim(params.len(), grads.len())?;
        if !(lr >= 0.0) {
            return Err(PattError::contract("learning rate must be nonnegative"));
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g;
                    self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.first[i] / c1;
                    let v_hat = self.second[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            OptimizerKind::Sgd { momentum } => {
                for i in 0..params.len() {
                    self.first[i] = momentum * self.first[i] + grads[i];
                    params[i] -= lr * self.first[i];
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_is_noop() {
        for kind in [OptimizerKind::adam(), OptimizerKind::sgd(0.9)] {
            let mut opt = Optimizer::new(kind, 3);
            let mut p = vec![1.0, -2.0, 0.5];
            opt.step(&mut p, &[0.3, 0.1, -4.0], 0.0).unwrap();
            assert_eq!(p, vec![1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn adam_first_step_has_lr_magnitude() {
        let mut opt = Optimizer::new(OptimizerKind::adam(), 2);
        let mut p = vec![0.0, 0.0];
        opt.step(&mut p, &[5.0, -0.01], 0.1).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-6 && (p[1] - 0.1).abs() < 1e-4);
    }

    #[test]
    fn sgd_minimizes_quadratic() {
        let mut opt = Optimizer::new(OptimizerKind::sgd(0.5), 1);
        let mut p = vec![3.0];
        for _ in 0..200 {
            let g = vec![2.0 * p[0]];
            opt.step(&mut p, &g, 0.1).unwrap();
        }
        assert!(p[0].abs() < 1e-8);
    }
}
