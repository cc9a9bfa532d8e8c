//! SGD with momentum and a step-decay learning-rate schedule.

use super::Tensor;
use crate::error::{Error, Result};

/// Momentum buffers plus schedule hyperparameters for one set of parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub velocity: Vec<Vec<f64>>,
    pub momentum: f64,
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_period_epochs: usize,
}

impl OptimizerState {
    pub fn new(
        params: &[Tensor],
        momentum: f64,
        base_lr: f64,
        decay_factor: f64,
        decay_period_epochs: usize,
    ) -> Result<OptimizerState> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum {momentum} outside [0,1)")));
        }
        if base_lr <= 0.0 {
            return Err(Error::Config(format!("base_lr {base_lr} must be positive")));
        }
        if decay_factor <= 0.0 || decay_factor > 1.0 {
            return Err(Error::Config(format!("decay_factor {decay_factor} outside (0,1]")));
        }
        if decay_period_epochs == 0 {
            return Err(Error::Config("decay_period_epochs must be positive".into()));
        }
        Ok(OptimizerState {
            velocity: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            momentum,
            base_lr,
            decay_factor,
            decay_period_epochs,
        })
    }
}

/// base_lr · decay_factor^floor(epoch / decay_period).
pub fn lr_schedule(state: &OptimizerState, epoch: usize) -> f64 {
    let k = (epoch / state.decay_period_epochs) as i32;
    // When base and factor are both powers of ten, combine the exponents so
    // decade schedules land on exact decades (1e-5 decayed by 0.1 -> 1e-6;
    // naive multiplication rounds to 1.0000000000000002e-6).
    let (bl, fl) = (state.base_lr.log10(), state.decay_factor.log10());
    if bl.fract() == 0.0 && fl.fract() == 0.0 && bl.is_finite() && fl.is_finite() {
        return 10f64.powi(bl as i32 + k * fl as i32);
    }
    state.base_lr * state.decay_factor.powi(k)
}

/// v ← momentum·v − lr(epoch)·grad; p ← p + v; then zero the gradients.
pub fn sgd_momentum_step(
    params: &[Tensor],
    state: &mut OptimizerState,
    epoch: usize,
) -> Result<()> {
    if params.len() != state.velocity.len() {
        return Err(Error::Internal(format!(
            "optimizer has {} velocity buffers for {} parameters",
            state.velocity.len(),
            params.len()
        )));
    }
    let lr = lr_schedule(state, epoch);
    for (p, v) in params.iter().zip(state.velocity.iter_mut()) {
        if p.len() != v.len() {
            return Err(Error::Internal("velocity buffer shape mismatch".into()));
        }
        let grad = p.grad();
        p.update_values(|vals| {
            for i in 0..vals.len() {
                v[i] = state.momentum * v[i] - lr * grad[i];
                vals[i] += v[i];
            }
        });
        p.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v], true).unwrap()
    }

    #[test]
    fn plain_sgd_step() {
        let p = param(1.0);
        p.add_to_grad(&[2.0]);
        let mut st = OptimizerState::new(&[p.clone()], 0.0, 0.1, 1.0, 1).unwrap();
        sgd_momentum_step(&[p.clone()], &mut st, 0).unwrap();
        assert!((p.values()[0] - 0.8).abs() < 1e-15);
        assert_eq!(p.grad(), vec![0.0]);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let p = param(3.5);
        let mut st = OptimizerState::new(&[p.clone()], 0.9, 0.1, 1.0, 1).unwrap();
        sgd_momentum_step(&[p.clone()], &mut st, 0).unwrap();
        assert_eq!(p.values(), vec![3.5]);
    }

    #[test]
    fn two_momentum_steps_match_hand_recurrence() {
        // v1 = -lr*g1; p1 = p0 + v1
        // v2 = mu*v1 - lr*g2; p2 = p1 + v2
        let (lr, mu, g1, g2) = (0.1, 0.9, 2.0, 1.0);
        let p = param(1.0);
        let mut st = OptimizerState::new(&[p.clone()], mu, lr, 1.0, 1).unwrap();
        p.add_to_grad(&[g1]);
        sgd_momentum_step(&[p.clone()], &mut st, 0).unwrap();
        p.add_to_grad(&[g2]);
        sgd_momentum_step(&[p.clone()], &mut st, 0).unwrap();
        let v1 = -lr * g1;
        let v2 = mu * v1 - lr * g2;
        let expected = 1.0 + v1 + v2;
        assert!((p.values()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn schedule_hits_exact_decades() {
        let p = param(0.0);
        let st = OptimizerState::new(&[p], 0.9, 1e-5, 0.1, 80).unwrap();
        assert_eq!(lr_schedule(&st, 0), 1e-5);
        assert_eq!(lr_schedule(&st, 79), 1e-5);
        assert!((lr_schedule(&st, 80) - 1e-6).abs() < 1e-21);
        assert!((lr_schedule(&st, 160) - 1e-7).abs() < 1e-22);
    }

    #[test]
    fn missing_velocity_buffer_is_internal_error() {
        let p = param(0.0);
        let q = param(0.0);
        let mut st = OptimizerState::new(&[p.clone()], 0.9, 1e-3, 0.1, 80).unwrap();
        assert!(sgd_momentum_step(&[p, q], &mut st, 0).is_err());
    }
}
