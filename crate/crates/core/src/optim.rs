//! SGD with classical momentum and decoupled-from-nothing weight decay:
//!
//!   v <- momentum * v - lr * (g + weight_decay * theta)
//!   theta <- theta + v
//!
//! The update is plain f64 arithmetic over slices in a fixed order, so it is
//! bitwise reproducible for identical inputs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct SgdHyper {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Per-parameter velocity buffers, aligned with the parameter list order.
#[derive(Debug, Clone, Default)]
pub struct VelocityState {
    buffers: Vec<Vec<f64>>,
}

impl VelocityState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.buffers
    }
}

/// One core update over raw slices. Exposed so the momentum arithmetic is
/// testable against hand iterations.
pub fn sgd_update(param: &mut [f64], grad: &[f64], velocity: &mut [f64], h: &SgdHyper) {
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = h.momentum * *v - h.learning_rate * (g + h.weight_decay * *p);
        *p += *v;
    }
}

/// Apply one momentum-SGD step to every tensor in `params`, reading each
/// tensor's gradient slot. Velocity buffers are allocated on first use and
/// must stay shape-aligned with the parameter set afterwards.
pub fn sgd_step(params: &mut [&mut Tensor], state: &mut VelocityState, h: &SgdHyper) -> Result<()> {
    if state.buffers.is_empty() {
        state.buffers = params.iter().map(|p| vec![0.0; p.numel()]).collect();
    }
    if state.buffers.len() != params.len() {
        return Err(Error::ShapeMismatch {
            op: "sgd_step",
            expected: format!("{} velocity buffers", params.len()),
            got: format!("{}", state.buffers.len()),
        });
    }
    for (i, (param, vel)) in params.iter_mut().zip(state.buffers.iter_mut()).enumerate() {
        if vel.len() != param.numel() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                expected: format!("velocity of {} values for param {i}", param.numel()),
                got: format!("{} values", vel.len()),
            });
        }
        let grad = match param.grad() {
            Some(g) => g.to_vec(),
            None => {
                return Err(Error::invalid(format!(
                    "sgd_step: param {i} has no gradient slot"
                )))
            }
        };
        sgd_update(param.data_mut(), &grad, vel, h);
        param.check_finite("sgd_step")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(lr: f64, momentum: f64, wd: f64) -> SgdHyper {
        SgdHyper {
            learning_rate: lr,
            momentum,
            weight_decay: wd,
        }
    }

    #[test]
    fn vanilla_sgd_matches_theta_minus_lr_g() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0, 0.0];
        sgd_update(&mut p, &[0.5, 0.25], &mut v, &hyper(0.1, 0.0, 0.0));
        assert_eq!(p, vec![1.0 - 0.05, -2.0 - 0.025]);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = vec![3.0];
        let mut v = vec![0.0];
        sgd_update(&mut p, &[0.0], &mut v, &hyper(0.1, 0.9, 0.0));
        assert_eq!(p, vec![3.0]);
        assert_eq!(v, vec![0.0]);
    }

    #[test]
    fn two_hand_iterated_momentum_steps() {
        // theta=1, g=1, lr=0.1, momentum=0.9, wd=0:
        //   step1: v = -0.1,  theta = 0.9
        //   step2: v = -0.19, theta = 0.71
        let h = hyper(0.1, 0.9, 0.0);
        let mut p = vec![1.0];
        let mut v = vec![0.0];
        sgd_update(&mut p, &[1.0], &mut v, &h);
        assert!((p[0] - 0.9).abs() < 1e-15);
        assert!((v[0] + 0.1).abs() < 1e-15);
        sgd_update(&mut p, &[1.0], &mut v, &h);
        assert!((v[0] + 0.19).abs() < 1e-15);
        assert!((p[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn step_is_bitwise_reproducible() {
        let h = hyper(0.037, 0.91, 0.004);
        let run = || {
            let mut t = Tensor::new(&[3], vec![0.3, -1.2, 2.5]).unwrap();
            t.accumulate_grad(&[0.11, -0.7, 0.02]).unwrap();
            let mut state = VelocityState::new();
            sgd_step(&mut [&mut t], &mut state, &h).unwrap();
            sgd_step(&mut [&mut t], &mut state, &h).unwrap();
            (t.data().to_vec(), state.buffers()[0].clone())
        };
        let (p1, v1) = run();
        let (p2, v2) = run();
        assert!(p1.iter().zip(&p2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(v1.iter().zip(&v2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn missing_grad_and_shape_mismatch_error() {
        let mut t = Tensor::zeros(&[2]);
        let mut state = VelocityState::new();
        let h = hyper(0.1, 0.0, 0.0);
        assert!(sgd_step(&mut [&mut t], &mut state, &h).is_err());

        t.zero_grad();
        let mut bad = VelocityState {
            buffers: vec![vec![0.0; 5]],
        };
        assert!(matches!(
            sgd_step(&mut [&mut t], &mut bad, &h),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
