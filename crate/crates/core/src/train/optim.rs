use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Param, ParamRole};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `lr0 * gamma^epoch`, with `epoch` counted from zero.
pub fn lr_at(epoch: usize, lr0: f64, gamma: f64) -> f64 {
    lr0 * gamma.powi(epoch as i32)
}

/// First and second moments per parameter, plus the shared step count.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Whether normalization gains and shifts are decayed too.
    pub decay_norm: bool,
    pub state: OptState,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
            weight_decay,
            decay_norm: true,
            state: OptState::default(),
        }
    }

    /// One update of every parameter from its accumulated `grad`.
    ///
    /// Moments are created lazily on the first call; later calls must pass
    /// the same parameters in the same order.
    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        let st = &mut self.state;
        if st.m.is_empty() {
            st.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            st.v = st.m.clone();
        }
        if st.m.len() != params.len() {
            return Err(Error::invalid(
                "adamw_step",
                format!("state holds {} parameters, got {}", st.m.len(), params.len()),
            ));
        }
        for (i, p) in params.iter().enumerate() {
            if st.m[i].len() != p.numel() || p.grad.len() != p.numel() {
                return Err(Error::Shape {
                    op: "adamw_step",
                    lhs: vec![st.m[i].len()],
                    rhs: p.value.shape().to_vec(),
                });
            }
        }
        st.step += 1;
        let t = st.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let decay = if p.role == ParamRole::Norm && !self.decay_norm {
                1.0
            } else {
                1.0 - lr * self.weight_decay
            };
            let (m, v) = (&mut st.m[i], &mut st.v[i]);
            let g = p.grad.data().to_vec();
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                *w *= decay;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar(v: f64, g: f64, role: ParamRole) -> Param {
        let mut p = Param::new("p", role, Tensor::from_parts(vec![1], vec![v]));
        p.grad = Tensor::from_parts(vec![1], vec![g]);
        p
    }

    #[test]
    fn schedule() {
        assert_eq!(lr_at(0, 1e-3, 0.8), 1e-3);
        assert!((lr_at(2, 1e-3, 0.8) - 6.4e-4).abs() < 1e-18);
        assert_eq!(lr_at(7, 1e-3, 1.0), 1e-3);
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut p = scalar(0.7, 0.0, ParamRole::Weight);
        AdamW::new(0.0).step(&mut [&mut p], 1e-3).unwrap();
        assert_eq!(p.value.data()[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.5, 1.0, ParamRole::Weight);
        AdamW::new(0.0).step(&mut [&mut p], 1e-3).unwrap();
        // m_hat / sqrt(v_hat) = 1 exactly, leaving eps in the denominator
        assert_eq!(p.value.data()[0], 0.5 - 1e-3 / (1.0 + ADAM_EPS));
        assert!((p.value.data()[0] - (0.5 - 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn pure_decay_shrinks() {
        let mut p = scalar(2.0, 0.0, ParamRole::Weight);
        AdamW::new(1e-4).step(&mut [&mut p], 1e-3).unwrap();
        assert_eq!(p.value.data()[0], 2.0 * (1.0 - 1e-7));
        let mut n = scalar(2.0, 0.0, ParamRole::Norm);
        let mut opt = AdamW::new(1e-4);
        opt.decay_norm = false;
        opt.step(&mut [&mut n], 1e-3).unwrap();
        assert_eq!(n.value.data()[0], 2.0);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut a = scalar(1.0, 1.0, ParamRole::Weight);
        let mut opt = AdamW::new(0.0);
        opt.step(&mut [&mut a], 1e-3).unwrap();
        let mut b = Param::new("q", ParamRole::Weight, Tensor::zeros(&[3]));
        assert!(opt.step(&mut [&mut b], 1e-3).is_err());
    }
}
