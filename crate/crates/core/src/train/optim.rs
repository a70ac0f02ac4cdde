use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::Parameters;
use crate::tensor::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::validation(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Applies accumulated gradients to trainable parameters. Frozen tensors
/// and tensors without a gradient are skipped.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step<T: Scalar, P: Parameters<T>>(&mut self, params: &mut P) -> Result<()> {
        self.step += 1;
        let mut tensors = params.parameters_mut();
        if self.moments.is_empty() {
            self.moments = tensors
                .iter()
                .map(|(_, t)| (vec![0.0; t.numel()], vec![0.0; t.numel()]))
                .collect();
        }
        if self.moments.len() != tensors.len() {
            return Err(Error::contract("optimizer used with a different parameter set"));
        }
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for ((_, t), (m, v)) in tensors.iter_mut().zip(&mut self.moments) {
            if !t.requires_grad() {
                continue;
            }
            let Some(g) = t.grad().map(|g| g.iter().map(|x| x.as_f64()).collect::<Vec<_>>()) else {
                continue;
            };
            let data = t.data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in data.iter_mut().zip(&g) {
                        *p = T::of(p.as_f64() - self.lr * g);
                    }
                }
                OptimizerKind::Adam => {
                    for (((p, g), m), v) in data.iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let update = (*m / c1) / ((*v / c2).sqrt() + ADAM_EPSILON);
                        *p = T::of(p.as_f64() - self.lr * update);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn param(values: Vec<f64>, grad: Vec<f64>) -> Vec<(String, Tensor<f64>)> {
        let mut t = Tensor::vector(values).unwrap().with_grad();
        t.accumulate_grad(&grad).unwrap();
        vec![("w".into(), t)]
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // bias correction makes the first update lr · g/|g|
        let mut p = param(vec![1.0, -2.0], vec![0.5, -3.0]);
        Optimizer::new(OptimizerKind::Adam, 0.1).step(&mut p).unwrap();
        let d = p[0].1.data();
        assert!((d[0] - 0.9).abs() < 1e-7);
        assert!((d[1] + 1.9).abs() < 1e-7);
    }

    #[test]
    fn adam_second_step_oracle() {
        let mut p = param(vec![0.0], vec![1.0]);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01);
        opt.step(&mut p).unwrap();
        p[0].1.zero_grad();
        p[0].1.accumulate_grad(&[-2.0]).unwrap();
        opt.step(&mut p).unwrap();
        // m = 0.09·1 + 0.1·(-2) = -0.11, v = 0.999·0.001 + 0.001·4 = 0.004999
        let m_hat = -0.11 / (1.0 - 0.81);
        let v_hat: f64 = 0.004999 / (1.0 - 0.998001);
        let expect = -0.01 - 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0].1.data()[0] - expect).abs() < 1e-9);
    }

    #[test]
    fn sgd_and_zero_rate() {
        let mut p = param(vec![1.0], vec![2.0]);
        Optimizer::new(OptimizerKind::Sgd, 0.25).step(&mut p).unwrap();
        assert_eq!(p[0].1.data(), &[0.5]);
        let mut p = param(vec![1.0, 3.0], vec![2.0, -7.0]);
        Optimizer::new(OptimizerKind::Adam, 0.0).step(&mut p).unwrap();
        assert_eq!(p[0].1.data(), &[1.0, 3.0]);
    }

    #[test]
    fn frozen_tensors_stay_put() {
        let mut p = param(vec![1.0], vec![2.0]);
        p[0].1.set_requires_grad(false);
        Optimizer::new(OptimizerKind::Sgd, 1.0).step(&mut p).unwrap();
        assert_eq!(p[0].1.data(), &[1.0]);
    }
}
