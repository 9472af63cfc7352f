//! Parameter groups and the Adam update.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Learning-rate partition of the model's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupId {
    ModalityA,
    ModalityB,
    Fusion,
}

impl GroupId {
    pub const ALL: [GroupId; 3] = [GroupId::ModalityA, GroupId::ModalityB, GroupId::Fusion];

    pub fn index(self) -> usize {
        match self {
            GroupId::ModalityA => 0,
            GroupId::ModalityB => 1,
            GroupId::Fusion => 2,
        }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupId::ModalityA => "A",
            GroupId::ModalityB => "B",
            GroupId::Fusion => "AB",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments<T> {
    first: Tensor<T>,
    second: Tensor<T>,
}

/// A set of parameters sharing one learning rate, with its Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup<T> {
    id: GroupId,
    params: Vec<Tensor<T>>,
    moments: Vec<Moments<T>>,
    step: u64,
}

impl<T: Scalar> ParamGroup<T> {
    pub fn new(id: GroupId, params: Vec<Tensor<T>>) -> Self {
        let moments = params
            .iter()
            .map(|p| Moments {
                first: Tensor::zeros(p.shape()),
                second: Tensor::zeros(p.shape()),
            })
            .collect();
        Self {
            id,
            params,
            moments,
            step: 0,
        }
    }

    pub fn id(&self) -> GroupId {
        self.id
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &Tensor<T> {
        &self.moments[i].first
    }

    pub fn second_moment(&self, i: usize) -> &Tensor<T> {
        &self.moments[i].second
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// One bias-corrected Adam update with β1 = 0.9, β2 = 0.999, ε = 1e-8
    /// (ε added after the square root).
    pub fn adam_step(&mut self, grads: &[Tensor<T>], lr: T) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::shape("adam_step", &[self.params.len()], &[grads.len()]));
        }
        for (p, g) in self.params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
        }
        // negated so that NaN is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(lr > T::zero()) {
            return Err(Error::Input(format!("learning rate must be positive, got {lr}")));
        }

        self.step += 1;
        let (b1, b2, eps) = (T::of(BETA1), T::of(BETA2), T::of(EPSILON));
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let bias1 = T::one() - b1.powi(t);
        let bias2 = T::one() - b2.powi(t);

        for ((p, g), mom) in self.params.iter_mut().zip(grads).zip(&mut self.moments) {
            let m = mom.first.data_mut();
            let v = mom.second.data_mut();
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
