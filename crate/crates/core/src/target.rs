//! The annealed target family `q̃_β(z|x) = p(z)·exp(−β·d(x, f(z)))`.

use crate::model::{LatentEval, ModelError, ModelSpec};
use crate::scalar::Real;

/// Unnormalized posterior at inverse temperature `beta` for one data point.
///
/// HMC works with the energy `U(z) = −log q̃_β(z)`; [`AnnealedTarget::energy`]
/// and [`AnnealedTarget::energy_grad`] are the only sign flips in the crate.
#[derive(Debug, Clone, Copy)]
pub struct AnnealedTarget<'a, T> {
    pub model: &'a ModelSpec<T>,
    pub x: &'a [T],
    pub beta: T,
}

impl<'a, T: Real> AnnealedTarget<'a, T> {
    pub fn new(model: &'a ModelSpec<T>, x: &'a [T], beta: T) -> Result<Self, ModelError> {
        if !(beta >= T::zero()) || !beta.is_finite() {
            return Err(ModelError::Invalid(format!("beta must be finite and >= 0, got {beta}")));
        }
        model.check_data(x)?;
        Ok(Self { model, x, beta })
    }

    pub fn with_beta(&self, beta: T) -> Self {
        Self { beta, ..*self }
    }

    /// `log p(z) − β·d(x, f(z))`.
    pub fn log_unnorm(&self, z: &[T]) -> Result<T, ModelError> {
        let log_prior = self.model.prior.logpdf(z)?;
        if self.beta == T::zero() {
            return Ok(log_prior);
        }
        Ok(log_prior - self.beta * self.model.distortion_at(self.x, z)?)
    }

    pub fn grad_log_unnorm(&self, z: &[T]) -> Result<Vec<T>, ModelError> {
        let mut g = self.model.prior.grad(z)?;
        if self.beta == T::zero() {
            return Ok(g);
        }
        let gd = self.model.grad_distortion_wrt_z(self.x, z)?;
        for (gi, di) in g.iter_mut().zip(gd) {
            *gi -= self.beta * di;
        }
        Ok(g)
    }

    /// Temperature-independent evaluation at `z`, combinable via
    /// [`AnnealedTarget::combine`] for any `beta`.
    pub fn evaluate(&self, z: &[T]) -> Result<LatentEval<T>, ModelError> {
        self.model.evaluate(self.x, z)
    }

    /// `(U(z), ∇U(z))` assembled from a cached evaluation.
    pub fn combine(&self, eval: &LatentEval<T>) -> (T, Vec<T>) {
        let mut grad = Vec::new();
        self.energy_grad_into(eval, &mut grad);
        (self.energy_of(eval), grad)
    }

    /// `U(z)` from a cached evaluation.
    pub fn energy_of(&self, eval: &LatentEval<T>) -> T {
        -(eval.log_prior - self.beta * eval.distortion)
    }

    /// `∇U(z)` from a cached evaluation, written into `grad`.
    pub fn energy_grad_into(&self, eval: &LatentEval<T>, grad: &mut Vec<T>) {
        grad.clear();
        grad.extend(
            eval.grad_log_prior
                .iter()
                .zip(&eval.grad_distortion)
                .map(|(&gp, &gd)| -(gp - self.beta * gd)),
        );
    }

    pub fn energy(&self, z: &[T]) -> Result<T, ModelError> {
        self.log_unnorm(z).map(|v| -v)
    }

    pub fn energy_grad(&self, z: &[T]) -> Result<Vec<T>, ModelError> {
        self.grad_log_unnorm(z).map(|g| g.into_iter().map(|v| -v).collect())
    }
}
