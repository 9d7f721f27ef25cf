//! Closed-form optimal channel for linear decoders with a standard gaussian
//! prior and squared-error or gaussian-NLL distortion.
//!
//! With `W = U·D·Vᵀ` and the effective precision `β' = β/σ²` (NLL) or
//! `β' = 2β` (MSE), the optimal conditional `q*_β(z|x)` is gaussian with
//!
//! ```text
//! μ_β = V·R·Uᵀ(x − b),   R_i = β'd_i / (β'd_i² + 1)
//! Σ_β = V·S·Vᵀ,          S_i = 1 / (β'd_i² + 1)
//! ```
//!
//! and eigenvalue 1 on the orthogonal complement of `span(V)`.

use thiserror::Error;

use crate::linalg::{self, complete_orthonormal, dot, LinalgError, Matrix, SvdResult};
use crate::model::{Distortion, ModelSpec, Prior};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("closed form needs a single linear layer decoder")]
    NotLinear,
    #[error("closed form needs a standard gaussian prior")]
    NonGaussianPrior,
    #[error("closed form needs mse or gaussian_nll distortion")]
    UnsupportedDistortion,
    #[error("beta must be finite and >= 0, got {0}")]
    Beta(f64),
    #[error("data has length {got}, expected {expected}")]
    DataLength { expected: usize, got: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind<T> {
    Mse,
    Nll { sigma: T },
}

/// Linear decoder `f(z) = W·z + b` with its cached SVD.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAnalytic<T> {
    w: Matrix<T>,
    b: Vec<T>,
    svd: SvdResult<T>,
    /// `k × k` orthonormal: the SVD's V followed by a basis of its complement.
    v_full: Matrix<T>,
    kind: Kind<T>,
}

/// Mean and eigendecomposition of the optimal gaussian conditional.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments<T> {
    pub mean: Vec<T>,
    /// Columns are covariance eigenvectors.
    pub cov_eigvecs: Matrix<T>,
    pub cov_eigvals: Vec<T>,
}

/// Exact rate, distortion, and log partition of the optimal channel at one
/// temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactPoint<T> {
    pub beta: T,
    pub rate: T,
    pub distortion: T,
    pub log_z: T,
}

impl<T: Real> LinearAnalytic<T> {
    pub fn from_model(model: &ModelSpec<T>) -> Result<Self, AnalyticError> {
        if !matches!(model.prior, Prior::StandardGaussian { .. }) {
            return Err(AnalyticError::NonGaussianPrior);
        }
        let (w, b) = model.decoder.as_linear().ok_or(AnalyticError::NotLinear)?;
        Self::new(w.clone(), b.to_vec(), &model.distortion)
    }

    pub fn new(w: Matrix<T>, b: Vec<T>, distortion: &Distortion<T>) -> Result<Self, AnalyticError> {
        let kind = match distortion {
            Distortion::Mse => Kind::Mse,
            Distortion::GaussianNll { sigma } => Kind::Nll { sigma: *sigma },
            Distortion::FeatureMse { .. } => return Err(AnalyticError::UnsupportedDistortion),
        };
        if b.len() != w.rows() {
            return Err(AnalyticError::DataLength { expected: w.rows(), got: b.len() });
        }
        let svd = linalg::svd(&w)?;
        let k = w.cols();
        let r = svd.rank();
        let mut v_full = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..r {
                v_full.set(i, j, svd.v.get(i, j));
            }
        }
        let missing: Vec<usize> = (r..k).collect();
        complete_orthonormal(&mut v_full, &missing);
        Ok(Self { w, b, svd, v_full, kind })
    }

    pub fn latent_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn svd(&self) -> &SvdResult<T> {
        &self.svd
    }

    fn effective_beta(&self, beta: T) -> T {
        match self.kind {
            Kind::Mse => T::of(2.0) * beta,
            Kind::Nll { sigma } => beta / (sigma * sigma),
        }
    }

    fn check(&self, x: &[T], beta: T) -> Result<(), AnalyticError> {
        if !(beta >= T::zero()) || !beta.is_finite() {
            return Err(AnalyticError::Beta(beta.as_f64()));
        }
        if x.len() != self.output_dim() {
            return Err(AnalyticError::DataLength { expected: self.output_dim(), got: x.len() });
        }
        Ok(())
    }

    pub fn posterior_moments(&self, x: &[T], beta: T) -> Result<PosteriorMoments<T>, AnalyticError> {
        self.check(x, beta)?;
        let k = self.latent_dim();
        let bp = self.effective_beta(beta);
        let resid: Vec<T> = x.iter().zip(&self.b).map(|(&xi, &bi)| xi - bi).collect();
        let proj = self.svd.u.tr_mul_vec(&resid)?;
        let mut coeff = vec![T::zero(); k];
        let mut eig = vec![T::one(); k];
        for (i, &d) in self.svd.singular_values.iter().enumerate() {
            let denom = bp * d * d + T::one();
            coeff[i] = bp * d / denom * proj[i];
            eig[i] = T::one() / denom;
        }
        let mean = self.v_full.mul_vec(&coeff)?;
        Ok(PosteriorMoments { mean, cov_eigvecs: self.v_full.clone(), cov_eigvals: eig })
    }

    /// `KL(q*_β ‖ N(0, I))` in nats.
    pub fn rate(&self, x: &[T], beta: T) -> Result<T, AnalyticError> {
        self.check(x, beta)?;
        if beta == T::zero() {
            return Ok(T::zero());
        }
        let m = self.posterior_moments(x, beta)?;
        let mut acc = dot(&m.mean, &m.mean);
        for &e in &m.cov_eigvals {
            acc += e - T::one() - e.ln();
        }
        Ok(T::of(0.5) * acc)
    }

    /// `E_{q*_β} ‖x − W·z − b‖²`.
    fn expected_squared_error(&self, x: &[T], m: &PosteriorMoments<T>) -> Result<T, AnalyticError> {
        let fit = self.w.mul_vec(&m.mean)?;
        let mut acc = T::zero();
        for ((&xi, &bi), &fi) in x.iter().zip(&self.b).zip(&fit) {
            let r = xi - bi - fi;
            acc += r * r;
        }
        for (i, &d) in self.svd.singular_values.iter().enumerate() {
            acc += d * d * m.cov_eigvals[i];
        }
        Ok(acc)
    }

    /// `E_{q*_β}[d(x, f(z))]` under the model's distortion.
    pub fn distortion(&self, x: &[T], beta: T) -> Result<T, AnalyticError> {
        let m = self.posterior_moments(x, beta)?;
        let sq = self.expected_squared_error(x, &m)?;
        Ok(match self.kind {
            Kind::Mse => sq,
            Kind::Nll { sigma } => {
                let var = sigma * sigma;
                let half_m = T::of(0.5 * self.output_dim() as f64);
                half_m * (T::of(2.0 * std::f64::consts::PI) * var).ln() + sq / (T::of(2.0) * var)
            }
        })
    }

    pub fn point(&self, x: &[T], beta: T) -> Result<ExactPoint<T>, AnalyticError> {
        let rate = self.rate(x, beta)?;
        let distortion = self.distortion(x, beta)?;
        Ok(ExactPoint { beta, rate, distortion, log_z: T::zero() - rate - beta * distortion })
    }

    /// Dataset-averaged rate, distortion, and log partition at each beta.
    pub fn curve(&self, data: &[Vec<T>], betas: &[T]) -> Result<Vec<ExactPoint<T>>, AnalyticError> {
        let n = T::of(data.len() as f64);
        betas
            .iter()
            .map(|&beta| {
                let mut acc = ExactPoint { beta, rate: T::zero(), distortion: T::zero(), log_z: T::zero() };
                for x in data {
                    let p = self.point(x, beta)?;
                    acc.rate += p.rate;
                    acc.distortion += p.distortion;
                    acc.log_z += p.log_z;
                }
                acc.rate /= n;
                acc.distortion /= n;
                acc.log_z /= n;
                Ok(acc)
            })
            .collect()
    }
}
