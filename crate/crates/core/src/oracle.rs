//! Brute-force quadrature of the optimal channel for latent dimension ≤ 2.
//!
//! The trapezoid rule on a box covering the prior gives `Z_β(x)`, the optimal
//! distortion, and the rate `R = −log Z − β·D` to near machine precision,
//! serving as ground truth for nonlinear decoders and mixture priors.

use rayon::prelude::*;
use thiserror::Error;

use crate::analytic::ExactPoint;
use crate::model::{Distortion, ModelError, ModelSpec};
use crate::scalar::{log_sum_exp, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("quadrature supports latent dimension 1 or 2, model has {0}")]
    LatentDim(usize),
    #[error("invalid quadrature grid: {0}")]
    Grid(String),
    #[error("log marginal needs gaussian_nll distortion")]
    NotLikelihood,
    #[error("beta must be finite and >= 0, got {0}")]
    Beta(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-dimension node count and box half-width in prior standard deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureGrid {
    pub nodes: usize,
    pub half_width: f64,
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        Self { nodes: 2001, half_width: 10.0 }
    }
}

impl QuadratureGrid {
    pub fn new(nodes: usize, half_width: f64) -> Result<Self, OracleError> {
        if nodes < 101 || nodes.is_multiple_of(2) {
            return Err(OracleError::Grid(format!("node count must be odd and >= 101, got {nodes}")));
        }
        if !(half_width >= 6.0) || !half_width.is_finite() {
            return Err(OracleError::Grid(format!("half-width must be >= 6, got {half_width}")));
        }
        Ok(Self { nodes, half_width })
    }
}

/// Prior log density, trapezoid weight, and distortion at every grid node
/// for one `(model, x)`, reusable across temperatures.
#[derive(Debug, Clone)]
pub struct QuadratureTable<T> {
    axes: Vec<Vec<T>>,
    log_prior: Vec<T>,
    /// Log trapezoid weight, cell volume included.
    log_weight: Vec<T>,
    distortion: Vec<T>,
}

fn axis<T: Real>(lo: T, hi: T, nodes: usize) -> (Vec<T>, T) {
    let h = (hi - lo) / T::of((nodes - 1) as f64);
    ((0..nodes).map(|i| lo + h * T::of(i as f64)).collect(), h)
}

impl<T: Real> QuadratureTable<T> {
    pub fn build(model: &ModelSpec<T>, x: &[T], grid: &QuadratureGrid) -> Result<Self, OracleError> {
        QuadratureGrid::new(grid.nodes, grid.half_width)?;
        model.check_data(x)?;
        let dim = model.latent_dim();
        if dim == 0 || dim > 2 {
            return Err(OracleError::LatentDim(dim));
        }
        let bounds = model.prior.support_box(T::of(grid.half_width));
        let n = grid.nodes;
        let half = T::of(0.5).ln();
        let mut axes = Vec::with_capacity(dim);
        let mut log_w_axis = Vec::with_capacity(dim);
        for &(lo, hi) in &bounds {
            let (nodes, h) = axis(lo, hi, n);
            let lh = h.ln();
            log_w_axis.push((0..n).map(|i| if i == 0 || i == n - 1 { lh + half } else { lh }).collect::<Vec<T>>());
            axes.push(nodes);
        }
        let total = n.pow(dim as u32);
        let cells: Vec<Result<(T, T, T), ModelError>> = (0..total)
            .into_par_iter()
            .map(|idx| {
                let (z, lw) = if dim == 1 {
                    (vec![axes[0][idx]], log_w_axis[0][idx])
                } else {
                    let (i, j) = (idx / n, idx % n);
                    (vec![axes[0][i], axes[1][j]], log_w_axis[0][i] + log_w_axis[1][j])
                };
                Ok((model.prior.logpdf(&z)?, lw, model.distortion_at(x, &z)?))
            })
            .collect();
        let mut log_prior = Vec::with_capacity(total);
        let mut log_weight = Vec::with_capacity(total);
        let mut distortion = Vec::with_capacity(total);
        for c in cells {
            let (lp, lw, d) = c?;
            log_prior.push(lp);
            log_weight.push(lw);
            distortion.push(d);
        }
        Ok(Self { axes, log_prior, log_weight, distortion })
    }

    fn check_beta(beta: T) -> Result<(), OracleError> {
        if !(beta >= T::zero()) || !beta.is_finite() {
            return Err(OracleError::Beta(beta.as_f64()));
        }
        Ok(())
    }

    /// Log of the weighted integrand `w_i·p(z_i)·exp(−β·d_i)` at every node.
    fn log_terms(&self, beta: T) -> Vec<T> {
        self.log_weight
            .iter()
            .zip(&self.log_prior)
            .zip(&self.distortion)
            .map(|((&lw, &lp), &d)| if beta == T::zero() { lw + lp } else { lw + lp - beta * d })
            .collect()
    }

    pub fn log_z(&self, beta: T) -> Result<T, OracleError> {
        Self::check_beta(beta)?;
        Ok(log_sum_exp(&self.log_terms(beta)))
    }

    /// `E_{q*_β}[d]`.
    pub fn distortion(&self, beta: T) -> Result<T, OracleError> {
        Self::check_beta(beta)?;
        let terms = self.log_terms(beta);
        let max = terms.iter().copied().fold(T::neg_infinity(), T::max);
        let mut num = T::zero();
        let mut den = T::zero();
        for (&t, &d) in terms.iter().zip(&self.distortion) {
            let e = (t - max).exp();
            num += e * d;
            den += e;
        }
        Ok(num / den)
    }

    pub fn point(&self, beta: T) -> Result<ExactPoint<T>, OracleError> {
        let log_z = self.log_z(beta)?;
        let distortion = self.distortion(beta)?;
        let rate = if beta == T::zero() { T::zero() } else { T::zero() - log_z - beta * distortion };
        Ok(ExactPoint { beta, rate, distortion, log_z })
    }

    /// `KL(q*_β ‖ p)` summed directly as `Σ w_i q(z_i) log(q(z_i)/p(z_i))`.
    pub fn kl_direct(&self, beta: T) -> Result<T, OracleError> {
        let log_z = self.log_z(beta)?;
        let mut acc = T::zero();
        for ((&lw, &lp), &d) in self.log_weight.iter().zip(&self.log_prior).zip(&self.distortion) {
            let log_q = lp - beta * d - log_z;
            acc += (lw + log_q).exp() * (log_q - lp);
        }
        Ok(acc)
    }

    /// Cumulative distribution of `q*_β` for a 1-D latent, piecewise linear
    /// between nodes.
    pub fn posterior_cdf(&self, beta: T) -> Result<PosteriorCdf<T>, OracleError> {
        if self.axes.len() != 1 {
            return Err(OracleError::LatentDim(self.axes.len()));
        }
        let log_z = self.log_z(beta)?;
        let nodes = self.axes[0].clone();
        let density: Vec<T> =
            self.log_prior.iter().zip(&self.distortion).map(|(&lp, &d)| (lp - beta * d - log_z).exp()).collect();
        let mut cumulative = Vec::with_capacity(nodes.len());
        let mut acc = T::zero();
        cumulative.push(acc);
        for i in 1..nodes.len() {
            acc += T::of(0.5) * (nodes[i] - nodes[i - 1]) * (density[i] + density[i - 1]);
            cumulative.push(acc);
        }
        Ok(PosteriorCdf { nodes, cumulative })
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorCdf<T> {
    nodes: Vec<T>,
    cumulative: Vec<T>,
}

impl<T: Real> PosteriorCdf<T> {
    pub fn eval(&self, z: T) -> T {
        let n = self.nodes.len();
        if z <= self.nodes[0] {
            return T::zero();
        }
        if z >= self.nodes[n - 1] {
            return self.cumulative[n - 1];
        }
        let i = self.nodes.partition_point(|&v| v <= z) - 1;
        let t = (z - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i]);
        self.cumulative[i] + t * (self.cumulative[i + 1] - self.cumulative[i])
    }
}

pub fn quad_log_z<T: Real>(model: &ModelSpec<T>, x: &[T], beta: T, grid: &QuadratureGrid) -> Result<T, OracleError> {
    QuadratureTable::build(model, x, grid)?.log_z(beta)
}

/// `(rate, distortion)` of the optimal channel at `beta`.
pub fn quad_rate_distortion<T: Real>(
    model: &ModelSpec<T>,
    x: &[T],
    beta: T,
    grid: &QuadratureGrid,
) -> Result<(T, T), OracleError> {
    let p = QuadratureTable::build(model, x, grid)?.point(beta)?;
    Ok((p.rate, p.distortion))
}

/// `log p(x)`: the partition function at β = 1 under the gaussian NLL.
pub fn quad_log_marginal<T: Real>(model: &ModelSpec<T>, x: &[T], grid: &QuadratureGrid) -> Result<T, OracleError> {
    if !matches!(model.distortion, Distortion::GaussianNll { .. }) {
        return Err(OracleError::NotLikelihood);
    }
    quad_log_z(model, x, T::one(), grid)
}

/// Dataset-averaged exact curve at each beta.
pub fn quad_curve<T: Real>(
    model: &ModelSpec<T>,
    data: &[Vec<T>],
    betas: &[T],
    grid: &QuadratureGrid,
) -> Result<Vec<ExactPoint<T>>, OracleError> {
    let n = T::of(data.len() as f64);
    let mut acc: Vec<ExactPoint<T>> = betas
        .iter()
        .map(|&beta| ExactPoint { beta, rate: T::zero(), distortion: T::zero(), log_z: T::zero() })
        .collect();
    for x in data {
        let table = QuadratureTable::build(model, x, grid)?;
        for a in acc.iter_mut() {
            let p = table.point(a.beta)?;
            a.rate += p.rate;
            a.distortion += p.distortion;
            a.log_z += p.log_z;
        }
    }
    for a in acc.iter_mut() {
        a.rate /= n;
        a.distortion /= n;
        a.log_z /= n;
    }
    Ok(acc)
}
