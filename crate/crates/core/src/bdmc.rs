//! Bidirectional Monte Carlo on simulated data.
//!
//! Drawing `z* ~ p(z)` and `x = f(z*) + ε` with noise matched to `β` makes
//! `z*` an exact sample of `q*_β(z|x)`. Forward AIS then gives a stochastic
//! lower bound on `log Z_β(x)` and reverse AIS started at `z*` an upper bound;
//! their difference is the BDMC gap.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::ais::{forward_ais, reverse_ais, AisError, Schedule};
use crate::hmc::HmcConfig;
use crate::model::{Distortion, ModelError, ModelSpec};
use crate::rng::{self, Lane};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BdmcError {
    #[error("simulation needs mse or gaussian_nll distortion")]
    UnsupportedDistortion,
    #[error("beta_target must be positive and finite, got {0}")]
    BetaTarget(f64),
    #[error("schedule ends at {schedule}, pair {pair} was simulated for {pair_beta}")]
    EndpointMismatch { pair: usize, schedule: f64, pair_beta: f64 },
    #[error("no simulated pairs")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("pair {pair}: {source}")]
    Ais { pair: usize, source: AisError },
}

/// A latent and the data point simulated from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPair<T> {
    /// Keys the pair's random streams, so results follow the pair rather
    /// than its position in a list.
    pub id: u64,
    pub z_star: Vec<T>,
    pub x: Vec<T>,
    /// Temperature at which `z_star` is an exact posterior sample given `x`.
    pub beta_target: T,
}

/// Per-coordinate noise variance making `q*_β(z|x)` the exact posterior.
pub fn matched_noise_variance<T: Real>(distortion: &Distortion<T>, beta_target: T) -> Result<T, BdmcError> {
    if !(beta_target > T::zero()) || !beta_target.is_finite() {
        return Err(BdmcError::BetaTarget(beta_target.as_f64()));
    }
    match distortion {
        Distortion::Mse => Ok(T::one() / (T::of(2.0) * beta_target)),
        Distortion::GaussianNll { sigma } => Ok(*sigma * *sigma / beta_target),
        Distortion::FeatureMse { .. } => Err(BdmcError::UnsupportedDistortion),
    }
}

pub fn simulate_pair<T: Real, R: Rng + ?Sized>(
    model: &ModelSpec<T>,
    id: u64,
    beta_target: T,
    rng: &mut R,
) -> Result<SimulatedPair<T>, BdmcError> {
    let sd = matched_noise_variance(&model.distortion, beta_target)?.sqrt();
    let z_star = model.prior.sample(rng);
    let mut x = model.decoder.forward(&z_star)?;
    for xi in x.iter_mut() {
        *xi += sd * T::standard_normal(rng);
    }
    Ok(SimulatedPair { id, z_star, x, beta_target })
}

/// `count` pairs with ids `0..count`, pair `i` drawn from the stream
/// `(seed, Simulate, i, 0)`.
pub fn simulate_pairs<T: Real>(
    model: &ModelSpec<T>,
    beta_target: T,
    count: usize,
    seed: u64,
) -> Result<Vec<SimulatedPair<T>>, BdmcError> {
    (0..count)
        .map(|i| {
            let id = i as u64;
            simulate_pair(model, id, beta_target, &mut rng::stream(seed, Lane::Simulate, id, 0))
        })
        .collect()
}

/// Forward and reverse log-partition estimates for one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairBounds<T> {
    pub lower: T,
    pub upper: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BdmcResult<T> {
    pub beta_target: T,
    /// Mean forward estimate of `log Z`.
    pub lower: T,
    /// Mean reverse estimate of `log Z`.
    pub upper: T,
    pub gap: T,
    pub per_pair: Vec<PairBounds<T>>,
}

/// Sandwiches `log Z_β(x)` for every pair; `schedule` must end at the pairs'
/// `beta_target`. Each pair's AIS runs use its id as the point index, and the
/// means are summed in id order, so the result does not depend on the order
/// of `pairs`.
pub fn bdmc_gap<T: Real>(
    model: &ModelSpec<T>,
    pairs: &[SimulatedPair<T>],
    schedule: &Schedule<T>,
    chains: usize,
    hmc: &HmcConfig<T>,
    seed: u64,
) -> Result<BdmcResult<T>, BdmcError> {
    if pairs.is_empty() {
        return Err(BdmcError::Empty);
    }
    let beta_max = schedule.beta_max();
    for (i, p) in pairs.iter().enumerate() {
        if p.beta_target != beta_max {
            return Err(BdmcError::EndpointMismatch {
                pair: i,
                schedule: beta_max.as_f64(),
                pair_beta: p.beta_target.as_f64(),
            });
        }
    }
    let per_pair: Vec<PairBounds<T>> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let wrap = |source| BdmcError::Ais { pair: i, source };
            let fwd = forward_ais(model, &p.x, schedule, chains, hmc, seed, p.id).map_err(wrap)?;
            let rev = reverse_ais(model, &p.x, &p.z_star, schedule, chains, hmc, seed, p.id).map_err(wrap)?;
            let lower = fwd.last().expect("schedule has a final report index").log_z_hat;
            let upper = rev.last().expect("schedule has a final report index").log_z_upper;
            Ok(PairBounds { lower, upper })
        })
        .collect::<Result<_, BdmcError>>()?;
    let n = T::of(per_pair.len() as f64);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by_key(|&i| pairs[i].id);
    let mut lower = T::zero();
    let mut upper = T::zero();
    for b in order.iter().map(|&i| &per_pair[i]) {
        lower += b.lower;
        upper += b.upper;
    }
    lower /= n;
    upper /= n;
    Ok(BdmcResult { beta_target: beta_max, lower, upper, gap: upper - lower, per_pair })
}
