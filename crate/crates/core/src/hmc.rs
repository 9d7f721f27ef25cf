//! Hamiltonian Monte Carlo transitions for annealed targets, plus the
//! preliminary-run step-size tuner whose profile is reloaded by formal runs.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ais::{AisError, ChainState, Schedule, ScheduleShape};
use crate::model::{LatentEval, ModelError, ModelSpec, Workspace};
use crate::rng::{self, Lane};
use crate::scalar::Real;
use crate::target::AnnealedTarget;

/// Learning rate of the multiplicative step-size update.
pub const ADAPT_RATE: f64 = 0.02;
/// Step sizes never adapt below this.
pub const MIN_STEP_SIZE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HmcError {
    #[error("invalid HMC parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite state after leapfrog step {step}; step size likely too large")]
    NonFinite { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("tune profile fingerprint {found} does not match schedule {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("tune profile has {found} step sizes, schedule needs {expected}")]
    ProfileLength { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmcParams<T> {
    pub leapfrog_steps: usize,
    pub step_size: T,
    pub target_accept: T,
}

impl<T: Real> HmcParams<T> {
    pub fn new(leapfrog_steps: usize, step_size: T, target_accept: T) -> Result<Self, HmcError> {
        if leapfrog_steps == 0 {
            return Err(HmcError::InvalidParams("leapfrog_steps must be >= 1".into()));
        }
        if !(step_size > T::zero()) || !step_size.is_finite() {
            return Err(HmcError::InvalidParams(format!("step_size must be positive, got {step_size}")));
        }
        if !(target_accept > T::zero() && target_accept < T::one()) {
            return Err(HmcError::InvalidParams(format!(
                "target_accept must lie in (0, 1), got {target_accept}"
            )));
        }
        Ok(Self { leapfrog_steps, step_size, target_accept })
    }

    /// 20 leapfrog steps, 65% target acceptance, and an initial step size of
    /// `0.1 · dim^(-1/4)`.
    pub fn for_latent_dim(dim: usize) -> Self {
        Self {
            leapfrog_steps: 20,
            step_size: T::of(0.1 * (dim.max(1) as f64).powf(-0.25)),
            target_accept: T::of(0.65),
        }
    }
}

/// Identifies the schedule a profile was tuned on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub n: usize,
    pub beta_max: f64,
    pub shape: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

impl Fingerprint {
    pub fn of<T: Real>(schedule: &Schedule<T>) -> Self {
        let (shape, tau) = match schedule.shape() {
            ScheduleShape::Sigmoid { tau } => ("sigmoid".to_string(), Some(tau)),
            ScheduleShape::Linear => ("linear".to_string(), None),
            ScheduleShape::Custom => ("custom".to_string(), None),
        };
        Self { n: schedule.n(), beta_max: schedule.beta_max().as_f64(), shape, tau }
    }
}

impl std::fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(n={}, beta_max={}, shape={}", self.n, self.beta_max, self.shape)?;
        if let Some(tau) = self.tau {
            write!(f, ", tau={tau}")?;
        }
        write!(f, ")")
    }
}

/// Per-intermediate-distribution step sizes found by a preliminary run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneProfile {
    pub fingerprint: Fingerprint,
    pub step_sizes: Vec<f64>,
}

impl TuneProfile {
    /// Errors unless the profile was tuned on an identical schedule.
    pub fn check<T: Real>(&self, schedule: &Schedule<T>) -> Result<(), HmcError> {
        let expected = Fingerprint::of(schedule);
        if expected != self.fingerprint {
            return Err(HmcError::FingerprintMismatch {
                expected: expected.to_string(),
                found: self.fingerprint.to_string(),
            });
        }
        if self.step_sizes.len() != schedule.n() + 1 {
            return Err(HmcError::ProfileLength {
                expected: schedule.n() + 1,
                found: self.step_sizes.len(),
            });
        }
        if self.step_sizes.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(HmcError::InvalidParams("tune profile contains a non-positive step size".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Leapfrog parameters plus, optionally, a tuned per-index step-size profile
/// that overrides `params.step_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct HmcConfig<T> {
    pub params: HmcParams<T>,
    pub profile: Option<TuneProfile>,
}

impl<T: Real> HmcConfig<T> {
    pub fn fixed(params: HmcParams<T>) -> Self {
        Self { params, profile: None }
    }

    pub fn tuned(params: HmcParams<T>, profile: TuneProfile) -> Self {
        Self { params, profile: Some(profile) }
    }

    pub fn validate(&self, schedule: &Schedule<T>) -> Result<(), HmcError> {
        HmcParams::new(self.params.leapfrog_steps, self.params.step_size, self.params.target_accept)?;
        match &self.profile {
            Some(p) => p.check(schedule),
            None => Ok(()),
        }
    }

    #[inline]
    pub fn step_size(&self, k: usize) -> T {
        match &self.profile {
            Some(p) => T::of(p.step_sizes[k]),
            None => self.params.step_size,
        }
    }
}

/// Deterministic leapfrog integration of `L` steps under the target's
/// energy, with unit mass.
pub fn leapfrog<T: Real>(
    target: &AnnealedTarget<'_, T>,
    z: &[T],
    momentum: &[T],
    step_size: T,
    steps: usize,
) -> Result<(Vec<T>, Vec<T>), HmcError> {
    if z.len() != momentum.len() {
        return Err(HmcError::InvalidParams("position and momentum lengths differ".into()));
    }
    if !(step_size > T::zero()) {
        return Err(HmcError::InvalidParams("step size must be positive".into()));
    }
    let eval = target.evaluate(z)?;
    let (z, p, _) = integrate(target, z.to_vec(), momentum.to_vec(), &eval, step_size, steps)?;
    Ok((z, p))
}

/// Leapfrog from a cached evaluation; also returns the evaluation at the end
/// point so callers avoid recomputing it.
fn integrate<T: Real>(
    target: &AnnealedTarget<'_, T>,
    mut z: Vec<T>,
    mut p: Vec<T>,
    start: &LatentEval<T>,
    eps: T,
    steps: usize,
) -> Result<(Vec<T>, Vec<T>, LatentEval<T>), HmcError> {
    let half = eps * T::of(0.5);
    let mut ws = Workspace::default();
    let mut grad = Vec::with_capacity(z.len());
    target.energy_grad_into(start, &mut grad);
    let mut eval = start.clone();
    for (pi, gi) in p.iter_mut().zip(&grad) {
        *pi -= half * *gi;
    }
    for step in 0..steps {
        for (zi, pi) in z.iter_mut().zip(&p) {
            *zi += eps * *pi;
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(HmcError::NonFinite { step });
        }
        target.model.evaluate_into(target.x, &z, &mut ws, &mut eval).map_err(|err| match err {
            ModelError::NonFinite { .. } => HmcError::NonFinite { step },
            other => HmcError::Model(other),
        })?;
        target.energy_grad_into(&eval, &mut grad);
        let scale = if step + 1 == steps { half } else { eps };
        for (pi, gi) in p.iter_mut().zip(&grad) {
            *pi -= scale * *gi;
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(HmcError::NonFinite { step });
        }
    }
    Ok((z, p, eval))
}

fn kinetic<T: Real>(p: &[T]) -> T {
    T::of(0.5) * p.iter().map(|&v| v * v).sum::<T>()
}

/// Outcome of one Metropolis-corrected HMC transition.
#[derive(Debug, Clone)]
pub struct Transition<T> {
    pub z: Vec<T>,
    pub accepted: bool,
    pub accept_prob: T,
}

/// One HMC transition leaving the annealed target invariant. Divergent
/// trajectories count as rejections with acceptance probability 0.
pub fn hmc_step<T: Real, R: Rng + ?Sized>(
    target: &AnnealedTarget<'_, T>,
    z: &[T],
    params: &HmcParams<T>,
    rng: &mut R,
) -> Result<Transition<T>, HmcError> {
    let eval = target.evaluate(z)?;
    let (z, _, accepted, accept_prob) =
        transition(target, z, &eval, params.step_size, params.leapfrog_steps, rng);
    Ok(Transition { z, accepted, accept_prob })
}

/// Core transition on a cached evaluation. Returns the new state and its
/// evaluation (the old one, cloned, on rejection).
pub(crate) fn transition<T: Real, R: Rng + ?Sized>(
    target: &AnnealedTarget<'_, T>,
    z: &[T],
    eval: &LatentEval<T>,
    eps: T,
    steps: usize,
    rng: &mut R,
) -> (Vec<T>, LatentEval<T>, bool, T) {
    let p0: Vec<T> = (0..z.len()).map(|_| T::standard_normal(rng)).collect();
    let u = T::unit_uniform(rng);
    let h0 = target.energy_of(eval) + kinetic(&p0);
    let proposal = integrate(target, z.to_vec(), p0, eval, eps, steps);
    let (z1, p1, e1) = match proposal {
        Ok(v) => v,
        Err(_) => return (z.to_vec(), eval.clone(), false, T::zero()),
    };
    let h1 = target.energy_of(&e1) + kinetic(&p1);
    let delta = h1 - h0;
    if !delta.is_finite() {
        return (z.to_vec(), eval.clone(), false, T::zero());
    }
    let accept_prob = if delta <= T::zero() { T::one() } else { (-delta).exp() };
    if u < accept_prob {
        (z1, e1, true, accept_prob)
    } else {
        (z.to_vec(), eval.clone(), false, accept_prob)
    }
}

/// Step sizes and the mean acceptance observed at each index of a tuning run.
#[derive(Debug, Clone)]
pub struct TuneTrace {
    pub profile: TuneProfile,
    /// Mean acceptance probability across chains at each index; index 0 has
    /// no transition and is reported as 1.
    pub mean_accept: Vec<f64>,
}

/// Preliminary AIS pass adapting one step size per intermediate distribution.
///
/// All chains for all data points advance in lockstep. After the transition
/// at index `k` the running step size is multiplied by
/// `exp(η·(ā_k − target_accept))` with `η = 0.02`, stored as the profile entry
/// for `k`, and carried forward as the starting value at `k + 1`.
pub fn tune_step_sizes<T: Real>(
    model: &ModelSpec<T>,
    data: &[Vec<T>],
    schedule: &Schedule<T>,
    chains: usize,
    params: &HmcParams<T>,
    seed: u64,
) -> Result<TuneProfile, AisError> {
    tune_step_sizes_traced(model, data, schedule, chains, params, seed).map(|t| t.profile)
}

pub fn tune_step_sizes_traced<T: Real>(
    model: &ModelSpec<T>,
    data: &[Vec<T>],
    schedule: &Schedule<T>,
    chains: usize,
    params: &HmcParams<T>,
    seed: u64,
) -> Result<TuneTrace, AisError> {
    HmcParams::new(params.leapfrog_steps, params.step_size, params.target_accept)?;
    if data.is_empty() {
        return Err(AisError::Invalid("tuning needs at least one data point".into()));
    }
    if chains == 0 {
        return Err(AisError::Invalid("tuning needs at least one chain".into()));
    }
    for x in data {
        model.check_data(x)?;
    }
    let mut units: Vec<(usize, rng::ChainRng, ChainState<T>)> = Vec::with_capacity(data.len() * chains);
    for (i, x) in data.iter().enumerate() {
        for j in 0..chains {
            let mut r = rng::stream(seed, Lane::Tune, i as u64, j as u64);
            let z0 = model.prior.sample(&mut r);
            units.push((i, r, ChainState::start(model, x, z0)?));
        }
    }
    let betas = schedule.betas();
    let mut eps = params.step_size.as_f64();
    let mut sizes = Vec::with_capacity(betas.len());
    let mut mean_accept = Vec::with_capacity(betas.len());
    sizes.push(eps);
    mean_accept.push(1.0);
    let count = units.len() as f64;
    for k in 1..betas.len() {
        let step = T::of(eps);
        let probs: Vec<f64> = units
            .par_iter_mut()
            .map(|(i, r, chain)| {
                chain
                    .advance(model, &data[*i], betas[k - 1], betas[k], step, params.leapfrog_steps, r)
                    .map(|p| p.as_f64())
            })
            .collect::<Result<_, _>>()?;
        let a_bar = probs.iter().sum::<f64>() / count;
        eps = (eps * (ADAPT_RATE * (a_bar - params.target_accept.as_f64())).exp()).max(MIN_STEP_SIZE);
        sizes.push(eps);
        mean_accept.push(a_bar);
    }
    Ok(TuneTrace {
        profile: TuneProfile { fingerprint: Fingerprint::of(schedule), step_sizes: sizes },
        mean_accept,
    })
}
