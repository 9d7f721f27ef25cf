//! Annealed importance sampling over the β-annealed posterior family.
//!
//! Each chain starts from a prior draw, accumulates the incremental weight
//! `log q̃_k(z) − log q̃_{k−1}(z) = −(β_k − β_{k−1})·d(x, f(z))`, then takes one
//! HMC transition targeting `q̃_k`. At each report index the chain population
//! yields the distortion, log-partition, and rate estimates
//!
//! ```text
//! D̂_k = Σ_i w̃_i d(x, f(z_i))
//! log Ẑ_k = logsumexp_i(log w_i) − log M
//! R̂_k = −log Ẑ_k − β_k·D̂_k
//! ```
//!
//! Chains run independently on per-(point, chain) random streams and are
//! reduced in index order, so results do not depend on the thread count.

mod schedule;

pub use schedule::{make_schedule, Schedule, ScheduleError, ScheduleShape, DEFAULT_TAU};

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::hmc::{self, HmcConfig, HmcError};
use crate::model::{LatentEval, ModelError, ModelSpec};
use crate::rng::{self, ChainRng, Lane};
use crate::scalar::{log_mean_exp, log_sum_exp, Real};
use crate::target::AnnealedTarget;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AisError {
    #[error("non-finite importance weight in chain {chain} at step {step}")]
    NonFiniteWeight { chain: usize, step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Hmc(#[from] HmcError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("{0}")]
    Invalid(String),
}

/// One chain: current latent, accumulated log importance weight, and the
/// number of accepted transitions so far.
#[derive(Debug, Clone)]
pub struct ChainState<T> {
    pub z: Vec<T>,
    pub log_w: T,
    pub accept_count: usize,
    eval: LatentEval<T>,
}

impl<T: Real> ChainState<T> {
    pub fn start(model: &ModelSpec<T>, x: &[T], z: Vec<T>) -> Result<Self, ModelError> {
        let eval = model.evaluate(x, &z)?;
        Ok(Self { z, log_w: T::zero(), accept_count: 0, eval })
    }

    /// Distortion at the current latent.
    pub fn distortion(&self) -> T {
        self.eval.distortion
    }

    /// Forward step from `beta_prev` to `beta`: weight update, then one HMC
    /// transition targeting `beta`. Returns the acceptance probability.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn advance<R: Rng + ?Sized>(
        &mut self,
        model: &ModelSpec<T>,
        x: &[T],
        beta_prev: T,
        beta: T,
        eps: T,
        leapfrog_steps: usize,
        rng: &mut R,
    ) -> Result<T, AisError> {
        self.log_w -= (beta - beta_prev) * self.eval.distortion;
        self.step(model, x, beta, eps, leapfrog_steps, rng)
    }

    pub(crate) fn step<R: Rng + ?Sized>(
        &mut self,
        model: &ModelSpec<T>,
        x: &[T],
        beta: T,
        eps: T,
        leapfrog_steps: usize,
        rng: &mut R,
    ) -> Result<T, AisError> {
        let target = AnnealedTarget { model, x, beta };
        let (z, eval, accepted, prob) =
            hmc::transition(&target, &self.z, &self.eval, eps, leapfrog_steps, rng);
        if accepted {
            self.z = z;
            self.eval = eval;
            self.accept_count += 1;
        }
        Ok(prob)
    }
}

/// Rate-distortion estimate at one report index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint<T> {
    pub k: usize,
    pub beta: T,
    pub rate_nats: T,
    pub distortion: T,
    pub log_z_hat: T,
    /// Mean HMC acceptance probability over the transitions since the
    /// previous report index; 1 where no transition has run.
    pub mean_accept: T,
    /// `1 / Σ w̃_i²`.
    pub ess: T,
}

#[derive(Debug, Clone, Copy)]
struct ReportSample<T> {
    log_w: T,
    distortion: T,
    accept_mean: T,
}

/// Reduces one report index across chains in index order.
fn reduce<T: Real>(k: usize, beta: T, samples: &[ReportSample<T>]) -> RdPoint<T> {
    let log_ws: Vec<T> = samples.iter().map(|s| s.log_w).collect();
    let log_z_hat = log_mean_exp(&log_ws);
    let max = log_ws.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    let mut total_sq = T::zero();
    let mut weighted = T::zero();
    for s in samples {
        let e = (s.log_w - max).exp();
        total += e;
        total_sq += e * e;
        weighted += e * s.distortion;
    }
    let distortion = weighted / total;
    let mut accept = T::zero();
    for s in samples {
        accept += s.accept_mean;
    }
    RdPoint {
        k,
        beta,
        rate_nats: T::zero() - log_z_hat - beta * distortion,
        distortion,
        log_z_hat,
        mean_accept: accept / T::of(samples.len() as f64),
        ess: total * total / total_sq,
    }
}

/// Runs one forward chain across the whole schedule, recording at each
/// report index.
fn run_forward_chain<T: Real>(
    model: &ModelSpec<T>,
    x: &[T],
    schedule: &Schedule<T>,
    hmc: &HmcConfig<T>,
    chain_index: usize,
    rng: &mut ChainRng,
) -> Result<(Vec<ReportSample<T>>, ChainState<T>), AisError> {
    let betas = schedule.betas();
    let reports = schedule.report_indices();
    let mut out = Vec::with_capacity(reports.len());
    let z0 = model.prior.sample(rng);
    let mut chain = ChainState::start(model, x, z0)?;
    let mut next = 0;
    let mut window_sum = T::zero();
    let mut window_len = 0usize;
    let record = |chain: &ChainState<T>, window_sum: &mut T, window_len: &mut usize| {
        let accept_mean =
            if *window_len == 0 { T::one() } else { *window_sum / T::of(*window_len as f64) };
        *window_sum = T::zero();
        *window_len = 0;
        ReportSample { log_w: chain.log_w, distortion: chain.distortion(), accept_mean }
    };
    if reports[0] == 0 {
        out.push(record(&chain, &mut window_sum, &mut window_len));
        next = 1;
    }
    for k in 1..betas.len() {
        let prob = chain.advance(
            model,
            x,
            betas[k - 1],
            betas[k],
            hmc.step_size(k),
            hmc.params.leapfrog_steps,
            rng,
        )?;
        if !chain.log_w.is_finite() {
            return Err(AisError::NonFiniteWeight { chain: chain_index, step: k });
        }
        window_sum += prob;
        window_len += 1;
        if next < reports.len() && reports[next] == k {
            out.push(record(&chain, &mut window_sum, &mut window_len));
            next += 1;
        }
    }
    Ok((out, chain))
}

fn check_inputs<T: Real>(
    model: &ModelSpec<T>,
    x: &[T],
    schedule: &Schedule<T>,
    chains: usize,
    hmc: &HmcConfig<T>,
) -> Result<(), AisError> {
    if chains < 2 {
        return Err(AisError::Invalid(format!("AIS needs at least 2 chains, got {chains}")));
    }
    model.check_data(x)?;
    hmc.validate(schedule)?;
    Ok(())
}

/// Forward AIS output together with the final chain states.
#[derive(Debug, Clone)]
pub struct ForwardRun<T> {
    pub points: Vec<RdPoint<T>>,
    pub chains: Vec<ChainState<T>>,
}

/// Forward AIS for one data point. Chain `j` draws from the stream
/// `(seed, Forward, point_index, j)`.
pub fn forward_ais<T: Real>(
    model: &ModelSpec<T>,
    x: &[T],
    schedule: &Schedule<T>,
    chains: usize,
    hmc: &HmcConfig<T>,
    seed: u64,
    point_index: u64,
) -> Result<Vec<RdPoint<T>>, AisError> {
    forward_ais_with_states(model, x, schedule, chains, hmc, seed, point_index).map(|r| r.points)
}

pub fn forward_ais_with_states<T: Real>(
    model: &ModelSpec<T>,
    x: &[T],
    schedule: &Schedule<T>,
    chains: usize,
    hmc: &HmcConfig<T>,
    seed: u64,
    point_index: u64,
) -> Result<ForwardRun<T>, AisError> {
    check_inputs(model, x, schedule, chains, hmc)?;
    let runs: Vec<(Vec<ReportSample<T>>, ChainState<T>)> = (0..chains)
        .into_par_iter()
        .map(|j| {
            let mut r = rng::stream(seed, Lane::Forward, point_index, j as u64);
            run_forward_chain(model, x, schedule, hmc, j, &mut r)
        })
        .collect::<Result<_, _>>()?;
    let points = reduce_runs(schedule, runs.iter().map(|(s, _)| s.as_slice()));
    Ok(ForwardRun { points, chains: runs.into_iter().map(|(_, c)| c).collect() })
}

fn reduce_runs<'a, T: Real>(
    schedule: &Schedule<T>,
    runs: impl Iterator<Item = &'a [ReportSample<T>]> + Clone,
) -> Vec<RdPoint<T>> {
    schedule
        .report_indices()
        .iter()
        .enumerate()
        .map(|(r, &k)| {
            let samples: Vec<ReportSample<T>> = runs.clone().map(|s| s[r]).collect();
            reduce(k, schedule.betas()[k], &samples)
        })
        .collect()
}

/// Draws `count` latents from the final chain population, each chain chosen
/// with probability equal to its normalized importance weight.
pub fn resample<T: Real, R: Rng + ?Sized>(chains: &[ChainState<T>], count: usize, rng: &mut R) -> Vec<Vec<T>> {
    let log_ws: Vec<T> = chains.iter().map(|c| c.log_w).collect();
    let total = log_sum_exp(&log_ws);
    let weights: Vec<T> = log_ws.iter().map(|&l| (l - total).exp()).collect();
    (0..count)
        .map(|_| {
            let u = T::unit_uniform(rng);
            let mut acc = T::zero();
            let mut chosen = chains.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chains[chosen].z.clone()
        })
        .collect()
}

/// Reverse-AIS estimate at one report index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReversePoint<T> {
    pub k: usize,
    pub beta: T,
    pub log_z_upper: T,
}

/// Runs AIS backwards from an exact sample `z_star` of the final target.
///
/// Every chain starts at `z_star`, applies the transition for `β_k` and then
/// accumulates `(β_k − β_{k−1})·d(x, f(z))`, for `k = n, …, 1`. At each report
/// index `k` the value reported is `−logmeanexp` of the weight accumulated
/// from `k` down to 0. At `k = n` that is the stochastic upper bound on
/// `log Z_n`; at interior indices the chain states are only approximately
/// distributed as `q_k`, so those values are diagnostics rather than
/// certified bounds. The value at `k = 0` is exactly 0.
#[allow(clippy::too_many_arguments)]
pub fn reverse_ais<T: Real>(
    model: &ModelSpec<T>,
    x: &[T],
    z_star: &[T],
    schedule: &Schedule<T>,
    chains: usize,
    hmc: &HmcConfig<T>,
    seed: u64,
    point_index: u64,
) -> Result<Vec<ReversePoint<T>>, AisError> {
    check_inputs(model, x, schedule, chains, hmc)?;
    if z_star.len() != model.latent_dim() {
        return Err(AisError::Invalid(format!(
            "z_star has length {}, latent dim is {}",
            z_star.len(),
            model.latent_dim()
        )));
    }
    let betas = schedule.betas();
    let n = schedule.n();
    // Accumulated weight from n down to each index, per chain.
    let partials: Vec<Vec<T>> = (0..chains)
        .into_par_iter()
        .map(|j| {
            let mut r = rng::stream(seed, Lane::Reverse, point_index, j as u64);
            let mut chain = ChainState::start(model, x, z_star.to_vec())?;
            let mut acc = vec![T::zero(); n + 1];
            for k in (1..=n).rev() {
                chain.step(model, x, betas[k], hmc.step_size(k), hmc.params.leapfrog_steps, &mut r)?;
                chain.log_w += (betas[k] - betas[k - 1]) * chain.distortion();
                if !chain.log_w.is_finite() {
                    return Err(AisError::NonFiniteWeight { chain: j, step: k });
                }
                acc[k - 1] = chain.log_w;
            }
            Ok(acc)
        })
        .collect::<Result<_, AisError>>()?;
    Ok(schedule
        .report_indices()
        .iter()
        .map(|&k| {
            let tail: Vec<T> = partials.iter().map(|acc| acc[0] - acc[k]).collect();
            ReversePoint { k, beta: betas[k], log_z_upper: T::zero() - log_mean_exp(&tail) }
        })
        .collect())
}

/// Per-point curves and their dataset average.
#[derive(Debug, Clone, PartialEq)]
pub struct RdCurve<T> {
    pub per_point: Vec<Vec<RdPoint<T>>>,
    pub average: Vec<RdPoint<T>>,
}

#[derive(Debug, Error)]
#[error("data point {point}: {source}")]
pub struct RdCurveError<T: std::fmt::Debug> {
    pub point: usize,
    #[source]
    pub source: AisError,
    /// Curves for the points before `point`, which all completed.
    pub completed: Vec<Vec<RdPoint<T>>>,
}

/// Forward AIS on every data point, averaged per report index.
pub fn rd_curve<T: Real>(
    model: &ModelSpec<T>,
    data: &[Vec<T>],
    schedule: &Schedule<T>,
    chains: usize,
    hmc: &HmcConfig<T>,
    seed: u64,
) -> Result<RdCurve<T>, RdCurveError<T>> {
    let fail = |point, source| RdCurveError { point, source, completed: Vec::new() };
    if data.is_empty() {
        return Err(fail(0, AisError::Invalid("dataset is empty".into())));
    }
    for (i, x) in data.iter().enumerate() {
        check_inputs(model, x, schedule, chains, hmc).map_err(|e| fail(i, e))?;
    }
    let units: Vec<(usize, usize)> =
        (0..data.len()).flat_map(|i| (0..chains).map(move |j| (i, j))).collect();
    let results: Vec<Result<Vec<ReportSample<T>>, AisError>> = units
        .par_iter()
        .map(|&(i, j)| {
            let mut r = rng::stream(seed, Lane::Forward, i as u64, j as u64);
            run_forward_chain(model, &data[i], schedule, hmc, j, &mut r).map(|(s, _)| s)
        })
        .collect();
    let mut per_point = Vec::with_capacity(data.len());
    for (i, group) in results.chunks(chains).enumerate() {
        let mut runs = Vec::with_capacity(chains);
        for res in group {
            match res {
                Ok(s) => runs.push(s.as_slice()),
                Err(e) => {
                    return Err(RdCurveError { point: i, source: e.clone(), completed: per_point })
                }
            }
        }
        per_point.push(reduce_runs(schedule, runs.into_iter()));
    }
    let average = average_curves(&per_point);
    Ok(RdCurve { per_point, average })
}

/// Index-wise mean of equally shaped curves, summed in point order.
pub fn average_curves<T: Real>(curves: &[Vec<RdPoint<T>>]) -> Vec<RdPoint<T>> {
    let count = T::of(curves.len() as f64);
    (0..curves[0].len())
        .map(|r| {
            let mut acc = RdPoint {
                k: curves[0][r].k,
                beta: curves[0][r].beta,
                rate_nats: T::zero(),
                distortion: T::zero(),
                log_z_hat: T::zero(),
                mean_accept: T::zero(),
                ess: T::zero(),
            };
            for c in curves {
                acc.rate_nats += c[r].rate_nats;
                acc.distortion += c[r].distortion;
                acc.log_z_hat += c[r].log_z_hat;
                acc.mean_accept += c[r].mean_accept;
                acc.ess += c[r].ess;
            }
            acc.rate_nats /= count;
            acc.distortion /= count;
            acc.log_z_hat /= count;
            acc.mean_accept /= count;
            acc.ess /= count;
            acc
        })
        .collect()
}
