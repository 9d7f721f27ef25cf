use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("schedule needs n >= 2 intermediate distributions, got {0}")]
    TooShort(usize),
    #[error("beta_max must be positive and finite, got {0}")]
    BetaMax(f64),
    #[error("report_points must be in 1..={max}, got {got}")]
    ReportPoints { got: usize, max: usize },
    #[error("sigmoid tau must be positive, got {0}")]
    Tau(f64),
    #[error("invalid custom schedule: {0}")]
    Custom(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleShape {
    /// Normalized logistic spacing over `t ∈ [−τ, τ]`.
    Sigmoid { tau: f64 },
    Linear,
    /// Explicit betas supplied by the caller.
    Custom,
}

pub const DEFAULT_TAU: f64 = 4.0;

/// Strictly ascending temperature grid `0 = β_0 < … < β_n = beta_max` with the
/// indices at which estimates are reported.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<T> {
    betas: Vec<T>,
    report_indices: Vec<usize>,
    shape: ScheduleShape,
}

impl<T: Real> Schedule<T> {
    /// Caller-supplied grid. `report_indices` must be ascending and in range.
    pub fn custom(betas: Vec<T>, report_indices: Vec<usize>) -> Result<Self, ScheduleError> {
        if betas.len() < 2 {
            return Err(ScheduleError::Custom("need at least two temperatures".into()));
        }
        if betas[0] != T::zero() {
            return Err(ScheduleError::Custom("first beta must be exactly 0".into()));
        }
        if betas.windows(2).any(|w| !(w[1] > w[0])) || betas.iter().any(|b| !b.is_finite()) {
            return Err(ScheduleError::Custom("betas must be finite and strictly ascending".into()));
        }
        if report_indices.is_empty()
            || report_indices.windows(2).any(|w| w[1] <= w[0])
            || report_indices.last().is_some_and(|&k| k >= betas.len())
        {
            return Err(ScheduleError::Custom("report indices must be ascending and in range".into()));
        }
        Ok(Self { betas, report_indices, shape: ScheduleShape::Custom })
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }

    pub fn report_indices(&self) -> &[usize] {
        &self.report_indices
    }

    /// Index of the final distribution.
    pub fn n(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn beta_max(&self) -> T {
        self.betas[self.n()]
    }

    pub fn shape(&self) -> ScheduleShape {
        self.shape
    }

    pub fn report_betas(&self) -> Vec<T> {
        self.report_indices.iter().map(|&k| self.betas[k]).collect()
    }
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Builds an `n + 1` point schedule ending at `beta_max` with
/// `report_points` report indices, spread geometrically away from both ends.
pub fn make_schedule<T: Real>(
    n: usize,
    beta_max: f64,
    shape: ScheduleShape,
    report_points: usize,
) -> Result<Schedule<T>, ScheduleError> {
    if n < 2 {
        return Err(ScheduleError::TooShort(n));
    }
    if !(beta_max > 0.0) || !beta_max.is_finite() {
        return Err(ScheduleError::BetaMax(beta_max));
    }
    if report_points == 0 || report_points > n + 1 {
        return Err(ScheduleError::ReportPoints { got: report_points, max: n + 1 });
    }
    let nf = n as f64;
    let mut betas: Vec<T> = match shape {
        ScheduleShape::Linear => (0..=n).map(|k| T::of(beta_max * k as f64 / nf)).collect(),
        ScheduleShape::Sigmoid { tau } => {
            if !(tau > 0.0) || !tau.is_finite() {
                return Err(ScheduleError::Tau(tau));
            }
            let lo = logistic(-tau);
            let span = logistic(tau) - lo;
            (0..=n)
                .map(|k| {
                    let t = -tau + 2.0 * tau * k as f64 / nf;
                    T::of(beta_max * (logistic(t) - lo) / span)
                })
                .collect()
        }
        ScheduleShape::Custom => {
            return Err(ScheduleError::Custom("use Schedule::custom for explicit grids".into()))
        }
    };
    betas[0] = T::zero();
    betas[n] = T::of(beta_max);
    if betas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ScheduleError::Custom(format!(
            "n = {n} too fine to stay strictly ascending at beta_max = {beta_max}"
        )));
    }
    Ok(Schedule { betas, report_indices: report_indices(n, report_points), shape })
}

/// `count` distinct indices in `0..=n`, always including both ends when
/// `count >= 2`, with spacing that grows geometrically from each end toward
/// the middle.
fn report_indices(n: usize, count: usize) -> Vec<usize> {
    if count == 1 {
        return vec![n];
    }
    let half = n as f64 / 2.0;
    let targets: Vec<f64> = (0..count)
        .map(|j| {
            let t = 2.0 * j as f64 / (count - 1) as f64 - 1.0; // [-1, 1]
            let depth = (1.0 + half).powf(1.0 - t.abs()) - 1.0; // 0 at ends, half in the middle
            if t <= 0.0 {
                depth
            } else {
                n as f64 - depth
            }
        })
        .collect();
    let mut idx: Vec<usize> = targets.iter().map(|&v| v.round() as usize).collect();
    idx[0] = 0;
    for j in 1..count {
        idx[j] = idx[j].max(idx[j - 1] + 1);
    }
    idx[count - 1] = n;
    for j in (0..count - 1).rev() {
        idx[j] = idx[j].min(idx[j + 1] - 1);
    }
    idx
}
