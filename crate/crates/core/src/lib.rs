//! Rate-distortion curves of decoder-based generative models, estimated with
//! annealed importance sampling and checked against closed-form and
//! quadrature oracles.
//!
//! Numerics are generic over [`Real`] (`f32` or `f64`); the aliases below fix
//! the scalar to `f64`, with a few `f32` counterparts.

pub mod ais;
pub mod analytic;
pub mod bdmc;
pub mod hmc;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod scalar;
pub mod target;

pub use scalar::Real;

pub type Matrix = linalg::Matrix<f64>;
pub type SvdResult = linalg::SvdResult<f64>;
pub type ModelSpec = model::ModelSpec<f64>;
pub type Decoder = model::Decoder<f64>;
pub type Prior = model::Prior<f64>;
pub type Distortion = model::Distortion<f64>;
pub type AnnealedTarget<'a> = target::AnnealedTarget<'a, f64>;
pub type HmcParams = hmc::HmcParams<f64>;
pub type HmcConfig = hmc::HmcConfig<f64>;
pub type Schedule = ais::Schedule<f64>;
pub type RdPoint = ais::RdPoint<f64>;
pub type LinearAnalytic = analytic::LinearAnalytic<f64>;
pub type ExactPoint = analytic::ExactPoint<f64>;
pub type SimulatedPair = bdmc::SimulatedPair<f64>;

pub type Matrix32 = linalg::Matrix<f32>;
pub type ModelSpec32 = model::ModelSpec<f32>;
pub type RdPoint32 = ais::RdPoint<f32>;

pub use hmc::TuneProfile;
pub use oracle::QuadratureGrid;
