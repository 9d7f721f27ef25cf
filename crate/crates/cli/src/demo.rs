//! Three toy models with a 1-D latent and 2-D output whose exact
//! rate-distortion curves show how priors and decoders trade off.
//!
//! Models A and B share the decoder `f(z) = 2·tanh((1.5z, 0.5z))` and differ
//! only in the prior. The test point sits at unit distance from `f(0)`,
//! orthogonal to the curve, so `z = 0` is the best reconstruction under both.
//! A's mixture puts exactly B's density at `z = 0` but keeps 80% of its mass
//! near `z = 4`, so A pays more distortion at low rate while the two rates
//! meet once the posterior concentrates at `z = 0`. Model C has a linear
//! decoder passing through the test point at `z = 2`: worse than B at low
//! rate, able to reach zero distortion at high rate.

use std::fs;
use std::path::Path;

use rdeval::analytic::ExactPoint;
use rdeval::model::{Decoder, Distortion, Layer, MixtureComponent, ModelError, ModelSpec, Prior};
use rdeval::oracle::{OracleError, QuadratureGrid, QuadratureTable};
use rdeval::Matrix;

use crate::output::{write_rows, CurveRow};
use crate::plot::{self, Series};
use crate::CliError;

pub struct DemoModel {
    pub name: &'static str,
    pub model: ModelSpec<f64>,
}

/// `f(0) + (−1, 3)/√10` for the shared decoder, where `f(0) = 0`.
pub fn test_point() -> Vec<f64> {
    let s = 10f64.sqrt();
    vec![-1.0 / s, 3.0 / s]
}

fn shared_decoder() -> Result<Decoder<f64>, ModelError> {
    Decoder::new(
        1,
        vec![
            Layer::Linear { weight: Matrix::from_rows(&[&[1.5], &[0.5]]), bias: vec![0.0, 0.0] },
            Layer::Tanh,
            Layer::Linear { weight: Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 2.0]]), bias: vec![0.0, 0.0] },
        ],
    )
}

pub fn models() -> Result<Vec<DemoModel>, ModelError> {
    let x = test_point();
    let u = [0.6, 0.8];
    let mixture = Prior::mixture(vec![
        MixtureComponent { weight: 0.2, mean: vec![0.0], scale: 0.2 },
        MixtureComponent { weight: 0.8, mean: vec![4.0], scale: 0.5 },
    ])?;
    let linear = Decoder::linear(
        Matrix::from_rows(&[&[u[0]], &[u[1]]]),
        vec![x[0] - 2.0 * u[0], x[1] - 2.0 * u[1]],
    )?;
    Ok(vec![
        DemoModel {
            name: "a_shared_decoder_mixture_prior",
            model: ModelSpec::new("a", mixture, shared_decoder()?, Distortion::Mse)?,
        },
        DemoModel {
            name: "b_shared_decoder_gaussian_prior",
            model: ModelSpec::new("b", Prior::StandardGaussian { dim: 1 }, shared_decoder()?, Distortion::Mse)?,
        },
        DemoModel {
            name: "c_linear_decoder",
            model: ModelSpec::new("c", Prior::StandardGaussian { dim: 1 }, linear, Distortion::Mse)?,
        },
    ])
}

/// `β = 0` followed by 80 log-spaced values on `[10⁻², 10³]`.
pub fn betas() -> Vec<f64> {
    let mut b = vec![0.0];
    b.extend((0..80).map(|i| 10f64.powf(-2.0 + 5.0 * i as f64 / 79.0)));
    b
}

/// Fine enough to resolve the narrowest posterior at the largest β.
pub fn grid() -> QuadratureGrid {
    QuadratureGrid { nodes: 20_001, half_width: 10.0 }
}

pub fn curve(model: &ModelSpec<f64>) -> Result<Vec<ExactPoint<f64>>, OracleError> {
    let table = QuadratureTable::build(model, &test_point(), &grid())?;
    betas().into_iter().map(|b| table.point(b)).collect()
}

/// First point where the `(distortion, rate)` polylines of `a` and `b`
/// intersect, ignoring a shared starting point.
pub fn crossing(a: &[ExactPoint<f64>], b: &[ExactPoint<f64>]) -> Option<(f64, f64)> {
    let pa: Vec<(f64, f64)> = a.iter().map(|p| (p.distortion, p.rate)).collect();
    let pb: Vec<(f64, f64)> = b.iter().map(|p| (p.distortion, p.rate)).collect();
    for sa in pa.windows(2) {
        for sb in pb.windows(2) {
            if let Some(p) = intersect(sa[0], sa[1], sb[0], sb[1]) {
                if p != pa[0] || p != pb[0] {
                    return Some(p);
                }
            }
        }
    }
    None
}

fn intersect(p: (f64, f64), p2: (f64, f64), q: (f64, f64), q2: (f64, f64)) -> Option<(f64, f64)> {
    let r = (p2.0 - p.0, p2.1 - p.1);
    let s = (q2.0 - q.0, q2.1 - q.1);
    let denom = r.0 * s.1 - r.1 * s.0;
    if denom == 0.0 {
        return None;
    }
    let qp = (q.0 - p.0, q.1 - p.1);
    let t = (qp.0 * s.1 - qp.1 * s.0) / denom;
    let u = (qp.0 * r.1 - qp.1 * r.0) / denom;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then_some((p.0 + t * r.0, p.1 + t * r.1))
}

/// Writes one CSV per model and an overlay SVG into `dir`.
pub fn run(dir: &Path) -> Result<Vec<(DemoModel, Vec<ExactPoint<f64>>)>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    let models = models().map_err(|e| CliError::Model(e.to_string()))?;
    let mut out = Vec::new();
    for m in models {
        let points = curve(&m.model).map_err(|e| CliError::Numeric(format!("{}: {e}", m.name)))?;
        let rows: Vec<CurveRow> = points
            .iter()
            .enumerate()
            .map(|(k, p)| CurveRow {
                point_index: 0,
                k,
                beta: p.beta,
                rate_nats: p.rate,
                distortion: p.distortion,
                log_z_hat: p.log_z,
                mean_accept: None,
                ess: None,
            })
            .collect();
        write_rows(&dir.join(format!("{}.csv", m.name)), &rows)?;
        out.push((m, points));
    }
    let series: Vec<Series> = out
        .iter()
        .map(|(m, pts)| Series { name: m.name.to_string(), points: pts.iter().map(|p| (p.distortion, p.rate)).collect() })
        .collect();
    let svg = plot::render("Exact rate-distortion curves", "distortion", "rate (nats)", &series);
    let path = dir.join("demo2d.svg");
    fs::write(&path, svg).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(out)
}
