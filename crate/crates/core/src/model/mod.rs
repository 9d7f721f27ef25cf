//! The fixed generative model under evaluation: prior `p(z)`, decoder `f(z)`,
//! and distortion `d(x, f(z))`, with exact reverse-mode gradients in `z`.

mod file;

pub use file::{load_dataset, load_model, parse_dataset, parse_model, to_json, ModelFileError};

use std::f64::consts::PI;

use rand::Rng;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::scalar::{log_sum_exp, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{what}: expected length {expected}, got {got}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("non-finite value produced by layer {layer}")]
    NonFinite { layer: usize },
}

/// One isotropic Gaussian component of a mixture prior.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent<T> {
    pub weight: T,
    pub mean: Vec<T>,
    /// Standard deviation, shared by every coordinate.
    pub scale: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prior<T> {
    StandardGaussian { dim: usize },
    Mixture { components: Vec<MixtureComponent<T>> },
}

impl<T: Real> Prior<T> {
    /// Validated mixture constructor.
    pub fn mixture(components: Vec<MixtureComponent<T>>) -> Result<Self, ModelError> {
        let p = Prior::Mixture { components };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Prior::StandardGaussian { dim } => {
                if *dim == 0 {
                    return Err(ModelError::Invalid("prior dim must be positive".into()));
                }
            }
            Prior::Mixture { components } => {
                let first = components
                    .first()
                    .ok_or_else(|| ModelError::Invalid("mixture has no components".into()))?;
                let dim = first.mean.len();
                if dim == 0 {
                    return Err(ModelError::Invalid("mixture component has empty mean".into()));
                }
                let mut total = 0.0;
                for (i, c) in components.iter().enumerate() {
                    if c.mean.len() != dim {
                        return Err(ModelError::Invalid(format!(
                            "mixture component {i} has dim {}, expected {dim}",
                            c.mean.len()
                        )));
                    }
                    if !(c.scale > T::zero()) || !c.scale.is_finite() {
                        return Err(ModelError::Invalid(format!(
                            "mixture component {i} scale must be positive"
                        )));
                    }
                    if !(c.weight >= T::zero()) || c.mean.iter().any(|m| !m.is_finite()) {
                        return Err(ModelError::Invalid(format!(
                            "mixture component {i} has invalid weight or mean"
                        )));
                    }
                    total += c.weight.as_f64();
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(ModelError::Invalid(format!(
                        "mixture weights sum to {total}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Prior::StandardGaussian { dim } => *dim,
            Prior::Mixture { components } => components[0].mean.len(),
        }
    }

    fn check(&self, z: &[T]) -> Result<(), ModelError> {
        if z.len() != self.dim() {
            return Err(ModelError::Length { what: "latent", expected: self.dim(), got: z.len() });
        }
        Ok(())
    }

    pub fn logpdf(&self, z: &[T]) -> Result<T, ModelError> {
        self.check(z)?;
        Ok(match self {
            Prior::StandardGaussian { dim } => {
                let sq: T = z.iter().map(|&v| v * v).sum();
                -T::of(0.5 * *dim as f64 * (2.0 * PI).ln()) - T::of(0.5) * sq
            }
            Prior::Mixture { components } => {
                let terms: Vec<T> =
                    components.iter().map(|c| c.weight.ln() + component_logpdf(c, z)).collect();
                log_sum_exp(&terms)
            }
        })
    }

    /// `∇ log p(z)`.
    pub fn grad(&self, z: &[T]) -> Result<Vec<T>, ModelError> {
        self.logpdf_and_grad(z).map(|(_, g)| g)
    }

    pub fn logpdf_and_grad(&self, z: &[T]) -> Result<(T, Vec<T>), ModelError> {
        let mut grad = Vec::new();
        let value = self.logpdf_and_grad_into(z, &mut grad)?;
        Ok((value, grad))
    }

    fn logpdf_and_grad_into(&self, z: &[T], grad: &mut Vec<T>) -> Result<T, ModelError> {
        self.check(z)?;
        grad.clear();
        match self {
            Prior::StandardGaussian { .. } => {
                grad.extend(z.iter().map(|&v| -v));
                self.logpdf(z)
            }
            Prior::Mixture { components } => {
                let terms: Vec<T> =
                    components.iter().map(|c| c.weight.ln() + component_logpdf(c, z)).collect();
                let total = log_sum_exp(&terms);
                grad.resize(z.len(), T::zero());
                for (c, &t) in components.iter().zip(&terms) {
                    let resp = (t - total).exp();
                    if resp == T::zero() {
                        continue;
                    }
                    let inv_var = T::one() / (c.scale * c.scale);
                    for ((g, &zi), &mi) in grad.iter_mut().zip(z).zip(&c.mean) {
                        *g -= resp * (zi - mi) * inv_var;
                    }
                }
                Ok(total)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        match self {
            Prior::StandardGaussian { dim } => (0..*dim).map(|_| T::standard_normal(rng)).collect(),
            Prior::Mixture { components } => {
                let u = T::unit_uniform(rng);
                let mut acc = T::zero();
                let mut chosen = components.len() - 1;
                for (i, c) in components.iter().enumerate() {
                    acc += c.weight;
                    if u < acc {
                        chosen = i;
                        break;
                    }
                }
                let c = &components[chosen];
                c.mean.iter().map(|&m| m + c.scale * T::standard_normal(rng)).collect()
            }
        }
    }

    /// Per-coordinate interval covering every component out to
    /// `half_width` standard deviations.
    pub fn support_box(&self, half_width: T) -> Vec<(T, T)> {
        match self {
            Prior::StandardGaussian { dim } => vec![(-half_width, half_width); *dim],
            Prior::Mixture { components } => {
                let max_scale = components.iter().map(|c| c.scale).fold(T::zero(), T::max);
                (0..self.dim())
                    .map(|d| {
                        let lo = components.iter().map(|c| c.mean[d]).fold(T::infinity(), T::min);
                        let hi =
                            components.iter().map(|c| c.mean[d]).fold(T::neg_infinity(), T::max);
                        (lo - half_width * max_scale, hi + half_width * max_scale)
                    })
                    .collect()
            }
        }
    }
}

fn component_logpdf<T: Real>(c: &MixtureComponent<T>, z: &[T]) -> T {
    let k = T::of(z.len() as f64);
    let var = c.scale * c.scale;
    let sq: T = z.iter().zip(&c.mean).map(|(&zi, &mi)| (zi - mi) * (zi - mi)).sum();
    -T::of(0.5) * k * (T::of(2.0 * PI) * var).ln() - T::of(0.5) * sq / var
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    /// `y = W·x + b`, with `W` of shape out×in.
    Linear { weight: Matrix<T>, bias: Vec<T> },
    Tanh,
    Relu,
    Sigmoid,
}

impl<T: Real> Layer<T> {
    fn apply_into(&self, input: &[T], out: &mut Vec<T>) {
        match self {
            Layer::Linear { weight, bias } => {
                out.resize(weight.rows(), T::zero());
                for (r, (o, &b)) in out.iter_mut().zip(bias).enumerate() {
                    *o = crate::linalg::dot(weight.row(r), input) + b;
                }
            }
            Layer::Tanh => map_into(input, out, |v| v.tanh()),
            Layer::Relu => map_into(input, out, |v| if v > T::zero() { v } else { T::zero() }),
            Layer::Sigmoid => map_into(input, out, sigmoid),
        }
    }

    /// Pulls `grad_out` back through the layer given its input and output.
    fn backward_into(&self, input: &[T], output: &[T], grad_out: &[T], grad_in: &mut Vec<T>) {
        match self {
            Layer::Linear { weight, .. } => {
                grad_in.clear();
                grad_in.resize(weight.cols(), T::zero());
                for (r, &g) in grad_out.iter().enumerate() {
                    for (o, &a) in grad_in.iter_mut().zip(weight.row(r)) {
                        *o += a * g;
                    }
                }
            }
            Layer::Tanh => zip_into(output, grad_out, grad_in, |y, g| g * (T::one() - y * y)),
            // Subgradient 0 at the kink.
            Layer::Relu => zip_into(input, grad_out, grad_in, |x, g| if x > T::zero() { g } else { T::zero() }),
            Layer::Sigmoid => zip_into(output, grad_out, grad_in, |y, g| g * y * (T::one() - y)),
        }
    }
}

#[inline]
fn map_into<T: Real>(input: &[T], out: &mut Vec<T>, f: impl Fn(T) -> T) {
    out.resize(input.len(), T::zero());
    for (o, &v) in out.iter_mut().zip(input) {
        *o = f(v);
    }
}

#[inline]
fn zip_into<T: Real>(a: &[T], b: &[T], out: &mut Vec<T>, f: impl Fn(T, T) -> T) {
    out.resize(a.len(), T::zero());
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = f(x, y);
    }
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Feed-forward decoder `f: R^latent_dim -> R^output_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T> {
    layers: Vec<Layer<T>>,
    latent_dim: usize,
    output_dim: usize,
}

/// Per-layer activations recorded by a forward pass; `values[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    values: Vec<Vec<T>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &[T] {
        self.values.last().expect("trace holds at least the input")
    }
}

/// Scratch buffers reused across evaluations so the sampler's inner loop
/// does not allocate.
#[derive(Debug, Clone)]
pub struct Workspace<T> {
    trace: Trace<T>,
    grad_a: Vec<T>,
    grad_b: Vec<T>,
}

impl<T> Default for Workspace<T> {
    fn default() -> Self {
        Self { trace: Trace { values: Vec::new() }, grad_a: Vec::new(), grad_b: Vec::new() }
    }
}

impl<T: Real> Decoder<T> {
    pub fn new(latent_dim: usize, layers: Vec<Layer<T>>) -> Result<Self, ModelError> {
        if latent_dim == 0 {
            return Err(ModelError::Invalid("decoder latent_dim must be positive".into()));
        }
        let mut width = latent_dim;
        for (i, layer) in layers.iter().enumerate() {
            if let Layer::Linear { weight, bias } = layer {
                if weight.cols() != width {
                    return Err(ModelError::Invalid(format!(
                        "layer {i}: linear expects input dim {}, previous output is {width}",
                        weight.cols()
                    )));
                }
                if bias.len() != weight.rows() {
                    return Err(ModelError::Invalid(format!(
                        "layer {i}: bias length {} does not match {} rows",
                        bias.len(),
                        weight.rows()
                    )));
                }
                if bias.iter().any(|b| !b.is_finite()) {
                    return Err(ModelError::Invalid(format!("layer {i}: non-finite bias")));
                }
                width = weight.rows();
            }
        }
        Ok(Self { layers, latent_dim, output_dim: width })
    }

    /// Single linear layer `f(z) = W·z + b`.
    pub fn linear(weight: Matrix<T>, bias: Vec<T>) -> Result<Self, ModelError> {
        Self::new(weight.cols(), vec![Layer::Linear { weight, bias }])
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// When the decoder is exactly one linear layer, its weight and bias.
    pub fn as_linear(&self) -> Option<(&Matrix<T>, &[T])> {
        match self.layers.as_slice() {
            [Layer::Linear { weight, bias }] => Some((weight, bias)),
            _ => None,
        }
    }

    pub fn forward(&self, z: &[T]) -> Result<Vec<T>, ModelError> {
        let mut trace = self.forward_trace(z)?;
        Ok(trace.values.pop().expect("non-empty trace"))
    }

    pub fn forward_trace(&self, z: &[T]) -> Result<Trace<T>, ModelError> {
        let mut trace = Trace { values: Vec::with_capacity(self.layers.len() + 1) };
        self.forward_into(z, &mut trace)?;
        Ok(trace)
    }

    fn forward_into(&self, z: &[T], trace: &mut Trace<T>) -> Result<(), ModelError> {
        if z.len() != self.latent_dim {
            return Err(ModelError::Length {
                what: "decoder input",
                expected: self.latent_dim,
                got: z.len(),
            });
        }
        trace.values.resize_with(self.layers.len() + 1, Vec::new);
        trace.values[0].clear();
        trace.values[0].extend_from_slice(z);
        for (i, layer) in self.layers.iter().enumerate() {
            let (done, rest) = trace.values.split_at_mut(i + 1);
            let next = &mut rest[0];
            layer.apply_into(&done[i], next);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite { layer: i });
            }
        }
        Ok(())
    }

    /// Vector-Jacobian product `J_f(z)ᵀ · grad_out` using a recorded trace.
    pub fn backward(&self, trace: &Trace<T>, grad_out: &[T]) -> Vec<T> {
        let mut g = grad_out.to_vec();
        let mut next = Vec::new();
        self.backward_into(trace, &mut g, &mut next);
        g
    }

    /// In-place backward pass: `g` holds the output gradient on entry and
    /// the input gradient on return; `spare` is scratch.
    fn backward_into(&self, trace: &Trace<T>, g: &mut Vec<T>, spare: &mut Vec<T>) {
        for (i, layer) in self.layers.iter().enumerate().rev() {
            layer.backward_into(&trace.values[i], &trace.values[i + 1], g, spare);
            std::mem::swap(g, spare);
        }
    }

    pub fn cast<U: Real>(&self) -> Decoder<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Linear { weight, bias } => Layer::Linear {
                    weight: weight.cast(),
                    bias: bias.iter().map(|b| U::of(b.as_f64())).collect(),
                },
                Layer::Tanh => Layer::Tanh,
                Layer::Relu => Layer::Relu,
                Layer::Sigmoid => Layer::Sigmoid,
            })
            .collect();
        Decoder { layers, latent_dim: self.latent_dim, output_dim: self.output_dim }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Distortion<T> {
    /// `Σ (xᵢ − x̂ᵢ)²`.
    Mse,
    /// `−log N(x; x̂, σ²I)`.
    GaussianNll { sigma: T },
    /// Squared error between `φ(x)` and `φ(x̂)`.
    FeatureMse { feature_map: Decoder<T> },
}

impl<T: Real> Distortion<T> {
    pub fn value(&self, x: &[T], xhat: &[T]) -> Result<T, ModelError> {
        if x.len() != xhat.len() {
            return Err(ModelError::Length { what: "reconstruction", expected: x.len(), got: xhat.len() });
        }
        Ok(match self {
            Distortion::Mse => squared_error(x, xhat),
            Distortion::GaussianNll { sigma } => {
                let var = *sigma * *sigma;
                let m = T::of(x.len() as f64);
                T::of(0.5) * m * (T::of(2.0 * PI) * var).ln()
                    + squared_error(x, xhat) / (T::of(2.0) * var)
            }
            Distortion::FeatureMse { feature_map } => {
                let fx = feature_map.forward(x)?;
                let fxhat = feature_map.forward(xhat)?;
                squared_error(&fx, &fxhat)
            }
        })
    }

    /// Value and gradient with respect to `xhat`.
    pub fn value_and_grad(&self, x: &[T], xhat: &[T]) -> Result<(T, Vec<T>), ModelError> {
        let mut grad = Vec::new();
        let value = self.value_and_grad_into(x, xhat, &mut grad)?;
        Ok((value, grad))
    }

    fn value_and_grad_into(&self, x: &[T], xhat: &[T], grad: &mut Vec<T>) -> Result<T, ModelError> {
        let value = self.value(x, xhat)?;
        grad.clear();
        match self {
            Distortion::Mse => grad.extend(xhat.iter().zip(x).map(|(&a, &b)| T::of(2.0) * (a - b))),
            Distortion::GaussianNll { sigma } => {
                let inv = T::one() / (*sigma * *sigma);
                grad.extend(xhat.iter().zip(x).map(|(&a, &b)| (a - b) * inv));
            }
            Distortion::FeatureMse { feature_map } => {
                let fx = feature_map.forward(x)?;
                let trace = feature_map.forward_trace(xhat)?;
                let outer: Vec<T> = trace
                    .output()
                    .iter()
                    .zip(&fx)
                    .map(|(&a, &b)| T::of(2.0) * (a - b))
                    .collect();
                grad.extend(feature_map.backward(&trace, &outer));
            }
        }
        Ok(value)
    }

    fn validate(&self, output_dim: usize) -> Result<(), ModelError> {
        match self {
            Distortion::Mse => Ok(()),
            Distortion::GaussianNll { sigma } => {
                if *sigma > T::zero() && sigma.is_finite() {
                    Ok(())
                } else {
                    Err(ModelError::Invalid("gaussian_nll sigma must be positive".into()))
                }
            }
            Distortion::FeatureMse { feature_map } => {
                if feature_map.latent_dim() == output_dim {
                    Ok(())
                } else {
                    Err(ModelError::Invalid(format!(
                        "feature map input dim {} does not match decoder output dim {output_dim}",
                        feature_map.latent_dim()
                    )))
                }
            }
        }
    }

    pub fn cast<U: Real>(&self) -> Distortion<U> {
        match self {
            Distortion::Mse => Distortion::Mse,
            Distortion::GaussianNll { sigma } => Distortion::GaussianNll { sigma: U::of(sigma.as_f64()) },
            Distortion::FeatureMse { feature_map } => {
                Distortion::FeatureMse { feature_map: feature_map.cast() }
            }
        }
    }
}

fn squared_error<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Prior, decoder, and distortion bundled as the model under evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec<T> {
    pub name: String,
    pub prior: Prior<T>,
    pub decoder: Decoder<T>,
    pub distortion: Distortion<T>,
}

/// Latent-space quantities at one point, independent of the temperature.
#[derive(Debug, Clone)]
pub struct LatentEval<T> {
    pub log_prior: T,
    pub grad_log_prior: Vec<T>,
    pub distortion: T,
    pub grad_distortion: Vec<T>,
}

impl<T: Real> LatentEval<T> {
    fn empty() -> Self {
        Self {
            log_prior: T::zero(),
            grad_log_prior: Vec::new(),
            distortion: T::zero(),
            grad_distortion: Vec::new(),
        }
    }
}

impl<T: Real> ModelSpec<T> {
    pub fn new(
        name: impl Into<String>,
        prior: Prior<T>,
        decoder: Decoder<T>,
        distortion: Distortion<T>,
    ) -> Result<Self, ModelError> {
        prior.validate()?;
        if prior.dim() != decoder.latent_dim() {
            return Err(ModelError::Invalid(format!(
                "prior dim {} does not match decoder latent dim {}",
                prior.dim(),
                decoder.latent_dim()
            )));
        }
        distortion.validate(decoder.output_dim())?;
        Ok(Self { name: name.into(), prior, decoder, distortion })
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.latent_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    pub fn check_data(&self, x: &[T]) -> Result<(), ModelError> {
        if x.len() != self.output_dim() {
            return Err(ModelError::Length { what: "data point", expected: self.output_dim(), got: x.len() });
        }
        Ok(())
    }

    /// `d(x, f(z))`.
    pub fn distortion_at(&self, x: &[T], z: &[T]) -> Result<T, ModelError> {
        self.check_data(x)?;
        let xhat = self.decoder.forward(z)?;
        self.distortion.value(x, &xhat)
    }

    /// `d(x, f(z))` and its exact gradient in `z`.
    pub fn distortion_and_grad(&self, x: &[T], z: &[T]) -> Result<(T, Vec<T>), ModelError> {
        self.check_data(x)?;
        let trace = self.decoder.forward_trace(z)?;
        let (value, outer) = self.distortion.value_and_grad(x, trace.output())?;
        Ok((value, self.decoder.backward(&trace, &outer)))
    }

    pub fn grad_distortion_wrt_z(&self, x: &[T], z: &[T]) -> Result<Vec<T>, ModelError> {
        self.distortion_and_grad(x, z).map(|(_, g)| g)
    }

    pub fn evaluate(&self, x: &[T], z: &[T]) -> Result<LatentEval<T>, ModelError> {
        let mut out = LatentEval::empty();
        self.evaluate_into(x, z, &mut Workspace::default(), &mut out)?;
        Ok(out)
    }

    /// [`ModelSpec::evaluate`] writing into `out`, reusing `ws` and the
    /// buffers already held by `out`.
    pub fn evaluate_into(
        &self,
        x: &[T],
        z: &[T],
        ws: &mut Workspace<T>,
        out: &mut LatentEval<T>,
    ) -> Result<(), ModelError> {
        self.check_data(x)?;
        out.log_prior = self.prior.logpdf_and_grad_into(z, &mut out.grad_log_prior)?;
        self.decoder.forward_into(z, &mut ws.trace)?;
        out.distortion = self.distortion.value_and_grad_into(x, ws.trace.output(), &mut ws.grad_a)?;
        self.decoder.backward_into(&ws.trace, &mut ws.grad_a, &mut ws.grad_b);
        out.grad_distortion.clear();
        out.grad_distortion.extend_from_slice(&ws.grad_a);
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ModelSpec<U> {
        let prior = match &self.prior {
            Prior::StandardGaussian { dim } => Prior::StandardGaussian { dim: *dim },
            Prior::Mixture { components } => Prior::Mixture {
                components: components
                    .iter()
                    .map(|c| MixtureComponent {
                        weight: U::of(c.weight.as_f64()),
                        mean: c.mean.iter().map(|m| U::of(m.as_f64())).collect(),
                        scale: U::of(c.scale.as_f64()),
                    })
                    .collect(),
            },
        };
        ModelSpec {
            name: self.name.clone(),
            prior,
            decoder: self.decoder.cast(),
            distortion: self.distortion.cast(),
        }
    }
}

#[cfg(test)]
mod tests;
