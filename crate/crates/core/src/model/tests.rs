use super::*;
use crate::linalg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LINEAR_VAE_TOY: &str = include_str!("../../fixtures/linear_vae_toy.json");
const TANH_MLP_TOY: &str = include_str!("../../fixtures/tanh_mlp_toy.json");

fn column(w: &[f64]) -> Matrix<f64> {
    Matrix::from_vec(w.len(), 1, w.to_vec()).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-r..r)).collect()
}

fn mlp(rng: &mut ChaCha8Rng, k: usize, hidden: usize, m: usize, act: Layer<f64>) -> Decoder<f64> {
    Decoder::new(
        k,
        vec![
            Layer::Linear { weight: random_matrix(rng, hidden, k), bias: random_vec(rng, hidden, 0.5) },
            act,
            Layer::Linear { weight: random_matrix(rng, m, hidden), bias: random_vec(rng, m, 0.5) },
        ],
    )
    .unwrap()
}

/// Central differences of `d(x, f(z))` in `z`.
fn fd_grad(model: &ModelSpec<f64>, x: &[f64], z: &[f64], h: f64) -> Vec<f64> {
    (0..z.len())
        .map(|i| {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[i] += h;
            zm[i] -= h;
            (model.distortion_at(x, &zp).unwrap() - model.distortion_at(x, &zm).unwrap()) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8);
    num / den
}

#[test]
fn identity_decoder_forward() {
    let d = Decoder::linear(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
    assert_eq!(d.forward(&[0.5, -1.0]).unwrap(), vec![0.5, -1.0]);
}

#[test]
fn column_decoder_forward() {
    let d = Decoder::linear(column(&[1.0, 1.0]), vec![0.0, 0.0]).unwrap();
    assert_eq!(d.forward(&[0.3]).unwrap(), vec![0.3, 0.3]);
}

#[test]
fn tanh_mlp_matches_duplicate_evaluation() {
    let model: ModelSpec<f64> = parse_model(TANH_MLP_TOY).unwrap();
    // Hand-transcribed weights of the fixture, evaluated with plain loops.
    let w1: [f64; 4] = [1.5, -1.0, 0.7, 2.0];
    let b1 = [0.0, 0.5, -0.3, 1.0];
    let w2 = [[1.0, 0.5, -0.8, 0.3], [-0.4, 1.2, 0.6, -0.5]];
    let b2 = [0.1, -0.2];
    for &z in &[0.1, 0.2, -1.3, 2.5] {
        let h: Vec<f64> = (0..4).map(|i| (w1[i] * z + b1[i]).tanh()).collect();
        let expect: Vec<f64> =
            (0..2).map(|r| b2[r] + (0..4).map(|c| w2[r][c] * h[c]).sum::<f64>()).collect();
        let got = model.decoder.forward(&[z]).unwrap();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() <= 1e-12, "{g} vs {e}");
        }
    }
}

#[test]
fn decoder_reports_non_finite_layer() {
    let w = Matrix::from_vec(1, 1, vec![1e300]).unwrap();
    let d = Decoder::new(1, vec![Layer::Linear { weight: w.clone(), bias: vec![0.0] }, Layer::Linear { weight: w, bias: vec![0.0] }]).unwrap();
    assert_eq!(d.forward(&[1e10]), Err(ModelError::NonFinite { layer: 0 }));
    assert_eq!(d.forward(&[1e-10]), Err(ModelError::NonFinite { layer: 1 }));
}

#[test]
fn decoder_rejects_broken_chain() {
    let err = Decoder::new(
        2,
        vec![
            Layer::Linear { weight: Matrix::<f64>::zeros(3, 2), bias: vec![0.0; 3] },
            Layer::Tanh,
            Layer::Linear { weight: Matrix::zeros(1, 2), bias: vec![0.0] },
        ],
    )
    .unwrap_err();
    assert!(err.to_string().contains("layer 2"));
    assert!(Decoder::<f64>::linear(Matrix::zeros(2, 1), vec![0.0]).is_err());
}

#[test]
fn distortion_values() {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let nll = Distortion::GaussianNll { sigma: 1.0_f64 };
    assert_eq!(Distortion::Mse.value(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert!((nll.value(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.837877).abs() < 1e-6);
    assert_eq!(Distortion::Mse.value(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 2.0);
    let v = nll.value(&[1.0, 1.0], &[2.0 / 3.0, 2.0 / 3.0]).unwrap();
    assert!((v - (ln2pi + 1.0 / 9.0)).abs() < 1e-12);
    assert!((v - 1.948988).abs() < 1e-6);
    assert!(Distortion::Mse.value(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn gaussian_nll_is_affine_in_mse() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let nll = Distortion::GaussianNll { sigma: 1.0 };
    for m in 1..6 {
        for _ in 0..20 {
            let x = random_vec(&mut rng, m, 3.0);
            let xh = random_vec(&mut rng, m, 3.0);
            let mse = Distortion::Mse.value(&x, &xh).unwrap();
            let expect = 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln() + 0.5 * mse;
            assert!((nll.value(&x, &xh).unwrap() - expect).abs() <= 1e-12);
        }
    }
}

#[test]
fn gradient_zero_at_exact_reconstruction() {
    let model = ModelSpec::new(
        "id",
        Prior::StandardGaussian { dim: 2 },
        Decoder::linear(Matrix::from_rows(&[&[1.0, 0.5], &[0.0, 2.0]]), vec![0.1, 0.0]).unwrap(),
        Distortion::Mse,
    )
    .unwrap();
    let z = [0.3_f64, -0.7];
    let x = model.decoder.forward(&z).unwrap();
    assert!(model.grad_distortion_wrt_z(&x, &z).unwrap().iter().all(|g| g.abs() < 1e-15));
}

#[test]
fn linear_mse_gradient_closed_form() {
    let model: ModelSpec<f64> = ModelSpec::new(
        "col",
        Prior::StandardGaussian { dim: 1 },
        Decoder::linear(column(&[1.0, 1.0]), vec![0.0, 0.0]).unwrap(),
        Distortion::Mse,
    )
    .unwrap();
    for &z in &[-1.0, 0.0, 0.25, 0.8] {
        // 2 Wᵀ (W z + b − x) with W = [1;1], x = (1, 1)
        let expect = 2.0 * ((z - 1.0) + (z - 1.0));
        let g = model.grad_distortion_wrt_z(&[1.0, 1.0], &[z]).unwrap();
        assert!((g[0] - expect).abs() < 1e-14);
    }
}

#[test]
fn gradients_match_finite_differences_for_all_layers_and_distortions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let activations = [Layer::Tanh, Layer::Relu, Layer::Sigmoid];
    for act in activations {
        let decoder = mlp(&mut rng, 3, 6, 4, act.clone());
        let feature_map = mlp(&mut rng, 4, 5, 3, Layer::Tanh);
        let distortions = [
            Distortion::Mse,
            Distortion::GaussianNll { sigma: 0.7 },
            Distortion::FeatureMse { feature_map },
        ];
        for dist in distortions {
            let model = ModelSpec::new("g", Prior::StandardGaussian { dim: 3 }, decoder.clone(), dist).unwrap();
            let mut checked = 0;
            while checked < 20 {
                let z = random_vec(&mut rng, 3, 2.0);
                let x = random_vec(&mut rng, 4, 2.0);
                if matches!(act, Layer::Relu) {
                    let trace = model.decoder.forward_trace(&z).unwrap();
                    if trace.values[1].iter().any(|v| v.abs() < 1e-4) {
                        continue;
                    }
                }
                let g = model.grad_distortion_wrt_z(&x, &z).unwrap();
                let fd = fd_grad(&model, &x, &z, 1e-5);
                assert!(rel_err(&g, &fd) <= 1e-5, "{act:?}/{:?}: {g:?} vs {fd:?}", model.distortion);
                checked += 1;
            }
        }
    }
}

#[test]
fn standard_gaussian_prior_at_origin() {
    let p = Prior::StandardGaussian { dim: 2 };
    assert!((p.logpdf(&[0.0_f64, 0.0]).unwrap() + 1.837877).abs() < 1e-6);
    assert_eq!(p.grad(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    assert!(p.logpdf(&[0.0]).is_err());
}

fn damaged_prior() -> Prior<f64> {
    Prior::mixture(vec![
        MixtureComponent { weight: 0.01, mean: vec![0.0], scale: 1.0 },
        MixtureComponent { weight: 0.99, mean: vec![0.0], scale: 10.0 },
    ])
    .unwrap()
}

#[test]
fn mixture_prior_logpdf_at_origin() {
    // Frozen from a 30-digit evaluation of log(0.01·φ(0) + 0.99·φ(0)/10).
    let v = damaged_prior().logpdf(&[0.0]).unwrap();
    assert!((v - (-3.135_345_929_957_666)).abs() < 1e-12, "{v}");
}

#[test]
fn mixture_prior_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = Prior::mixture(vec![
        MixtureComponent { weight: 0.3, mean: vec![1.0, -1.0], scale: 0.5 },
        MixtureComponent { weight: 0.7, mean: vec![-2.0, 0.5], scale: 2.0 },
    ])
    .unwrap();
    for _ in 0..20 {
        let z = random_vec(&mut rng, 2, 3.0);
        let g = p.grad(&z).unwrap();
        let h = 1e-6;
        let fd: Vec<f64> = (0..2)
            .map(|i| {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += h;
                zm[i] -= h;
                (p.logpdf(&zp).unwrap() - p.logpdf(&zm).unwrap()) / (2.0 * h)
            })
            .collect();
        assert!(rel_err(&g, &fd) <= 1e-6, "{g:?} vs {fd:?}");
    }
}

#[test]
fn mixture_logpdf_dominates_each_component() {
    let p = damaged_prior();
    let Prior::Mixture { components } = &p else { unreachable!() };
    for &z in &[-30.0, -3.0, 0.0, 0.5, 7.0] {
        let total = p.logpdf(&[z]).unwrap();
        for c in components {
            assert!(total >= c.weight.ln() + component_logpdf(c, &[z]));
        }
    }
}

#[test]
fn mixture_validation() {
    let bad_sum = Prior::mixture(vec![MixtureComponent { weight: 0.5, mean: vec![0.0], scale: 1.0 }]);
    assert!(bad_sum.is_err());
    let bad_scale = Prior::mixture(vec![MixtureComponent { weight: 1.0, mean: vec![0.0], scale: 0.0 }]);
    assert!(bad_scale.is_err());
    let bad_dim = Prior::mixture(vec![
        MixtureComponent { weight: 0.5, mean: vec![0.0], scale: 1.0 },
        MixtureComponent { weight: 0.5, mean: vec![0.0, 1.0], scale: 1.0 },
    ]);
    assert!(bad_dim.is_err());
}

#[test]
fn standard_gaussian_samples_have_unit_moments() {
    let p = Prior::<f64>::StandardGaussian { dim: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 100_000;
    let draws: Vec<Vec<f64>> = (0..n).map(|_| p.sample(&mut rng)).collect();
    let nf = n as f64;
    for i in 0..2 {
        let mean: f64 = draws.iter().map(|d| d[i]).sum::<f64>() / nf;
        assert!(mean.abs() < 4.0 / nf.sqrt());
        let var: f64 = draws.iter().map(|d| (d[i] - mean).powi(2)).sum::<f64>() / nf;
        // SE of the sample variance of a unit gaussian is sqrt(2/n).
        assert!((var - 1.0).abs() < 4.0 * (2.0 / nf).sqrt());
    }
    let cov: f64 = draws.iter().map(|d| d[0] * d[1]).sum::<f64>() / nf;
    assert!(cov.abs() < 4.0 / nf.sqrt());
}

#[test]
fn mixture_sampling_picks_components_by_weight() {
    let p = Prior::mixture(vec![
        MixtureComponent { weight: 0.25, mean: vec![-100.0], scale: 1.0 },
        MixtureComponent { weight: 0.75, mean: vec![100.0], scale: 1.0 },
    ])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 40_000;
    let left = (0..n).filter(|_| p.sample(&mut rng)[0] < 0.0).count() as f64 / n as f64;
    let se = (0.25_f64 * 0.75 / n as f64).sqrt();
    assert!((left - 0.25).abs() < 4.0 * se);
}

#[test]
fn load_minimal_identity_model() {
    let json = r#"{
        "name": "identity",
        "prior": {"type": "gaussian", "dim": 2},
        "decoder": {"latent_dim": 2, "layers": [
            {"type": "linear", "rows": 2, "cols": 2,
             "weights": "AAAAAAAA8D8AAAAAAAAAAAAAAAAAAAAAAAAAAAAA8D8=", "bias": [0.0, 0.0]}
        ]},
        "distortion": {"type": "mse"}
    }"#;
    let m: ModelSpec<f64> = parse_model(json).unwrap();
    assert_eq!(m.latent_dim(), 2);
    assert_eq!(m.output_dim(), 2);
    assert_eq!(m.decoder.forward(&[0.5, -1.0]).unwrap(), vec![0.5, -1.0]);
    assert_eq!(m.distortion, Distortion::Mse);
}

#[test]
fn load_rejects_short_weight_payload_naming_layer() {
    let json = r#"{
        "name": "bad",
        "prior": {"type": "gaussian", "dim": 2},
        "decoder": {"latent_dim": 2, "layers": [
            {"type": "tanh"},
            {"type": "linear", "rows": 2, "cols": 2, "weights": "AAAAAAAA8D8=", "bias": [0.0, 0.0]}
        ]},
        "distortion": {"type": "mse"}
    }"#;
    let err = parse_model::<f64>(json).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("decoder.layers[1].weights"), "{msg}");
}

#[test]
fn load_rejects_dimension_mismatch_and_non_finite() {
    let mismatch = r#"{"name":"x","prior":{"type":"gaussian","dim":3},
        "decoder":{"latent_dim":1,"layers":[{"type":"linear","rows":2,"cols":1,"weights":"AAAAAAAA8D8AAAAAAADwPw==","bias":[0,0]}]},
        "distortion":{"type":"mse"}}"#;
    assert!(matches!(parse_model::<f64>(mismatch), Err(ModelFileError::Model(_))));
    let nan_weights = {
        let bytes: Vec<u8> = [f64::NAN, 1.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        use base64::Engine;
        base64::engine::general_purpose::STANDARD.encode(bytes)
    };
    let json = format!(
        r#"{{"name":"x","prior":{{"type":"gaussian","dim":1}},
        "decoder":{{"latent_dim":1,"layers":[{{"type":"linear","rows":2,"cols":1,"weights":"{nan_weights}","bias":[0,0]}}]}},
        "distortion":{{"type":"mse"}}}}"#
    );
    let err = parse_model::<f64>(&json).unwrap_err().to_string();
    assert!(err.contains("decoder.layers[0].weights[0]"), "{err}");
    let bad_sigma = r#"{"name":"x","prior":{"type":"gaussian","dim":1},
        "decoder":{"latent_dim":1,"layers":[]},"distortion":{"type":"gaussian_nll","sigma":-1}}"#;
    assert!(parse_model::<f64>(bad_sigma).is_err());
}

#[test]
fn shipped_linear_fixture() {
    let m: ModelSpec<f64> = parse_model(LINEAR_VAE_TOY).unwrap();
    assert_eq!(m.latent_dim(), 1);
    assert_eq!(m.output_dim(), 2);
    assert_eq!(m.distortion, Distortion::GaussianNll { sigma: 1.0 });
    let (w, b) = m.decoder.as_linear().unwrap();
    assert_eq!(w.data(), &[1.0, 1.0]);
    assert_eq!(b, &[0.0, 0.0]);
}

#[test]
fn manifest_round_trips_through_json() {
    let m: ModelSpec<f64> = parse_model(TANH_MLP_TOY).unwrap();
    let again: ModelSpec<f64> = parse_model(&to_json(&m)).unwrap();
    assert_eq!(m, again);
}

#[test]
fn dataset_parsing() {
    let rows: Vec<Vec<f64>> = parse_dataset("# x0,x1\n1.0, 2\n\n-3e-1,4\n", 2).unwrap();
    assert_eq!(rows, vec![vec![1.0, 2.0], vec![-0.3, 4.0]]);
    assert!(parse_dataset::<f64>("1,2,3\n", 2).is_err());
    assert!(parse_dataset::<f64>("1,abc\n", 2).is_err());
    assert!(parse_dataset::<f64>("# only header\n", 2).is_err());
}

#[test]
fn single_precision_model_evaluates() {
    let m: ModelSpec<f32> = parse_model(TANH_MLP_TOY).unwrap();
    let m64: ModelSpec<f64> = parse_model(TANH_MLP_TOY).unwrap();
    let d32 = m.distortion_at(&[0.9, -1.0], &[0.4]).unwrap() as f64;
    let d64 = m64.distortion_at(&[0.9, -1.0], &[0.4]).unwrap();
    assert!((d32 - d64).abs() < 1e-4);
}
