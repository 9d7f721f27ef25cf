use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rdeval::model::{parse_model, to_json, Decoder, Distortion, ModelSpec, Prior};
use rdeval::Matrix;
use rdeval_cli::output::{read_rows, CurveRow, GapRow, CURVE_HEADER, GAP_HEADER};
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn rdeval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdeval")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn write_data(dir: &Path, rows: &[&[f64]]) -> PathBuf {
    let path = dir.join("data.csv");
    let text: String = rows
        .iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_rd(dir: &Path, data: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let path = dir.join(out);
    let model = fixture("tanh_mlp_toy.json");
    let mut args = vec![
        "rd", "--model", s(&model), "--data", s(data), "--n-dists", "60", "--beta-max", "5", "--chains", "6",
        "--leapfrog", "5", "--seed", "11", "--report-points", "7", "--out", s(&path),
    ];
    args.extend_from_slice(extra);
    ok(&rdeval(&args));
    path
}

#[test]
fn same_seed_gives_byte_identical_csv() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), &[&[0.9, -1.0], &[0.1, 0.2], &[-0.5, 0.7]]);
    let a = small_rd(dir.path(), &data, "a.csv", &[]);
    let b = small_rd(dir.path(), &data, "b.csv", &[]);
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), &[&[0.9, -1.0], &[0.1, 0.2], &[-0.5, 0.7]]);
    let one = small_rd(dir.path(), &data, "one.csv", &["--threads", "1"]);
    let four = small_rd(dir.path(), &data, "four.csv", &["--threads", "4"]);
    assert_eq!(fs::read(one).unwrap(), fs::read(four).unwrap());
}

#[test]
fn saved_profile_reproduces_the_tuned_run() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), &[&[0.9, -1.0], &[0.1, 0.2]]);
    let profile = dir.path().join("profile.json");
    let direct = small_rd(dir.path(), &data, "direct.csv", &["--tune-out", s(&profile)]);
    let reused = small_rd(dir.path(), &data, "reused.csv", &["--tune-in", s(&profile)]);
    assert_eq!(fs::read(direct).unwrap(), fs::read(reused).unwrap());
}

#[test]
fn mismatched_profile_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), &[&[0.9, -1.0]]);
    let profile = dir.path().join("profile.json");
    small_rd(dir.path(), &data, "a.csv", &["--tune-out", s(&profile)]);
    let out = rdeval(&[
        "rd", "--model", s(&fixture("tanh_mlp_toy.json")), "--data", s(&data), "--n-dists", "61",
        "--beta-max", "5", "--chains", "6", "--leapfrog", "5", "--report-points", "7",
        "--tune-in", s(&profile), "--out", s(&dir.path().join("b.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}

#[test]
fn missing_model_exits_3_naming_the_path() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), &[&[0.0, 0.0]]);
    let missing = dir.path().join("nope.json");
    let out = rdeval(&["rd", "--model", s(&missing), "--data", s(&data), "--out", s(&dir.path().join("o.csv"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn bad_flags_exit_2() {
    let out = rdeval(&["rd", "--model", "m.json", "--data", "d.csv", "--out", "o.csv", "--chains", "many"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), &[&[0.0, 0.0]]);
    let out = rdeval(&[
        "rd", "--model", s(&fixture("linear_vae_toy.json")), "--data", s(&data), "--n-dists", "1",
        "--out", s(&dir.path().join("o.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overflowing_model_exits_4() {
    let dir = TempDir::new().unwrap();
    let model = ModelSpec::new(
        "huge",
        Prior::StandardGaussian { dim: 1 },
        Decoder::linear(Matrix::from_rows(&[&[1e200], &[1e200]]), vec![0.0, 0.0]).unwrap(),
        Distortion::Mse,
    )
    .unwrap();
    let path = dir.path().join("huge.json");
    fs::write(&path, to_json(&model)).unwrap();
    let data = write_data(dir.path(), &[&[0.0, 0.0]]);
    let out = rdeval(&[
        "rd", "--model", s(&path), "--data", s(&data), "--n-dists", "10", "--beta-max", "1",
        "--chains", "2", "--leapfrog", "2", "--report-points", "2", "--out", s(&dir.path().join("o.csv")),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn nonlinear_model_has_no_analytic_curve() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), &[&[0.0, 0.0]]);
    let out = rdeval(&[
        "analytic", "--model", s(&fixture("tanh_mlp_toy.json")), "--data", s(&data),
        "--out", s(&dir.path().join("o.csv")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn linear_fixture_rd_matches_analytic_at_beta_one() {
    let dir = TempDir::new().unwrap();
    let data = write_data(
        dir.path(),
        &[&[1.0, 1.0], &[-0.5, 2.0], &[0.3, -1.2], &[2.0, 1.5], &[0.0, 0.0], &[-1.0, -0.7], &[1.4, 0.2], &[-2.0, 1.0]],
    );
    let model = s(&fixture("linear_vae_toy.json")).to_owned();
    let common = ["--model", &model, "--data", s(&data), "--n-dists", "400", "--beta-max", "1", "--report-points", "5"];
    let rd = dir.path().join("rd.csv");
    let an = dir.path().join("an.csv");
    let mut args = vec!["rd"];
    args.extend_from_slice(&common);
    // D̂ is a weighted average of one draw per chain with posterior variance
    // below 1 on these points; 8 × 512 draws put its standard error near 0.015.
    args.extend_from_slice(&["--chains", "512", "--leapfrog", "10", "--seed", "3", "--out", s(&rd)]);
    ok(&rdeval(&args));
    let mut args = vec!["analytic"];
    args.extend_from_slice(&common);
    args.extend_from_slice(&["--out", s(&an)]);
    ok(&rdeval(&args));
    let rd: Vec<CurveRow> = read_rows(&rd, &CURVE_HEADER).unwrap();
    let an: Vec<CurveRow> = read_rows(&an, &CURVE_HEADER).unwrap();
    let last = |rows: &[CurveRow]| rows.iter().rfind(|r| r.point_index == -1).unwrap().clone();
    let (r, a) = (last(&rd), last(&an));
    assert_eq!((r.beta, a.beta), (1.0, 1.0));
    assert!((r.rate_nats - a.rate_nats).abs() < 0.05, "{r:?} vs {a:?}");
    assert!((r.distortion - a.distortion).abs() < 0.02 * a.distortion, "{r:?} vs {a:?}");
    assert!((r.log_z_hat - a.log_z_hat).abs() < 0.02, "{r:?} vs {a:?}");
}

#[test]
fn zero_weight_model_has_zero_analytic_rate() {
    let dir = TempDir::new().unwrap();
    let mut model: ModelSpec<f64> = parse_model(&fs::read_to_string(fixture("linear_vae_toy.json")).unwrap()).unwrap();
    model.decoder = Decoder::linear(Matrix::zeros(2, 1), vec![0.0, 0.0]).unwrap();
    let path = dir.path().join("zero.json");
    fs::write(&path, to_json(&model)).unwrap();
    let data = write_data(dir.path(), &[&[1.0, 1.0], &[-3.0, 0.5]]);
    let out = dir.path().join("o.csv");
    ok(&rdeval(&["analytic", "--model", s(&path), "--data", s(&data), "--beta-max", "100", "--out", s(&out)]));
    let rows: Vec<CurveRow> = read_rows(&out, &CURVE_HEADER).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.rate_nats == 0.0), "{rows:?}");
}

#[test]
fn oracle_and_analytic_agree_row_by_row() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), &[&[1.0, 1.0], &[-0.5, 2.0], &[0.3, -1.2]]);
    for model in ["linear_vae_toy.json", "linear_mse_toy.json"] {
        let model = s(&fixture(model)).to_owned();
        let common = ["--model", &model, "--data", s(&data), "--beta-max", "50", "--report-points", "12"];
        let an = dir.path().join("an.csv");
        let qu = dir.path().join("qu.csv");
        let mut args = vec!["analytic"];
        args.extend_from_slice(&common);
        args.extend_from_slice(&["--out", s(&an)]);
        ok(&rdeval(&args));
        let mut args = vec!["oracle"];
        args.extend_from_slice(&common);
        args.extend_from_slice(&["--out", s(&qu), "--quad-nodes", "8001"]);
        ok(&rdeval(&args));
        let an: Vec<CurveRow> = read_rows(&an, &CURVE_HEADER).unwrap();
        let qu: Vec<CurveRow> = read_rows(&qu, &CURVE_HEADER).unwrap();
        assert_eq!(an.len(), qu.len());
        for (a, q) in an.iter().zip(&qu) {
            assert_eq!((a.point_index, a.k, a.beta), (q.point_index, q.k, q.beta));
            for (x, y) in [(a.rate_nats, q.rate_nats), (a.distortion, q.distortion), (a.log_z_hat, q.log_z_hat)] {
                assert!((x - y).abs() <= 1e-6, "{a:?} vs {q:?}");
            }
        }
    }
}

#[test]
fn bdmc_gaps_are_non_negative_in_aggregate() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("gap.csv");
    let plot = dir.path().join("gap.svg");
    ok(&rdeval(&[
        "bdmc", "--model", s(&fixture("linear_vae_toy.json")), "--beta-targets", "0.5,2,8",
        "--pairs", "64", "--n-dists", "10", "--chains", "4", "--leapfrog", "5", "--seed", "2",
        "--out", s(&out), "--plot", s(&plot),
    ]));
    let rows: Vec<GapRow> = read_rows(&out, &GAP_HEADER).unwrap();
    assert_eq!(rows.iter().map(|r| r.beta_target).collect::<Vec<_>>(), vec![0.5, 2.0, 8.0]);
    assert!(rows.iter().all(|r| r.n_pairs == 64 && (r.gap - (r.upper - r.lower)).abs() < 1e-12));
    let total: f64 = rows.iter().map(|r| r.gap).sum();
    assert!(total >= 0.0, "{rows:?}");
    assert!(fs::read_to_string(plot).unwrap().starts_with("<svg"));
}

#[test]
fn every_emitted_file_matches_its_schema() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), &[&[1.0, 1.0], &[0.2, -0.4]]);
    let model = s(&fixture("linear_vae_toy.json")).to_owned();
    let common = ["--model", &model, "--data", s(&data), "--n-dists", "30", "--beta-max", "4", "--report-points", "5"];
    let mut curves = Vec::new();
    for cmd in ["rd", "analytic", "oracle"] {
        let out = dir.path().join(format!("{cmd}.csv"));
        let plot = dir.path().join(format!("{cmd}.svg"));
        let mut args = vec![cmd];
        args.extend_from_slice(&common);
        if cmd == "rd" {
            args.extend_from_slice(&["--chains", "4", "--leapfrog", "3"]);
        }
        args.extend_from_slice(&["--out", s(&out), "--plot", s(&plot)]);
        ok(&rdeval(&args));
        assert!(fs::read_to_string(&plot).unwrap().contains("<polyline"));
        curves.push((cmd, out));
    }
    let demo = dir.path().join("demo");
    ok(&rdeval(&["demo2d", "--out", s(&demo)]));
    for entry in fs::read_dir(&demo).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "csv") {
            curves.push(("demo2d", p));
        }
    }
    assert_eq!(curves.len(), 6);
    for (cmd, path) in curves {
        let rows: Vec<CurveRow> = read_rows(&path, &CURVE_HEADER).unwrap();
        assert!(!rows.is_empty());
        for r in &rows {
            assert!(r.point_index >= -1 && r.beta >= 0.0 && r.rate_nats.is_finite() && r.distortion.is_finite());
            assert_eq!(r.mean_accept.is_some(), cmd == "rd");
            assert_eq!(r.ess.is_some(), cmd == "rd");
        }
        if cmd != "demo2d" {
            let per_point = rows.iter().filter(|r| r.point_index >= 0).count();
            assert_eq!(per_point, 2 * rows.iter().filter(|r| r.point_index == -1).count());
        }
    }
}
