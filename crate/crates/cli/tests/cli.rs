use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vera_core::{EnergyModel, Generator, GeneratorSpec};

fn vera(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vera"))
        .args(args)
        .current_dir(cwd)
        .env_remove("VERA_RUNS_DIR")
        .output()
        .expect("spawn vera")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

const SHORT_VERA: &[&str] = &[
    "train", "--trainer", "vera", "--data", "moons", "--steps", "30", "--seed", "3",
    "-s", "batch_size=16", "-s", "data.n=500", "-s", "data.test_n=200", "-s", "model.components=10",
];

fn with_out<'a>(base: &[&'a str], out: &'a str) -> Vec<&'a str> {
    let mut v = base.to_vec();
    v.extend(["--out", out]);
    v
}

#[test]
fn same_seed_gives_byte_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = vera(&with_out(SHORT_VERA, out), dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a/metrics.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b/metrics.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 30);
    assert!(!text.contains("wall_ms"));
}

#[test]
fn timing_flag_adds_wall_clock() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = with_out(SHORT_VERA, "t");
    args.push("--timing");
    let o = vera(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("t/metrics.jsonl")).unwrap();
    assert!(text.lines().all(|l| l.contains("\"wall_ms\"")));
}

#[test]
fn run_directory_holds_resolved_config_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = with_out(SHORT_VERA, "r");
    args.extend(["--lambda", "0"]);
    let o = vera(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("r");
    for f in ["config.txt", "metrics.jsonl", "energy.ckpt", "generator.ckpt", "eval.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let cfg = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(cfg.lines().any(|l| l == "lambda = 0"), "{cfg}");
    assert!(cfg.lines().any(|l| l == "seed = 3"));
    assert!(cfg.lines().any(|l| l.starts_with("gamma = ")), "defaults are recorded too");

    // Replaying the recorded config reproduces the run.
    let o = vera(&["train", "-c", "r/config.txt", "--out", "replay"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(run.join("metrics.jsonl")).unwrap(),
        std::fs::read(dir.path().join("replay/metrics.jsonl")).unwrap()
    );

    let o = vera(&["eval", "--run", "r"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("eval.json")).unwrap()).unwrap();
    assert_eq!(v, saved);
    assert_eq!(v["kind"], "log_lik");
    assert_eq!(v["n"], 200);

    let o = vera(&["eval", "--run", "r", "--kind", "accuracy"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_two_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = vera(&["train", "--data", "moons"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`trainer`"), "{}", stderr(&o));

    let o = vera(&["train", "--trainer", "mle", "--data", "moons", "-s", "lambda=1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`lambda`"), "{}", stderr(&o));

    let o = vera(&["train", "--trainer", "vera", "--data", "moons", "-s", "steps=many"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`steps`"), "{}", stderr(&o));

    let o = vera(&["train", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unstable_pcd_exits_with_divergence_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = vera(
        &[
            "train", "--trainer", "pcd", "--data", "moons", "--model", "mlp", "--steps", "2000",
            "-s", "lr_energy=0.1", "-s", "sgld_step=1", "-s", "sgld_noise=false",
            "-s", "model.hidden=64,64", "-s", "data.n=2000", "--out", "d",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
    // Metrics up to the failing step are kept.
    let text = std::fs::read_to_string(dir.path().join("d/metrics.jsonl")).unwrap();
    assert!(text.lines().count() > 0);
}

#[test]
fn bias_bench_has_a_row_per_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let o = vera(
        &[
            "bias-bench", "--dim", "6", "--latent", "2", "--snis", "1,5", "--hmc", "2",
            "--trials", "2", "--repeats", "20", "-o", "bias.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(dir.path().join("bias.csv")).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(str::to_owned).collect();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    let bias_col = header.iter().position(|h| h == "bias_mean").unwrap();
    let analytic: f64 = rows[0][bias_col].parse().unwrap();
    assert!(analytic.abs() < 1e-10, "{analytic}");
    for row in &rows[1..] {
        let b: f64 = row[bias_col].parse().unwrap();
        assert!(b.is_finite() && b > 0.0);
    }
}

fn save_quadratic(path: &Path, mu: &[f64]) {
    EnergyModel::quadratic(mu, 0.7).unwrap().to_container().save(path).unwrap();
}

#[test]
fn density_grid_normalizes_and_peaks_at_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    save_quadratic(&dir.path().join("q.ckpt"), &[0.5, -1.0]);
    // Spacing 0.05 puts the mean on a grid node.
    let o = vera(
        &["density-grid", "--checkpoint", "q.ckpt", "--bounds", "-5,5,-6,4", "--resolution", "201", "-o", "g.csv"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.path().join("g.csv"));
    assert_eq!(header, ["x", "y", "log_density"]);
    assert_eq!(rows.len(), 201 * 201);
    let cell = 0.05 * 0.05;
    let mass: f64 = rows.iter().map(|r| r[2].exp() * cell).sum();
    assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    let best = rows.iter().max_by(|a, b| a[2].total_cmp(&b[2])).unwrap();
    assert!((best[0] - 0.5).abs() < 1e-9 && (best[1] + 1.0).abs() < 1e-9, "{best:?}");

    let o = vera(
        &["density-grid", "--checkpoint", "q.ckpt", "--bounds", "-1,1,-1,1", "--resolution", "3", "-o", "s.csv"],
        dir.path(),
    );
    assert!(o.status.success());
    assert_eq!(read_csv(&dir.path().join("s.csv")).1.len(), 9);
}

#[test]
fn density_grid_rejects_high_dimensional_models() {
    let dir = tempfile::tempdir().unwrap();
    save_quadratic(&dir.path().join("q3.ckpt"), &[0.0, 0.0, 0.0]);
    let o = vera(
        &["density-grid", "--checkpoint", "q3.ckpt", "--bounds", "-1,1,-1,1,-1,1", "-o", "g.csv"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

fn save_pair(dir: &Path) -> Generator {
    save_quadratic(&dir.join("e.ckpt"), &[1.0, -0.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let gen = Generator::new(GeneratorSpec::Linear { latent: 2, dim: 2 }, &mut rng).unwrap();
    gen.to_container().save(dir.join("g.ckpt")).unwrap();
    gen
}

fn refine_args<'a>(n: &'a str, steps: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "refine", "--energy", "e.ckpt", "--generator", "g.ckpt", "-n", n, "--steps", steps, "--seed", "4", "-o", out,
    ]
}

#[test]
fn refine_without_steps_returns_raw_generator_samples() {
    let dir = tempfile::tempdir().unwrap();
    let gen = save_pair(dir.path());
    let o = vera(&refine_args("50", "0", "raw.csv"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = read_csv(&dir.path().join("raw.csv"));
    assert_eq!(header, ["x0", "x1"]);
    let expect = gen.sample(50, &mut ChaCha8Rng::seed_from_u64(4)).unwrap().x;
    assert_eq!(rows.len(), 50);
    for (r, row) in rows.iter().enumerate() {
        assert_eq!(row.as_slice(), expect.row(r));
    }
}

#[test]
fn refine_is_seeded_and_tunes_acceptance() {
    let dir = tempfile::tempdir().unwrap();
    save_pair(dir.path());
    for out in ["a.csv", "b.csv"] {
        let o = vera(&refine_args("400", "200", out), dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(
        std::fs::read(dir.path().join("a.csv")).unwrap(),
        std::fs::read(dir.path().join("b.csv")).unwrap()
    );
    let o = vera(&refine_args("400", "200", "c.csv"), dir.path());
    let report: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    let acc = report["acceptance_rate"].as_f64().unwrap();
    assert!((0.52..=0.62).contains(&acc), "{acc}");
}

#[test]
fn refine_rejects_mismatched_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    save_pair(dir.path());
    save_quadratic(&dir.path().join("e.ckpt"), &[0.0, 0.0, 0.0]);
    let o = vera(&refine_args("10", "0", "x.csv"), dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
