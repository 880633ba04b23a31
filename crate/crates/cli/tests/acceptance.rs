//! Acceptance suite. Prints one `ACn PASS|FAIL` line per criterion.
//!
//! `cargo test -p vera-cli --test acceptance -- AC4 AC7` runs a subset.
//! The process exits 0 even when a criterion fails unless
//! `VERA_ACCEPTANCE_STRICT=1` is set.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vera_cli::config::{KeyValues, RunConfig};
use vera_cli::tools::{bias_bench, BiasBenchConfig};
use vera_cli::train::train;
use vera_core::diffcore::{finite_difference_check, Activation, AdamConfig, AdamState, Graph, Mlp, NodeId};
use vera_core::entropy::{entropy_grad, fit_posterior, snis_score, PosteriorApprox};
use vera_core::generator::LOG_SIGMA;
use vera_core::models::EnergySpec;
use vera_core::samplers::{mala_latent_step, tune_step_size, LatentTarget, MalaState, StepTuner};
use vera_core::trainers::{pcd_gradient, variational_bound, vera_step, VeraConfig, VeraState};
use vera_core::{EnergyModel, Generator, GeneratorSpec, ParamSet, Result, Tensor};

type Check = fn() -> Result<Outcome>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

/// Mean of paired differences and its standard error over seeds.
fn paired(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn run_eval(pairs: &[(&str, String)]) -> Result<f64> {
    let mut kv = KeyValues::new();
    for (k, v) in pairs {
        kv.set(k, v.clone())?;
    }
    let cfg = RunConfig::from_kv(&kv)?;
    let dir = tempfile::tempdir()?;
    let out = train(&cfg, dir.path(), false)?;
    Ok(out.eval.expect("held-out evaluation").mean)
}

// ---------------------------------------------------------------------------

/// Random graph exercising one activation plus affine, noise injection,
/// slicing, concatenation and every reduction.
fn random_graph(seed: u64) -> (Graph, NodeId, ParamSet, Vec<(&'static str, Tensor)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let din = rng.random_range(2..5);
    let width = rng.random_range(3..7);
    let rows = rng.random_range(2..5);
    let mut g = Graph::new();
    let x = g.input("x", din);
    let eps = g.input("eps", width);
    let mlp = Mlp::new("f", &[din, width], Activation::Tanh);
    let h = mlp.build(&mut g, x);
    let h = match seed % 7 {
        0 => g.tanh(h),
        1 => g.sigmoid(h),
        2 => g.softplus(h),
        3 => g.relu(h),
        4 => g.leaky_relu(h, 0.2),
        5 => {
            let e = g.scale(h, 0.3);
            g.exp(e)
        }
        _ => {
            let s = g.softplus(h);
            g.log(s)
        }
    };
    // Sampling with fixed noise: h + exp(log_s) * eps.
    let log_s = g.param("log_s", 1, 1);
    let s = g.exp(log_s);
    let noise = g.mul(eps, s);
    let h = g.add(h, noise);
    let left = g.slice_cols(h, 0, width / 2 + 1);
    let sq = g.square(left);
    let lsm = g.log_softmax_rows(h);
    let both = g.concat_cols(&[sq, lsm]);
    let w2 = g.param("w2", both_cols(width), 2);
    let t = g.transpose(w2);
    let tt = g.transpose(t);
    let y = g.matmul(both, tt);
    let d = g.offset(y, 3.0);
    let d2 = g.square(d);
    let r = g.div(y, d2);
    let r = g.neg(r);
    let a = g.sum_rows(r);
    let b = g.sum_cols(a);
    let c = g.logsumexp_rows(y);
    let c = g.sum_all(c);
    let k = g.scalar(0.5);
    let c = g.mul(c, k);
    let out = g.sub(b, c);
    let out = g.sum_all(out);

    let mut p = mlp.init(&mut rng);
    p.insert("log_s", Tensor::scalar(rng.random_range(-1.0..0.5)));
    p.insert("w2", Tensor::randn(both_cols(width), 2, &mut rng).scale(0.5));
    let inputs = vec![("x", Tensor::randn(rows, din, &mut rng)), ("eps", Tensor::randn(rows, width, &mut rng))];
    (g, out, p, inputs)
}

fn both_cols(width: usize) -> usize {
    width / 2 + 1 + width
}

fn ac1() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut graphs = 0;
    for seed in 0..28 {
        let (g, out, p, inputs) = random_graph(seed);
        let bound: Vec<(&str, &Tensor)> = inputs.iter().map(|(n, t)| (*n, t)).collect();
        let r = finite_difference_check(&g, &p, &bound, out, 1e-5)?;
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
        graphs += 1;
    }
    // The model families' own graphs, through their public energies.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let specs = [
        EnergySpec::Mlp { dim: 3, hidden: vec![5, 4] },
        EnergySpec::Mog { dim: 2, components: 3 },
        EnergySpec::Nice { dim: 4, layers: 2, hidden: vec![6] },
        EnergySpec::Jem { dim: 3, classes: 3, hidden: vec![5] },
        EnergySpec::Quadratic { dim: 2 },
    ];
    for spec in specs {
        let m = EnergyModel::new(spec, &mut rng)?;
        let x = Tensor::randn(4, m.dim(), &mut rng);
        // Sum of energies plus the input-gradient penalty, so double
        // backprop is covered too.
        let eg = m.energy_graph();
        let mut g = eg.graph.clone();
        let f = g.sum_all(eg.f);
        let pen = g.sum_all(eg.pen);
        let out = g.add(f, pen);
        let r = finite_difference_check(&g, m.params(), &[("x", &x)], out, 1e-5)?;
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
        graphs += 1;
    }
    outcome(worst < 1e-4, format!("{graphs} graphs, {checked} entries, max rel error {worst:.2e}"))
}

fn ac2() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let energy = EnergyModel::quadratic(&[0.5, -1.0], 1.0)?;
    let gen = Generator::new(GeneratorSpec::Linear { latent: 2, dim: 2 }, &mut rng)?;
    let cfg = VeraConfig {
        lr_energy: 0.0,
        lr_generator: 2e-3,
        lr_posterior: 2e-3,
        ..VeraConfig::default()
    };
    let mut st = VeraState::new(energy, gen, &cfg)?;
    let lz = st.energy.log_partition_analytic().expect("quadratic has analytic log Z");
    let x = Tensor::zeros(cfg.batch_size, 2);
    let mut max_excess = f64::NEG_INFINITY;
    for s in 1..=3000 {
        vera_step(&mut st, &x, &cfg, &mut rng)?;
        if s % 250 == 0 {
            let (b, se) = variational_bound(&st.energy, &st.generator, 20_000, &mut rng)?;
            max_excess = max_excess.max((b - lz) / se);
        }
    }
    let (b, se) = variational_bound(&st.energy, &st.generator, 200_000, &mut rng)?;
    let gap = lz - b;
    max_excess = max_excess.max(-gap / se);
    outcome(
        gap < 0.05 && max_excess <= 3.0,
        format!("log Z {lz:.4}, final bound {b:.4} (se {se:.1e}), gap {gap:.4}, max excess {max_excess:.2} se"),
    )
}

fn ac3() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..20 {
        let latent = rng.random_range(1..5);
        let dim = rng.random_range(1..8);
        let sigma = rng.random_range(0.1..2.0);
        let mu = Tensor::randn(1, dim, &mut rng);
        let g = Generator::linear(&Tensor::zeros(dim, latent), mu.data(), sigma)?;
        let b = g.sample(16, &mut rng)?;
        let exact = g.as_linear()?.score(&b.x);
        for k in [1, 2, 20, 200] {
            let eta = rng.random_range(0.05..5.0);
            let p = PosteriorApprox::shared(latent, eta)?;
            let s = snis_score(&g, &p, &b.x, &b.z0, k, &mut rng)?;
            worst = worst.max(s.score.max_abs_diff(&exact));
            cases += 1;
        }
    }
    outcome(worst < 1e-10, format!("{cases} (k, eta) cases, max abs error {worst:.2e}"))
}

fn ac4() -> Result<Outcome> {
    let cfg = BiasBenchConfig {
        snis: vec![20],
        hmc: vec![2, 500],
        repeats: 5000,
        ..BiasBenchConfig::default()
    };
    let rows = bias_bench(&cfg)?;
    let get = |est: &str, p: usize| rows.iter().find(|r| r.estimator == est && r.param == p).unwrap();
    let (snis, h2, h500) = (get("snis", 20), get("hmc", 2), get("hmc", 500));
    outcome(
        snis.bias_mean < h2.bias_mean && h500.bias_mean < h2.bias_mean,
        format!(
            "SNIS k=20 {:.3}, HMC B=2 {:.3}, HMC B=500 {:.3}",
            snis.bias_mean, h2.bias_mean, h500.bias_mean
        ),
    )
}

fn ac5() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 3;
    let g = Generator::linear(&Tensor::zeros(dim, 2), &[0.1, -0.4, 0.7], 0.8)?;
    let p = PosteriorApprox::shared(2, 1.0)?;
    let b = g.sample(10_000, &mut rng)?;
    let s = snis_score(&g, &p, &b.x, &b.z0, 4, &mut rng)?;
    let d_sigma = entropy_grad(&g, &b.z0, &b.eps, &s.score)?.get(LOG_SIGMA).unwrap().item();
    let ok_sigma = (d_sigma - dim as f64).abs() <= 0.05 * dim as f64;

    let (w, sigma) = (1.3, 0.6);
    let g = Generator::linear(&Tensor::scalar(w), &[0.2], sigma)?;
    let b = g.sample(10_000, &mut rng)?;
    let score = g.as_linear()?.score(&b.x);
    let d_w = entropy_grad(&g, &b.z0, &b.eps, &score)?.get("gen.w").unwrap().item();
    let oracle = w / (w * w + sigma * sigma);
    let ok_w = (d_w - oracle).abs() <= 0.1 * oracle;
    outcome(
        ok_sigma && ok_w,
        format!("dH/dlog sigma {d_sigma:.3} vs {dim}, dH/dw {d_w:.4} vs {oracle:.4}"),
    )
}

fn ac6() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = Tensor::new(3, 2, vec![0.4, -0.3, 0.1, 0.5, -0.2, 0.2])?;
    let mut g = Generator::linear(&w, &[0.0; 3], 0.3)?;
    let mut p = PosteriorApprox::shared(2, 0.1)?;
    let mut adam = AdamState::new(AdamConfig::gan(0.01));
    let h0 = g.as_linear()?.entropy();
    for _ in 0..100 {
        fit_posterior(&mut p, &g, &mut adam, 1, 64, 1, &mut rng)?;
        let b = g.sample(256, &mut rng)?;
        let s = snis_score(&g, &p, &b.x, &b.z0, 20, &mut rng)?;
        let grad = entropy_grad(&g, &b.z0, &b.eps, &s.score)?;
        for (name, t) in grad.iter() {
            g.params_mut().get_mut(name).unwrap().axpy(0.01, t);
        }
    }
    let h1 = g.as_linear()?.entropy();
    outcome(h1 > h0, format!("analytic entropy {h0:.4} -> {h1:.4}"))
}

fn ac7() -> Result<Outcome> {
    let seeds = [0u64, 1, 2];
    let mut pass = true;
    let mut lines = Vec::new();
    for data in ["moons", "circles", "rings"] {
        let run = |trainer: &str, seed: u64, extra: &[(&str, &str)]| -> Result<f64> {
            let mut kv: Vec<(&str, String)> = vec![
                ("trainer", trainer.into()),
                ("data", data.into()),
                ("seed", seed.to_string()),
                ("steps", "2000".into()),
                ("batch_size", "100".into()),
                ("model", "mog".into()),
                ("model.components", "100".into()),
                ("lr_energy", "1e-3".into()),
                ("beta1", "0".into()),
                ("beta2", "0.9".into()),
            ];
            kv.extend(extra.iter().map(|(k, v)| (*k, v.to_string())));
            run_eval(&kv)
        };
        let vera = |lambda: &'static str| {
            move |s| run("vera", s, &[("lambda", lambda), ("lr_generator", "2e-3"), ("lr_posterior", "2e-3")])
        };
        let collect = |f: &dyn Fn(u64) -> Result<f64>| seeds.iter().map(|&s| f(s)).collect::<Result<Vec<_>>>();
        let mle = collect(&|s| run("mle", s, &[]))?;
        let v1 = collect(&vera("1"))?;
        let v0 = collect(&vera("0"))?;
        let pcd = collect(&|s| run("pcd", s, &[("sgld_step", "0.1"), ("sgld_steps", "20")]))?;

        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mut parts = vec![format!(
            "{data}: MLE {:.3} VERA1 {:.3} VERA0 {:.3} PCD {:.3}",
            mean(&mle),
            mean(&v1),
            mean(&v0),
            mean(&pcd)
        )];
        for (name, a, b) in [("MLE-VERA1", &mle, &v1), ("VERA1-VERA0", &v1, &v0), ("VERA1-PCD", &v1, &pcd)] {
            let (d, se) = paired(a, b);
            let ok = d > 2.0 * se && d >= 0.0;
            pass &= ok;
            parts.push(format!("{name} {d:.3}±{se:.3}{}", if ok { "" } else { " (x)" }));
        }
        lines.push(parts.join(", "));
    }
    outcome(pass, lines.join("; "))
}

fn ac8() -> Result<Outcome> {
    let run = |lambda: &str, seed: u64| {
        run_eval(&[
            ("trainer", "vera".into()),
            ("data", "moons".into()),
            ("seed", seed.to_string()),
            ("steps", "1000".into()),
            ("batch_size", "64".into()),
            ("model", "nice".into()),
            ("model.layers", "4".into()),
            ("model.hidden", "32,32".into()),
            ("lambda", lambda.into()),
            ("lr_energy", "1e-3".into()),
            ("lr_generator", "2e-3".into()),
            ("lr_posterior", "2e-3".into()),
        ])
    };
    let v1 = (0..3).map(|s| run("1", s)).collect::<Result<Vec<_>>>()?;
    let v0 = (0..3).map(|s| run("0", s)).collect::<Result<Vec<_>>>()?;
    let (d, se) = paired(&v1, &v0);
    outcome(
        v1.iter().zip(&v0).all(|(a, b)| a > b),
        format!("exact held-out log-lik lambda=1 {v1:.3?} vs lambda=0 {v0:.3?}, diff {d:.3}±{se:.3}"),
    )
}

fn ac9() -> Result<Outcome> {
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let e = EnergyModel::quadratic(&[0.4], 0.9)?;
    let g = Generator::new(GeneratorSpec::Mlp { latent: 1, dim: 1, hidden: vec![16] }, &mut r)?;
    let t = LatentTarget::new(&e, &g)?.with_prior(true);

    // Grid quadrature of the latent target over (z, eps), pushed to x.
    let res = 1200;
    let (lo, hi) = (-7.0, 7.0);
    let h = (hi - lo) / (res - 1) as f64;
    let axis: Vec<f64> = (0..res).map(|i| lo + h * i as f64).collect();
    let gz = g.mean(&Tensor::col_vector(&axis))?;
    let sig = g.sigma();
    let mut pts = Vec::with_capacity(res * res);
    for (i, z) in axis.iter().enumerate() {
        for ep in &axis {
            let x = gz.get(i, 0) + sig * ep;
            let f = -0.5 * ((x - 0.4) / 0.9f64).powi(2);
            pts.push((x, (f - 0.5 * (z * z + ep * ep)).exp()));
        }
    }
    let total: f64 = pts.iter().map(|p| p.1).sum();
    let mean = pts.iter().map(|(x, w)| x * w).sum::<f64>() / total;
    let sd = (pts.iter().map(|(x, w)| (x - mean).powi(2) * w).sum::<f64>() / total).sqrt();
    let (blo, bhi, k) = (mean - 4.0 * sd, mean + 4.0 * sd, 40);
    let bin = |x: f64| (x >= blo && x < bhi).then(|| ((x - blo) / (bhi - blo) * k as f64) as usize);
    let mut target = vec![0.0; k];
    for (x, w) in &pts {
        if let Some(i) = bin(*x) {
            target[i] += w / total;
        }
    }

    let n = 100_000;
    let mut st = MalaState::from_prior(&t, n, 0.5, &mut r)?;
    tune_step_size(&t, &mut st, &StepTuner { burn_in: 200, ..StepTuner::default() }, &mut r)?;
    for _ in 0..200 {
        mala_latent_step(&t, &mut st, &mut r)?;
    }
    let rate = st.acceptance_rate();
    let mut emp = vec![0.0; k];
    for x in st.x().data() {
        if let Some(i) = bin(*x) {
            emp[i] += 1.0 / n as f64;
        }
    }
    let tv = 0.5 * emp.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>();
    outcome(
        tv < 0.05 && (0.52..=0.62).contains(&rate),
        format!("TV {tv:.4}, tuned acceptance {rate:.3} (delta {:.3})", st.delta),
    )
}

fn vera_bin(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_vera"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn vera")
}

fn ac10() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut max_abs: f64 = 0.0;
    let specs = [
        EnergySpec::Mlp { dim: 3, hidden: vec![8, 8] },
        EnergySpec::Mog { dim: 3, components: 4 },
        EnergySpec::Jem { dim: 3, classes: 2, hidden: vec![8] },
    ];
    for spec in specs {
        let e = EnergyModel::new(spec, &mut rng)?;
        let x = Tensor::randn(32, 3, &mut rng);
        let (g, _, _) = pcd_gradient(&e, &x, &x, 0.0)?;
        for (_, t) in g.iter() {
            max_abs = t.data().iter().fold(max_abs, |m, v| m.max(v.abs()));
        }
    }
    let dir = tempfile::tempdir()?;
    let o = vera_bin(
        &[
            "train", "--trainer", "pcd", "--data", "moons", "--model", "mlp", "--steps", "2000",
            "-s", "lr_energy=0.1", "-s", "sgld_step=1", "-s", "sgld_noise=false",
            "-s", "model.hidden=64,64", "-s", "data.n=2000", "--out", "run",
        ],
        dir.path(),
    );
    let code = o.status.code();
    let msg = String::from_utf8_lossy(&o.stderr);
    outcome(
        max_abs == 0.0 && code == Some(3),
        format!("max |grad| on identical batches {max_abs:e}; unstable run exit {code:?}: {}", msg.trim()),
    )
}

fn ac11() -> Result<Outcome> {
    let run = |seed: u64, beta: &str, unconditional: &str| {
        run_eval(&[
            ("trainer", "jem-ssl".into()),
            ("data", "blobs".into()),
            ("data.n", "5556".into()),
            ("data.dim", "10".into()),
            ("data.separation", "3".into()),
            ("split.validation", "0.1".into()),
            ("split.per_class", "10".into()),
            ("seed", seed.to_string()),
            ("steps", "1000".into()),
            ("model.hidden", "64,64".into()),
            ("generator.latent", "4".into()),
            ("labeled_batch", "64".into()),
            ("unlabeled_batch", "64".into()),
            ("lambda", "1e-4".into()),
            ("lr_energy", "1e-3".into()),
            ("lr_generator", "2e-3".into()),
            ("lr_posterior", "2e-3".into()),
            ("beta", beta.into()),
            ("unconditional", unconditional.into()),
        ])
    };
    let seeds = 0..5u64;
    let ssl = seeds.clone().map(|s| run(s, "-1", "1")).collect::<Result<Vec<_>>>()?;
    let sup = seeds.map(|s| run(s, "0", "0")).collect::<Result<Vec<_>>>()?;
    let (d, se) = paired(&ssl, &sup);
    outcome(
        d >= 0.0 && d > 2.0 * se,
        format!("validation accuracy SSL {ssl:.3?} vs supervised {sup:.3?}, diff {d:.4}±{se:.4}"),
    )
}

fn ac12() -> Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let runs: [&[&str]; 4] = [
        &["--trainer", "vera", "--data", "rings", "--steps", "100", "--seed", "12"],
        &["--trainer", "pcd", "--data", "circles", "--steps", "100", "--seed", "12"],
        &["--trainer", "mle", "--data", "moons", "--steps", "100", "--seed", "12", "--model", "nice"],
        &["--trainer", "jem-ssl", "--data", "blobs", "--steps", "50", "--seed", "12"],
    ];
    let mut same = 0;
    let mut notes = Vec::new();
    for (i, args) in runs.iter().enumerate() {
        let mut bytes = Vec::new();
        for rep in ["a", "b"] {
            let out = format!("{i}{rep}");
            let mut full = vec!["train"];
            full.extend_from_slice(args);
            full.extend(["--out", &out]);
            let o = vera_bin(&full, dir.path());
            if !o.status.success() {
                notes.push(format!("{} failed: {}", args[1], String::from_utf8_lossy(&o.stderr).trim()));
            }
            bytes.push(std::fs::read(dir.path().join(&out).join("metrics.jsonl")).unwrap_or_default());
        }
        if !bytes[0].is_empty() && bytes[0] == bytes[1] {
            same += 1;
        } else {
            notes.push(format!("{} metrics differ", args[1]));
        }
    }
    notes.insert(0, format!("{same}/{} trainers byte-identical", runs.len()));
    outcome(same == runs.len(), notes.join("; "))
}

fn main() {
    let criteria: [(&str, Check); 12] = [
        ("AC1", ac1),
        ("AC2", ac2),
        ("AC3", ac3),
        ("AC4", ac4),
        ("AC5", ac5),
        ("AC6", ac6),
        ("AC7", ac7),
        ("AC8", ac8),
        ("AC9", ac9),
        ("AC10", ac10),
        ("AC11", ac11),
        ("AC12", ac12),
    ];
    // libtest-style flags from `cargo test` are not filters.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| f == name) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "{name} {} {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    let strict = std::env::var("VERA_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 {
        println!("{failed} criteria failed");
        if strict {
            std::process::exit(1);
        }
    }
}
