//! Desk-scale acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.
//!
//! Positional arguments select criteria by number (`cargo test --test
//! acceptance -- 4 6`); with none, all run. The benchmark criteria train 35
//! models at full size and take the better part of an hour on one core.

use std::collections::BTreeMap;
use std::fs;
use std::time::Instant;

use rand::Rng;

use qdsb_cli::{cmd_train, generate_task, mean_std, ConfigArgs, DataArgs, Task, TaskData, TrainArgs};
use qdsb_core::anchors::{coverage_radius_of, farthest_first_from};
use qdsb_core::bridge::score_target;
use qdsb_core::datasets::{gen_eight_gaussians, gen_moons, PointCloud};
use qdsb_core::evaluate::{median_bandwidth, mmd};
use qdsb_core::model::Mlp;
use qdsb_core::rng::rng_from_seed;
use qdsb_core::transport::{cost_matrix, sinkhorn, CostKind, SinkhornOptions};
use qdsb_core::trainer::{anchor_inits, train_with, CouplingMode, MmdEvaluator, TrainConfig};
use qdsb_core::verify::{check_kcenter_approx, check_value_convergence, run_suite, SuiteScale};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const TASKS: [Task; 3] = [Task::EightGaussiansMoons, Task::GaussianMoons, Task::GaussianEightGaussians];
const MMD_BAR: f64 = 0.05;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

/// Final held-out MMD and per-epoch losses of one full-size run.
struct Run {
    mmd: f64,
    losses: Vec<f64>,
}

/// Caches full-size runs shared between the benchmark criteria.
#[derive(Default)]
struct Runs {
    data: BTreeMap<&'static str, TaskData>,
    done: BTreeMap<(&'static str, &'static str, usize, u64), Run>,
}

impl Runs {
    fn data(&mut self, task: Task) -> &TaskData {
        self.data
            .entry(task.name())
            .or_insert_with(|| generate_task(task, 16384, 4096, 0).expect("task data"))
    }

    fn get(&mut self, task: Task, coupling: CouplingMode, k: usize, seed: u64) -> &Run {
        let key = (task.name(), mode_label(coupling), k, seed);
        if !self.done.contains_key(&key) {
            let config = TrainConfig {
                coupling_mode: coupling,
                anchors_k: k,
                seed,
                eval_every: 500,
                ..TrainConfig::default()
            };
            let data = self.data(task).clone();
            let start = Instant::now();
            let mut evaluator = MmdEvaluator::new(&data.source_eval, &data.target_eval, &config).expect("evaluator");
            let out = train_with(&config, &data.source_train, &data.target_train, &mut evaluator).expect("training");
            let run = Run {
                mmd: out.metrics.last_mmd().expect("final evaluation"),
                losses: out.epoch_losses,
            };
            eprintln!(
                "  {} {} k={k} seed={seed}: mmd {:.4} ({:.0} s)",
                task.name(),
                mode_label(coupling),
                run.mmd,
                start.elapsed().as_secs_f64()
            );
            self.done.insert(key, run);
        }
        &self.done[&key]
    }

    fn mean_mmd(&mut self, task: Task, coupling: CouplingMode, k: usize) -> (f64, f64) {
        let v: Vec<f64> = SEEDS.iter().map(|&s| self.get(task, coupling, k, s).mmd).collect();
        mean_std(&v)
    }
}

fn mode_label(c: CouplingMode) -> &'static str {
    match c {
        CouplingMode::Qdsb => "qdsb",
        CouplingMode::MinibatchOt => "minibatch-ot",
        CouplingMode::Independent => "independent",
    }
}

fn criterion_1(runs: &mut Runs) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut trend_ok = true;
    for task in TASKS {
        let (m, s) = runs.mean_mmd(task, CouplingMode::Qdsb, 256);
        ok &= m <= MMD_BAR;
        parts.push(format!("{} {m:.4} ± {s:.4}", task.name()));
        for &seed in &SEEDS {
            let l = &runs.get(task, CouplingMode::Qdsb, 256, seed).losses;
            let head = l[..10].iter().sum::<f64>() / 10.0;
            let tail = l[l.len() - 10..].iter().sum::<f64>() / 10.0;
            trend_ok &= tail < head;
        }
    }
    parts.push(format!("loss falls on every run: {trend_ok}"));
    outcome(ok && trend_ok, format!("final MMD ≤ {MMD_BAR}: {}", parts.join("; ")))
}

fn criterion_2(runs: &mut Runs) -> Outcome {
    let task = Task::EightGaussiansMoons;
    let (m256, _) = runs.mean_mmd(task, CouplingMode::Qdsb, 256);
    let (m1, _) = runs.mean_mmd(task, CouplingMode::Qdsb, 1);
    let data = runs.data(task).clone();
    let mut medians = Vec::new();
    for k in [1usize, 4, 16, 64, 256, 1024] {
        let mut radii: Vec<f64> = SEEDS
            .iter()
            .map(|&seed| {
                let (i0, i1) = anchor_inits(seed, 0, data.source_train.len(), data.target_train.len());
                let a0 = farthest_first_from(&data.source_train, k, i0).unwrap();
                let a1 = farthest_first_from(&data.target_train, k, i1).unwrap();
                coverage_radius_of(&data.source_train, &a0)
                    .unwrap()
                    .max(coverage_radius_of(&data.target_train, &a1).unwrap())
            })
            .collect();
        radii.sort_by(f64::total_cmp);
        medians.push(radii[radii.len() / 2]);
    }
    let monotone = medians.windows(2).all(|w| w[1] <= w[0]);
    let shown: Vec<String> = medians.iter().map(|r| format!("{r:.3}")).collect();
    outcome(
        m256 < m1 && monotone,
        format!(
            "mmd k=256 {m256:.4} vs k=1 {m1:.4}; median radius over k=1..1024 [{}]",
            shown.join(", ")
        ),
    )
}

fn criterion_3(runs: &mut Runs) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for task in TASKS {
        let (q, _) = runs.mean_mmd(task, CouplingMode::Qdsb, 256);
        let (i, _) = runs.mean_mmd(task, CouplingMode::Independent, 256);
        ok &= q <= i;
        parts.push(format!("{} qdsb {q:.4} vs independent {i:.4}", task.name()));
    }
    outcome(ok, parts.join("; "))
}

fn criterion_4() -> Outcome {
    let report = run_suite(&SuiteScale::default()).expect("suite");
    let endpoint = report.records.iter().filter(|r| r.check == "endpoint_pair").count();
    let mut ratios: Vec<f64> = report
        .records
        .iter()
        .filter(|r| r.check == "kcenter")
        .map(|r| r.ratio.unwrap())
        .collect();
    let tight = check_kcenter_approx(&PointCloud::from_scalars(&[0.0, 1.0, 2.0, 10.0]).unwrap(), 2).unwrap();
    for i in 0..20 {
        let mut rng = rng_from_seed(900 + i);
        let n = 12;
        let c = PointCloud::from_flat((0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect(), 2).unwrap();
        let rec = check_kcenter_approx(&c, 4).unwrap();
        ratios.push(rec.ratio.unwrap());
    }
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    let recheck = report.records.iter().all(|r| r.recheck());
    let tight_ratio = tight.ratio.unwrap();
    let ok = report.all_passed()
        && endpoint >= 200
        && worst <= 2.0 + 1e-12
        && (tight_ratio - 2.0).abs() < 1e-12
        && recheck;
    outcome(
        ok,
        format!(
            "{} violations over {endpoint} endpoint instances; k-center worst ratio {worst:.4} over {} instances; tight instance ratio {tight_ratio}",
            report.violations(),
            ratios.len()
        ),
    )
}

fn criterion_5() -> Outcome {
    let c0 = gen_eight_gaussians(256, 31);
    let c1 = gen_moons(256, 32);
    let report = check_value_convergence(&c0, &c1, &[1, 4, 16, 64, 256], 0.125, 7).expect("value gap");
    let gap = |k: usize| report.records.iter().find(|r| r.k == k).unwrap().value_gap.unwrap();
    let (g1, g64, gn) = (gap(1), gap(64), gap(256));
    outcome(
        g64 < g1 && gn <= 1e-8,
        format!("gap k=1 {g1:.4e}, k=64 {g64:.4e}, k=n {gn:.2e}"),
    )
}

fn naive_mmd(x: &PointCloud, y: &PointCloud, h: f64) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
        (-d2 / (2.0 * h * h)).exp()
    };
    let mean = |p: &PointCloud, q: &PointCloud| {
        let mut s = 0.0;
        for i in 0..p.len() {
            for j in 0..q.len() {
                s += k(p.row(i), q.row(j));
            }
        }
        s / (p.len() * q.len()) as f64
    };
    (mean(x, x) + mean(y, y) - 2.0 * mean(x, y)).max(0.0).sqrt()
}

fn bridge_log_density(x: &[f64], x0: &[f64], x1: &[f64], t: f64, sigma: f64) -> f64 {
    let var = sigma * sigma * t * (1.0 - t);
    let d2: f64 = (0..x.len())
        .map(|k| {
            let m = t * x1[k] + (1.0 - t) * x0[k];
            (x[k] - m) * (x[k] - m)
        })
        .sum();
    -d2 / (2.0 * var) - 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI * var).ln()
}

fn criterion_6() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;

    let line = PointCloud::from_scalars(&[0.0, 1.0]).unwrap();
    let c = cost_matrix(&line, &line, CostKind::Euclidean).unwrap();
    let plan = sinkhorn(c.view(), &[0.5; 2], &[0.5; 2], 1.0, SinkhornOptions::default()).unwrap();
    let e = std::f64::consts::E;
    let closed = e / (2.0 * (1.0 + e));
    let diag_err = (plan.plan[[0, 0]] - 0.365529).abs().max((plan.plan[[1, 1]] - closed).abs());
    ok &= diag_err < 1e-6;
    parts.push(format!("2x2 diagonal {:.6}", plan.plan[[0, 0]]));

    let mut rng = rng_from_seed(61);
    let mut worst_marg: f64 = 0.0;
    for n in [2usize, 9, 64, 128, 256] {
        for tau in [0.05, 0.125, 1.0, 5.0] {
            let a = PointCloud::from_flat((0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect(), 2).unwrap();
            let b = PointCloud::from_flat((0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect(), 2).unwrap();
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let mu: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let nu = vec![1.0 / n as f64; n];
            let c = cost_matrix(&a, &b, CostKind::SqEuclidean).unwrap();
            let p = sinkhorn(c.view(), &mu, &nu, tau, SinkhornOptions::default()).unwrap();
            let rows: f64 = p.row_sums().iter().zip(&mu).map(|(r, m)| (r - m).abs()).sum();
            let cols: f64 = p.col_sums().iter().zip(&nu).map(|(r, m)| (r - m).abs()).sum();
            worst_marg = worst_marg.max(rows).max(cols);
        }
    }
    ok &= worst_marg < 1e-9;
    parts.push(format!("marginal L1 {worst_marg:.1e}"));

    let mut m = Mlp::new(2, 17).unwrap();
    for p in m.params_mut() {
        *p += rng.random_range(-0.1..0.1);
    }
    let b = 5;
    let ts: Vec<f64> = (0..b).map(|_| rng.random_range(0.0..1.0)).collect();
    let xs: Vec<f64> = (0..2 * b).map(|_| rng.random_range(-2.0..2.0)).collect();
    let up: Vec<f64> = (0..2 * b).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |m: &Mlp| -> f64 {
        let out = m.forward_batch(&ts, &xs);
        out.iter().zip(&up).map(|(o, u)| o * u).sum::<f64>() / b as f64
    };
    let analytic = m.gradients(&ts, &xs, &up).unwrap();
    let h = 1e-5;
    let mut worst_grad: f64 = 0.0;
    for k in 0..m.num_params() {
        let orig = m.params()[k];
        m.params_mut()[k] = orig + h;
        let plus = objective(&m);
        m.params_mut()[k] = orig - h;
        let minus = objective(&m);
        m.params_mut()[k] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
        worst_grad = worst_grad.max((analytic[k] - numeric).abs() / scale);
    }
    ok &= worst_grad < 1e-4 && m.num_params() >= 200;
    parts.push(format!("MLP gradient rel err {worst_grad:.1e} over {} coords", m.num_params()));

    let mut worst_mmd: f64 = 0.0;
    let mut zero = true;
    for (n, mm, s) in [(40, 30, 1u64), (128, 128, 2), (7, 90, 3)] {
        let x = gen_eight_gaussians(n, s);
        let y = gen_moons(mm, s + 100);
        let hb = median_bandwidth(&y, 4096).unwrap();
        worst_mmd = worst_mmd.max((mmd(&x, &y, hb).unwrap() - naive_mmd(&x, &y, hb)).abs());
        zero &= mmd(&x, &x, hb).unwrap() == 0.0;
        let shuffled: Vec<usize> = (0..n).rev().collect();
        zero &= mmd(&x, &x.select(&shuffled), hb).unwrap() < 1e-12;
    }
    ok &= worst_mmd < 1e-12 && zero;
    parts.push(format!("MMD vs naive {worst_mmd:.1e}, identical sets zero: {zero}"));

    let mut worst_score: f64 = 0.0;
    for _ in 0..200 {
        let x0 = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let x1 = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let t = rng.random_range(0.05..0.95);
        let sigma = rng.random_range(0.2..1.0);
        let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let s = score_target(&x, &x0, &x1, t, sigma).unwrap();
        for k in 0..2 {
            let h = 1e-5;
            let (mut xp, mut xm) = (x, x);
            xp[k] += h;
            xm[k] -= h;
            let fd = (bridge_log_density(&xp, &x0, &x1, t, sigma) - bridge_log_density(&xm, &x0, &x1, t, sigma)) / (2.0 * h);
            worst_score = worst_score.max((fd - s[k]).abs() / s[k].abs().max(1.0));
        }
    }
    ok &= worst_score < 1e-5;
    parts.push(format!("bridge score vs log-density FD {worst_score:.1e}"));
    outcome(ok, parts.join("; "))
}

fn criterion_7() -> Outcome {
    let root = tempfile::tempdir().expect("tempdir");
    let args = |name: &str| TrainArgs {
        data: DataArgs {
            task: Task::EightGaussiansMoons,
            data: None,
            source: None,
            target: None,
            n: 4096,
            n_eval: 1024,
            data_seed: 0,
        },
        seeds: "3".into(),
        out: root.path().join(name),
        config: ConfigArgs {
            epochs: Some(6),
            anchors_k: Some(64),
            refresh_epochs: Some(3),
            eval_every: Some(2),
            ..ConfigArgs::default()
        },
    };
    let a = cmd_train(&args("a")).expect("first run");
    let b = cmd_train(&args("b")).expect("second run");
    let read = |r: &qdsb_cli::TrainReport| {
        let seed = &r.seeds[0];
        let params = fs::read_to_string(&seed.checkpoint_path).unwrap();
        let metrics = fs::read_to_string(&seed.metrics_path).unwrap();
        let mmd_column: Vec<String> = metrics
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().to_string())
            .collect();
        (params, mmd_column)
    };
    let (pa, ma) = read(&a);
    let (pb, mb) = read(&b);
    outcome(
        pa == pb && ma == mb && ma.len() == 3,
        format!("identical checkpoints: {}; identical mmd columns: {} ({} rows)", pa == pb, ma == mb, ma.len()),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut runs = Runs::default();
    let criteria: [(usize, &str, &dyn Fn(&mut Runs) -> Outcome); 7] = [
        (4, "theory suite", &|_| criterion_4()),
        (5, "value-gap shrinkage", &|_| criterion_5()),
        (6, "numerical kernels", &|_| criterion_6()),
        (7, "determinism", &|_| criterion_7()),
        (1, "toy benchmarks", &criterion_1),
        (2, "coupling ablation", &criterion_2),
        (3, "baseline ordering", &criterion_3),
    ];
    let mut lines = Vec::new();
    for (n, name, run) in criteria {
        if !wants(n) {
            continue;
        }
        let start = Instant::now();
        let o = run(&mut runs);
        let line = format!(
            "{} criterion {n} ({name}): {} [{:.1} s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        println!("{line}");
        lines.push((n, o.passed, line));
    }
    lines.sort_by_key(|l| l.0);
    println!("\nsummary:");
    for (_, _, line) in &lines {
        println!("{line}");
    }
    if lines.iter().any(|l| !l.1) {
        std::process::exit(1);
    }
}
