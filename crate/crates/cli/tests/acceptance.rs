//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p mdcs-cli --test acceptance`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use mdcs_core::analysis::{
    convergence_sweep, fit_rate, stability_sweep, suboptimality, TransferConfig, TransferSetup,
};
use mdcs_core::numerics::sign;
use mdcs_core::optimizers::{
    averaged_iterate, mdcs_mi_step, mdcs_mi_update_with, mi_update, run, Algorithm,
    AttackConfig, BetaSchedule, CapRule, OptimizerState, StepSchedule, Trajectory,
};
use mdcs_core::problems::{
    classifier_attack_oracle, make_blobs, max_gradient_error, quadratic_oracle,
    random_quadratic_instance, reddi_counterexample, sign_oscillation_fixture, train_classifier,
    Activation, ClassifierKind, LinearObjective, QuadraticSpec, ReddiCounterexample, TrainHyper,
};
use mdcs_core::{BoxConstraint, DiagScaling, GradientOracle, Point, SeededRng};
use rayon::prelude::*;

const QUADRATIC_STREAM: u64 = 0x7175_6164;
const REDDI_STREAM: u64 = 0x7265_6464;
const M2: f64 = 1000.0;

/// Iterates checked and found outside their box, summed over criteria 1–7.
#[derive(Default)]
struct Membership {
    recorded: usize,
    outside: usize,
}

impl Membership {
    fn points(&mut self, feasible: &BoxConstraint, points: &[Point]) {
        self.recorded += points.len();
        self.outside += points.iter().filter(|p| !feasible.contains(p)).count();
    }

    fn trajectory(&mut self, feasible: &BoxConstraint, traj: &Trajectory) {
        self.points(feasible, &traj.points);
    }
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn mdcs_base() -> AttackConfig {
    AttackConfig {
        algorithm: Algorithm::MdcsMi,
        ..AttackConfig::default()
    }
}

/// Drives MDCS-MI step by step and checks the cap and momentum lemmas on
/// every iteration. Returns the number of violated checks.
fn lemma_run(
    oracle: &mut dyn GradientOracle,
    feasible: &BoxConstraint,
    cfg: &AttackConfig,
    member: &mut Membership,
) -> usize {
    let mut state = OptimizerState::new(feasible.dim());
    let mut x = feasible.center().clone();
    let mut points = vec![x.clone()];
    let mut bad = 0;
    for _ in 0..cfg.total_iters {
        let before = state.d.clone();
        let step = mdcs_mi_step(&mut state, &x, oracle, feasible, cfg).expect("oracle evaluates");
        for i in 0..feasible.dim() {
            let d = state.d[i];
            bad += usize::from(!(d <= before[i] && before[i] <= 1.0));
            bad += usize::from(d < 1.0 / M2);
            bad += usize::from(state.m[i].abs() > M2);
        }
        x = step.outcome.next;
        points.push(x.clone());
    }
    member.points(feasible, &points);
    bad
}

fn criterion_1(member: &mut Membership) -> Verdict {
    let mut violations = 0;
    let mut runs = 0;
    for seed in 0..25u64 {
        let mut rng = SeededRng::new(seed, QUADRATIC_STREAM);
        let spec = QuadraticSpec {
            dim: 2 + rng.index(19),
            ..QuadraticSpec::default()
        };
        let (mut q, feasible) = random_quadratic_instance(&mut rng, &spec).unwrap();
        let cfg = AttackConfig {
            epsilon: spec.radius,
            total_iters: 200,
            schedule: if seed % 2 == 0 { StepSchedule::Theorem } else { StepSchedule::Practice },
            seed,
            ..mdcs_base()
        };
        violations += lemma_run(&mut q, &feasible, &cfg, member);
        runs += 1;
    }
    let transfer = TransferConfig::default();
    for seed in 0..5u64 {
        let setup = TransferSetup::build(&transfer, seed).unwrap();
        for k in 0..5 {
            let x = &setup.clean[k % setup.clean.len()];
            let feasible = BoxConstraint::new(x.clone(), transfer.epsilon, 0.0, 1.0).unwrap();
            let mut oracle =
                classifier_attack_oracle(Arc::clone(&setup.surrogate), setup.labels[k]).unwrap();
            let cfg = AttackConfig {
                epsilon: transfer.epsilon,
                total_iters: 100,
                schedule: if k % 2 == 0 { StepSchedule::Theorem } else { StepSchedule::Practice },
                seed,
                ..mdcs_base()
            };
            violations += lemma_run(&mut oracle, &feasible, &cfg, member);
            runs += 1;
        }
    }
    verdict(violations == 0, format!("{runs} runs, {violations} violations"))
}

fn criterion_2(member: &mut Membership) -> Verdict {
    let mut rng = SeededRng::new(0, QUADRATIC_STREAM);
    let spec = QuadraticSpec::default();
    let (mut q, feasible) = random_quadratic_instance(&mut rng, &spec).unwrap();
    let cfg = AttackConfig {
        epsilon: spec.radius,
        schedule: StepSchedule::Theorem,
        ..mdcs_base()
    };
    let t_values = [16, 64, 256, 1024, 4096];
    let rows = convergence_sweep(&mut q, &feasible, &cfg, &t_values).unwrap();
    for &t in &t_values {
        let traj = run(&mut q, &feasible, &AttackConfig { total_iters: t, ..cfg.clone() }).unwrap();
        member.trajectory(&feasible, &traj);
    }
    let data: BTreeMap<usize, f64> = rows.iter().map(|r| (r.total_iters, r.averaged)).collect();
    let below = rows.iter().filter(|r| r.averaged <= r.bound.corrected).count();
    match fit_rate(&data) {
        Ok(fit) => {
            let slope_ok = (-0.65..=-0.35).contains(&fit.exponent);
            let pass = slope_ok && fit.r_squared >= 0.9 && below == rows.len();
            verdict(
                pass,
                format!(
                    "slope {:.3} (window [-0.65, -0.35]), R² {:.4}, {below}/{} below corrected bound",
                    fit.exponent,
                    fit.r_squared,
                    rows.len()
                ),
            )
        }
        Err(e) => verdict(false, format!("fit failed: {e}")),
    }
}

fn grid_projection(b: &BoxConstraint, d: &Point, z: &Point, step: f64) -> Point {
    let mut out = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        let (lo, hi) = (b.lower(i), b.upper(i));
        let n = ((hi - lo) / step).ceil() as usize;
        let mut best = (f64::INFINITY, lo);
        for k in 0..=n {
            let w = (lo + k as f64 * step).min(hi);
            let f = (z[i] - w).powi(2) / d[i];
            if f < best.0 {
                best = (f, w);
            }
        }
        out.push(best.1);
    }
    Point::new(out)
}

fn weighted(d: &Point, z: &Point, w: &Point) -> f64 {
    (0..z.len()).map(|i| (z[i] - w[i]).powi(2) / d[i]).sum()
}

fn criterion_3(member: &mut Membership) -> Verdict {
    // (a) reciprocal caps with constant momentum weight reproduce MI-FGSM.
    let mut mismatched_runs = 0;
    let mut zero_momentum = 0;
    for seed in 0..20u64 {
        let mut rng = SeededRng::new(seed, 0);
        let (mut q, b) = random_quadratic_instance(&mut rng, &QuadraticSpec::default()).unwrap();
        let cfg = AttackConfig {
            epsilon: b.radius(),
            total_iters: 50,
            mu: rng.uniform(0.5, 1.0),
            beta_schedule: BetaSchedule::Constant,
            ..mdcs_base()
        };
        let (mut mi, mut mdcs) = (OptimizerState::new(b.dim()), OptimizerState::new(b.dim()));
        let (mut x, mut y) = (b.center().clone(), b.center().clone());
        let mut points = vec![y.clone()];
        let mut same = true;
        for _ in 0..cfg.total_iters {
            let gx = q.eval(&x).unwrap().gradient;
            let gy = q.eval(&y).unwrap().gradient;
            x = mi_update(&mut mi, &x, &gx, &b, &cfg).next;
            y = mdcs_mi_update_with(&mut mdcs, &y, &gy, &b, &cfg, CapRule::Reciprocal).next;
            zero_momentum += mdcs.m.iter().filter(|&&m| m == 0.0).count();
            same &= x == y;
            points.push(y.clone());
        }
        member.points(&b, &points);
        mismatched_runs += usize::from(!same);
    }

    // (b) sign(g_i) = g_i/|g_i| on random gradients.
    let mut rng = SeededRng::new(7, 0);
    let (mut sign_mismatch, mut literal_off, mut entries) = (0, 0, 0);
    for _ in 0..1000 {
        let g = Point::new(
            (0..10)
                .map(|_| rng.uniform(-1.0, 1.0) * 10f64.powf(rng.uniform(-6.0, 3.0)))
                .collect(),
        );
        let alpha = rng.uniform(1e-3, 1.0);
        let s = sign(&g);
        for (i, &gi) in g.iter().enumerate() {
            entries += 1;
            sign_mismatch += usize::from(s[i] != gi / gi.abs());
            literal_off += usize::from((alpha / gi.abs()) * gi != alpha * s[i]);
        }
    }

    // (c) diagonal projection against a brute-force grid.
    let mut rng = SeededRng::new(2024, 0);
    let mut grid_fail = 0;
    for _ in 0..200 {
        let dim = 1 + rng.index(6);
        let center = Point::new((0..dim).map(|_| rng.uniform(0.0, 1.0)).collect());
        let b = BoxConstraint::new(center, rng.uniform(0.01, 0.3), 0.0, 1.0).unwrap();
        let d = Point::new((0..dim).map(|_| rng.uniform(1e-3, 1.0)).collect());
        let z = Point::new((0..dim).map(|_| rng.uniform(-0.5, 1.5)).collect());
        let p = b.project_diag(&DiagScaling::new(d.clone()).unwrap(), &z).unwrap();
        let g = grid_projection(&b, &d, &z, 1e-4);
        let objective_gap = weighted(&d, &z, &p) - weighted(&d, &z, &g);
        grid_fail += usize::from(objective_gap.abs() > 1e-6 || !b.contains(&p));
    }

    let pass = mismatched_runs == 0 && zero_momentum == 0 && sign_mismatch == 0 && grid_fail == 0;
    verdict(
        pass,
        format!(
            "(a) {mismatched_runs}/20 runs differ, {zero_momentum} zero momenta; \
             (b) {sign_mismatch}/{entries} sign mismatches ({literal_off} entries where the \
             unfused (α/|g|)·g rounds off α·sign(g)); (c) {grid_fail}/200 grid mismatches"
        ),
    )
}

fn criterion_4(member: &mut Membership) -> Verdict {
    let (mut q, feasible, report) = sign_oscillation_fixture();
    let mut parts = Vec::new();
    let mut pass = true;
    for t in [10, 11] {
        let cfg = AttackConfig {
            algorithm: Algorithm::IFgsm,
            epsilon: feasible.radius(),
            total_iters: t,
            schedule: StepSchedule::Fixed(report.step),
            ..AttackConfig::default()
        };
        let traj = run(&mut q, &feasible, &cfg).unwrap();
        member.trajectory(&feasible, &traj);
        let last = suboptimality(&q, &feasible, &traj).unwrap().last;
        pass &= (last - 0.0025).abs() <= 1e-12;
        parts.push(format!("I-FGSM T={t}: {last:e}"));
    }
    let cfg = AttackConfig {
        epsilon: feasible.radius(),
        total_iters: 50,
        gamma: 1.0,
        ..mdcs_base()
    };
    let traj = run(&mut q, &feasible, &cfg).unwrap();
    member.trajectory(&feasible, &traj);
    let last = suboptimality(&q, &feasible, &traj).unwrap().last;
    pass &= last < 0.0025;
    parts.push(format!("MDCS-MI T=50: {last:e}"));
    verdict(pass, parts.join(", "))
}

fn criterion_5(member: &mut Membership) -> Verdict {
    let (big, prob) = (3.0, 0.4);
    let feasible = ReddiCounterexample::feasible_set();
    let averages: Vec<(f64, f64, Vec<Trajectory>)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let mut avg = Vec::new();
            let mut trajs = Vec::new();
            for alg in [Algorithm::Adam, Algorithm::AmsGrad] {
                let mut oracle =
                    reddi_counterexample(big, prob, SeededRng::new(seed, REDDI_STREAM)).unwrap();
                let cfg = AttackConfig {
                    algorithm: alg,
                    epsilon: 1.0,
                    total_iters: 10_000,
                    gamma: 0.5,
                    schedule: StepSchedule::Theorem,
                    adam_beta1: 0.0,
                    adam_beta2: 1.0 / (1.0 + big * big),
                    seed,
                    ..AttackConfig::default()
                };
                let traj = run(&mut oracle, &feasible, &cfg).unwrap();
                avg.push(averaged_iterate(&traj).unwrap()[0]);
                trajs.push(traj);
            }
            (avg[0], avg[1], trajs)
        })
        .collect();
    let mut ams_near = 0;
    let mut adam_worse = 0;
    for (adam, ams, trajs) in &averages {
        ams_near += usize::from((ams - 1.0).abs() <= 0.2);
        adam_worse += usize::from(ams - adam >= 0.3);
        for t in trajs {
            member.trajectory(&feasible, t);
        }
    }
    let mean = |f: fn(&(f64, f64, Vec<Trajectory>)) -> f64| {
        averages.iter().map(f).sum::<f64>() / averages.len() as f64
    };
    verdict(
        ams_near >= 15 && adam_worse >= 15,
        format!(
            "AMSGrad within 0.2 of +1 in {ams_near}/20, Adam ≥ 0.3 worse in {adam_worse}/20 \
             (mean averaged iterate: AMSGrad {:.3}, Adam {:.3})",
            mean(|r| r.1),
            mean(|r| r.0)
        ),
    )
}

fn criterion_6(member: &mut Membership) -> Verdict {
    let transfer = TransferConfig::default();
    let results: Vec<_> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let setup = TransferSetup::build(&transfer, seed).unwrap();
            let sweep = |alg| {
                let cfg = AttackConfig {
                    algorithm: alg,
                    seed,
                    ..AttackConfig::default()
                };
                stability_sweep(&setup, &cfg, &transfer.t_values).unwrap()
            };
            (sweep(Algorithm::IFgsm), sweep(Algorithm::MdcsMi))
        })
        .collect();
    let mut ties_or_better = 0;
    let (mut at_10, mut at_100) = (0.0, 0.0);
    for ((ifgsm_pts, ifgsm), (mdcs_pts, mdcs)) in &results {
        ties_or_better += usize::from(mdcs.max_drawdown <= ifgsm.max_drawdown);
        at_10 += mdcs.asr_by_t[&10];
        at_100 += mdcs.asr_by_t[&100];
        for p in ifgsm_pts.iter().chain(mdcs_pts) {
            member.recorded += p.recorded_points;
            member.outside += p.infeasible_points;
        }
    }
    let n = results.len() as f64;
    let (at_10, at_100) = (at_10 / n, at_100 / n);
    verdict(
        ties_or_better >= 7 && at_100 >= at_10 - 0.05,
        format!(
            "MDCS-MI drawdown ≤ I-FGSM in {ties_or_better}/10 seeds; \
             MDCS-MI mean transfer ASR {at_10:.3} at T=10, {at_100:.3} at T=100"
        ),
    )
}

fn increases(traj: &Trajectory) -> usize {
    let tracked: Vec<f64> = traj.steps.iter().filter_map(|s| s.tracked).collect();
    tracked.windows(2).filter(|w| w[1] > w[0]).count()
}

fn criterion_7(member: &mut Membership) -> Verdict {
    let transfer = TransferConfig::default();
    let setup = TransferSetup::build(&transfer, 0).unwrap();
    let x = &setup.clean[0];
    let feasible = BoxConstraint::new(x.clone(), transfer.epsilon, 0.0, 1.0).unwrap();
    let mut go = |alg, schedule| {
        let mut oracle =
            classifier_attack_oracle(Arc::clone(&setup.surrogate), setup.labels[0]).unwrap();
        let cfg = AttackConfig {
            algorithm: alg,
            epsilon: transfer.epsilon,
            total_iters: 20,
            schedule,
            ..AttackConfig::default()
        };
        let traj = run(&mut oracle, &feasible, &cfg).unwrap();
        member.trajectory(&feasible, &traj);
        increases(&traj)
    };
    let mdcs_ups = go(Algorithm::MdcsMi, StepSchedule::Theorem);
    let ifgsm_ups = go(Algorithm::IFgsm, StepSchedule::Practice);
    verdict(
        mdcs_ups == 0 && ifgsm_ups >= 1,
        format!("MDCS-MI increases {mdcs_ups}, I-FGSM increases {ifgsm_ups}"),
    )
}

fn criterion_8() -> Verdict {
    let mut rng = SeededRng::new(5, 0);
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut check = |name: String, oracle: &mut dyn GradientOracle, b: &BoxConstraint, rng: &mut SeededRng| {
        worst.push((name, max_gradient_error(oracle, b, rng, 100, 1e-6).unwrap()));
    };
    let dim = 10;
    let unit = BoxConstraint::new(Point::filled(dim, 0.5), 0.5, 0.0, 1.0).unwrap();
    let target = Point::new((0..dim).map(|_| rng.uniform(-0.5, 1.5)).collect());
    check("quadratic".into(), &mut quadratic_oracle(target, 2.0).unwrap(), &unit, &mut rng);
    let w = Point::new((0..dim).map(|_| rng.uniform(-2.0, 2.0)).collect());
    check("linear".into(), &mut LinearObjective::new(w), &unit, &mut rng);
    let (mut fixture, fb, _) = sign_oscillation_fixture();
    check("oscillation fixture".into(), &mut fixture, &fb, &mut rng);
    let data = make_blobs(&mut SeededRng::new(8, 0), 50, 3, dim, 4.0).unwrap();
    for (kind, activation) in [
        (ClassifierKind::Logistic, Activation::Tanh),
        (ClassifierKind::Mlp, Activation::Tanh),
        (ClassifierKind::Mlp, Activation::Relu),
    ] {
        let hyper = TrainHyper {
            activation,
            hidden: 16,
            ..TrainHyper::default()
        };
        let model = Arc::new(train_classifier(kind, &data, &hyper).unwrap().0);
        for label in 0..3 {
            let mut oracle = classifier_attack_oracle(Arc::clone(&model), label).unwrap();
            check(format!("{kind:?}/{activation:?} label {label}"), &mut oracle, &unit, &mut rng);
        }
    }
    let (name, err) = worst
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap();
    verdict(
        worst.iter().all(|(_, e)| *e <= 1e-5),
        format!("{} oracles, worst relative error {err:.2e} ({name})", worst.len()),
    )
}

const SMALL_CONFIG: &str = r#"
seeds = [0, 1]

[transfer]
train_per_class = 60
eval_per_class = 15
t_values = [2, 5, 10]

[ablate]
gammas = [0.5, 2.0]

[counterexample]
total_iters = 500

[bench]
dims = [10, 100]
total_iters = 20
"#;

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().display().to_string();
        files.push((rel, std::fs::read(&entry).unwrap()));
    }
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

fn criterion_10() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("small.toml");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    let verbs = ["converge", "stability", "stepdyn", "ablate", "counterexample", "bench"];
    let mut differing = Vec::new();
    for verb in verbs {
        let mut outputs = Vec::new();
        for (round, threads) in [(0, "1"), (1, "2")] {
            let out = tmp.path().join(format!("{verb}-{round}"));
            let status = Command::new(env!("CARGO_BIN_EXE_mdcs"))
                .arg(verb)
                .arg("--config")
                .arg(&config)
                .arg("--out")
                .arg(&out)
                .env("MDCS_THREADS", threads)
                .output()
                .unwrap();
            // Exit 1 is a verdict, not a crash; usage errors would be 2.
            if status.status.code().is_none_or(|c| c > 1) {
                differing.push(format!(
                    "{verb} exited {:?}: {}",
                    status.status.code(),
                    String::from_utf8_lossy(&status.stderr).trim()
                ));
            }
            outputs.push(read_dir_sorted(&out));
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            differing.push(verb.to_string());
        }
    }
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} verbs byte-identical across repeats (1 and 2 threads)", verbs.len())
        } else {
            format!("differs: {}", differing.join("; "))
        },
    )
}

fn report(n: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> bool {
    let started = Instant::now();
    let v = f();
    let took = started.elapsed();
    let in_time = limit.is_none_or(|l| took <= l);
    let pass = v.pass && in_time;
    let budget = match limit {
        Some(l) => format!("{:.2}s / {}s", took.as_secs_f64(), l.as_secs()),
        None => format!("{:.2}s", took.as_secs_f64()),
    };
    let late = if in_time { "" } else { ", over time limit" };
    println!(
        "criterion {n:>2} {name:<14} {} [{budget}{late}] {}",
        if pass { "PASS" } else { "FAIL" },
        v.detail
    );
    pass
}

fn main() -> ExitCode {
    let secs = |s| Some(Duration::from_secs(s));
    let mut member = Membership::default();
    let results = [
        report(1, "lemmas", secs(10), || criterion_1(&mut member)),
        report(2, "convergence", secs(30), || criterion_2(&mut member)),
        report(3, "equivalence", secs(20), || criterion_3(&mut member)),
        report(4, "oscillation", secs(1), || criterion_4(&mut member)),
        report(5, "adam-amsgrad", secs(60), || criterion_5(&mut member)),
        report(6, "stability", secs(300), || criterion_6(&mut member)),
        report(7, "step-dynamics", secs(10), || criterion_7(&mut member)),
        report(8, "gradients", secs(10), criterion_8),
        report(9, "feasibility", None, || {
            verdict(
                member.recorded > 0 && member.outside == 0,
                format!("{} of {} recorded iterates outside the box", member.outside, member.recorded),
            )
        }),
        report(10, "determinism", None, criterion_10),
    ];
    let failed = results.iter().filter(|&&p| !p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
