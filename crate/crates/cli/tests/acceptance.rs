//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report reads top to
//! bottom. Known failures are listed in `KNOWN_FAILURES` and explained in the
//! README; any other failure makes the target exit non-zero.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wadmarket_cli::scenario::{formal_phase, selection_phase, trial_phase};
use wadmarket_cli::studies::{privwad_errors, signal, unlabeled_trial, UnlabeledSetup};
use wadmarket_cli::{run_scenario, Scenario, ScenarioConfig};
use wadmarket_core::estimation::{fit, project_scale, r_squared, EstimatorKind, FittedEstimator, TrialRecord, DEFAULT_RIDGE};
use wadmarket_core::fedwad::{
    approx_wasserstein_pair_with, barycentric_interpolate, combine_wad, concat_cost, sample_shared_measure, PrivacyPolicy,
    SharedMeasureSpec,
};
use wadmarket_core::fl::{
    aggregate, centralized_train, fed_train, partition, Algorithm, Arch, ClientUpdate, FedConfig, LocalAux, ModelParams,
    PartitionScheme, PartitionSpec, ServerState, SyntheticSpec,
};
use wadmarket_core::ot::{build_cost, calibrated_gradients, solve_dense, wasserstein, DiscreteMeasure, Method};
use wadmarket_core::stats;
use wadmarket_market::{
    audit_no_raw_leak, decode, encode, run_trial_phase, AuditLog, Envelope, Message, RatioSampler, Rule, UpdateAux,
};

/// Criteria that do not hold and are reported as such.
const KNOWN_FAILURES: &[u32] = &[6];

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn scenario_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn load(name: &str, overrides: &[(&str, String)]) -> ScenarioConfig {
    ScenarioConfig::load(&scenario_file(name), overrides).unwrap()
}

fn exact(cost: &Array2<f64>, a: &[f64], b: &[f64]) -> wadmarket_core::TransportSolution {
    solve_dense(cost.view(), a, b, Method::Exact, 1e-9).unwrap()
}

fn c1_oracle_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let m = rng.random_range(1..=6);
        let n = rng.random_range(1..=6);
        let denom = rng.random_range(m.max(n) as u32..=9);
        let rows = random_composition(&mut rng, denom, m, false);
        let cols = random_composition(&mut rng, denom, n, false);
        let cost = random_points(&mut rng, m, n, 5.0).mapv(f64::abs);
        let a: Vec<f64> = rows.iter().map(|&x| f64::from(x) / f64::from(denom)).collect();
        let b: Vec<f64> = cols.iter().map(|&x| f64::from(x) / f64::from(denom)).collect();
        let got = exact(&cost, &a, &b).objective;
        worst = worst.max((got - integral_plan_minimum(&cost, &rows, &cols)).abs());
    }
    let t = start.elapsed();
    check(worst < 1e-9 && within(t, 5), format!("max |diff| = {worst:.2e} over 200 instances, {:.2}s", t.as_secs_f64()))
}

fn c2_duality_and_marginals() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut gap, mut marg): (f64, f64) = (0.0, 0.0);
    for i in 0..50 {
        let (m, n) = if i < 5 { (200, 200) } else { (rng.random_range(1..=200), rng.random_range(1..=200)) };
        let mu = DiscreteMeasure::new(random_points(&mut rng, m, 3, 4.0), random_masses(&mut rng, m), None).unwrap();
        let nu = DiscreteMeasure::uniform(random_points(&mut rng, n, 3, 4.0), None).unwrap();
        let c = build_cost(&mu, &nu, 0.0).unwrap();
        let s = exact(&c.values, mu.masses(), nu.masses());
        gap = gap.max((s.objective - s.dual_objective(mu.masses(), nu.masses())).abs());
        marg = marg.max(s.marginal_violation(mu.masses(), nu.masses()));
    }
    let t = start.elapsed();
    check(
        gap < 1e-8 && marg < 1e-8 && within(t, 30),
        format!("max gap = {gap:.2e}, max marginal violation = {marg:.2e}, {:.2}s", t.as_secs_f64()),
    )
}

/// Derivative of W along `a + delta e_i` with the other masses rescaled.
fn finite_difference(cost: &Array2<f64>, a: &[f64], b: &[f64], i: usize, delta: f64) -> f64 {
    let base = exact(cost, a, b).objective;
    let rest = 1.0 - a[i];
    let moved: Vec<f64> = a
        .iter()
        .enumerate()
        .map(|(k, &x)| if k == i { x + delta } else { x * (rest - delta) / rest })
        .collect();
    (exact(cost, &moved, b).objective - base) / delta
}

fn c3_calibrated_gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut zero_sum, mut worst): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let m = rng.random_range(6..=10);
        let n = rng.random_range(6..=10);
        let a = vec![1.0 / m as f64; m];
        let b = random_masses(&mut rng, n);
        let cost = random_points(&mut rng, m, n, 3.0).mapv(f64::abs);
        let scores = calibrated_gradients(&exact(&cost, &a, &b)).unwrap();
        zero_sum = zero_sum.max(scores.sum().abs());
        let scale = scores.scores.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
        for i in 0..m {
            let fd = finite_difference(&cost, &a, &b, i, 1e-6);
            worst = worst.max((fd - scores.scores[i]).abs() / scale);
        }
    }
    check(
        zero_sum < 1e-7 && worst < 0.05,
        format!("max |sum| = {zero_sum:.1e}, max relative FD error = {:.2}%", 100.0 * worst),
    )
}

fn c4_translation_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(1..=5);
        let (nx, ny) = (rng.random_range(2..20), rng.random_range(2..20));
        let x = random_points(&mut rng, nx, d, 2.0);
        let y = random_points(&mut rng, ny, d, 2.0);
        let shift: Array1<f64> = Array1::from_shape_fn(d, |_| rng.random_range(-50.0..50.0));
        let w = |x: Array2<f64>, y: Array2<f64>| {
            wasserstein(&DiscreteMeasure::uniform(x, None).unwrap(), &DiscreteMeasure::uniform(y, None).unwrap(), 0.0).unwrap()
        };
        worst = worst.max((w(x.clone(), y.clone()) - w(&x + &shift, &y + &shift)).abs());
    }
    check(worst < 1e-9, format!("max |dW| = {worst:.2e} over 100 shifts"))
}

fn labelled(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DiscreteMeasure {
    let labels = (0..n).map(|_| rng.random_range(0..3)).collect();
    DiscreteMeasure::uniform(random_points(rng, n, d, 3.0), Some(labels)).unwrap()
}

fn c5_zero_t_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let policy = PrivacyPolicy::disabled();
    let (mut pair, mut pool): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let d = rng.random_range(1..=4);
        let penalty = rng.random_range(0.0..3.0);
        let gamma = sample_shared_measure(&SharedMeasureSpec {
            seed: rng.random(),
            k: rng.random_range(1..20),
            d,
            mean: 0.0,
            std: 1.0,
        })
        .unwrap();
        let n_val = rng.random_range(2..15);
        let val = labelled(&mut rng, n_val, d);
        let eta_val = barycentric_interpolate(&val, &gamma, 0.0, "buyer", &policy).unwrap();
        let sellers: Vec<DiscreteMeasure> = (0..3)
            .map(|_| {
                let n = rng.random_range(1..12);
                labelled(&mut rng, n, d)
            }).collect();
        let etas: Vec<_> = sellers
            .iter()
            .map(|s| barycentric_interpolate(s, &gamma, 0.0, "seller", &policy).unwrap())
            .collect();
        let approx = approx_wasserstein_pair_with(&etas[0], &eta_val, penalty).unwrap();
        pair = pair.max((approx - wasserstein(&sellers[0], &val, penalty).unwrap()).abs());
        let cw = combine_wad(&concat_cost(&etas, &eta_val, penalty).unwrap(), 0.0).unwrap();
        let pooled = DiscreteMeasure::concat(&sellers.iter().collect::<Vec<_>>()).unwrap();
        pool = pool.max((cw.value - wasserstein(&pooled, &val, penalty).unwrap()).abs());
    }
    check(pair < 1e-9 && pool < 1e-9, format!("max pair error = {pair:.2e}, max pooled error = {pool:.2e}"))
}

fn c6_anchor_count_trend() -> Check {
    let start = Instant::now();
    let ks = [10, 800, 1000];
    let errors = privwad_errors(6, 20, &ks, 200, 5, 0.5).unwrap();
    let mean: Vec<f64> = errors.iter().map(|e| stats::mean(e)).collect();
    let decreases = mean[2] < mean[0];
    let bounded = mean[1] <= 1.2 && mean[2] <= 1.2;
    let t = start.elapsed();
    check(
        decreases && bounded && within(t, 120),
        format!(
            "mean |W_hat - W|: k=10 {:.3}, k=800 {:.3}, k=1000 {:.3}; decreases: {decreases}, bounded by 1.2: {bounded}, {:.1}s",
            mean[0],
            mean[1],
            mean[2],
            t.as_secs_f64()
        ),
    )
}

fn c7_projection_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (mut endpoints, mut worst) = (true, 0.0f64);
    for _ in 0..100 {
        let (a, b) = (rng.random_range(-0.1..0.1), rng.random_range(0.0..0.5));
        let n_i = rng.random_range(10..1000usize);
        let n_j = n_i + rng.random_range(1..2000usize);
        let v = |n: usize| a * (n as f64).ln() + b;
        endpoints &= project_scale(v(n_i), v(n_j), n_i, n_j, n_i).unwrap() == v(n_i);
        endpoints &= project_scale(v(n_i), v(n_j), n_i, n_j, n_j).unwrap() == v(n_j);
        worst = worst.max((project_scale(v(n_i), v(n_j), n_i, n_j, 4 * n_j).unwrap() - v(4 * n_j)).abs());
    }
    check(endpoints && worst < 1e-9, format!("endpoints exact: {endpoints}, max error at 4N = {worst:.2e}"))
}

/// Parameters per kind that keep generated values inside [0, 1].
fn generator(kind: EstimatorKind, m: usize) -> Vec<f64> {
    match kind {
        EstimatorKind::AffineCombinewad => vec![-0.2, 0.9],
        EstimatorKind::EnhancedCombinewad => vec![0.01, -0.02, 0.015, -0.03, 0.01, -0.02, -0.01, 0.5, 0.6, 0.4],
        EstimatorKind::DeltaForm => {
            let mut v = vec![0.6, 1.0];
            v.extend(vec![1.0 / m as f64; m]);
            v.extend([0.05, -0.1, 0.02, -0.15]);
            v
        }
        EstimatorKind::Linear => vec![0.05, 0.1, -0.05, 0.02, 0.3],
        EstimatorKind::PseudoQuadratic => vec![-0.1, 0.05, -0.05, 0.1, 0.0, 0.05, 0.1, 0.04],
        EstimatorKind::Quadratic => vec![-0.1, 0.05, -0.05, 0.1, 0.0, 0.05, 0.1, 0.04, 0.02, -0.03, 0.01, 0.04, -0.02, 0.03],
        EstimatorKind::Rational => vec![10.0, 5.0, 4.0, 3.0, 12.0, 6.0, 5.0, 2.0, 9.0, 0.01],
        EstimatorKind::Aggwad => vec![-0.1, 0.2, 0.1, 0.15, 0.6],
    }
}

fn c8_estimator_round_trips() -> Check {
    let m = 3;
    let mut worst = (1.0f64, "");
    for kind in EstimatorKind::ALL {
        let truth = FittedEstimator::from_params(kind, m, generator(kind, m), 400).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(808);
        let records: Vec<TrialRecord> = (0..60)
            .map(|i| {
                let e: Vec<f64> = (0..m).map(|_| -rng.random::<f64>().max(1e-12).ln()).collect();
                let s: f64 = e.iter().sum();
                let p: Vec<f64> = e.iter().map(|x| x / s).collect();
                let n = if kind.scale_specific() { 200 } else { [100, 200, 400][i % 3] };
                let w = rng.random_range(0.5..2.0);
                let v = truth.evaluate(&p, w, n).unwrap();
                TrialRecord {
                    run_id: format!("{kind}-{i}"),
                    p,
                    n,
                    w,
                    v,
                }
            })
            .collect();
        let r2 = fit(&records, kind, DEFAULT_RIDGE)
            .and_then(|est| r_squared(&est, &records))
            .map_or(f64::NEG_INFINITY, |r| r.value);
        if r2 < worst.0 {
            worst = (r2, kind.name());
        }
    }
    check(worst.0 >= 1.0 - 1e-6, format!("lowest r2 = {:.9} ({})", worst.0, if worst.1.is_empty() { "all exact" } else { worst.1 }))
}

fn grid_signal(algorithm: Algorithm) -> f64 {
    let mut cfg = load("label_skew.cfg", &[]);
    cfg.fed.algorithm = algorithm;
    let scenario = Scenario::build(cfg.clone()).unwrap();
    let mut session = scenario.session(None).unwrap();
    let records = run_trial_phase(&mut session, 16, &[cfg.n1], &RatioSampler::Standard).unwrap();
    signal(&records).unwrap()
}

fn c9_combinewad_signal() -> Check {
    let start = Instant::now();
    let prox = grid_signal(Algorithm::FedProx { mu: 0.1 });
    let avg = grid_signal(Algorithm::FedAvg);
    let t = start.elapsed();
    check(
        prox <= -0.5 && within(t, 300),
        format!(
            "Spearman FedProx = {prox:.3}, FedAvg = {avg:.3} (FedAvg weaker: {}), {:.1}s",
            avg.abs() < prox.abs(),
            t.as_secs_f64()
        ),
    )
}

fn c10_label_skew_selection() -> Check {
    let start = Instant::now();
    let cfg = load("label_skew.cfg", &[]);
    let scenario = Scenario::build(cfg.clone()).unwrap();
    let mut session = scenario.session(None).unwrap();
    trial_phase(&scenario, &mut session).unwrap();
    let sel = selection_phase(&scenario, &mut session).unwrap();
    let dist = sel.p_star.iter().map(|p| (p - 1.0 / 3.0).abs()).fold(0.0, f64::max);
    let chosen = formal_phase(&scenario, &mut session, &sel.p_star).unwrap().eval.accuracy;
    let start_acc = formal_phase(&scenario, &mut session, &cfg.p0).unwrap().eval.accuracy;
    let t = start.elapsed();
    check(
        dist <= 0.15 && chosen - start_acc >= 0.05 && within(t, 300),
        format!(
            "p* = {:.3?}, L-inf to uniform = {dist:.3}, accuracy {start_acc:.3} -> {chosen:.3}, {:.1}s",
            sel.p_star,
            t.as_secs_f64()
        ),
    )
}

fn c11_mislabel_selection() -> Check {
    let start = Instant::now();
    let mut ordered = 0;
    let mut seen = Vec::new();
    for seed in 1..=5u64 {
        let cfg = load("mislabel.cfg", &[("seed", seed.to_string())]);
        let scenario = Scenario::build(cfg).unwrap();
        let mut session = scenario.session(None).unwrap();
        trial_phase(&scenario, &mut session).unwrap();
        let p = selection_phase(&scenario, &mut session).unwrap().p_star;
        let ok = p[0] > p[2] && p[2] > p[1];
        ordered += usize::from(ok);
        seen.push(format!("{}{:.2?}", if ok { "+" } else { "-" }, p));
    }
    check(
        ordered >= 4,
        format!("{ordered}/5 seeds ordered p1 > p3 > p2 [{}], {:.1}s", seen.join(" "), start.elapsed().as_secs_f64()),
    )
}

fn c12_unlabeled_top_k() -> Check {
    let setup = UnlabeledSetup::default();
    let mut wins = 0;
    let mut seen = Vec::new();
    for seed in 1..=5u64 {
        let o = &unlabeled_trial(&setup, seed, &[200]).unwrap()[0];
        wins += usize::from(o.mse_top_k < o.mse_random);
        seen.push(format!("{:.3}/{:.3}", o.mse_top_k, o.mse_random));
    }
    check(wins >= 4, format!("top-k beats random in {wins}/5 seeds (MSE top-k/random: {})", seen.join(", ")))
}

fn c13_ratio_ranking_scales() -> Check {
    let cfg = load("label_skew.cfg", &[]);
    let scenario = Scenario::build(cfg.clone()).unwrap();
    let mut session = scenario.session(None).unwrap();
    let grid = RatioSampler::Standard.ratios(cfg.num_sellers, 8, 99);
    let (n, n2) = (cfg.n1 / 2, cfg.n1);
    let records = run_trial_phase(&mut session, grid.len(), &[n, n2], &RatioSampler::Fixed(grid.clone())).unwrap();
    let at = |budget: usize| -> Vec<f64> {
        grid.iter()
            .map(|p| records.iter().find(|r| r.n == budget && &r.p == p).unwrap().v)
            .collect()
    };
    let rho = stats::spearman(&at(n), &at(n2)).unwrap();
    check(rho >= 0.6, format!("Spearman of per-ratio accuracy between N={n} and N={n2}: {rho:.3}"))
}

fn random_f64(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..3) {
        0 => rng.random_range(-1.0..1.0),
        1 => rng.random::<f64>() * 10f64.powi(rng.random_range(-300..300)),
        _ => rng.random_range(-5..5) as f64,
    }
}

fn random_vec(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..rng.random_range(0..8)).map(|_| random_f64(rng)).collect()
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    (0..rng.random_range(0..10))
        .map(|_| match rng.random_range(0..5) {
            0 => '"',
            1 => '\\',
            2 => '\n',
            3 => 'ß',
            _ => rng.random_range('a'..='z'),
        })
        .collect()
}

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    let run_id = random_text(rng);
    match rng.random_range(0..9) {
        0 => Message::SharedMeasureInit {
            seed: rng.random(),
            k: rng.random_range(0..1000),
            d: rng.random_range(0..10),
            mean: random_f64(rng),
            std: random_f64(rng),
            points: (0..rng.random_range(0..4)).map(|_| random_vec(rng)).collect(),
        },
        1 => Message::InterpMeasure {
            party_id: random_text(rng),
            t: rng.random(),
            points: (0..rng.random_range(0..4)).map(|_| random_vec(rng)).collect(),
            labels: rng.random_bool(0.5).then(|| (0..rng.random_range(0..5)).map(|_| rng.random_range(0..10)).collect()),
        },
        2 => Message::TrialRequest {
            run_id,
            p: random_vec(rng),
            n: rng.random_range(0..100_000),
            config: rng.random_bool(0.3).then(|| FedConfig {
                algorithm: Algorithm::Scaffold,
                rounds: rng.random_range(1..50),
                local_epochs: 2,
                lr: random_f64(rng),
                batch_size: 8,
                seed: rng.random(),
            }),
        },
        3 => Message::SampleIndices {
            run_id,
            party_id: random_text(rng),
            indices: (0..rng.random_range(0..20)).map(|_| rng.random_range(0..usize::MAX)).collect(),
        },
        4 => Message::LocalUpdate {
            run_id,
            round: rng.random_range(0..100),
            party_id: random_text(rng),
            weights: random_vec(rng),
            n_samples: rng.random_range(0..1000),
            aux: UpdateAux {
                steps: rng.random_range(0..1000),
                mean_loss: random_f64(rng),
                control_delta: rng.random_bool(0.5).then(|| random_vec(rng)),
            },
        },
        5 => Message::GlobalModel {
            run_id,
            round: rng.random_range(0..100),
            weights: random_vec(rng),
            control: rng.random_bool(0.5).then(|| random_vec(rng)),
        },
        6 => Message::EvalRequest { run_id },
        7 => Message::EvalResult {
            run_id,
            accuracy: rng.random(),
            loss: random_f64(rng),
        },
        _ => Message::TrialRecord {
            run_id,
            p: random_vec(rng),
            n: rng.random_range(0..1000),
            w: random_f64(rng),
            v: rng.random(),
        },
    }
}

fn plant(log: &AuditLog, session_id: &str, sender: &str, receiver: &str, msg: Message) -> AuditLog {
    let mut log = log.clone();
    let env = Envelope {
        session_id: session_id.into(),
        seq: 1_000_000 + log.entries.len() as u64,
        sender: sender.into(),
        receiver: receiver.into(),
        msg,
    };
    log.push(sender, receiver, &encode(&env));
    log
}

fn c14_protocol_and_privacy() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1414);
    let lossless = (0..1000u64).all(|seq| {
        let env = Envelope {
            session_id: random_text(&mut rng),
            seq,
            sender: random_text(&mut rng),
            receiver: random_text(&mut rng),
            msg: random_message(&mut rng),
        };
        decode(&encode(&env)).is_ok_and(|back| back == env)
    });

    let overrides = [
        ("trial.count", "3".to_string()),
        ("trial.n0", "30".to_string()),
        ("trial.n1", "60".to_string()),
        ("formal.n", "150".to_string()),
        ("select.steps", "5".to_string()),
        ("fed.rounds", "5".to_string()),
    ];
    let cfg = load("label_skew.cfg", &overrides);
    let scenario = Scenario::build(cfg.clone()).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let runs: Vec<_> = dirs.iter().map(|d| run_scenario(&scenario, None, d.path()).unwrap()).collect();
    let bytes: Vec<Vec<u8>> = dirs.iter().map(|d| std::fs::read(d.path().join("audit.jsonl")).unwrap()).collect();
    let identical = bytes[0] == bytes[1] && runs[0].records == runs[1].records;

    let raw = scenario.raw_views();
    let honest = &runs[0].log;
    let honest_pass = audit_no_raw_leak(honest, &raw, cfg.t_min).pass;
    let sid = scenario.session_config().session_id();
    let seller_row = scenario.sellers[1].full.point(5).to_vec();
    let val_row = scenario.val.point(2).to_vec();
    let planted = [
        (
            Rule::RawRow,
            plant(honest, &sid, "platform", "buyer", Message::GlobalModel {
                run_id: "x".into(),
                round: 0,
                weights: [vec![0.1], seller_row].concat(),
                control: None,
            }),
        ),
        (
            Rule::TFloor,
            plant(honest, &sid, "seller-0", "platform", Message::InterpMeasure {
                party_id: "seller-0".into(),
                t: 0.0,
                points: scenario.sellers[0].pilot.points().outer_iter().map(|r| r.to_vec()).collect(),
                labels: None,
            }),
        ),
        (
            Rule::BuyerValidation,
            plant(honest, &sid, "platform", "seller-2", Message::TrialRequest {
                run_id: "x".into(),
                p: val_row,
                n: 1,
                config: None,
            }),
        ),
    ];
    let caught = planted
        .iter()
        .filter(|(rule, log)| {
            let rep = audit_no_raw_leak(log, &raw, cfg.t_min);
            !rep.pass && rep.violations.iter().any(|v| v.rule == *rule)
        })
        .count();
    check(
        lossless && honest_pass && caught == 3 && identical,
        format!(
            "fuzz lossless: {lossless}; honest audit PASS: {honest_pass}; planted violations caught: {caught}/3; reruns byte-identical: {identical}"
        ),
    )
}

fn c15_fl_reductions() -> Check {
    let spec = SyntheticSpec {
        num_classes: 6,
        d: 5,
        class_sep: 2.5,
        noise: 1.0,
        means_seed: 3,
    };
    let data = spec.sample(600, 1).unwrap();
    let val = spec.sample(300, 2).unwrap();
    let parts = partition(
        &data,
        &PartitionSpec {
            scheme: PartitionScheme::LabelSkew {
                labels_per_source: vec![vec![0, 1], vec![2, 3], vec![4, 5]],
            },
            seed: 5,
        },
        3,
    )
    .unwrap();
    let cfg = |algorithm| FedConfig {
        algorithm,
        rounds: 4,
        local_epochs: 2,
        lr: 0.05,
        batch_size: 16,
        seed: 17,
    };
    let arch = Arch::mlp(5, 8, 6);
    let avg = fed_train(&parts, &val, &cfg(Algorithm::FedAvg), &arch).unwrap();
    let prox = fed_train(&parts, &val, &cfg(Algorithm::FedProx { mu: 0.0 }), &arch).unwrap();
    let prox_is_avg = avg.model.weights == prox.model.weights;
    let single = fed_train(&parts[..1], &val, &cfg(Algorithm::FedAvg), &arch).unwrap();
    let central = centralized_train(&parts[0], &val, &cfg(Algorithm::FedAvg), &arch).unwrap();
    let single_is_central = single.model.weights == central.model.weights;
    let global = ModelParams::init(Arch::mlp(4, 6, 3), 1);
    let local = ModelParams::init(Arch::mlp(4, 6, 3), 2);
    let identity = [Algorithm::FedAvg, Algorithm::FedProx { mu: 0.3 }, Algorithm::Scaffold, Algorithm::FedNova]
        .into_iter()
        .all(|alg| {
            let copies: Vec<ClientUpdate> = (0..4)
                .map(|i| ClientUpdate {
                    model: local.clone(),
                    aux: LocalAux {
                        steps: 5,
                        ..LocalAux::default()
                    },
                    n_samples: 10 + 7 * i,
                })
                .collect();
            let mut state = ServerState::new(alg, global.weights.len());
            aggregate(&global, &copies, alg, &mut state).unwrap() == local
        });
    check(
        prox_is_avg && single_is_central && identity,
        format!(
            "FedProx(0) == FedAvg: {prox_is_avg}; single client == centralized: {single_is_central}; identical-model aggregation is identity: {identity}"
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Check); 15] = [
        (1, "OT oracle equivalence", c1_oracle_equivalence),
        (2, "duality and marginals", c2_duality_and_marginals),
        (3, "calibrated-gradient fidelity", c3_calibrated_gradients),
        (4, "translation invariance", c4_translation_invariance),
        (5, "zero-t exactness", c5_zero_t_exactness),
        (6, "anchor-count error trend", c6_anchor_count_trend),
        (7, "projection identities", c7_projection_identities),
        (8, "estimator round-trips", c8_estimator_round_trips),
        (9, "CombineWad signal", c9_combinewad_signal),
        (10, "selection under label skew", c10_label_skew_selection),
        (11, "selection under mislabel", c11_mislabel_selection),
        (12, "unlabeled top-k", c12_unlabeled_top_k),
        (13, "ratio ranking across budgets", c13_ratio_ranking_scales),
        (14, "protocol and privacy", c14_protocol_and_privacy),
        (15, "FL reductions", c15_fl_reductions),
    ];
    let mut unexpected = Vec::new();
    let mut passed = 0;
    for (id, name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            check(false, format!("panicked: {msg}"))
        });
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {status}  {name}: {}", outcome.detail);
        if outcome.pass {
            passed += 1;
        } else if !KNOWN_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    println!("acceptance: {passed}/15 criteria pass; known failures: {KNOWN_FAILURES:?}");
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
