//! Acceptance suite. Each test covers one criterion and prints a single
//! `criterion NN: PASS|FAIL ...` line before asserting.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skycollect::agents::{Controller, FixedPolicy, HybridPolicy, RandomPolicy};
use skycollect::channel::{all_rates, sample_small_scale, ChannelAssignment, ChannelRealization};
use skycollect::env::{decode_discrete, encode_discrete, EnvConfig, HybridAction, MissionState};
use skycollect::harness::{self, evaluate_controller, evaluate_policy, load_config, EvalSummary, RunConfig};
use skycollect::nn::{backward, forward, Activation, HeadSpec, NetworkSpec, ParameterSet};
use skycollect::rollout::run_episode;
use skycollect::semantic::{energy, optimal_eta, quality, EnergyParams, QualityParams, DEFAULT_ETA_GRID, ETA_MIN};
use skycollect::{AgentError, Algorithm};

fn report(id: u32, pass: bool, detail: &str) {
    // Written to the raw handle so the line shows even when output is captured.
    let line = format!("criterion {id:02}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn desk_config() -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json");
    load_config(&path).expect("desk preset loads")
}

#[test]
fn c01_quality_and_energy_anchors() {
    let qp = QualityParams::default();
    let ep = EnergyParams::default();
    let q1 = quality(1.0, &qp).unwrap();
    let q01 = quality(0.1, &qp).unwrap();
    let ratio = energy(0.5, &ep).unwrap() / energy(1.0, &ep).unwrap();
    let pass = (q1 - 0.90477).abs() <= 1e-4 && (q01 - 0.71143).abs() <= 1e-4 && ratio == 0.25;
    report(1, pass, &format!("Q(1)={q1:.6} Q(0.1)={q01:.6} E(0.5)/E(1)={ratio}"));
}

#[test]
fn c02_rician_normalization_and_los_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for k in [0.0, 1.0, 10.0] {
        let mean = (0..100_000).map(|_| sample_small_scale(&mut rng, k).norm_sqr()).sum::<f64>() / 1e5;
        worst = worst.max((mean - 1.0).abs());
    }
    let los_dev = (0..10_000)
        .map(|_| (sample_small_scale(&mut rng, 1e12).norm() - 1.0).abs())
        .fold(0.0, f64::max);
    let pass = worst < 0.02 && los_dev <= 1e-5;
    report(2, pass, &format!("max |E|g|^2-1|={worst:.4} max ||g|-1| at K=1e12 {los_dev:.2e}"));
}

/// Rates written out case by case for one, two and three users on a channel.
fn expanded_rates(p: &[f64], cnr: &[f64], members: &[usize], bw: f64) -> Vec<(usize, f64)> {
    let s = |n: usize| p[n] * cnr[n];
    let r = |sinr: f64| bw * (1.0 + sinr).log2();
    // Stronger-first order with the lower index winning ties.
    let before = |a: usize, b: usize| s(a) > s(b) || (s(a) == s(b) && a < b);
    match *members {
        [a] => vec![(a, r(s(a)))],
        [a, b] => {
            let (hi, lo) = if before(a, b) { (a, b) } else { (b, a) };
            vec![(hi, r(s(hi) / (1.0 + s(lo)))), (lo, r(s(lo)))]
        }
        [a, b, c] => {
            let mut o = [a, b, c];
            if before(o[1], o[0]) {
                o.swap(0, 1);
            }
            if before(o[2], o[1]) {
                o.swap(1, 2);
            }
            if before(o[1], o[0]) {
                o.swap(0, 1);
            }
            let [x, y, z] = o;
            vec![
                (x, r(s(x) / (1.0 + s(y) + s(z)))),
                (y, r(s(y) / (1.0 + s(z)))),
                (z, r(s(z))),
            ]
        }
        _ => unreachable!("at most three users per channel"),
    }
}

#[test]
fn c03_sic_matches_expanded_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bw = 5e6;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let m = rng.random_range(1..=3usize);
        let n = rng.random_range(1..=3 * m);
        let choices: Vec<usize> = loop {
            let c: Vec<usize> = (0..n).map(|_| rng.random_range(0..=m)).collect();
            if (1..=m).all(|ch| c.iter().filter(|&&x| x == ch).count() <= 3) {
                break c;
            }
        };
        let gains: Vec<Complex64> = (0..n * m)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 1e-3)
            .collect();
        let noise = 5e-8;
        let real = ChannelRealization::from_gains(n, m, gains.clone(), noise).unwrap();
        let powers: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let got = all_rates(&real, &ChannelAssignment::new(choices.clone(), m).unwrap(), &powers, bw).unwrap();
        let mut expect = vec![0.0; n];
        for ch in 1..=m {
            let members: Vec<usize> = (0..n).filter(|&u| choices[u] == ch).collect();
            if members.is_empty() {
                continue;
            }
            let cnr: Vec<f64> = (0..n).map(|u| gains[u * m + ch - 1].norm_sqr() / noise).collect();
            for (u, r) in expanded_rates(&powers, &cnr, &members, bw) {
                expect[u] = r;
            }
        }
        for (g, e) in got.iter().zip(&expect) {
            let err = if *e == 0.0 { g.abs() } else { ((g - e) / e).abs() };
            worst = worst.max(err);
        }
    }
    report(3, worst < 1e-12, &format!("max relative error {worst:.2e} over 1000 instances"));
}

/// Round-trips every index of the `(m+1)^n` space both ways.
fn encoding_round_trips(n: usize, m: usize) -> (usize, bool) {
    let size = (m + 1).pow(n as u32);
    let mut seen = vec![false; size];
    let mut ok = true;
    for idx in 0..size {
        let a = decode_discrete(idx, n, m).unwrap();
        let back = encode_discrete(&a, m);
        ok &= back == idx && !seen[back];
        seen[back] = true;
    }
    for code in 0..size {
        let choice: Vec<usize> = (0..n).map(|u| code / (m + 1).pow(u as u32) % (m + 1)).collect();
        let a = ChannelAssignment::new(choice.clone(), m).unwrap();
        ok &= decode_discrete(encode_discrete(&a, m), n, m).unwrap().choices() == choice.as_slice();
    }
    ok &= decode_discrete(size, n, m).is_err();
    (size, ok && seen.iter().all(|&s| s))
}

#[test]
fn c04_discrete_encoding_is_bijective() {
    // Three users on three channels span 64 codes; four users span 256.
    let (small, ok_small) = encoding_round_trips(3, 3);
    let (large, ok_large) = encoding_round_trips(4, 3);
    report(
        4,
        ok_small && ok_large,
        &format!("{small} codes (3 users) and {large} codes (4 users) on 3 channels round-trip"),
    );
}

fn random_spec(rng: &mut ChaCha8Rng) -> NetworkSpec {
    let input = rng.random_range(1..=6);
    let depth = rng.random_range(1..=2);
    let hidden = (0..depth).map(|_| rng.random_range(2..=8)).collect();
    let mut heads = vec![HeadSpec::new("p", rng.random_range(2..=5), Activation::Softmax)];
    if rng.random_bool(0.5) {
        let d = rng.random_range(1..=3);
        heads = vec![
            HeadSpec::new("mu", d, Activation::Linear),
            HeadSpec::new("sigma", d, Activation::Softplus),
        ];
    }
    if rng.random_bool(0.3) {
        heads.push(HeadSpec::new("v", 1, Activation::Linear));
    }
    NetworkSpec::new(input, hidden, heads).unwrap()
}

#[test]
fn c05_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let nets = 25;
    for _ in 0..nets {
        let spec = random_spec(&mut rng);
        let params = ParameterSet((0..spec.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect());
        let x: Vec<f64> = (0..spec.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let up: Vec<Vec<f64>> = spec
            .heads
            .iter()
            .map(|hd| (0..hd.dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let objective = |p: &ParameterSet| -> f64 {
            forward(&spec, p, &x)
                .unwrap()
                .iter()
                .zip(&up)
                .map(|(o, u)| o.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        };
        let analytic = backward(&spec, &params, &x, &up).unwrap();
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.0[i] += h;
            let mut minus = params.clone();
            minus.0[i] -= h;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            worst = worst.max((numeric - analytic.0[i]).abs());
        }
    }
    report(5, worst < 1e-4, &format!("max abs gradient difference {worst:.2e} over {nets} nets"));
}

#[test]
fn c06_optimal_scale_is_monotone_with_correct_endpoints() {
    let qp = QualityParams::default();
    let ep = EnergyParams::default();
    let norm = ep.full_scale_energy();
    let etas: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|&l| optimal_eta(l, norm, DEFAULT_ETA_GRID, &qp, &ep))
        .collect();
    let pass = etas.windows(2).all(|w| w[0] <= w[1]) && etas[0] == ETA_MIN && etas[4] == 1.0;
    report(6, pass, &format!("eta* = {etas:?}"));
}

#[test]
fn c07_mission_time_linear_in_data_size() {
    let mut base = RunConfig {
        eval_episodes: 1,
        eval_fading_seed: Some(7),
        ..Default::default()
    };
    base.env.max_time_s = 1000.0;
    let us = [20.0, 40.0, 60.0, 80.0, 100.0];
    let times: Vec<f64> = us
        .iter()
        .map(|&u| {
            let mut cfg = base.clone();
            cfg.env.data_size_bits = u * 1e6;
            let mut fixed = FixedPolicy::round_robin(&cfg.env, 0.5);
            let recs = evaluate_controller(&mut fixed, &cfg).unwrap();
            assert!(recs[0].completed);
            recs[0].mission_time
        })
        .collect();
    let n = us.len() as f64;
    let mx = us.iter().sum::<f64>() / n;
    let my = times.iter().sum::<f64>() / n;
    let sxy: f64 = us.iter().zip(&times).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = us.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = times.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    report(7, r2 > 0.99, &format!("times {times:?} R^2={r2:.5}"));
}

#[test]
fn c08_desk_scale_learning_beats_random() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut passed = 0;
    let mut details = Vec::new();
    for seed in 0..3u64 {
        let mut cfg = desk_config();
        cfg.seed = seed;
        cfg.checkpoint_interval = 0;
        cfg.output_dir = dir.path().join(format!("seed{seed}"));
        assert!(cfg.episodes <= 2000);
        let report = harness::train(&cfg).unwrap();
        let learned = EvalSummary::from_records(&evaluate_policy(&report.policy, &cfg).unwrap());
        let random = EvalSummary::from_records(&evaluate_controller(&mut RandomPolicy, &cfg).unwrap());
        let ok = learned.mean_mission_time <= 0.7 * random.mean_mission_time && learned.completion_rate >= 0.95;
        passed += ok as usize;
        details.push(format!(
            "seed {seed}: {:.2}s vs random {:.2}s, completion {:.2}",
            learned.mean_mission_time, random.mean_mission_time, learned.completion_rate
        ));
    }
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    report(
        8,
        passed >= 2 && minutes <= 30.0,
        &format!("{passed}/3 seeds [{}] in {minutes:.2} min", details.join("; ")),
    );
}

/// Passes actions through while recording whether each one was legal.
struct Audit<'a, C: Controller> {
    inner: C,
    check: &'a dyn Fn(&HybridAction, &EnvConfig) -> bool,
    steps: usize,
    bad: usize,
}

impl<C: Controller> Controller for Audit<'_, C> {
    fn decide(
        &mut self,
        state: &MissionState,
        config: &EnvConfig,
        rng: &mut dyn rand::RngCore,
    ) -> Result<HybridAction, AgentError> {
        let a = self.inner.decide(state, config, rng)?;
        self.steps += 1;
        if !(self.check)(&a, config) {
            self.bad += 1;
        }
        Ok(a)
    }
}

#[test]
fn c09_benchmark_structure() {
    let mut cfg = desk_config();
    cfg.episodes = 60;
    cfg.checkpoint_interval = 0;
    let dir = tempfile::tempdir().unwrap();
    let env = cfg.env.clone();
    let mut env_rng = ChaCha8Rng::seed_from_u64(90);
    let mut act_rng = ChaCha8Rng::seed_from_u64(91);

    let full_power = |a: &HybridAction, c: &EnvConfig| a.powers == vec![c.max_power; c.num_users()] && a.check(c).is_ok();
    let mut ep_steps = 0;
    let mut ep_bad = 0;
    for trained in [false, true] {
        let policy = if trained {
            cfg.algo = Algorithm::Ep;
            cfg.output_dir = dir.path().join("ep");
            harness::train(&cfg).unwrap().policy
        } else {
            HybridPolicy::new(Algorithm::Ep, &env, &cfg.ppo, 9).unwrap()
        };
        let mut audit = Audit { inner: policy, check: &full_power, steps: 0, bad: 0 };
        for e in 0..100 {
            run_episode(&mut audit, &env, e, &mut env_rng, &mut act_rng, None).unwrap();
        }
        ep_steps += audit.steps;
        ep_bad += audit.bad;
    }

    cfg.algo = Algorithm::Triple;
    cfg.output_dir = dir.path().join("triple");
    let triple = harness::train(&cfg).unwrap().policy;
    let agents = triple.agent_count();
    let legal = |a: &HybridAction, c: &EnvConfig| a.check(c).is_ok();
    let mut audit = Audit { inner: triple, check: &legal, steps: 0, bad: 0 };
    for e in 0..100 {
        run_episode(&mut audit, &env, e, &mut env_rng, &mut act_rng, None).unwrap();
    }
    let pass = ep_bad == 0 && ep_steps > 0 && agents == 3 && audit.bad == 0 && audit.steps > 0;
    report(
        9,
        pass,
        &format!(
            "equal power: {ep_bad} deviations in {ep_steps} steps; triple: {agents} agents, {} illegal of {} steps",
            audit.bad, audit.steps
        ),
    );
}

#[test]
fn c10_training_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let mut cfg = desk_config();
        cfg.episodes = 300;
        cfg.seed = 10;
        cfg.checkpoint_interval = 100;
        cfg.output_dir = dir.path().join(name);
        let report = harness::train(&cfg).unwrap();
        let csv = std::fs::read(&report.metrics_path).unwrap();
        let ckpt = std::fs::read(report.final_checkpoint.join("continuous.json")).unwrap();
        (csv, ckpt)
    };
    let (a_csv, a_ckpt) = run("a");
    let (b_csv, b_ckpt) = run("b");
    let pass = a_csv == b_csv && a_ckpt == b_ckpt && a_csv.len() > 300;
    report(10, pass, &format!("metrics {} bytes, identical={}", a_csv.len(), a_csv == b_csv));
}
