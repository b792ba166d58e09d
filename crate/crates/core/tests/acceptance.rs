//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured values. Training criteria build real FactWorld runs; the
//! numeric criteria check closed forms, oracles, and exact invariants.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use colab_forge::metrics::in_score;
use colab_forge::rewards::{
    combine, efficiency_penalty, feedback_penalty, RewardComponents, RewardWeights,
};
use colab_forge::rl::factworld::{build_fact_world, FactWorldSpec};
use colab_forge::rl::gae::{compute_gae_lambda, value_targets, GaeConfig, LambdaMode};
use colab_forge::rl::loss::{value_loss, vapo_loss, ClipConfig, RolloutBatch, RolloutStep, RolloutTraj};
use colab_forge::rl::policy::TokenPolicy;
use colab_forge::rl::rollout::FeatureMap;
use colab_forge::rl::train::{train_loop, StopRule, TrainConfig};
use colab_forge::rl::value::LinearValue;
use colab_forge::rl::{Features, StepContext};
use colab_forge::trajectory::{parse, serialize, FormatRule};

// ---------------------------------------------------------------------------
// 1. Grammar suite
// ---------------------------------------------------------------------------

#[test]
fn c01_grammar_suite() {
    let start = Instant::now();
    let valid: Vec<(&str, usize)> = vec![
        // Zero-request.
        ("<think>t</think><answer>Beijing</answer>", 0),
        ("<think></think><answer></answer>", 0),
        // One request.
        (
            "<think>a</think><message>q</message><agent-reply>r</agent-reply><think>b</think><answer>x</answer>",
            1,
        ),
        // Reply followed directly by the answer.
        (
            "<think>a</think><message>q</message><agent-reply>r</agent-reply><answer>x</answer>",
            1,
        ),
        // Two requests.
        (
            "<think>a</think><message>q1</message><agent-reply>r1</agent-reply><think>b</think>\
             <message>q2</message><agent-reply>r2</agent-reply><think>c</think><answer>x</answer>",
            2,
        ),
        // Three requests.
        (
            "<think>a</think><message>q1</message><agent-reply>r1</agent-reply><think>b</think>\
             <message>q2</message><agent-reply>r2</agent-reply><think>c</think>\
             <message>q3</message><agent-reply>r3</agent-reply><think>d</think><answer>x</answer>",
            3,
        ),
        // Inter-block whitespace is tolerated.
        ("<think>a</think>\n  <answer>x</answer>\n", 0),
    ];
    for (raw, n_r) in &valid {
        let t = parse(raw).unwrap_or_else(|e| panic!("fixture should parse: {raw:?} ({e})"));
        assert_eq!(t.n_requests(), *n_r, "n_r of {raw:?}");
    }

    let invalid: Vec<(&str, FormatRule)> = vec![
        ("hello<think>a</think><answer>x</answer>", FormatRule::MissingLeadingThink),
        ("<message>q</message><answer>x</answer>", FormatRule::MessageWithoutThink),
        (
            "<think>a</think><message>q</message><agent-reply>r</agent-reply><message>m</message><answer>x</answer>",
            FormatRule::MessageWithoutThink,
        ),
        ("<think>a</think><message>q</message><answer>x</answer>", FormatRule::MissingAgentReply),
        ("<think>a</think><answer>x</answer>junk", FormatRule::TrailingContent),
        ("<think>a</think><answer>x", FormatRule::UnclosedTag),
        ("<think>a<answer>b</answer></think><answer>x</answer>", FormatRule::NestedTag),
        ("<think>a</think>", FormatRule::NoAnswer),
        ("<think>a</think><agent-reply>r</agent-reply><answer>x</answer>", FormatRule::ReplyWithoutMessage),
        ("<think>a</think><think>b</think><answer>x</answer>", FormatRule::RepeatedTag),
    ];
    for (raw, rule) in &invalid {
        let err = parse(raw).expect_err(raw);
        assert_eq!(err.rule, *rule, "rule for {raw:?}");
    }

    // Round trips on the valid fixtures.
    for (raw, _) in &valid {
        let t = parse(raw).unwrap();
        assert_eq!(parse(&serialize(&t).unwrap()).unwrap(), t);
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "grammar suite took {elapsed:?}");
    println!(
        "ACCEPTANCE 01 grammar-suite: PASS ({} valid, {} invalid, {:?})",
        valid.len(),
        invalid.len(),
        elapsed
    );
}

// ---------------------------------------------------------------------------
// 2. Reward closed form
// ---------------------------------------------------------------------------

#[test]
fn c02_reward_closed_form() {
    struct Row {
        is_easy: bool,
        n_r: usize,
        n_max: usize,
        correct: bool,
        need: usize,
        leak: bool,
        format_bad: bool,
        alpha: f64,
        beta: f64,
        expect: f64,
    }
    let row = |is_easy, n_r, n_max, correct, need, leak, format_bad, alpha, beta, expect| Row {
        is_easy, n_r, n_max, correct, need, leak, format_bad, alpha, beta, expect,
    };
    // Hand-evaluated totals of R = f + q + fb + α·p + β·e.
    let table = vec![
        row(true, 0, 8, true, 0, false, false, 0.3, 0.2, 1.0),
        row(true, 0, 8, true, 0, false, false, 1.0, 1.0, 1.0),
        row(true, 2, 8, true, 0, false, false, 0.3, 0.2, 0.8),
        row(true, 2, 8, true, 0, false, false, 1.0, 1.0, 0.0),
        row(false, 2, 8, true, 0, false, false, 0.3, 0.2, 0.95),
        row(false, 2, 8, true, 0, false, false, 1.0, 1.0, 0.75),
        row(false, 8, 8, false, 2, true, false, 0.3, 0.2, -1.5),
        row(false, 8, 8, false, 2, true, false, 1.0, 1.0, -3.0),
        row(false, 0, 8, false, 0, false, false, 0.3, 0.2, 0.0),
        row(false, 0, 8, false, 0, false, false, 1.0, 1.0, 0.0),
        row(true, 1, 8, true, 1, true, true, 0.3, 0.2, -1.5),
        row(true, 1, 8, true, 1, true, true, 1.0, 1.0, -3.0),
    ];
    assert_eq!(table.len(), 12);
    for (i, r) in table.iter().enumerate() {
        let components = RewardComponents::<f64> {
            r_format: if r.format_bad { -1.0 } else { 0.0 },
            r_quality: if r.correct { 1.0 } else { 0.0 },
            r_feedback: feedback_penalty(r.need),
            r_privacy: if r.leak { -1.0 } else { 0.0 },
            r_efficiency: efficiency_penalty(r.is_easy, r.n_r, r.n_max).unwrap(),
        };
        let got = combine(components, RewardWeights { alpha: r.alpha, beta: r.beta }).total;
        assert_eq!(got, r.expect, "row {i}");
    }
    // The two named efficiency values.
    assert_eq!(efficiency_penalty::<f64>(true, 2, 8).unwrap(), -1.0);
    assert_eq!(efficiency_penalty::<f64>(false, 2, 8).unwrap(), -0.25);
    println!("ACCEPTANCE 02 reward-closed-form: PASS (12 rows exact)");
}

// ---------------------------------------------------------------------------
// 3. INScore identities
// ---------------------------------------------------------------------------

#[test]
fn c03_inscore_identities() {
    let ids = ["a", "b", "c", "d", "e", "f"];
    let labels: HashMap<String, bool> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), i < 3))
        .collect();
    let with = |f: &dyn Fn(usize, bool) -> usize| -> HashMap<String, usize> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), f(i, i < 3)))
            .collect()
    };
    // Oracle deferral: easy never requests, hard always does.
    let oracle = with(&|_, easy| if easy { 0 } else { 2 });
    assert_eq!(in_score::<f64>(&labels, &oracle).unwrap(), 1.0);
    // Constant policies sit at exactly one half.
    let always = with(&|_, _| 1);
    assert_eq!(in_score::<f64>(&labels, &always).unwrap(), 0.5);
    let never = with(&|_, _| 0);
    assert_eq!(in_score::<f64>(&labels, &never).unwrap(), 0.5);

    // Mixed fixture: 2 easy (1 without request), 2 hard (both with).
    let labels2: HashMap<String, bool> =
        [("a", true), ("b", true), ("c", false), ("d", false)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
    let reqs2: HashMap<String, usize> = [("a", 0), ("b", 1), ("c", 1), ("d", 3)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    assert_eq!(in_score::<f64>(&labels2, &reqs2).unwrap(), 0.75);
    println!("ACCEPTANCE 03 inscore-identities: PASS (1.0 / 0.5 / 0.75 exact)");
}

// ---------------------------------------------------------------------------
// 4. GAE limits and oracle
// ---------------------------------------------------------------------------

/// Independent nested-loop oracle over the masked subsequence.
fn gae_oracle(rewards: &[f64], values: &[f64], mask: &[u8], gamma: f64, lambda: f64) -> Vec<f64> {
    let idx: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| (m == 1).then_some(i))
        .collect();
    let n = idx.len();
    let mut out = vec![0.0; rewards.len()];
    for k in 0..n {
        let mut acc = 0.0;
        for l in 0..(n - k) {
            let j = k + l;
            let next_v = if j + 1 < n { values[idx[j + 1]] } else { 0.0 };
            let delta = rewards[idx[j]] + gamma * next_v - values[idx[j]];
            acc += (gamma * lambda).powi(l as i32) * delta;
        }
        out[idx[k]] = acc;
    }
    out
}

#[test]
fn c04_gae_limits_and_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut max_err: f64 = 0.0;
    for case in 0..100 {
        let len = rng.gen_range(1..=8);
        let mask: Vec<u8> = (0..len).map(|_| u8::from(rng.gen_bool(0.7))).collect();
        let mask = if mask.iter().all(|&m| m == 0) { vec![1; len] } else { mask };
        let rewards: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gamma = rng.gen_range(0.1..=1.0f64);
        let lambda = rng.gen_range(0.0..=1.0f64);

        let (adv, _) = compute_gae_lambda(&rewards, &values, &mask, gamma, lambda).unwrap();
        let oracle = gae_oracle(&rewards, &values, &mask, gamma, lambda);
        for (a, o) in adv.iter().zip(&oracle) {
            max_err = max_err.max((a - o).abs());
            assert!((a - o).abs() < 1e-9, "case {case}: {a} vs oracle {o}");
        }

        // λ=1, γ=1 is Monte-Carlo reward-to-go minus the baseline.
        let (adv_mc, _) = compute_gae_lambda(&rewards, &values, &mask, 1.0, 1.0).unwrap();
        let masked: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| (m == 1).then_some(i))
            .collect();
        for (k, &i) in masked.iter().enumerate() {
            let togo: f64 = masked[k..].iter().map(|&j| rewards[j]).sum();
            assert!((adv_mc[i] - (togo - values[i])).abs() < 1e-9);
        }

        // λ=0 is the one-step TD residual.
        let (adv_td, _) = compute_gae_lambda(&rewards, &values, &mask, gamma, 0.0).unwrap();
        for (k, &i) in masked.iter().enumerate() {
            let next_v = if k + 1 < masked.len() { values[masked[k + 1]] } else { 0.0 };
            let delta = rewards[i] + gamma * next_v - values[i];
            assert!((adv_td[i] - delta).abs() < 1e-9);
        }
    }
    println!("ACCEPTANCE 04 gae-limits: PASS (100 cases, max oracle err {max_err:.2e})");
}

// ---------------------------------------------------------------------------
// 5. Gradient fidelity (finite differences)
// ---------------------------------------------------------------------------

fn random_batch(rng: &mut ChaCha8Rng, policy: &TokenPolicy<f64>, feature_dim: usize) -> RolloutBatch<f64> {
    let vocab = policy.vocab_size;
    let n_traj = rng.gen_range(2..=3);
    let mut trajectories = Vec::new();
    for _ in 0..n_traj {
        let len = rng.gen_range(2..=6);
        let mask: Vec<u8> = (0..len).map(|i| u8::from(i == 0 || rng.gen_bool(0.75))).collect();
        let mut tokens = Vec::new();
        let mut steps = Vec::new();
        let mut old_log_probs = vec![0.0; len];
        let mut values = vec![0.0; len];
        let mut rewards = vec![0.0; len];
        let mut advantages = vec![0.0; len];
        let mut returns = vec![0.0; len];
        for i in 0..len {
            if mask[i] == 1 {
                let mut legal: Vec<usize> = (0..vocab).filter(|_| rng.gen_bool(0.6)).collect();
                if legal.is_empty() {
                    legal = (0..vocab).collect();
                }
                let token = legal[rng.gen_range(0..legal.len())];
                let mut features = Features::new(feature_dim);
                for f in 0..feature_dim {
                    if rng.gen_bool(0.4) {
                        features.push(f, rng.gen_range(-1.0..1.0));
                    }
                }
                let ctx = StepContext { prev_token: rng.gen_range(0..vocab), features, legal };
                let lp = policy.log_prob(&ctx, token);
                // A ratio away from the clip kinks so the finite difference
                // stays on one smooth branch.
                let mut ratio: f64 = rng.gen_range(0.5..1.6);
                for kink in [0.8, 1.28] {
                    if (ratio - kink).abs() < 5e-3 {
                        ratio += 0.01;
                    }
                }
                old_log_probs[i] = lp - ratio.ln();
                steps.push(RolloutStep { ctx, token, old_log_prob: old_log_probs[i] });
                tokens.push(token);
                values[i] = rng.gen_range(-1.0..1.0);
                rewards[i] = rng.gen_range(-1.0..1.0);
                advantages[i] = rng.gen_range(-1.5..1.5);
                returns[i] = rng.gen_range(-1.5..1.5);
            } else {
                tokens.push(rng.gen_range(0..vocab));
            }
        }
        trajectories.push(RolloutTraj {
            tokens,
            mask,
            steps,
            old_log_probs,
            values,
            rewards,
            advantages,
            returns,
        });
    }
    RolloutBatch { trajectories }
}

#[test]
#[allow(clippy::needless_range_loop)]
fn c05_gradient_fidelity() {
    let clip = ClipConfig::<f64>::default();
    let eps = 1e-5;
    let mut worst_policy: f64 = 0.0;
    let mut worst_value: f64 = 0.0;
    for case in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + case);
        let feature_dim = 5;
        let mut policy = TokenPolicy::<f64>::tabular_bigram(6);
        for t in policy.theta.iter_mut() {
            *t = rng.gen_range(-0.8..0.8);
        }
        let batch = random_batch(&mut rng, &policy, feature_dim);

        let (_, grad) = vapo_loss(&policy, &batch, &clip).unwrap();
        for i in 0..policy.param_len() {
            let mut plus = policy.clone();
            plus.theta[i] += eps;
            let mut minus = policy.clone();
            minus.theta[i] -= eps;
            let (lp, _) = vapo_loss(&plus, &batch, &clip).unwrap();
            let (lm, _) = vapo_loss(&minus, &batch, &clip).unwrap();
            let fd = (lp - lm) / (2.0 * eps);
            let denom = fd.abs().max(1e-6);
            let rel = (fd - grad[i]).abs() / denom;
            worst_policy = worst_policy.max(rel);
            assert!(rel <= 1e-4, "case {case} policy param {i}: fd {fd} vs {}", grad[i]);
        }

        let mut vm = LinearValue::<f64>::new(feature_dim);
        for p in vm.phi.iter_mut() {
            *p = rng.gen_range(-0.5..0.5);
        }
        let (_, vgrad) = value_loss(&vm, &batch).unwrap();
        for i in 0..vm.param_len() {
            let mut plus = vm.clone();
            plus.phi[i] += eps;
            let mut minus = vm.clone();
            minus.phi[i] -= eps;
            let (lp, _) = value_loss(&plus, &batch).unwrap();
            let (lm, _) = value_loss(&minus, &batch).unwrap();
            let fd = (lp - lm) / (2.0 * eps);
            let denom = fd.abs().max(1e-6);
            let rel = (fd - vgrad[i]).abs() / denom;
            worst_value = worst_value.max(rel);
            assert!(rel <= 1e-4, "case {case} value param {i}: fd {fd} vs {}", vgrad[i]);
        }
    }
    println!(
        "ACCEPTANCE 05 gradient-fidelity: PASS (20 cases, max rel err policy {worst_policy:.2e}, value {worst_value:.2e})"
    );
}

// ---------------------------------------------------------------------------
// 6. Mask invariance (bitwise)
// ---------------------------------------------------------------------------

#[test]
fn c06_mask_invariance_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut policy = TokenPolicy::<f64>::tabular_bigram(6);
    for t in policy.theta.iter_mut() {
        *t = rng.gen_range(-0.8..0.8);
    }
    let base = random_batch(&mut rng, &policy, 5);
    let clip = ClipConfig::<f64>::default();
    let gae = GaeConfig::<f64> {
        gamma: 0.97,
        lambda_mode: LambdaMode::Fixed(0.8),
        value_lambda: 1.0,
    };

    let finish = |mut batch: RolloutBatch<f64>| {
        for traj in &mut batch.trajectories {
            let (adv, _) =
                colab_forge::rl::gae::compute_gae(&traj.rewards, &traj.values, &traj.mask, &gae)
                    .unwrap();
            traj.advantages = adv;
            traj.returns = value_targets(&traj.rewards, &traj.values, &traj.mask, &gae).unwrap();
        }
        batch
    };

    let clean = finish(base.clone());
    let mut fuzzed_src = base.clone();
    for traj in &mut fuzzed_src.trajectories {
        for i in 0..traj.tokens.len() {
            if traj.mask[i] == 0 {
                traj.tokens[i] = rng.gen_range(0..6);
                traj.rewards[i] = rng.gen_range(-100.0..100.0);
                traj.values[i] = rng.gen_range(-100.0..100.0);
                traj.old_log_probs[i] = rng.gen_range(-100.0..0.0);
            }
        }
    }
    let fuzzed = finish(fuzzed_src);

    let vm = {
        let mut vm = LinearValue::<f64>::new(5);
        for p in vm.phi.iter_mut() {
            *p = rng.gen_range(-0.5..0.5);
        }
        vm
    };

    let (loss_a, grad_a) = vapo_loss(&policy, &clean, &clip).unwrap();
    let (loss_b, grad_b) = vapo_loss(&policy, &fuzzed, &clip).unwrap();
    assert_eq!(loss_a.to_bits(), loss_b.to_bits(), "loss must be bitwise identical");
    for (a, b) in grad_a.iter().zip(&grad_b) {
        assert_eq!(a.to_bits(), b.to_bits(), "gradient must be bitwise identical");
    }
    let (vl_a, vg_a) = value_loss(&vm, &clean).unwrap();
    let (vl_b, vg_b) = value_loss(&vm, &fuzzed).unwrap();
    assert_eq!(vl_a.to_bits(), vl_b.to_bits());
    for (a, b) in vg_a.iter().zip(&vg_b) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    println!("ACCEPTANCE 06 mask-invariance: PASS (loss and gradients bitwise identical)");
}

// ---------------------------------------------------------------------------
// 7. Clip dead zone
// ---------------------------------------------------------------------------

#[test]
fn c07_clip_dead_zone() {
    let policy = TokenPolicy::<f64>::tabular_bigram(4);
    let clip = ClipConfig::<f64>::default();
    let make = |ratio: f64, adv: f64| {
        let ctx = StepContext::<f64> {
            prev_token: 0,
            features: Features::new(0),
            legal: (0..4).collect(),
        };
        let token = 2usize;
        let lp = policy.log_prob(&ctx, token);
        let old = lp - ratio.ln();
        RolloutBatch {
            trajectories: vec![RolloutTraj {
                tokens: vec![token],
                mask: vec![1],
                steps: vec![RolloutStep { ctx, token, old_log_prob: old }],
                old_log_probs: vec![old],
                values: vec![0.0],
                rewards: vec![adv],
                advantages: vec![adv],
                returns: vec![adv],
            }],
        }
    };
    let grad_at = |ratio: f64, adv: f64| {
        let (_, grad) = vapo_loss(&policy, &make(ratio, adv), &clip).unwrap();
        grad
    };

    // Dead zones: saturated clip on the selected branch.
    for (ratio, adv) in [(1.5, 1.0), (2.0, 0.5), (0.5, -1.0), (0.7, -2.0)] {
        let grad = grad_at(ratio, adv);
        assert!(grad.iter().all(|&g| g == 0.0), "dead zone at ratio {ratio}, adv {adv}");
    }
    // Live regimes: gradient flows with the right sign on the chosen logit.
    let chosen = 2; // bigram row of prev token 0, column 2
    let g = grad_at(1.1, 1.0);
    assert!(g[chosen] < 0.0, "positive advantage favors raising the chosen logit");
    let g = grad_at(0.9, -1.0);
    assert!(g[chosen] > 0.0, "negative advantage pushes the chosen logit down");
    // The min keeps the unclipped branch for negative advantage above the
    // high clip.
    let g = grad_at(1.5, -1.0);
    assert!(g[chosen] > 0.0);
    println!("ACCEPTANCE 07 clip-dead-zone: PASS (exact zeros and signs)");
}

// ---------------------------------------------------------------------------
// 8. Toy learning run
// ---------------------------------------------------------------------------

fn desk_train_config(seed: u64, alpha: f64, beta: f64, steps: usize) -> TrainConfig<f64> {
    TrainConfig {
        steps,
        warmstart_steps: 300,
        weights: RewardWeights { alpha, beta },
        gae: GaeConfig {
            gamma: 1.0,
            lambda_mode: LambdaMode::LengthAdaptive { alpha_len: 1.0 },
            value_lambda: 1.0,
        },
        seed,
        eval_every: 50,
        ..TrainConfig::default()
    }
}

struct Run {
    report: colab_forge::rl::train::TrainingReport,
}

fn run_training(spec: &FactWorldSpec, cfg: &TrainConfig<f64>) -> Run {
    let world = build_fact_world(spec).expect("world builds");
    assert!(world.vocab.len() <= 64, "vocabulary stays within 64 tokens");
    let fmap = FeatureMap::new(Arc::clone(&world.vocab));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = TokenPolicy::<f64>::tiny_mlp(world.vocab.len(), fmap.dim, cfg.hidden, &mut rng);
    let mut vm = LinearValue::<f64>::new(fmap.dim);
    let report = train_loop(&world, &mut policy, &mut vm, cfg).expect("training runs");
    Run { report }
}

#[test]
fn c08_toy_learning() {
    let start = Instant::now();
    let spec = FactWorldSpec {
        entities: 200,
        relations: 4,
        cloud_only_fraction: 0.5,
        privacy_token_fraction: 0.0,
        hops: 1,
        seed: 7,
        train_queries: 512,
        heldout_queries: 256,
    };
    let mut cfg = desk_train_config(7, 0.3, 0.2, 2700);
    cfg.stop = Some(StopRule {
        min_steps: 900,
        quality: 0.95,
        in_score: 0.9,
        easy_request_rate: 0.1,
    });
    let run = run_training(&spec, &cfg);
    let report = &run.report;
    let elapsed = start.elapsed();

    assert!(report.steps_run <= 3000, "within 3000 updates (ran {})", report.steps_run);
    let fe = &report.final_eval;
    assert!(fe.quality >= 0.9, "mean r_quality {} >= 0.9", fe.quality);
    let in_score = fe.in_score.expect("both difficulty classes present");
    assert!(in_score >= 0.85, "INScore {in_score} >= 0.85");
    let easy_rate = fe.easy_request_rate.expect("easy class present");
    assert!(easy_rate <= 0.15, "easy-query request rate {easy_rate} <= 0.15");

    // Monotone-trending curve: the policy's own sampled reward.
    let first10: f64 =
        report.rows.iter().take(10).map(|r| r.mean_reward).sum::<f64>() / 10.0;
    let last10: f64 = report.rows.iter().rev().take(10).map(|r| r.mean_reward).sum::<f64>() / 10.0;
    assert!(
        last10 > first10 + 0.5,
        "final 10-step mean R {last10:.3} vs first {first10:.3}"
    );
    assert!(elapsed.as_secs() < 900, "runtime {elapsed:?} within 15 minutes");
    println!(
        "ACCEPTANCE 08 toy-learning: PASS (steps {}, quality {:.3}, in_score {:.3}, easy_req {:.3}, dR {:.2}, {:?})",
        report.steps_run, fe.quality, in_score, easy_rate, last10 - first10, elapsed
    );
}

// ---------------------------------------------------------------------------
// 9. Efficiency-penalty monotonicity
// ---------------------------------------------------------------------------

#[test]
fn c09_efficiency_monotonicity() {
    let spec = FactWorldSpec {
        entities: 200,
        relations: 4,
        cloud_only_fraction: 0.5,
        privacy_token_fraction: 0.0,
        hops: 1,
        seed: 7,
        train_queries: 512,
        heldout_queries: 256,
    };
    let mut turns = Vec::new();
    for beta in [0.0, 0.4, 0.8] {
        let cfg = desk_train_config(11, 0.3, beta, 1200);
        let run = run_training(&spec, &cfg);
        turns.push(run.report.final_eval.avg_turns);
    }
    assert!(
        turns[0] >= turns[1] && turns[1] >= turns[2],
        "avg turns non-increasing in beta: {turns:?}"
    );
    assert!(
        turns[2] <= turns[0] - 0.2,
        "beta=0.8 turns {} <= beta=0 turns {} - 0.2",
        turns[2],
        turns[0]
    );
    println!("ACCEPTANCE 09 efficiency-monotonicity: PASS (avg turns {turns:?})");
}

// ---------------------------------------------------------------------------
// 10. Privacy trade-off
// ---------------------------------------------------------------------------

#[test]
fn c10_privacy_tradeoff() {
    let spec = FactWorldSpec {
        entities: 200,
        relations: 4,
        cloud_only_fraction: 0.5,
        privacy_token_fraction: 0.3,
        hops: 1,
        seed: 7,
        train_queries: 512,
        heldout_queries: 256,
    };
    let run0 = run_training(&spec, &desk_train_config(13, 0.0, 0.2, 2000));
    let run3 = run_training(&spec, &desk_train_config(13, 0.3, 0.2, 2000));
    let (f0, f3) = (&run0.report.final_eval, &run3.report.final_eval);
    assert!(f0.priv_sample >= 0.10, "alpha=0 Priv_sample {} >= 0.10", f0.priv_sample);
    assert!(f3.priv_sample <= 0.01, "alpha=0.3 Priv_sample {} <= 0.01", f3.priv_sample);
    let degradation = (f0.quality - f3.quality).abs();
    assert!(degradation <= 0.02, "quality degradation {degradation} <= 0.02");
    println!(
        "ACCEPTANCE 10 privacy-tradeoff: PASS (priv {:.3} -> {:.3}, quality {:.3} vs {:.3})",
        f0.priv_sample, f3.priv_sample, f0.quality, f3.quality
    );
}

// ---------------------------------------------------------------------------
// 11. Synthesis round trip and filter soundness
// ---------------------------------------------------------------------------

#[test]
fn c11_privsynth_round_trip() {
    use colab_forge::agents::{GenerationParams, PromptTemplates};
    use colab_forge::privsynth::mock::{
        corrupt_item, toy_qa_corpus, Corruption, RuleCheckAgent, RuleMockGen,
    };
    use colab_forge::privsynth::{filter_item, synthesize_corpus, Provenance};

    let corpus = toy_qa_corpus(1000, 42);
    let gen = RuleMockGen::new(7);
    let checker = RuleCheckAgent::from_corpus(&corpus);
    let templates = PromptTemplates::default();
    let params = GenerationParams::default();
    let out = synthesize_corpus(&corpus, &gen, &checker, &templates, &params, Provenance::RuleMock, 2);

    assert_eq!(out.items.len(), 1000, "no rejections on the faithful pipeline");
    for (item, qa) in out.items.iter().zip(&corpus) {
        assert_eq!(item.answers, qa.answers, "answer preservation");
        assert!(!item.privacy_items.is_empty());
    }

    // 50 seeded corruption cases: answer altered or revealed.
    let mut rng = ChaCha8Rng::seed_from_u64(1101);
    let mut false_accepts = 0;
    for k in 0..50 {
        let idx = rng.gen_range(0..corpus.len());
        let mode = if k % 2 == 0 { Corruption::AnswerAltered } else { Corruption::AnswerRevealed };
        let bad = corrupt_item(&out.items[idx], mode);
        if filter_item(&corpus[idx], &bad, &checker, &templates, &params).unwrap() {
            false_accepts += 1;
        }
    }
    assert_eq!(false_accepts, 0, "no corruption case passes the filter");

    // Stats carry the dataset-table shape.
    let stats_json = serde_json::to_value(&out.stats).unwrap();
    for key in ["samples", "total_privacy_items", "avg_input_tokens", "rejection_breakdown"] {
        assert!(stats_json.get(key).is_some(), "stats key {key}");
    }
    let avg_items = out.stats.total_privacy_items as f64 / out.stats.samples as f64;
    assert!((avg_items - 2.77).abs() <= 0.25, "privacy items per sample {avg_items:.2} near 2.8");
    assert!(out.stats.avg_input_tokens > 0.0);
    println!(
        "ACCEPTANCE 11 privsynth-round-trip: PASS (1000 items preserved, 0/50 false accepts, {:.2} items/sample)",
        avg_items
    );
}

// ---------------------------------------------------------------------------
// 12. End-to-end smoke through the CLI
// ---------------------------------------------------------------------------

#[test]
fn c12_end_to_end_smoke() {
    use std::process::Command;

    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);
    let bin = env!("CARGO_BIN_EXE_colab-forge");

    // Source corpus.
    let corpus = colab_forge::privsynth::mock::toy_qa_corpus(40, 3);
    colab_forge::data::write_jsonl(&path("qa.jsonl"), &corpus).unwrap();

    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().expect("spawn colab-forge");
        assert!(
            out.status.success(),
            "command {:?} failed:\n{}",
            args,
            String::from_utf8_lossy(&out.stderr)
        );
    };

    run(&[
        "synth",
        "--in", path("qa.jsonl").to_str().unwrap(),
        "--gen", "rulemock:5",
        "--check", "rulemock",
        "--out", path("privqa.jsonl").to_str().unwrap(),
        "--stats", path("stats.json").to_str().unwrap(),
        "--facts-out", path("facts.json").to_str().unwrap(),
    ]);
    run(&[
        "profile-difficulty",
        "--data", path("privqa.jsonl").to_str().unwrap(),
        "--local", "mock:solo",
        "--k", "1",
        "--out", path("labels.jsonl").to_str().unwrap(),
    ]);
    for (local, name) in [("mock:forward", "fwd"), ("mock:solo", "solo")] {
        run(&[
            "simulate",
            "--data", path("privqa.jsonl").to_str().unwrap(),
            "--local", local,
            "--cloud", &format!("mock:{}", path("facts.json").display()),
            "--n-max", "8",
            "--labels", path("labels.jsonl").to_str().unwrap(),
            "--judge", "rule",
            "--out", path(&format!("episodes_{name}.jsonl")).to_str().unwrap(),
        ]);
        run(&[
            "eval",
            "--episodes", path(&format!("episodes_{name}.jsonl")).to_str().unwrap(),
            "--labels", path("labels.jsonl").to_str().unwrap(),
            "--data", path("privqa.jsonl").to_str().unwrap(),
            "--judge", "rule",
            "--out", path(&format!("report_{name}.json")).to_str().unwrap(),
        ]);
    }

    let report = |name: &str| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(path(name)).unwrap()).unwrap()
    };
    // Scored episode records carry the reward breakdown.
    let first_fwd: serde_json::Value = serde_json::from_str(
        std::fs::read_to_string(path("episodes_fwd.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    // Every query profiles easy under the solo mock, so the forwarding
    // policy pays both penalties: 1 (quality) - 0.3 (leak) - 0.2 (easy
    // request) = 0.5.
    assert_eq!(first_fwd["reward"]["r_quality"], 1.0);
    assert_eq!(first_fwd["reward"]["r_privacy"], -1.0);
    assert_eq!(first_fwd["reward"]["r_efficiency"], -1.0);
    assert_eq!(first_fwd["reward"]["total"], (1.0f64 - 0.3) - 0.2);

    let fwd = report("report_fwd.json");
    let solo = report("report_solo.json");
    assert_eq!(fwd["overall"]["priv_sample"], 1.0, "forward policy leaks every sample");
    assert_eq!(solo["overall"]["priv_sample"], 0.0, "solo policy never leaks");
    assert_eq!(fwd["overall"]["em"], 1.0, "forward policy resolves everything");
    assert_eq!(solo["overall"]["em"], 1.0, "solo policy answers from its table");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "smoke completed in {elapsed:?}");
    println!(
        "ACCEPTANCE 12 end-to-end-smoke: PASS (forward priv 1.0, solo priv 0.0, {:?})",
        elapsed
    );
}
