//! Acceptance suite: every criterion at its stated tolerance, one line per
//! criterion. Exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use brexit_core::agents::{Heuristic, Policy, UniformRandom};
use brexit_core::config::{Algorithm, OpponentBlock, OpponentKind, RunConfig};
use brexit_core::game::{mirror_policy, ConnectFour, Game, GameState, TicTacToe};
use brexit_core::inference::{InferenceService, ServiceConfig};
use brexit_core::mcts::{
    backup, extract_policy, search, select_child, PriorSource, RandomRollout, SearchConfig,
    SearchNode,
};
use brexit_core::net::{
    Adam, LossExample, Network, NetworkConfig, Objective, OmExample, LAMBDA_EPSILON,
};
use brexit_core::stats::{bootstrap_ci, iqm, ks_two_sample, mean, probability_of_improvement};
use brexit_core::training::run::{training_loop, RunOptions};
use brexit_core::training::{
    augment_symmetry, collect_episode, update_apprentice, AblationMode, OpponentRecord,
    ReplayBuffer, TrainingSample, UpdateSettings,
};
use brexit_core::Error;
use common::{minimax_optimal, playout_states, random_positions};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("mcts oracle equivalence", mcts_oracle_equivalence),
        ("gradient correctness", gradient_correctness),
        ("loss mechanics", loss_mechanics),
        ("opponent-model learning", opponent_model_learning),
        ("small-scale best response", small_scale_best_response),
        ("statistics oracles", statistics_oracles),
        ("symmetry machinery", symmetry_machinery),
        ("puct and extraction formulas", puct_and_extraction),
        ("inference service", inference_service),
        ("determinism", determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<30} {}  ({}; {:.1}s)",
            i + 1,
            name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn mcts_oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let game = TicTacToe;
    let positions = random_positions(&game, 100, 2024);
    let cfg = SearchConfig {
        budget: 10_000,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let hits = positions
        .iter()
        .filter(|s| {
            let r = search(
                &game,
                s,
                &RandomRollout,
                &PriorSource::Apprentice,
                &cfg,
                &mut rng,
            )
            .unwrap();
            assert_eq!(r.root.total_visits(), 10_000);
            minimax_optimal(&game, s).contains(&r.action)
        })
        .count();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        hits >= 95 && secs < 300.0,
        format!("{hits}/100 minimax-optimal, need 95 within 300s"),
    )
}

fn random_distribution(mask: &[bool], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = mask
        .iter()
        .map(|&m| if m { rng.random::<f64>() + 0.05 } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Random examples on the 4x5 board, each with one opponent record when
/// `heads > 0`.
fn random_batch(game: &dyn Game, heads: usize, size: usize, seed: u64) -> Vec<LossExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_positions(game, 2 * size, seed)
        .chunks(2)
        .map(|pair| {
            let (s, o) = (&pair[0], &pair[1]);
            let mask = game.legal_mask(s);
            let opponents = (heads > 0).then(|| {
                let om = game.legal_mask(o);
                vec![OmExample {
                    head: rng.random_range(0..heads),
                    input: game.encode(o, o.to_move()),
                    target: random_distribution(&om, &mut rng),
                    mask: om,
                }]
            });
            LossExample {
                input: game.encode(s, s.to_move()),
                policy_target: random_distribution(&mask, &mut rng),
                value_target: rng.random_range(-1.0..1.0),
                mask,
                opponents,
            }
        })
        .collect()
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let game = ConnectFour::small();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let cases = [
        (AblationMode::Exit, Objective::ActorCritic),
        (AblationMode::ExitOmfs, Objective::Weighted),
        (AblationMode::BrexitOms, Objective::Weighted),
        (AblationMode::Brexit, Objective::Weighted),
        (AblationMode::Brexit, Objective::PolicyInference),
    ];
    for (k, (mode, objective)) in cases.into_iter().enumerate() {
        assert_eq!(
            mode.objective() == objective,
            objective != Objective::PolicyInference
        );
        let heads = mode.num_opponent_heads();
        let mut net = Network::new(NetworkConfig::new(4, 5, 5, heads), 100 + k as u64).unwrap();
        let batch = random_batch(&game, heads, 4, 200 + k as u64);
        let (_, grad) = net.gradient(&batch, objective).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(300 + k as u64);
        for _ in 0..50 {
            let i = rng.random_range(0..net.num_params());
            let h = 1e-6;
            let p = net.params()[i];
            net.params_mut()[i] = p + h;
            let up = net.losses(&batch, objective).unwrap().total;
            net.params_mut()[i] = p - h;
            let down = net.losses(&batch, objective).unwrap().total;
            net.params_mut()[i] = p;
            let numeric = (up - down) / (2.0 * h);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-3 && secs < 60.0,
        format!("{checked} parameters over 5 objective/mode pairs, worst relative error {worst:.2e}, need < 1e-3 within 60s"),
    )
}

fn cross_entropy(target: &[f64], predicted: &[f64]) -> f64 {
    target
        .iter()
        .zip(predicted)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, p)| -t * p.ln())
        .sum()
}

fn loss_mechanics() -> Verdict {
    let game = ConnectFour::small();
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let net = Network::new(NetworkConfig::new(4, 5, 5, 2), seed).unwrap();
        let batch = random_batch(&game, 2, 8, 50 + seed);
        // losses recomputed from plain forward passes
        let mut lv = 0.0;
        let mut lp = 0.0;
        let mut lpi = 0.0;
        let mut records = 0;
        for ex in &batch {
            let out = net.forward(&ex.input, &ex.mask).unwrap();
            lv += (out.critic - ex.value_target).powi(2);
            lp += cross_entropy(&ex.policy_target, &out.actor);
            for r in ex.opponents.as_ref().unwrap() {
                let o = net.forward(&r.input, &r.mask).unwrap();
                lpi += cross_entropy(&r.target, &o.opponent_models[r.head]);
                records += 1;
            }
        }
        let n = batch.len() as f64;
        let (lv, lp, lpi) = (lv / n, lp / n, lpi / records as f64);
        let lambda = 1.0 / (lpi + LAMBDA_EPSILON).sqrt();
        let w = net.losses(&batch, Objective::Weighted).unwrap();
        let plain = net.losses(&batch, Objective::ActorCritic).unwrap();
        let errs = [
            (w.value_loss - lv).abs(),
            (w.policy_loss - lp).abs(),
            (w.policy_inference_loss.unwrap() - lpi).abs(),
            (w.lambda.unwrap() - lambda).abs(),
            (w.lambda.unwrap() - 1.0 / (w.policy_inference_loss.unwrap() + LAMBDA_EPSILON).sqrt())
                .abs(),
            (w.total - (lambda * (lv + lp) + lpi)).abs(),
            (plain.total - (lv + lp)).abs(),
        ];
        if plain.lambda.is_some() || plain.policy_inference_loss.is_some() {
            return verdict(false, "plain objective reports a lambda");
        }
        worst = errs.iter().copied().fold(worst, f64::max);
    }
    verdict(
        worst <= 1e-10,
        format!("10 random batches, worst deviation {worst:.1e}, need <= 1e-10"),
    )
}

/// Agent and opponent positions from games of a uniformly random agent
/// against the heuristic, with the heuristic's full distribution as target.
fn heuristic_samples(
    game: &dyn Game,
    opponent: &Heuristic,
    games: usize,
    seed: u64,
) -> Vec<TrainingSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..games {
        let mut s = game.initial_state();
        let agent_seat = (rng.next_u32() & 1) as usize;
        while !s.is_terminal() {
            if s.to_move() == agent_seat {
                let a = UniformRandom.act(game, &s, &mut rng).unwrap();
                let after = game.play(&s, a);
                if !after.is_terminal() {
                    let target = opponent.distribution(game, &after, &mut rng).unwrap();
                    let legal = game.legal_actions(&s).unwrap();
                    let mut uniform = vec![0.0; game.num_actions()];
                    legal
                        .iter()
                        .for_each(|&a| uniform[a] = 1.0 / legal.len() as f64);
                    out.push(TrainingSample {
                        state: s.clone(),
                        mcts_policy: uniform,
                        opponent_records: Some(vec![OpponentRecord {
                            state: after.clone(),
                            target,
                        }]),
                        value_target: 0.0,
                    });
                }
                s = after;
            } else {
                let a = opponent.act(game, &s, &mut rng).unwrap();
                s = game.play(&s, a);
            }
        }
    }
    out
}

fn opponent_model_learning() -> Verdict {
    let start = Instant::now();
    let game = ConnectFour::small();
    let opponent = Heuristic::default();
    let train = heuristic_samples(&game, &opponent, 1200, 1);
    let held_out: Vec<LossExample> = heuristic_samples(&game, &opponent, 200, 2)
        .iter()
        .map(|s| s.to_loss_example(&game))
        .collect();
    let mut buffer = ReplayBuffer::new(train.len()).unwrap();
    for s in train {
        buffer.push_raw(s);
    }
    let mut net = Network::new(NetworkConfig::new(4, 5, 5, 1), 9).unwrap();
    let ce = |net: &Network| {
        net.losses(&held_out, Objective::PolicyInference)
            .unwrap()
            .policy_inference_loss
            .unwrap()
    };
    let initial = ce(&net);
    let batch_size = 64;
    let steps_per_epoch = buffer.len().div_ceil(batch_size);
    let epochs = 2000 / steps_per_epoch;
    let mut adam = Adam::new(net.num_params(), 1.5e-3);
    let settings = UpdateSettings {
        epochs,
        batch_size,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let steps = update_apprentice(
        &game,
        &mut net,
        &mut adam,
        &buffer,
        Objective::PolicyInference,
        &settings,
        &mut rng,
    )
    .unwrap()
    .len();
    let last = ce(&net);
    let reduction = 1.0 - last / initial;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        reduction >= 0.5 && steps <= 2000 && secs < 600.0,
        format!(
            "held-out cross-entropy {initial:.3} -> {last:.3} ({:.0}% lower) after {steps} steps on {} samples, need >= 50% within 2000 steps",
            100.0 * reduction,
            buffer.len()
        ),
    )
}

fn best_response_config(mode: AblationMode, seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        ..Default::default()
    };
    cfg.game.height = 4;
    cfg.game.width = 5;
    cfg.game.connect = 3;
    cfg.mode.algorithm = Algorithm(mode);
    cfg.opponent = OpponentBlock {
        kind: OpponentKind::Random,
        ..Default::default()
    };
    cfg.training.generations = 30;
    cfg.training.episodes_per_generation = 50;
    cfg.training.batch_size = 128;
    cfg.evaluation.games = 200;
    cfg.evaluation.interval = 30;
    cfg
}

fn small_scale_best_response() -> Verdict {
    let start = Instant::now();
    let run = |mode: AblationMode| -> f64 {
        let dir = tempfile::tempdir().unwrap();
        let cfg = best_response_config(mode, 5);
        let summary = training_loop(
            &cfg,
            &RunOptions {
                out_dir: dir.path().to_path_buf(),
                resume: None,
                quiet: true,
            },
        )
        .unwrap();
        let last = summary.metrics.last().unwrap();
        assert_eq!((last.generation, last.eval_games), (30, 200));
        last.eval_winrate.unwrap()
    };
    let brexit = run(AblationMode::Brexit);
    let exit = run(AblationMode::Exit);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        brexit >= 0.8 && secs < 7200.0,
        format!(
            "brexit {brexit:.3} vs exit {exit:.3} over 200 games (brexit {} exit), need brexit >= 0.80",
            if brexit >= exit { ">=" } else { "<" }
        ),
    )
}

/// Exhaustive permutation p-value of the two-sample KS statistic.
fn ks_permutation_p(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n = x.len();
    let stat = |a: &[f64], b: &[f64]| {
        pooled
            .iter()
            .map(|&t| {
                let fa = a.iter().filter(|&&v| v <= t).count() as f64 / a.len() as f64;
                let fb = b.iter().filter(|&&v| v <= t).count() as f64 / b.len() as f64;
                (fa - fb).abs()
            })
            .fold(0.0, f64::max)
    };
    let observed = stat(x, y);
    let total = pooled.len();
    let (mut extreme, mut count) = (0u64, 0u64);
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != n {
            continue;
        }
        let (a, b): (Vec<f64>, Vec<f64>) = {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for (i, &v) in pooled.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    a.push(v)
                } else {
                    b.push(v)
                }
            }
            (a, b)
        };
        count += 1;
        if stat(&a, &b) >= observed - 1e-12 {
            extreme += 1;
        }
    }
    extreme as f64 / count as f64
}

fn statistics_oracles() -> Verdict {
    let eight: Vec<f64> = (1..=8).map(f64::from).collect();
    let iqm_ok = iqm(&eight).unwrap() == 4.5;
    let poi_ok = probability_of_improvement(&[1.0, 2.0], &[0.0, 3.0]).unwrap() == 0.5;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_ks: f64 = 0.0;
    for shift in [0.0, 0.2, 0.5, 1.0, 2.0] {
        for _ in 0..6 {
            let x: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.random::<f64>() + shift).collect();
            let lib = ks_two_sample(&x, &y).unwrap().p_value;
            worst_ks = worst_ks.max((lib - ks_permutation_p(&x, &y)).abs());
        }
    }

    // uniform(0, 1) samples of 30 have mean 0.5
    let mut covered = 0;
    for _ in 0..200 {
        let sample: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        let (lo, hi) = bootstrap_ci(&sample, &mean, 1000, 0.95, &mut rng).unwrap();
        if lo <= 0.5 && 0.5 <= hi {
            covered += 1;
        }
    }
    let coverage = covered as f64 / 200.0;
    verdict(
        iqm_ok && poi_ok && worst_ks <= 0.02 && (coverage - 0.95).abs() <= 0.04,
        format!(
            "iqm {}, poi {}, ks worst gap {worst_ks:.4} over 30 pairs, bootstrap coverage {coverage:.3}",
            if iqm_ok { "exact" } else { "wrong" },
            if poi_ok { "exact" } else { "wrong" },
        ),
    )
}

fn symmetry_machinery() -> Verdict {
    let mut failures = Vec::new();
    for (label, game) in [
        ("6x7", ConnectFour::standard()),
        ("4x5", ConnectFour::small()),
    ] {
        for s in playout_states(&game, 1000, 8) {
            let m = game.mirror_state(&s);
            if game.mirror_state(&m) != s {
                failures.push(format!("{label}: involution"));
            }
            if s.is_terminal() {
                continue;
            }
            for a in game.legal_actions(&s).unwrap() {
                if game.play(&m, game.mirror_action(a)) != game.mirror_state(&game.play(&s, a)) {
                    failures.push(format!("{label}: commutation"));
                }
            }
        }
    }

    let game = ConnectFour::small();
    let mut cfg = RunConfig::default();
    cfg.game.height = 4;
    cfg.game.width = 5;
    cfg.game.connect = 3;
    cfg.search.budget = 20;
    let settings = cfg.collect_settings();
    let net = Network::new(cfg.network_config(), 1).unwrap();
    let mut buffer = ReplayBuffer::new(10_000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut samples = 0;
    for _ in 0..10 {
        let ep = collect_episode(&game, &net, &Heuristic::default(), &settings, &mut rng).unwrap();
        for s in &ep.samples {
            buffer.push_augmented(&game, s).unwrap();
            samples += 1;
            let (orig, twin) = augment_symmetry(&game, s).unwrap();
            let round_trip = mirror_policy(&twin.mcts_policy).unwrap();
            if orig != *s
                || twin.state != game.mirror_state(&s.state)
                || twin.mcts_policy != mirror_policy(&s.mcts_policy).unwrap()
                || round_trip != s.mcts_policy
                || twin.value_target != s.value_target
            {
                failures.push("twin policy target".into());
            }
            let pairs = s
                .opponent_records
                .iter()
                .flatten()
                .zip(twin.opponent_records.iter().flatten());
            for (o, t) in pairs {
                if t.state != game.mirror_state(&o.state)
                    || mirror_policy(&t.target).unwrap() != o.target
                {
                    failures.push("twin opponent target".into());
                }
            }
        }
    }
    if buffer.inserted() != 2 * samples as u64 || buffer.len() != 2 * samples {
        failures.push(format!(
            "{} insertions for {samples} samples",
            buffer.inserted()
        ));
    }
    failures.dedup();
    verdict(
        failures.is_empty() && samples > 0,
        if failures.is_empty() {
            format!(
                "2000 playout states, {samples} samples doubled to {} buffer entries",
                buffer.len()
            )
        } else {
            failures.join(", ")
        },
    )
}

fn node(priors: &[f64], visits: &[u32], q: &[f64]) -> SearchNode {
    let actions: Vec<usize> = (0..priors.len()).collect();
    let mut n = SearchNode::new(0, &actions, priors);
    for (e, (&v, &q)) in n.edges.iter_mut().zip(visits.iter().zip(q)) {
        e.visits = v;
        e.value_sum = q * f64::from(v);
    }
    n
}

fn puct_and_extraction() -> Verdict {
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };
    check(
        select_child(&node(&[0.2, 0.5, 0.3], &[0, 0, 0], &[0.0; 3]), 2.0) == 1,
        "prior argmax at zero visits",
    );
    check(
        select_child(&node(&[0.5, 0.5], &[10, 1], &[0.0, 0.0]), 2.0) == 1,
        "visit penalty",
    );
    check(
        select_child(&node(&[0.5, 0.5], &[5, 5], &[0.9, 0.1]), 2.0) == 0,
        "value dominance",
    );
    // Q + 2 P sqrt(3) / (1 + N): 0.677, 0.920, 0.693
    check(
        select_child(&node(&[0.5, 0.3, 0.2], &[2, 1, 0], &[0.1, 0.4, 0.0]), 2.0) == 1,
        "hand-computed scores",
    );

    let p = extract_policy(&[10.0, 30.0, 60.0], 1.0).unwrap();
    check(
        p.iter()
            .zip([0.1, 0.3, 0.6])
            .all(|(a, b)| (a - b).abs() < 1e-12),
        "tau 1",
    );
    let p = extract_policy(&[10.0, 30.0, 60.0], 0.01).unwrap();
    check(p[2] > 1.0 - 1e-6, "tau 0.01");
    for tau in [0.01, 0.5, 1.0, 3.0] {
        check(
            extract_policy(&[5.0, 5.0], tau).unwrap() == vec![0.5, 0.5],
            "equal visits",
        );
    }

    let mut tree = vec![node(&[1.0], &[0], &[0.0])];
    backup(&mut tree, &[(0, 0)], 0.4, 0);
    check(
        tree[0].edges[0].visits == 1 && tree[0].edges[0].mean_value() == 0.4,
        "single backup",
    );
    backup(&mut tree, &[(0, 0)], -0.2, 0);
    check(
        (tree[0].edges[0].mean_value() - 0.1).abs() < 1e-12,
        "running mean",
    );
    let mut tree = vec![node(&[1.0], &[0], &[0.0]), node(&[1.0], &[0], &[0.0])];
    tree[1].player = 1;
    backup(&mut tree, &[(0, 0), (1, 0)], 1.0, 0);
    check(
        tree[0].edges[0].mean_value() == 1.0 && tree[1].edges[0].mean_value() == -1.0,
        "perspective flip",
    );

    let game = TicTacToe;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let one = |budget| SearchConfig {
        budget,
        ..Default::default()
    };
    let r = search(
        &game,
        &game.initial_state(),
        &RandomRollout,
        &PriorSource::Apprentice,
        &one(1),
        &mut rng,
    )
    .unwrap();
    check(
        r.root.total_visits() == 1 && r.visit_counts()[r.action] == 1.0,
        "budget 1",
    );
    let forced = GameState::from_rows(3, 3, 3, "xox xoo ox.").unwrap();
    let r = search(
        &game,
        &forced,
        &RandomRollout,
        &PriorSource::Apprentice,
        &one(30),
        &mut rng,
    )
    .unwrap();
    check(
        game.legal_actions(&forced).unwrap() == vec![r.action],
        "single legal action",
    );
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            "worked examples reproduced".to_string()
        } else {
            failures.join(", ")
        },
    )
}

fn inference_service() -> Verdict {
    let game = ConnectFour::small();
    let network = Arc::new(Network::new(NetworkConfig::new(4, 5, 5, 1), 21).unwrap());
    let states: Vec<GameState> = random_positions(&game, 100, 31);
    let inputs: Vec<_> = states
        .iter()
        .map(|s| (game.encode(s, s.to_move()), game.legal_mask(s)))
        .collect();
    let expected: Vec<_> = inputs
        .iter()
        .map(|(x, m)| network.forward(x, m).unwrap())
        .collect();

    // batched answers for the 100 states, all submitted at once
    let service = InferenceService::start(
        Arc::clone(&network),
        ServiceConfig {
            batch_limit: 32,
            batch_timeout: Duration::from_millis(50),
        },
    );
    let batched: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = inputs
            .iter()
            .map(|(x, m)| {
                let client = service.client();
                scope.spawn(move || client.infer(x.clone(), m.clone()).unwrap())
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let max_diff = batched
        .iter()
        .zip(&expected)
        .flat_map(|(b, e)| {
            let heads = b.actor.iter().zip(&e.actor).map(|(x, y)| (x - y).abs());
            let oms = b
                .opponent_models
                .iter()
                .zip(&e.opponent_models)
                .flat_map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs()));
            heads
                .chain(oms)
                .chain(std::iter::once((b.critic - e.critic).abs()))
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);
    service.shutdown();

    // stress: 10^5 submissions from short-lived clients, with a shutdown
    // before the end so that some requests are refused
    const TOTAL: u64 = 100_000;
    let service = Mutex::new(Some(InferenceService::start(
        Arc::clone(&network),
        ServiceConfig::default(),
    )));
    let submitted = AtomicU64::new(0);
    let answered = AtomicU64::new(0);
    let rejected = AtomicU64::new(0);
    let mismatched = AtomicU64::new(0);
    std::thread::scope(|scope| {
        for w in 0..8u64 {
            let (service, submitted, answered, rejected, mismatched) =
                (&service, &submitted, &answered, &rejected, &mismatched);
            let (inputs, expected) = (&inputs, &expected);
            scope.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(w);
                loop {
                    let client = service
                        .lock()
                        .unwrap()
                        .as_ref()
                        .map(InferenceService::client);
                    let burst = rng.random_range(1..400u64);
                    for _ in 0..burst {
                        let ticket = submitted.fetch_add(1, Ordering::SeqCst);
                        if ticket >= TOTAL {
                            submitted.fetch_sub(1, Ordering::SeqCst);
                            return;
                        }
                        if ticket == TOTAL * 9 / 10 {
                            if let Some(s) = service.lock().unwrap().take() {
                                s.shutdown();
                            }
                        }
                        let k = rng.random_range(0..inputs.len());
                        let result = match &client {
                            Some(c) => c.infer(inputs[k].0.clone(), inputs[k].1.clone()),
                            None => Err(Error::ServiceShutdown),
                        };
                        match result {
                            Ok(out) => {
                                if out != expected[k] {
                                    mismatched.fetch_add(1, Ordering::SeqCst);
                                }
                                answered.fetch_add(1, Ordering::SeqCst);
                            }
                            Err(Error::ServiceShutdown) => {
                                rejected.fetch_add(1, Ordering::SeqCst);
                            }
                            Err(e) => panic!("unexpected error {e}"),
                        }
                    }
                }
            });
        }
    });
    let (s, a, r, bad) = (
        submitted.load(Ordering::SeqCst),
        answered.load(Ordering::SeqCst),
        rejected.load(Ordering::SeqCst),
        mismatched.load(Ordering::SeqCst),
    );
    verdict(
        max_diff <= 1e-6 && s == TOTAL && a + r == s && bad == 0 && r > 0,
        format!("batched max difference {max_diff:.1e}; {s} submitted, {a} answered, {r} rejected, {bad} mismatched"),
    )
}

fn determinism() -> Verdict {
    let mut cfg = RunConfig {
        seed: 10,
        ..Default::default()
    };
    cfg.game.height = 4;
    cfg.game.width = 5;
    cfg.game.connect = 3;
    cfg.search.budget = 16;
    cfg.training.generations = 3;
    cfg.training.episodes_per_generation = 8;
    cfg.training.batch_size = 32;
    cfg.training.epochs = 2;
    cfg.opponent.kind = OpponentKind::SelfPlay;
    cfg.evaluation.games = 20;
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        training_loop(
            &cfg,
            &RunOptions {
                out_dir: dir.path().to_path_buf(),
                resume: None,
                quiet: true,
            },
        )
        .unwrap();
        let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
        (
            read("metrics.jsonl"),
            read("metrics.csv"),
            read("checkpoints/gen-0003.ckpt"),
        )
    };
    let a = run();
    let b = run();
    let lines = String::from_utf8_lossy(&a.0).lines().count();
    verdict(
        a == b && lines == 3,
        format!(
            "{lines} metric lines; metrics {} and final checkpoints {}",
            if a.0 == b.0 && a.1 == b.1 {
                "byte-identical"
            } else {
                "differ"
            },
            if a.2 == b.2 {
                "byte-identical"
            } else {
                "differ"
            }
        ),
    )
}
