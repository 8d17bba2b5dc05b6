//! The generation loop: collect episodes against the configured opponent,
//! insert augmented samples, update the apprentice, evaluate, and persist.
//!
//! Output directory layout:
//!
//! ```text
//! config.toml                      canonical configuration of the run
//! metrics.jsonl, metrics.csv       one record per generation
//! timing.csv                       wall-clock seconds per phase
//! checkpoints/gen-NNNN.ckpt        network and optimizer after generation N
//! checkpoints/gen-NNNN.buffer.jsonl replay buffer (latest generation only)
//! datasets/gen-NNNN.jsonl          optional buffer exports
//! ```
//!
//! Every random stream is derived from the run seed and the generation (and
//! episode) index, and episodes enter the buffer in index order, so the
//! number of workers does not change the results.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::dataset::{read_dataset, write_dataset};
use super::{
    collect_episode, mean_losses, update_apprentice, Episode, ReplayBuffer, SelfPlayPopulation,
};
use crate::agents::{ApprenticeAgent, Heuristic, MctsAgent, Policy, UniformRandom};
use crate::config::{OpponentBlock, OpponentKind, RunConfig};
use crate::error::{Error, Result};
use crate::game::Game;
use crate::inference::{InferenceService, ServiceConfig};
use crate::mcts::Evaluator;
use crate::net::{Adam, Checkpoint, Network};
use crate::seeding::{derive, label, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub generation: u64,
    pub config_hash: String,
    pub episodes: usize,
    pub samples_added: usize,
    pub buffer_size: usize,
    pub updates: usize,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub policy_inference_loss: Option<f64>,
    pub lambda: Option<f64>,
    pub total_loss: f64,
    /// Agent score over the generation's episodes, draws as half.
    pub train_winrate: f64,
    pub mean_episode_length: f64,
    pub eval_winrate: Option<f64>,
    pub eval_games: usize,
    pub population: usize,
}

const CSV_HEADER: &str = "generation,config_hash,episodes,samples_added,buffer_size,updates,value_loss,policy_loss,policy_inference_loss,lambda,total_loss,train_winrate,mean_episode_length,eval_winrate,eval_games,population";

impl MetricsRecord {
    fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.generation,
            self.config_hash,
            self.episodes,
            self.samples_added,
            self.buffer_size,
            self.updates,
            self.value_loss,
            self.policy_loss,
            opt(self.policy_inference_loss),
            opt(self.lambda),
            self.total_loss,
            self.train_winrate,
            self.mean_episode_length,
            opt(self.eval_winrate),
            self.eval_games,
            self.population
        )
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Dataset(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn write_metrics(dir: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut jsonl = String::new();
    let mut csv = format!("{CSV_HEADER}\n");
    for r in records {
        jsonl.push_str(&serde_json::to_string(r).expect("metrics serialize"));
        jsonl.push('\n');
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_file(&dir.join("metrics.jsonl"), jsonl.as_bytes())?;
    write_file(&dir.join("metrics.csv"), csv.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

pub fn checkpoint_path(dir: &Path, generation: u64) -> PathBuf {
    dir.join("checkpoints")
        .join(format!("gen-{generation:04}.ckpt"))
}

fn buffer_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("buffer.jsonl")
}

/// Builds a fixed opponent policy. Self-play has no fixed policy.
pub fn build_opponent(block: &OpponentBlock, game: &dyn Game) -> Result<Arc<dyn Policy>> {
    Ok(match block.kind {
        OpponentKind::Random => Arc::new(UniformRandom),
        OpponentKind::Heuristic => Arc::new(Heuristic {
            temperature: block.temperature,
        }),
        OpponentKind::Mcts => Arc::new(MctsAgent::new(block.budget)),
        OpponentKind::Checkpoint => {
            let path = block.path.as_ref().ok_or_else(|| Error::Config {
                path: "opponent.path".into(),
                message: "required for a checkpoint opponent".into(),
            })?;
            let ck = Checkpoint::load(path)?;
            if ck.network.config().num_actions != game.num_actions() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: network has {} actions, game has {}",
                    path.display(),
                    ck.network.config().num_actions,
                    game.num_actions()
                )));
            }
            let mut agent = ApprenticeAgent::new(Arc::new(ck.network), block.greedy);
            agent.label = format!("checkpoint:{}", path.display());
            Arc::new(agent)
        }
        OpponentKind::SelfPlay => {
            return Err(Error::InvalidArgument(
                "self-play has no fixed opponent policy".into(),
            ))
        }
    })
}

enum OpponentPool {
    Fixed(Arc<dyn Policy>),
    SelfPlay(SelfPlayPopulation),
}

impl OpponentPool {
    fn pick(&self, current: &Arc<Network>, rng: &mut dyn rand::RngCore) -> Arc<dyn Policy> {
        match self {
            OpponentPool::Fixed(p) => Arc::clone(p),
            OpponentPool::SelfPlay(pop) => {
                let (net, idx) = pop.sample(current, rng);
                let mut agent = ApprenticeAgent::new(net, false);
                agent.label = match idx {
                    Some(i) => format!("snapshot-{i}"),
                    None => "current".into(),
                };
                Arc::new(agent)
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
    pub quiet: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub final_checkpoint: Option<PathBuf>,
    pub generations_run: u64,
    pub metrics: Vec<MetricsRecord>,
    pub network: Network,
}

struct Trainer<'a> {
    config: &'a RunConfig,
    game: Box<dyn Game>,
    network: Network,
    optimizer: Adam,
    buffer: ReplayBuffer,
    pool: OpponentPool,
    eval_opponent: Arc<dyn Policy>,
    metrics: Vec<MetricsRecord>,
    hash: u64,
}

impl Trainer<'_> {
    fn collect(
        &self,
        generation: u64,
        snapshot: &Arc<Network>,
        service: Option<&InferenceService>,
    ) -> Result<Vec<Episode>> {
        let n = self.config.training.episodes_per_generation;
        let settings = self.config.collect_settings();
        let game = &*self.game;
        let seed = self.config.seed;
        let run_episode = |idx: usize, evaluator: &dyn Evaluator| -> Result<Episode> {
            let mut rng = stream(seed, &[label::EPISODE, generation, idx as u64]);
            let opponent = self.pool.pick(snapshot, &mut rng);
            collect_episode(game, evaluator, &*opponent, &settings, &mut rng)
        };
        let Some(service) = service else {
            return (0..n).map(|i| run_episode(i, &**snapshot)).collect();
        };
        let next = AtomicUsize::new(0);
        let (tx, rx) = crossbeam_channel::unbounded();
        std::thread::scope(|scope| {
            for _ in 0..self.config.parallelism.workers {
                let tx = tx.clone();
                let client = service.client();
                let next = &next;
                let run_episode = &run_episode;
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let result = run_episode(i, &client);
                    let failed = result.is_err();
                    if tx.send((i, result)).is_err() || failed {
                        break;
                    }
                });
            }
        });
        drop(tx);
        let mut results: Vec<(usize, Result<Episode>)> = rx.iter().collect();
        results.sort_by_key(|(i, _)| *i);
        if let Some((_, Err(_))) = results.iter().find(|(_, r)| r.is_err()) {
            let (_, err) = results.into_iter().find(|(_, r)| r.is_err()).unwrap();
            return Err(err.unwrap_err());
        }
        if results.len() != n {
            return Err(Error::InvalidArgument(format!(
                "collected {} of {n} episodes",
                results.len()
            )));
        }
        Ok(results.into_iter().map(|(_, r)| r.unwrap()).collect())
    }
}

/// Runs generations until `training.generations` have completed, writing
/// outputs under `options.out_dir`.
pub fn training_loop(config: &RunConfig, options: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let game = config.build_game()?;
    let net_cfg = config.network_config();
    let hash = config.hash();
    let out = &options.out_dir;
    let ck_dir = out.join("checkpoints");
    fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e))?;
    write_file(&out.join("config.toml"), config.to_toml().as_bytes())?;

    let self_play = config.opponent.kind == OpponentKind::SelfPlay;
    let mut pool = if self_play {
        OpponentPool::SelfPlay(SelfPlayPopulation::new())
    } else {
        OpponentPool::Fixed(build_opponent(&config.opponent, &*game)?)
    };
    let eval_block = match (&config.evaluation.opponent, self_play) {
        (Some(b), _) => b.clone(),
        (None, true) => OpponentBlock::default(),
        (None, false) => config.opponent.clone(),
    };
    let eval_opponent = build_opponent(&eval_block, &*game)?;

    let (network, optimizer, buffer, start, metrics) = match &options.resume {
        None => {
            let network = Network::new(net_cfg, derive(config.seed, &[label::NETWORK]))?;
            let optimizer = Adam::new(network.num_params(), config.training.learning_rate);
            let _ = fs::remove_file(out.join("timing.csv"));
            (
                network,
                optimizer,
                ReplayBuffer::new(config.training.buffer_capacity)?,
                1,
                Vec::new(),
            )
        }
        Some(path) => {
            let ck = Checkpoint::load_matching(path, &net_cfg)?;
            if ck.config_hash != hash {
                return Err(Error::Config {
                    path: path.display().to_string(),
                    message: format!(
                        "checkpoint config hash {:016x} differs from this run's {hash:016x}",
                        ck.config_hash
                    ),
                });
            }
            let optimizer = ck.optimizer.ok_or_else(|| {
                Error::Checkpoint(format!("{}: no optimizer state", path.display()))
            })?;
            let mut buffer = ReplayBuffer::new(config.training.buffer_capacity)?;
            let sidecar = buffer_path(path);
            if !sidecar.exists() {
                return Err(Error::Checkpoint(format!(
                    "{}: replay buffer sidecar {} is missing",
                    path.display(),
                    sidecar.display()
                )));
            }
            for s in read_dataset(&sidecar)? {
                buffer.push_raw(s);
            }
            if let OpponentPool::SelfPlay(pop) = &mut pool {
                let dir = path.parent().unwrap_or(Path::new("."));
                for g in 1..=ck.generation {
                    let p = dir.join(format!("gen-{g:04}.ckpt"));
                    pop.push(Arc::new(Checkpoint::load_matching(&p, &net_cfg)?.network));
                }
            }
            let metrics_path = out.join("metrics.jsonl");
            let mut metrics = if metrics_path.exists() {
                read_metrics(&metrics_path)?
            } else {
                Vec::new()
            };
            metrics.retain(|m| m.generation <= ck.generation);
            (ck.network, optimizer, buffer, ck.generation + 1, metrics)
        }
    };

    let mut trainer = Trainer {
        config,
        game,
        network,
        optimizer,
        buffer,
        pool,
        eval_opponent,
        metrics,
        hash,
    };
    write_metrics(out, &trainer.metrics)?;
    let timing = out.join("timing.csv");
    if !timing.exists() {
        write_file(
            &timing,
            b"generation,collect_seconds,update_seconds,evaluation_seconds\n",
        )?;
    }

    let service = (config.parallelism.workers > 1).then(|| {
        InferenceService::start(
            Arc::new(trainer.network.clone()),
            ServiceConfig {
                batch_limit: config.parallelism.batch_limit,
                batch_timeout: Duration::from_secs_f64(
                    config.parallelism.batch_timeout_ms / 1000.0,
                ),
            },
        )
    });

    let mut last_checkpoint = None;
    let mut ran = 0;
    for generation in start..=config.training.generations {
        let t0 = Instant::now();
        let snapshot = Arc::new(trainer.network.clone());
        if let Some(s) = &service {
            s.swap(Arc::clone(&snapshot))?;
        }
        let episodes = trainer.collect(generation, &snapshot, service.as_ref())?;
        let mut samples_added = 0;
        for ep in &episodes {
            for s in &ep.samples {
                trainer.buffer.push_augmented(&*trainer.game, s)?;
                samples_added += 2;
            }
        }
        let t1 = Instant::now();

        let mut rng = stream(config.seed, &[label::UPDATE, generation]);
        let history = update_apprentice(
            &*trainer.game,
            &mut trainer.network,
            &mut trainer.optimizer,
            &trainer.buffer,
            config.mode.algorithm.0.objective(),
            &config.update_settings(),
            &mut rng,
        )?;
        if let OpponentPool::SelfPlay(pop) = &mut trainer.pool {
            pop.push(Arc::new(trainer.network.clone()));
        }
        let t2 = Instant::now();

        let interval = config.evaluation.interval;
        let eval_winrate = if interval > 0
            && generation % interval == 0
            && config.evaluation.games > 0
        {
            let agent =
                ApprenticeAgent::new(Arc::new(trainer.network.clone()), config.evaluation.greedy);
            let record = crate::eval::play_matches(
                &*trainer.game,
                &agent,
                &*trainer.eval_opponent,
                config.evaluation.games,
                derive(config.seed, &[label::EVALUATION, generation]),
            )?;
            Some(record.winrate_a())
        } else {
            None
        };
        let t3 = Instant::now();

        let losses = mean_losses(&history).expect("non-empty buffer yields updates");
        let n_ep = episodes.len().max(1) as f64;
        let record = MetricsRecord {
            generation,
            config_hash: format!("{:016x}", trainer.hash),
            episodes: episodes.len(),
            samples_added,
            buffer_size: trainer.buffer.len(),
            updates: history.len(),
            value_loss: losses.value_loss,
            policy_loss: losses.policy_loss,
            policy_inference_loss: losses.policy_inference_loss,
            lambda: losses.lambda,
            total_loss: losses.total,
            train_winrate: episodes
                .iter()
                .map(|e| (e.agent_reward + 1.0) / 2.0)
                .sum::<f64>()
                / n_ep,
            mean_episode_length: episodes.iter().map(|e| e.plies as f64).sum::<f64>() / n_ep,
            eval_winrate,
            eval_games: if eval_winrate.is_some() {
                config.evaluation.games
            } else {
                0
            },
            population: match &trainer.pool {
                OpponentPool::SelfPlay(p) => p.len(),
                OpponentPool::Fixed(_) => 0,
            },
        };

        let ck_path = checkpoint_path(out, generation);
        Checkpoint {
            generation,
            config_hash: trainer.hash,
            config_text: config.to_toml(),
            network: trainer.network.clone(),
            optimizer: Some(trainer.optimizer.clone()),
        }
        .save(&ck_path)?;
        write_dataset(&buffer_path(&ck_path), trainer.buffer.iter())?;
        if generation > 1 {
            let _ = fs::remove_file(buffer_path(&checkpoint_path(out, generation - 1)));
        }
        if config.training.export_dataset {
            let dir = out.join("datasets");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_dataset(
                &dir.join(format!("gen-{generation:04}.jsonl")),
                trainer.buffer.iter(),
            )?;
        }
        trainer.metrics.push(record.clone());
        write_metrics(out, &trainer.metrics)?;
        append_line(
            &timing,
            &format!(
                "{generation},{:.3},{:.3},{:.3}",
                (t1 - t0).as_secs_f64(),
                (t2 - t1).as_secs_f64(),
                (t3 - t2).as_secs_f64()
            ),
        )?;
        if !options.quiet {
            eprintln!(
                "generation {generation}: loss {:.4} (v {:.4}, pi {:.4}{}), train {:.3}{}",
                record.total_loss,
                record.value_loss,
                record.policy_loss,
                record
                    .policy_inference_loss
                    .map(|l| format!(", om {l:.4}"))
                    .unwrap_or_default(),
                record.train_winrate,
                record
                    .eval_winrate
                    .map(|w| format!(", eval {w:.3}"))
                    .unwrap_or_default(),
            );
        }
        last_checkpoint = Some(ck_path);
        ran += 1;
    }
    if let Some(s) = service {
        s.shutdown();
    }
    Ok(RunSummary {
        final_checkpoint: last_checkpoint,
        generations_run: ran,
        metrics: trainer.metrics,
        network: trainer.network,
    })
}
