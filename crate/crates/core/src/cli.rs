//! Command-line front end. `run_cli` parses arguments, dispatches to the
//! subcommands and maps failures to exit codes: 0 success, 1 usage error
//! (bad flags, agent specs or configuration), 2 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{ApprenticeAgent, ExpertAgent, Heuristic, MctsAgent, Policy, UniformRandom};
use crate::config::RunConfig;
use crate::error::Error;
use crate::eval::{mcts_equivalent_strength, winrate_matrix};
use crate::game::Game;
use crate::mcts::SearchConfig;
use crate::net::Checkpoint;
use crate::stats::{bootstrap_ci, iqm, ks_two_sample, mean, probability_of_improvement_ci};
use crate::training::run::{read_metrics, training_loop, RunOptions};
use crate::training::AblationMode;

/// Overrides the output directory when `--out` is not given.
pub const OUT_DIR_ENV: &str = "BREXIT_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "brexit-runs";

#[derive(Parser, Debug)]
#[command(
    name = "brexit",
    version,
    about = "Expert iteration with opponent-aware search priors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an apprentice.
    Train(TrainArgs),
    /// Play agents against each other and report a winrate matrix.
    Eval(EvalArgs),
    /// Train every combination of ablation modes and seeds.
    Sweep(SweepArgs),
    /// Play against an agent in the terminal.
    Play(PlayArgs),
    /// IQM, bootstrap intervals, probability of improvement and KS tests
    /// over final scores.
    Stats(StatsArgs),
    /// Per-generation IQM winrate curves across runs, as CSV.
    PlotData(PlotArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct CommonArgs {
    /// TOML run configuration; absent keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (falls back to $BREXIT_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Agent specs: random, heuristic[:T], mcts:N, apprentice:PATH,
    /// sampled:PATH, expert:PATH:N.
    #[arg(required = true)]
    agents: Vec<String>,
    /// Games per matrix cell; defaults to `evaluation.games`.
    #[arg(long)]
    games: Option<usize>,
    /// Fill the diagonal with self-play matches instead of 0.5.
    #[arg(long)]
    self_play: bool,
    /// Also find each agent's rollout-MCTS equivalent strength.
    #[arg(long)]
    sweep: bool,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20,50,100,200")]
    budgets: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    goal: f64,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "exit,exit-omfs,brexit-oms,brexit"
    )]
    modes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
    seeds: Vec<u64>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct PlayArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Apprentice checkpoint driving the opposing search.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Opposing agent spec when no checkpoint is given.
    #[arg(long)]
    agent: Option<String>,
    /// Seat of the human player.
    #[arg(long, default_value_t = 0)]
    seat: usize,
    #[arg(long, default_value_t = 200)]
    budget: usize,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// `label,value` CSV files or run directories (labelled by their parent
    /// directory, scored by the last evaluation winrate).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    resamples: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the tables here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Run directories; runs sharing a parent directory form one curve.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    resamples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(Error::io(Path::new("<stdio>"), e))
    }
}

type CliResult = std::result::Result<(), CliError>;

/// Entry point shared by the binary and the tests.
pub fn run_cli<I, T>(
    args: I,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    1
                }
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, stdout),
        Command::Eval(a) => cmd_eval(a, stdout),
        Command::Sweep(a) => cmd_sweep(a, stdout),
        Command::Play(a) => cmd_play(a, stdin, stdout),
        Command::Stats(a) => cmd_stats(a, stdout),
        Command::PlotData(a) => cmd_plot_data(a, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            let _ = writeln!(stderr, "usage error: {m}");
            1
        }
        Err(CliError::Runtime(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            2
        }
    }
}

fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn load_config(common: &CommonArgs) -> std::result::Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.parallelism.workers = w;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

/// `--out`, then the environment variable, then `fallback`.
fn resolve_out(flag: &Option<PathBuf>, fallback: Option<&str>) -> Option<PathBuf> {
    flag.clone()
        .or_else(|| {
            std::env::var_os(OUT_DIR_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        })
        .or_else(|| fallback.map(PathBuf::from))
}

fn cmd_train(args: TrainArgs, stdout: &mut dyn Write) -> CliResult {
    let cfg = load_config(&args.common)?;
    let out = resolve_out(&args.common.out, Some(DEFAULT_OUT_DIR)).expect("fallback given");
    let summary = training_loop(
        &cfg,
        &RunOptions {
            out_dir: out.clone(),
            resume: args.resume,
            quiet: args.quiet,
        },
    )?;
    writeln!(
        stdout,
        "trained {} generation(s) into {}",
        summary.generations_run,
        out.display()
    )?;
    if let Some(p) = summary.final_checkpoint {
        writeln!(stdout, "final checkpoint: {}", p.display())?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs, stdout: &mut dyn Write) -> CliResult {
    let base = load_config(&args.common)?;
    let out = resolve_out(&args.common.out, Some(DEFAULT_OUT_DIR)).expect("fallback given");
    let modes = args
        .modes
        .iter()
        .map(|m| {
            AblationMode::ALL
                .into_iter()
                .find(|a| a.label() == m)
                .ok_or_else(|| CliError::Usage(format!("unknown mode {m:?}")))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    for mode in modes {
        for &seed in &args.seeds {
            let mut cfg = base.clone();
            cfg.mode.algorithm.0 = mode;
            cfg.seed = seed;
            let dir = out.join(mode.label()).join(format!("seed-{seed}"));
            let summary = training_loop(
                &cfg,
                &RunOptions {
                    out_dir: dir.clone(),
                    resume: None,
                    quiet: args.quiet,
                },
            )?;
            let last = summary.metrics.last();
            writeln!(
                stdout,
                "{} seed {seed}: eval winrate {}",
                mode.label(),
                last.and_then(|m| m.eval_winrate)
                    .map(|w| format!("{w:.3}"))
                    .unwrap_or_else(|| "n/a".into())
            )?;
        }
    }
    Ok(())
}

/// Parsed form of an agent spec string.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentSpec {
    Random,
    Heuristic(f64),
    Mcts(usize),
    Apprentice { path: PathBuf, greedy: bool },
    Expert { path: PathBuf, budget: usize },
}

impl AgentSpec {
    pub fn parse(spec: &str) -> std::result::Result<Self, String> {
        let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let number = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| format!("{spec:?}: {s:?} is not a budget"))
        };
        match (kind, rest) {
            ("random", "") => Ok(AgentSpec::Random),
            ("heuristic", "") => Ok(AgentSpec::Heuristic(Heuristic::default().temperature)),
            ("heuristic", t) => t
                .parse()
                .ok()
                .filter(|t: &f64| *t > 0.0)
                .map(AgentSpec::Heuristic)
                .ok_or_else(|| format!("{spec:?}: temperature must be positive")),
            ("mcts", n) => Ok(AgentSpec::Mcts(number(n)?)),
            ("apprentice" | "sampled", p) if !p.is_empty() => Ok(AgentSpec::Apprentice {
                path: p.into(),
                greedy: kind == "apprentice",
            }),
            ("expert", r) => {
                let (p, n) = r
                    .rsplit_once(':')
                    .ok_or_else(|| format!("{spec:?}: expected expert:PATH:BUDGET"))?;
                Ok(AgentSpec::Expert {
                    path: p.into(),
                    budget: number(n)?,
                })
            }
            _ => Err(format!("unrecognised agent spec {spec:?}")),
        }
    }

    pub fn build(&self, game: &dyn Game) -> crate::Result<Arc<dyn Policy>> {
        let load = |path: &Path| -> crate::Result<Arc<crate::net::Network>> {
            let ck = Checkpoint::load(path)?;
            if ck.network.config().num_actions != game.num_actions() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: network has {} actions, game has {}",
                    path.display(),
                    ck.network.config().num_actions,
                    game.num_actions()
                )));
            }
            Ok(Arc::new(ck.network))
        };
        Ok(match self {
            AgentSpec::Random => Arc::new(UniformRandom),
            AgentSpec::Heuristic(t) => Arc::new(Heuristic { temperature: *t }),
            AgentSpec::Mcts(b) => Arc::new(MctsAgent::new(*b)),
            AgentSpec::Apprentice { path, greedy } => {
                let mut a = ApprenticeAgent::new(load(path)?, *greedy);
                a.label = path.display().to_string();
                Arc::new(a)
            }
            AgentSpec::Expert { path, budget } => Arc::new(ExpertAgent {
                network: load(path)?,
                config: SearchConfig {
                    budget: *budget,
                    ..Default::default()
                },
            }),
        })
    }
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn cmd_eval(args: EvalArgs, stdout: &mut dyn Write) -> CliResult {
    let cfg = load_config(&args.common)?;
    let game = cfg.build_game()?;
    let specs = args
        .agents
        .iter()
        .map(|s| AgentSpec::parse(s).map_err(CliError::Usage))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let agents = specs
        .iter()
        .map(|s| s.build(&*game))
        .collect::<crate::Result<Vec<_>>>()?;
    let refs: Vec<&dyn Policy> = agents.iter().map(|a| &**a).collect();
    let games = args.games.unwrap_or(cfg.evaluation.games);
    let out = resolve_out(&args.common.out, None);
    if let Some(dir) = &out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let matrix = winrate_matrix(
        &*game,
        &refs,
        args.agents.clone(),
        games,
        args.self_play,
        cfg.seed,
    )?;
    let csv = matrix.to_csv();
    write!(stdout, "{csv}")?;
    if let Some(dir) = &out {
        let p = dir.join("winrate_matrix.csv");
        fs::write(&p, &csv).map_err(|e| Error::io(&p, e))?;
    }
    if args.sweep {
        for (i, (label, agent)) in args.agents.iter().zip(&refs).enumerate() {
            let sweep = mcts_equivalent_strength(
                &*game,
                *agent,
                args.goal,
                &args.budgets,
                games,
                crate::seeding::derive(cfg.seed, &[crate::seeding::label::EVALUATION, i as u64]),
            )?;
            writeln!(
                stdout,
                "{label}: rollout MCTS reaches {:.2} at budget {}",
                args.goal,
                sweep
                    .reached
                    .map(|b| b.to_string())
                    .unwrap_or_else(|| "none of the grid".into())
            )?;
            if let Some(dir) = &out {
                let p = dir.join(format!("sweep-{i}-{}.csv", sanitize(label)));
                fs::write(&p, sweep.to_csv()).map_err(|e| Error::io(&p, e))?;
            } else {
                write!(stdout, "{}", sweep.to_csv())?;
            }
        }
    }
    Ok(())
}

fn cmd_play(args: PlayArgs, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> CliResult {
    if args.seat > 1 {
        return Err(CliError::Usage(format!(
            "seat must be 0 or 1, got {}",
            args.seat
        )));
    }
    let mut cfg = load_config(&args.common)?;
    let (game, agent): (Box<dyn Game>, Arc<dyn Policy>) = match &args.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            cfg = RunConfig::from_toml_str(&ck.config_text)?;
            let game = cfg.build_game()?;
            let agent = ExpertAgent {
                network: Arc::new(ck.network),
                config: SearchConfig {
                    budget: args.budget,
                    ..Default::default()
                },
            };
            (game, Arc::new(agent))
        }
        None => {
            let spec = match &args.agent {
                Some(s) => AgentSpec::parse(s).map_err(CliError::Usage)?,
                None => AgentSpec::Mcts(args.budget),
            };
            let game = cfg.build_game()?;
            let agent = spec.build(&*game)?;
            (game, agent)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.common.seed.unwrap_or(cfg.seed));
    let mut state = game.initial_state();
    let labels: String = (0..game.width())
        .map(|c| char::from_digit(c as u32 % 10, 10).unwrap())
        .collect();
    while !state.is_terminal() {
        writeln!(stdout, "{}{labels}", state.render())?;
        let action = if state.to_move() == args.seat {
            loop {
                write!(
                    stdout,
                    "your move (0-{}, q to quit): ",
                    game.num_actions() - 1
                )?;
                stdout.flush()?;
                let mut line = String::new();
                if stdin.read_line(&mut line)? == 0 {
                    return Err(CliError::Runtime(Error::InvalidArgument(
                        "input ended before the game".into(),
                    )));
                }
                let line = line.trim();
                if line == "q" {
                    writeln!(stdout, "quit")?;
                    return Ok(());
                }
                match line.parse::<usize>() {
                    Ok(a) if game.is_legal(&state, a) => break a,
                    _ => writeln!(stdout, "{line:?} is not a legal move")?,
                }
            }
        } else {
            let a = agent.act(&*game, &state, &mut rng)?;
            writeln!(stdout, "agent plays {a}")?;
            a
        };
        state = game.play(&state, action);
    }
    writeln!(stdout, "{}{labels}", state.render())?;
    let verdict = match state.outcome().and_then(|o| o.winner()) {
        None => "draw",
        Some(w) if w == args.seat => "you win",
        Some(_) => "agent wins",
    };
    writeln!(stdout, "result: {verdict}")?;
    Ok(())
}

/// Groups scores by label, preserving first-seen order of labels.
fn read_scores(inputs: &[PathBuf]) -> crate::Result<Vec<(String, Vec<f64>)>> {
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    let mut push = |label: String, v: f64| match groups.iter_mut().find(|(l, _)| *l == label) {
        Some((_, vs)) => vs.push(v),
        None => groups.push((label, vec![v])),
    };
    for input in inputs {
        if input.is_dir() {
            let metrics = read_metrics(&input.join("metrics.jsonl"))?;
            let last = metrics
                .iter()
                .rev()
                .find_map(|m| m.eval_winrate)
                .ok_or_else(|| {
                    Error::Dataset(format!("{}: no evaluated generation", input.display()))
                })?;
            push(run_label(input), last);
            continue;
        }
        let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (label, value) = line.rsplit_once(',').ok_or_else(|| {
                Error::Dataset(format!(
                    "{}:{}: expected label,value",
                    input.display(),
                    i + 1
                ))
            })?;
            match value.trim().parse::<f64>() {
                Ok(v) => push(label.trim().to_string(), v),
                Err(_) if i == 0 => {}
                Err(_) => {
                    return Err(Error::Dataset(format!(
                        "{}:{}: {value:?} is not a number",
                        input.display(),
                        i + 1
                    )))
                }
            }
        }
    }
    Ok(groups)
}

fn run_label(run: &Path) -> String {
    run.canonicalize()
        .ok()
        .as_deref()
        .and_then(Path::parent)
        .and_then(Path::file_name)
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| run.display().to_string())
}

fn cmd_stats(args: StatsArgs, stdout: &mut dyn Write) -> CliResult {
    let groups = read_scores(&args.inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut out = String::from("label,runs,mean,iqm,iqm_ci_low,iqm_ci_high\n");
    for (label, values) in &groups {
        let (q, lo, hi) = if values.len() >= 4 {
            let stat = |v: &[f64]| iqm(v).expect("resample has the sample's size");
            let (lo, hi) = bootstrap_ci(values, &stat, args.resamples, args.level, &mut rng)?;
            (iqm(values)?.to_string(), lo.to_string(), hi.to_string())
        } else {
            Default::default()
        };
        out.push_str(&format!(
            "{label},{},{},{q},{lo},{hi}\n",
            values.len(),
            mean(values)
        ));
    }
    out.push_str("\nx,y,probability_of_improvement,ci_low,ci_high\n");
    for (lx, x) in &groups {
        for (ly, y) in &groups {
            if lx == ly {
                continue;
            }
            let r = probability_of_improvement_ci(x, y, args.resamples, args.level, &mut rng)?;
            out.push_str(&format!(
                "{lx},{ly},{},{},{}\n",
                r.probability, r.ci_low, r.ci_high
            ));
        }
    }
    out.push_str("\nx,y,ks_statistic,p_value,exact\n");
    for (i, (lx, x)) in groups.iter().enumerate() {
        for (ly, y) in &groups[i + 1..] {
            let r = ks_two_sample(x, y)?;
            out.push_str(&format!(
                "{lx},{ly},{},{},{}\n",
                r.statistic, r.p_value, r.exact
            ));
        }
    }
    write!(stdout, "{out}")?;
    if let Some(p) = &args.out {
        fs::write(p, &out).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn cmd_plot_data(args: PlotArgs, stdout: &mut dyn Write) -> CliResult {
    // label -> generation -> per-run winrates
    let mut curves: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for run in &args.runs {
        let label = run_label(run);
        for m in read_metrics(&run.join("metrics.jsonl"))? {
            if let Some(w) = m.eval_winrate {
                curves
                    .entry(label.clone())
                    .or_default()
                    .entry(m.generation)
                    .or_default()
                    .push(w);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut out = String::from("label,generation,runs,estimator,value,ci_low,ci_high\n");
    for (label, gens) in &curves {
        for (g, values) in gens {
            let (name, stat): (&str, fn(&[f64]) -> f64) = if values.len() >= 4 {
                ("iqm", |v| iqm(v).expect("resample has the sample's size"))
            } else {
                ("mean", mean)
            };
            let (lo, hi) = bootstrap_ci(values, &stat, args.resamples, 0.95, &mut rng)?;
            out.push_str(&format!(
                "{label},{g},{},{name},{},{lo},{hi}\n",
                values.len(),
                stat(values)
            ));
        }
    }
    match &args.out {
        Some(p) => fs::write(p, &out).map_err(|e| Error::io(p, e))?,
        None => write!(stdout, "{out}")?,
    }
    Ok(())
}
