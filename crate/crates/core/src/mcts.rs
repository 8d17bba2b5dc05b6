//! Open-loop PUCT search.
//!
//! The tree is an arena of [`SearchNode`]s keyed by action sequences from
//! the root; states are recomputed by replaying actions on the way down.
//! The root is expanded before the first iteration and every iteration
//! adds exactly one visit to one root edge.
//!
//! Values are stored from the perspective of the player owning the edge.
//! Priors at a node come from the apprentice actor, a ground-truth opponent
//! policy, or a learned opponent-model head, depending on [`PriorSource`].

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::agents::Policy;
use crate::error::{Error, Result};
use crate::game::{Game, GameState, Player};
use crate::net::Network;

/// Leaf evaluation: priors, value for the player to move, opponent-model
/// predictions (empty when unavailable).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub policy: Vec<f64>,
    pub value: f64,
    pub opponent_models: Vec<Vec<f64>>,
}

/// Evaluates non-terminal states from the perspective of the player to move.
pub trait Evaluator: Sync {
    fn evaluate(
        &self,
        game: &dyn Game,
        state: &GameState,
        rng: &mut dyn RngCore,
    ) -> Result<Evaluation>;
}

impl Evaluator for Network {
    fn evaluate(
        &self,
        game: &dyn Game,
        state: &GameState,
        _rng: &mut dyn RngCore,
    ) -> Result<Evaluation> {
        let input = game.encode(state, state.to_move());
        let out = self.forward(&input, &game.legal_mask(state))?;
        Ok(Evaluation {
            policy: out.actor,
            value: out.critic,
            opponent_models: out.opponent_models,
        })
    }
}

/// Uniform priors and the result of one uniformly random playout.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomRollout;

impl Evaluator for RandomRollout {
    fn evaluate(
        &self,
        game: &dyn Game,
        state: &GameState,
        rng: &mut dyn RngCore,
    ) -> Result<Evaluation> {
        let mask = game.legal_mask(state);
        let legal = mask.iter().filter(|&&m| m).count().max(1) as f64;
        let policy = mask
            .iter()
            .map(|&m| if m { 1.0 / legal } else { 0.0 })
            .collect();
        let perspective = state.to_move();
        let mut s = state.clone();
        while !s.is_terminal() {
            let actions = game.legal_actions(&s)?;
            let a = actions[rng.random_range(0..actions.len())];
            s = game.play(&s, a);
        }
        let value = s.outcome().map_or(0.0, |o| o.reward(perspective));
        Ok(Evaluation {
            policy,
            value,
            opponent_models: Vec::new(),
        })
    }
}

/// Where node priors come from.
#[derive(Clone, Copy)]
pub enum PriorSource<'a> {
    /// Apprentice actor at every node.
    Apprentice,
    /// Apprentice actor at `agent` nodes, the true opponent policy elsewhere.
    GroundTruth {
        agent: Player,
        opponent: &'a dyn Policy,
    },
    /// Apprentice actor at `agent` nodes, the opponent-model head elsewhere.
    LearnedModels { agent: Player },
}

impl std::fmt::Debug for PriorSource<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PriorSource::Apprentice => f.write_str("Apprentice"),
            PriorSource::GroundTruth { agent, opponent } => f
                .debug_struct("GroundTruth")
                .field("agent", agent)
                .field("opponent", &opponent.name())
                .finish(),
            PriorSource::LearnedModels { agent } => f
                .debug_struct("LearnedModels")
                .field("agent", agent)
                .finish(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletNoise {
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for DirichletNoise {
    fn default() -> Self {
        Self {
            alpha: std::f64::consts::SQRT_2,
            epsilon: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub budget: usize,
    pub c_puct: f64,
    pub dirichlet: Option<DirichletNoise>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            budget: 50,
            c_puct: 2.0,
            dirichlet: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeStats {
    pub action: usize,
    pub visits: u32,
    pub value_sum: f64,
    pub prior: f64,
}

impl EdgeStats {
    fn new(action: usize, prior: f64) -> Self {
        Self {
            action,
            visits: 0,
            value_sum: 0.0,
            prior,
        }
    }

    /// Mean backed-up value; zero for an unvisited edge.
    pub fn mean_value(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.value_sum / self.visits as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchNode {
    pub player: Player,
    pub edges: Vec<EdgeStats>,
    children: Vec<Option<usize>>,
}

impl SearchNode {
    /// Node for `player` with one edge per `(action, prior)` pair.
    pub fn new(player: Player, actions: &[usize], priors: &[f64]) -> Self {
        Self {
            player,
            edges: actions
                .iter()
                .zip(priors)
                .map(|(&a, &p)| EdgeStats::new(a, p))
                .collect(),
            children: vec![None; actions.len()],
        }
    }

    pub fn total_visits(&self) -> u32 {
        self.edges.iter().map(|e| e.visits).sum()
    }

    pub fn actions(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.action).collect()
    }

    /// Edge index of the most-visited action, lowest index on ties.
    pub fn most_visited(&self) -> usize {
        let mut best = 0;
        for (i, e) in self.edges.iter().enumerate() {
            if e.visits > self.edges[best].visits {
                best = i;
            }
        }
        best
    }
}

/// PUCT selection over a node's edges, returning the edge index.
///
/// With no visits yet the exploration term vanishes for every edge, so the
/// highest prior is taken. Ties go to the lowest index.
pub fn select_child(node: &SearchNode, c_puct: f64) -> usize {
    let total = node.total_visits();
    let mut best = 0;
    if total == 0 {
        for (i, e) in node.edges.iter().enumerate() {
            if e.prior > node.edges[best].prior {
                best = i;
            }
        }
        return best;
    }
    let sqrt_total = (total as f64).sqrt();
    let score =
        |e: &EdgeStats| e.mean_value() + c_puct * e.prior * sqrt_total / (1.0 + e.visits as f64);
    let mut best_score = f64::NEG_INFINITY;
    for (i, e) in node.edges.iter().enumerate() {
        let s = score(e);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Adds one visit carrying `leaf_value` (from `leaf_player`'s perspective) to
/// every `(node, edge)` on `path`.
pub fn backup(
    tree: &mut [SearchNode],
    path: &[(usize, usize)],
    leaf_value: f64,
    leaf_player: Player,
) {
    for &(node, edge) in path {
        let owner = tree[node].player;
        let e = &mut tree[node].edges[edge];
        e.visits += 1;
        e.value_sum += if owner == leaf_player {
            leaf_value
        } else {
            -leaf_value
        };
    }
}

/// Value of `state` for `perspective`: the exact reward when terminal,
/// otherwise the evaluator's estimate.
pub fn evaluate_leaf(
    game: &dyn Game,
    state: &GameState,
    evaluator: &dyn Evaluator,
    perspective: Player,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if let Some(outcome) = state.outcome() {
        return Ok(outcome.reward(perspective));
    }
    let v = evaluator.evaluate(game, state, rng)?.value;
    Ok(if perspective == state.to_move() {
        v
    } else {
        -v
    })
}

fn restrict(dist: &[f64], actions: &[usize]) -> Vec<f64> {
    let mut out: Vec<f64> = actions
        .iter()
        .map(|&a| dist.get(a).copied().unwrap_or(0.0).max(0.0))
        .collect();
    let sum: f64 = out.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        out.iter_mut().for_each(|p| *p /= sum);
    } else {
        let u = 1.0 / actions.len() as f64;
        out.iter_mut().for_each(|p| *p = u);
    }
    out
}

/// Priors over `actions` (the legal actions at `state`), renormalized.
pub fn compute_priors(
    game: &dyn Game,
    state: &GameState,
    actions: &[usize],
    source: &PriorSource<'_>,
    evaluation: &Evaluation,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let player = state.to_move();
    let dist = match *source {
        PriorSource::Apprentice => evaluation.policy.clone(),
        PriorSource::GroundTruth { agent, .. } | PriorSource::LearnedModels { agent }
            if agent == player =>
        {
            evaluation.policy.clone()
        }
        PriorSource::GroundTruth { opponent, .. } => opponent.distribution(game, state, rng)?,
        PriorSource::LearnedModels { .. } => evaluation
            .opponent_models
            .first()
            .cloned()
            .ok_or(Error::MissingOpponentPolicy(player))?,
    };
    Ok(restrict(&dist, actions))
}

/// Mixes `epsilon` of a Dirichlet(`alpha`) draw into `priors`.
pub fn apply_root_dirichlet(
    priors: &[f64],
    alpha: f64,
    epsilon: f64,
    rng: &mut dyn RngCore,
) -> Vec<f64> {
    if epsilon == 0.0 || priors.len() < 2 {
        return priors.to_vec();
    }
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let draws: Vec<f64> = priors.iter().map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        return priors.to_vec();
    }
    priors
        .iter()
        .zip(&draws)
        .map(|(p, d)| epsilon * d / sum + (1.0 - epsilon) * p)
        .collect()
}

/// Visit counts shaped by temperature: `N^(1/tau)` normalized, computed in
/// log space.
pub fn extract_policy(visits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if visits.iter().all(|&n| n <= 0.0) {
        return Err(Error::Empty("visit counts"));
    }
    let logs: Vec<f64> = visits
        .iter()
        .map(|&n| {
            if n > 0.0 {
                n.ln() / tau
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub action: usize,
    pub root: SearchNode,
    pub num_actions: usize,
    pub tree_size: usize,
}

impl SearchResult {
    /// Root visit counts over the full action space.
    pub fn visit_counts(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_actions];
        for e in &self.root.edges {
            out[e.action] = e.visits as f64;
        }
        out
    }

    /// Root Q-values over the full action space (zero where unvisited).
    pub fn q_values(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_actions];
        for e in &self.root.edges {
            out[e.action] = e.mean_value();
        }
        out
    }

    pub fn priors(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_actions];
        for e in &self.root.edges {
            out[e.action] = e.prior;
        }
        out
    }

    pub fn policy(&self, tau: f64) -> Result<Vec<f64>> {
        extract_policy(&self.visit_counts(), tau)
    }

    /// Q of the most-visited root action.
    pub fn chosen_q(&self) -> f64 {
        self.root.edges[self.root.most_visited()].mean_value()
    }
}

fn expand(
    game: &dyn Game,
    state: &GameState,
    source: &PriorSource<'_>,
    evaluator: &dyn Evaluator,
    rng: &mut dyn RngCore,
) -> Result<(SearchNode, f64)> {
    let actions = game.legal_actions(state)?;
    let evaluation = evaluator.evaluate(game, state, rng)?;
    if !evaluation.value.is_finite() {
        return Err(Error::NonFinite {
            head: "critic",
            what: "leaf value",
        });
    }
    let priors = compute_priors(game, state, &actions, source, &evaluation, rng)?;
    Ok((
        SearchNode::new(state.to_move(), &actions, &priors),
        evaluation.value,
    ))
}

/// Runs `config.budget` select/expand/evaluate/backup iterations from
/// `root` and returns the most-visited root action with the root
/// statistics.
pub fn search(
    game: &dyn Game,
    root: &GameState,
    evaluator: &dyn Evaluator,
    source: &PriorSource<'_>,
    config: &SearchConfig,
    rng: &mut dyn RngCore,
) -> Result<SearchResult> {
    if root.is_terminal() {
        return Err(Error::TerminalState);
    }
    game.check_state(root)?;
    if config.budget == 0 {
        return Err(Error::InvalidArgument(
            "search budget must be at least 1".into(),
        ));
    }
    let (mut root_node, _) = expand(game, root, source, evaluator, rng)?;
    if let Some(noise) = config.dirichlet {
        let priors: Vec<f64> = root_node.edges.iter().map(|e| e.prior).collect();
        let mixed = apply_root_dirichlet(&priors, noise.alpha, noise.epsilon, rng);
        for (e, p) in root_node.edges.iter_mut().zip(mixed) {
            e.prior = p;
        }
    }
    let mut tree = vec![root_node];
    let mut path = Vec::new();

    for _ in 0..config.budget {
        path.clear();
        let mut node = 0;
        let mut state = root.clone();
        let (leaf_value, leaf_player) = loop {
            let edge = select_child(&tree[node], config.c_puct);
            path.push((node, edge));
            state = game.play(&state, tree[node].edges[edge].action);
            if let Some(outcome) = state.outcome() {
                break (outcome.reward(state.to_move()), state.to_move());
            }
            match tree[node].children[edge] {
                Some(child) => node = child,
                None => {
                    let (child, value) = expand(game, &state, source, evaluator, rng)?;
                    tree.push(child);
                    let id = tree.len() - 1;
                    tree[node].children[edge] = Some(id);
                    break (value, state.to_move());
                }
            }
        };
        backup(&mut tree, &path, leaf_value, leaf_player);
    }

    let root_node = tree.swap_remove(0);
    let best = root_node.most_visited();
    Ok(SearchResult {
        action: root_node.edges[best].action,
        num_actions: game.num_actions(),
        tree_size: tree.len() + 1,
        root: root_node,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::UniformRandom;
    use crate::game::{ConnectFour, TicTacToe};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node(priors: &[f64], visits: &[u32], q: &[f64]) -> SearchNode {
        let actions: Vec<usize> = (0..priors.len()).collect();
        let mut n = SearchNode::new(0, &actions, priors);
        for (i, e) in n.edges.iter_mut().enumerate() {
            e.visits = visits[i];
            e.value_sum = q[i] * visits[i] as f64;
        }
        n
    }

    #[test]
    fn select_child_cases() {
        let n = node(&[0.2, 0.5, 0.3], &[0, 0, 0], &[0.0; 3]);
        assert_eq!(select_child(&n, 2.0), 1);
        let n = node(&[0.5, 0.5], &[10, 1], &[0.0, 0.0]);
        assert_eq!(select_child(&n, 2.0), 1);
        let n = node(&[0.5, 0.5], &[5, 5], &[0.9, 0.1]);
        assert_eq!(select_child(&n, 2.0), 0);
        let n = node(&[0.5, 0.5], &[0, 0], &[0.0, 0.0]);
        assert_eq!(select_child(&n, 2.0), 0);
    }

    #[test]
    fn backup_flips_perspective() {
        let mut tree = vec![
            SearchNode::new(0, &[0, 1], &[0.5, 0.5]),
            SearchNode::new(1, &[0, 1], &[0.5, 0.5]),
        ];
        backup(&mut tree, &[(0, 1), (1, 0)], 1.0, 0);
        assert_eq!(tree[0].edges[1].mean_value(), 1.0);
        assert_eq!(tree[1].edges[0].mean_value(), -1.0);
        backup(&mut tree, &[(0, 1)], 0.25, 1);
        assert_eq!(tree[0].edges[1].visits, 2);
        assert!((tree[0].edges[1].mean_value() - (1.0 - 0.25) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn extract_policy_cases() {
        let p = extract_policy(&[10.0, 30.0, 60.0], 1.0).unwrap();
        for (a, b) in p.iter().zip([0.1, 0.3, 0.6]) {
            assert!((a - b).abs() < 1e-12);
        }
        let p = extract_policy(&[10.0, 30.0, 60.0], 0.01).unwrap();
        assert!(p[2] > 1.0 - 1e-6);
        assert_eq!(extract_policy(&[5.0, 5.0], 0.3).unwrap(), vec![0.5, 0.5]);
        assert!(extract_policy(&[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn dirichlet_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = vec![0.1, 0.2, 0.7];
        assert_eq!(apply_root_dirichlet(&p, 1.0, 0.0, &mut rng), p);
        assert_eq!(apply_root_dirichlet(&[1.0], 1.0, 1.0, &mut rng), vec![1.0]);
        for _ in 0..100 {
            let q = apply_root_dirichlet(&p, std::f64::consts::SQRT_2, 0.25, &mut rng);
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(q.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn budget_one_and_forced_moves() {
        let game = ConnectFour::small();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = SearchConfig {
            budget: 1,
            ..Default::default()
        };
        let r = search(
            &game,
            &game.initial_state(),
            &RandomRollout,
            &PriorSource::Apprentice,
            &cfg,
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.root.total_visits(), 1);
        assert_eq!(r.action, 0);

        let ttt = TicTacToe;
        let s = GameState::from_rows(3, 3, 3, "xox xoo ox.").unwrap();
        let only = ttt.legal_actions(&s).unwrap();
        assert_eq!(only.len(), 1);
        let r = search(
            &ttt,
            &s,
            &RandomRollout,
            &PriorSource::Apprentice,
            &SearchConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.action, only[0]);
        assert_eq!(r.root.total_visits(), 50);
    }

    #[test]
    fn terminal_root_is_rejected() {
        let game = TicTacToe;
        let s = GameState::from_rows(3, 3, 3, "xxx oo. ...").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            search(
                &game,
                &s,
                &RandomRollout,
                &PriorSource::Apprentice,
                &SearchConfig::default(),
                &mut rng
            ),
            Err(Error::TerminalState)
        ));
    }

    #[test]
    fn ground_truth_uniform_gives_uniform_opponent_priors() {
        let game = ConnectFour::small();
        let s = game.play(&game.initial_state(), 2);
        let actions = game.legal_actions(&s).unwrap();
        let eval = Evaluation {
            policy: vec![0.9, 0.1, 0.0, 0.0, 0.0],
            value: 0.0,
            opponent_models: vec![vec![0.0, 0.0, 0.0, 0.0, 1.0]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let uniform = UniformRandom;
        let gt = PriorSource::GroundTruth {
            agent: 0,
            opponent: &uniform,
        };
        let p = compute_priors(&game, &s, &actions, &gt, &eval, &mut rng).unwrap();
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-12));
        let om = PriorSource::LearnedModels { agent: 0 };
        let p = compute_priors(&game, &s, &actions, &om, &eval, &mut rng).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        let p = compute_priors(
            &game,
            &s,
            &actions,
            &PriorSource::Apprentice,
            &eval,
            &mut rng,
        )
        .unwrap();
        assert_eq!(p, eval.policy);
    }

    #[test]
    fn identical_seeds_identical_statistics() {
        let game = ConnectFour::small();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            search(
                &game,
                &game.initial_state(),
                &RandomRollout,
                &PriorSource::Apprentice,
                &SearchConfig::default(),
                &mut rng,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }
}
