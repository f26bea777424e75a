//! Monte Carlo tree search over topology actions with PUCT guidance, a
//! heuristic leaf value, early stopping on recovery nodes and
//! max-reachable-steps action selection.
//!
//! The tree is generic over a [`SearchDomain`]; [`GridDomain`] plugs in the
//! grid environment.

mod grid;

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use grid::{GridDomain, Prior, UniformPrior};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Root child leading to the node with the most reached steps.
    MaxSteps,
    /// Sample from the softmax of root visit counts.
    VisitSoftmax,
    VisitGreedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub n_simulations_max: usize,
    pub c_puct: f64,
    pub gamma: f64,
    /// Safe steps a node must fast-forward to count as a recovery node.
    pub t_skipped: usize,
    /// Number of distinct recovery nodes that stops the search.
    pub t_stopping: usize,
    /// Horizon of the heuristic value sum.
    pub horizon: usize,
    /// Softmax temperature on visit counts for `visit_softmax`.
    pub temperature: f64,
    pub selection: SelectionMode,
    /// Cap on safe steps skipped while expanding a node.
    pub max_fast_forward: usize,
    /// Min-max normalize Q values across the tree before scoring.
    pub normalize_q: bool,
    /// Expand on forecasts rather than exact copies of the episode.
    pub use_forecast: bool,
    /// Wall-clock budget per search.
    pub time_budget_ms: Option<u64>,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            n_simulations_max: 200,
            c_puct: 2.0,
            gamma: 0.99,
            t_skipped: 10,
            t_stopping: 6,
            horizon: 500,
            temperature: 1.0,
            selection: SelectionMode::MaxSteps,
            max_fast_forward: 40,
            normalize_q: true,
            use_forecast: true,
            time_budget_ms: None,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_simulations_max == 0 || self.t_skipped == 0 || self.t_stopping == 0 {
            return Err("simulation budget, t_skipped and t_stopping must be positive".into());
        }
        if !(self.c_puct > 0.0) || !(self.temperature > 0.0) {
            return Err("c_puct and temperature must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        Ok(())
    }
}

/// PUCT score of one child. A parent that was never visited counts as one
/// visit so priors order the first expansion.
pub fn puct_score(q: f64, prior: f64, parent_visits: u32, child_visits: u32, c_puct: f64) -> f64 {
    q + c_puct * prior * (parent_visits.max(1) as f64).sqrt() / (1.0 + child_visits as f64)
}

/// Candidate child seen by [`puct_select`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChildStats {
    pub action: usize,
    /// Mean value; ignored when `visits == 0`.
    pub q: f64,
    pub prior: f64,
    pub visits: u32,
}

/// Highest PUCT score; unvisited children count as Q = 0, ties go to the
/// lowest action id.
pub fn puct_select(children: &[ChildStats], parent_visits: u32, c_puct: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for c in children {
        let q = if c.visits == 0 { 0.0 } else { c.q };
        let s = puct_score(q, c.prior, parent_visits, c.visits, c_puct);
        let better = match best {
            None => true,
            Some((a, bs)) => s > bs || (s == bs && c.action < a),
        };
        if better {
            best = Some((c.action, s));
        }
    }
    best.map(|b| b.0)
}

/// Asymptotic value `r · Σ_{j=0..=h} γ^j`, zero for a blackout.
pub fn heuristic_value(reward: f64, gamma: f64, horizon: usize, blackout: bool) -> f64 {
    if blackout {
        return 0.0;
    }
    reward * (1.0 - gamma.powi(horizon as i32 + 1)) / (1.0 - gamma)
}

/// Result of applying one action to a domain state.
#[derive(Clone, Debug)]
pub struct Transition<S> {
    pub state: S,
    /// Reward of every environment step taken, in order: the action step,
    /// then each fast-forwarded safe step.
    pub rewards: Vec<f64>,
    /// Safe steps fast-forwarded after the action step.
    pub skipped: usize,
    pub reached_step: usize,
    pub blackout: bool,
    /// The episode horizon was reached.
    pub episode_end: bool,
    /// The node still needs intervention.
    pub critical: bool,
}

/// What the tree search needs from an environment.
pub trait SearchDomain {
    type State: Clone;

    /// Candidate actions legal in `state`, ascending id.
    fn legal_actions(&self, state: &Self::State) -> Vec<usize>;
    /// Prior per action in `actions`; does not need to be normalized.
    fn priors(&self, state: &Self::State, actions: &[usize]) -> Vec<f64>;
    fn expand(&self, state: &Self::State, action: usize) -> Transition<Self::State>;
    /// Reward of the state itself, used for the root value.
    fn reward(&self, state: &Self::State) -> f64;
    fn reached_step(&self, state: &Self::State) -> usize;
}

#[derive(Clone, Debug)]
pub struct Node<S> {
    pub state: S,
    pub parent: Option<usize>,
    /// Action taken from the parent.
    pub action: usize,
    pub depth: usize,
    /// Discounted reward collected on the edge from the parent.
    pub edge_return: f64,
    /// Environment steps on that edge.
    pub edge_steps: usize,
    pub actions: Vec<usize>,
    pub priors: Vec<f64>,
    pub children: Vec<Option<usize>>,
    pub visits: u32,
    pub value_sum: f64,
    pub leaf_value: f64,
    pub reached_step: usize,
    pub skipped_steps: usize,
    pub critical: bool,
    pub blackout: bool,
    pub recovery: bool,
    pub episode_end: bool,
}

impl<S> Node<S> {
    pub fn mean_value(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.value_sum / self.visits as f64
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.blackout || self.episode_end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopRecovery,
    EpisodeEndNode,
    BudgetExhausted,
}

/// Summary of one root child, for explanations and operator plans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChildSummary {
    pub action: usize,
    pub visits: u32,
    pub q: f64,
    pub prior: f64,
    pub best_reached_step: usize,
    pub recovery: bool,
    pub blackout: bool,
    /// Actions from the root to the deepest-reaching node below this child.
    pub plan: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// `None` when no action was legal at the root.
    pub action: Option<usize>,
    pub visits: Vec<(usize, u32)>,
    pub best_reached_step: usize,
    pub simulations: usize,
    pub stop_reason: StopReason,
    pub max_depth: usize,
    pub recovery_nodes: usize,
    pub children: Vec<ChildSummary>,
}

impl SearchResult {
    /// Root visit counts normalized over `candidates` (zeros elsewhere).
    pub fn visit_distribution(&self, candidates: &[usize]) -> Vec<f64> {
        let total: u32 = self.visits.iter().map(|v| v.1).sum();
        candidates
            .iter()
            .map(|a| {
                let n = self.visits.iter().find(|v| v.0 == *a).map_or(0, |v| v.1);
                if total == 0 {
                    0.0
                } else {
                    n as f64 / total as f64
                }
            })
            .collect()
    }

    /// Plain-text dump of the root children.
    pub fn dump(&self) -> String {
        let mut s = format!("simulations {} stop {:?} depth {} recovery {}\n", self.simulations, self.stop_reason, self.max_depth, self.recovery_nodes);
        for c in &self.children {
            let _ = writeln!(
                s,
                "action {:>6}  visits {:>4}  q {:>9.3}  prior {:.3}  reach {:>5}  recovery {}  plan {:?}",
                c.action, c.visits, c.q, c.prior, c.best_reached_step, c.recovery, c.plan
            );
        }
        s
    }
}

/// A search tree; the arena owns every node, the root is index 0.
pub struct Tree<'d, D: SearchDomain> {
    domain: &'d D,
    cfg: SearchConfig,
    pub nodes: Vec<Node<D::State>>,
    q_min: f64,
    q_max: f64,
    recovery_count: usize,
    simulations: usize,
}

impl<'d, D: SearchDomain> Tree<'d, D> {
    pub fn new(domain: &'d D, root: D::State, cfg: SearchConfig) -> Self {
        let actions = domain.legal_actions(&root);
        let priors = normalized(domain.priors(&root, &actions));
        let reward = domain.reward(&root);
        let node = Node {
            reached_step: domain.reached_step(&root),
            children: vec![None; actions.len()],
            leaf_value: heuristic_value(reward, cfg.gamma, cfg.horizon, false),
            state: root,
            parent: None,
            action: 0,
            depth: 0,
            edge_return: 0.0,
            edge_steps: 0,
            actions,
            priors,
            visits: 0,
            value_sum: 0.0,
            skipped_steps: 0,
            critical: true,
            blackout: false,
            recovery: false,
            episode_end: false,
        };
        Tree { domain, cfg, nodes: vec![node], q_min: f64::INFINITY, q_max: f64::NEG_INFINITY, recovery_count: 0, simulations: 0 }
    }

    pub fn recovery_count(&self) -> usize {
        self.recovery_count
    }

    pub fn simulations(&self) -> usize {
        self.simulations
    }

    /// Value of taking the edge into `child`, seen from its parent.
    fn edge_q(&self, child: usize) -> f64 {
        let n = &self.nodes[child];
        n.edge_return + self.cfg.gamma.powi(n.edge_steps as i32) * n.mean_value()
    }

    fn normalize(&self, q: f64) -> f64 {
        if !self.cfg.normalize_q {
            return q;
        }
        if self.q_max > self.q_min {
            (q - self.q_min) / (self.q_max - self.q_min)
        } else {
            0.0
        }
    }

    fn select_child(&self, node: usize) -> Option<usize> {
        let n = &self.nodes[node];
        let stats: Vec<ChildStats> = n
            .actions
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let (q, visits) = match n.children[i] {
                    Some(c) if self.nodes[c].visits > 0 => (self.normalize(self.edge_q(c)), self.nodes[c].visits),
                    _ => (0.0, 0),
                };
                ChildStats { action: a, q, prior: n.priors[i], visits }
            })
            .collect();
        let a = puct_select(&stats, n.visits, self.cfg.c_puct)?;
        n.actions.iter().position(|&x| x == a)
    }

    fn add_child(&mut self, parent: usize, slot: usize) -> usize {
        let action = self.nodes[parent].actions[slot];
        let tr = self.domain.expand(&self.nodes[parent].state, action);
        let gamma = self.cfg.gamma;
        let edge_return: f64 = tr.rewards.iter().enumerate().map(|(j, r)| gamma.powi(j as i32) * r).sum();
        let last_reward = tr.rewards.last().copied().unwrap_or(0.0);
        let recovery = !tr.blackout && tr.skipped >= self.cfg.t_skipped;
        let (actions, priors) = if tr.blackout || tr.episode_end {
            (vec![], vec![])
        } else {
            let a = self.domain.legal_actions(&tr.state);
            let p = normalized(self.domain.priors(&tr.state, &a));
            (a, p)
        };
        let node = Node {
            parent: Some(parent),
            action,
            depth: self.nodes[parent].depth + 1,
            edge_return,
            edge_steps: tr.rewards.len(),
            children: vec![None; actions.len()],
            actions,
            priors,
            visits: 0,
            value_sum: 0.0,
            leaf_value: heuristic_value(last_reward, gamma, self.cfg.horizon, tr.blackout),
            reached_step: tr.reached_step.max(self.nodes[parent].reached_step),
            skipped_steps: tr.skipped,
            critical: tr.critical,
            blackout: tr.blackout,
            recovery,
            episode_end: tr.episode_end,
            state: tr.state,
        };
        if recovery {
            self.recovery_count += 1;
        }
        let id = self.nodes.len();
        self.nodes.push(node);
        self.nodes[parent].children[slot] = Some(id);
        id
    }

    /// Add `value` at `leaf` and propagate discounted returns to the root.
    pub fn backpropagate(&mut self, leaf: usize, value: f64) {
        let mut node = leaf;
        let mut v = value;
        loop {
            let n = &mut self.nodes[node];
            n.value_sum += v;
            n.visits += 1;
            let Some(parent) = n.parent else { break };
            v = n.edge_return + self.cfg.gamma.powi(n.edge_steps as i32) * v;
            let q = self.edge_q(node);
            self.q_min = self.q_min.min(q);
            self.q_max = self.q_max.max(q);
            node = parent;
        }
    }

    /// One selection, expansion, evaluation and backpropagation pass.
    /// Returns the node that was evaluated.
    pub fn simulate_once(&mut self) -> usize {
        let mut node = 0;
        loop {
            if self.nodes[node].is_terminal() {
                break;
            }
            let Some(slot) = self.select_child(node) else { break };
            match self.nodes[node].children[slot] {
                Some(c) => node = c,
                None => {
                    node = self.add_child(node, slot);
                    break;
                }
            }
        }
        let v = self.nodes[node].leaf_value;
        self.backpropagate(node, v);
        self.simulations += 1;
        node
    }

    /// Run simulations until early stop, an episode-end node or the budget.
    pub fn run(&mut self) -> StopReason {
        let deadline = self.cfg.time_budget_ms.map(|ms| Instant::now() + Duration::from_millis(ms));
        let forced = self.nodes[0].actions.len() == 1;
        while self.simulations < self.cfg.n_simulations_max {
            let leaf = self.simulate_once();
            if self.nodes[leaf].episode_end {
                return StopReason::EpisodeEndNode;
            }
            if self.recovery_count >= self.cfg.t_stopping {
                return StopReason::EarlyStopRecovery;
            }
            if forced || deadline.is_some_and(|d| Instant::now() >= d) {
                break;
            }
        }
        StopReason::BudgetExhausted
    }

    fn subtree_best(&self, node: usize) -> (usize, usize) {
        // (best reached step, node reaching it); first found wins ties
        let mut best = (self.nodes[node].reached_step, node);
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            let r = self.nodes[n].reached_step;
            if r > best.0 || (r == best.0 && n < best.1) {
                best = (r, n);
            }
            stack.extend(self.nodes[n].children.iter().flatten().copied());
        }
        best
    }

    fn path_to(&self, mut node: usize) -> Vec<usize> {
        let mut path = Vec::new();
        while let Some(p) = self.nodes[node].parent {
            path.push(self.nodes[node].action);
            node = p;
        }
        path.reverse();
        path
    }

    fn expanded_root_children(&self) -> Vec<(usize, usize)> {
        let root = &self.nodes[0];
        root.actions.iter().zip(&root.children).filter_map(|(&a, c)| c.map(|c| (a, c))).collect()
    }

    pub fn child_summaries(&self) -> Vec<ChildSummary> {
        let root = &self.nodes[0];
        self.expanded_root_children()
            .into_iter()
            .map(|(a, c)| {
                let (best, at) = self.subtree_best(c);
                let slot = root.actions.iter().position(|&x| x == a).expect("child action is a root action");
                ChildSummary {
                    action: a,
                    visits: self.nodes[c].visits,
                    q: self.edge_q(c),
                    prior: root.priors[slot],
                    best_reached_step: best,
                    recovery: self.nodes[c].recovery,
                    blackout: self.nodes[c].blackout,
                    plan: self.path_to(at),
                }
            })
            .collect()
    }

    /// Pick the root action under `mode`; `None` without any expanded child.
    pub fn select_action(&self, mode: SelectionMode, rng: &mut impl Rng) -> Option<usize> {
        let kids = self.child_summaries();
        if kids.is_empty() {
            return None;
        }
        match mode {
            SelectionMode::MaxSteps => kids
                .iter()
                .max_by(|a, b| a.best_reached_step.cmp(&b.best_reached_step).then(a.visits.cmp(&b.visits)).then(b.action.cmp(&a.action)))
                .map(|c| c.action),
            SelectionMode::VisitGreedy => kids.iter().max_by(|a, b| a.visits.cmp(&b.visits).then(b.action.cmp(&a.action))).map(|c| c.action),
            SelectionMode::VisitSoftmax => {
                let max = kids.iter().map(|c| c.visits).max().unwrap_or(0) as f64;
                let w: Vec<f64> = kids.iter().map(|c| ((c.visits as f64 - max) / self.cfg.temperature).exp()).collect();
                let total: f64 = w.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (c, wi) in kids.iter().zip(&w) {
                    if u < *wi {
                        return Some(c.action);
                    }
                    u -= wi;
                }
                kids.last().map(|c| c.action)
            }
        }
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn result(&self, stop_reason: StopReason) -> SearchResult {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let children = self.child_summaries();
        SearchResult {
            action: self.select_action(self.cfg.selection, &mut rng),
            visits: children.iter().map(|c| (c.action, c.visits)).collect(),
            best_reached_step: self.subtree_best(0).0,
            simulations: self.simulations,
            stop_reason,
            max_depth: self.max_depth(),
            recovery_nodes: self.recovery_count,
            children,
        }
    }
}

fn normalized(mut p: Vec<f64>) -> Vec<f64> {
    let total: f64 = p.iter().filter(|x| x.is_finite() && **x > 0.0).sum();
    if total > 0.0 {
        for x in &mut p {
            *x = if x.is_finite() && *x > 0.0 { *x / total } else { 0.0 };
        }
    } else if !p.is_empty() {
        let u = 1.0 / p.len() as f64;
        p.iter_mut().for_each(|x| *x = u);
    }
    p
}

/// Full search from `root`. Without any legal root action the result holds
/// no action and stops with [`StopReason::BudgetExhausted`].
pub fn mcts_search<D: SearchDomain>(domain: &D, root: D::State, cfg: &SearchConfig) -> SearchResult {
    let mut tree = Tree::new(domain, root, cfg.clone());
    if tree.nodes[0].actions.is_empty() {
        return tree.result(StopReason::BudgetExhausted);
    }
    let reason = tree.run();
    tree.result(reason)
}
