//! Finite MDPs, stochastic policies and behavior-policy simulation.
//!
//! Trajectories are driven by [`ChaCha8Rng`] seeded with
//! `seed_from_u64(seed)`, so a given seed always yields the same trajectory.
//! Rewards are the expected reward `r(s, a, s')`; no reward noise is added.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::Matrix;

const ROW_TOL: f64 = 1e-12;

pub type StateId = usize;
pub type ActionId = usize;

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::BadModel(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOL {
        return Err(Error::BadModel(format!("{what} sums to {total}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    /// `kernel[s][a][s']`
    kernel: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a][s']`
    reward: Vec<Vec<Vec<f64>>>,
    discount: f64,
}

impl FiniteMdp {
    pub fn new(
        kernel: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<Vec<f64>>>,
        discount: f64,
    ) -> Result<Self> {
        let n_states = kernel.len();
        if n_states == 0 {
            return Err(Error::BadModel("no states".into()));
        }
        let n_actions = kernel[0].len();
        if n_actions == 0 {
            return Err(Error::BadModel("no actions".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::BadModel(format!("discount {discount} outside [0, 1)")));
        }
        if reward.len() != n_states {
            return Err(Error::BadModel("reward has the wrong number of states".into()));
        }
        for s in 0..n_states {
            if kernel[s].len() != n_actions || reward[s].len() != n_actions {
                return Err(Error::BadModel(format!("state {s} has the wrong number of actions")));
            }
            for a in 0..n_actions {
                if kernel[s][a].len() != n_states || reward[s][a].len() != n_states {
                    return Err(Error::BadModel(format!("row ({s}, {a}) has the wrong width")));
                }
                check_distribution(&kernel[s][a], &format!("kernel row ({s}, {a})"))?;
                if reward[s][a].iter().any(|r| !r.is_finite()) {
                    return Err(Error::BadModel(format!("reward row ({s}, {a}) is not finite")));
                }
            }
        }
        Ok(FiniteMdp { n_states, n_actions, kernel, reward, discount })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn transition_prob(&self, s: StateId, a: ActionId, next: StateId) -> f64 {
        self.kernel[s][a][next]
    }

    pub fn kernel_row(&self, s: StateId, a: ActionId) -> &[f64] {
        &self.kernel[s][a]
    }

    pub fn reward(&self, s: StateId, a: ActionId, next: StateId) -> f64 {
        self.reward[s][a][next]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct StochasticPolicy {
    probs: Vec<Vec<f64>>,
}

impl TryFrom<Vec<Vec<f64>>> for StochasticPolicy {
    type Error = Error;

    fn try_from(probs: Vec<Vec<f64>>) -> Result<Self> {
        StochasticPolicy::new(probs)
    }
}

impl From<StochasticPolicy> for Vec<Vec<f64>> {
    fn from(p: StochasticPolicy) -> Self {
        p.probs
    }
}

impl StochasticPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::BadPolicy("no states".into()));
        }
        let width = probs[0].len();
        for (s, row) in probs.iter().enumerate() {
            if row.len() != width {
                return Err(Error::BadPolicy(format!("state {s} has {} actions", row.len())));
            }
            check_distribution(row, &format!("policy row {s}"))
                .map_err(|e| Error::BadPolicy(e.to_string()))?;
        }
        Ok(StochasticPolicy { probs })
    }

    /// The same action distribution in every state.
    pub fn uniform_rows(n_states: usize, row: &[f64]) -> Result<Self> {
        StochasticPolicy::new(vec![row.to_vec(); n_states])
    }

    pub fn prob(&self, s: StateId, a: ActionId) -> f64 {
        self.probs[s][a]
    }

    pub fn row(&self, s: StateId) -> &[f64] {
        &self.probs[s]
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.probs[0].len()
    }

    pub fn is_fully_supported(&self) -> bool {
        self.probs.iter().flatten().all(|&p| p > 0.0)
    }

    /// Whether `a` is one of the most probable actions in `s`.
    pub fn is_greedy(&self, s: StateId, a: ActionId) -> bool {
        let row = &self.probs[s];
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row[a] == best
    }

    fn check_against(&self, mdp: &FiniteMdp, name: &str) -> Result<()> {
        if self.n_states() != mdp.n_states() || self.n_actions() != mdp.n_actions() {
            return Err(Error::BadPolicy(format!(
                "{name} policy is {}x{}, MDP has {} states and {} actions",
                self.n_states(),
                self.n_actions(),
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub state: StateId,
    pub action: ActionId,
    pub reward: f64,
    pub next_state: StateId,
}

/// One step of the behavior chain together with its importance weight
/// `π(a|s) / π_b(a|s)` and whether the action is greedy for the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainStep {
    pub transition: Transition,
    pub rho: f64,
    pub on_target: bool,
}

pub(crate) fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the round-off gap above the last partial sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Streaming behavior-policy simulator; the iterator never ends.
pub struct Simulator<'a> {
    mdp: &'a FiniteMdp,
    behavior: &'a StochasticPolicy,
    target: &'a StochasticPolicy,
    state: StateId,
    rng: ChaCha8Rng,
}

impl<'a> Simulator<'a> {
    pub fn new(
        mdp: &'a FiniteMdp,
        behavior: &'a StochasticPolicy,
        target: &'a StochasticPolicy,
        start: StateId,
        seed: u64,
    ) -> Result<Self> {
        Simulator::with_rng(mdp, behavior, target, start, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(
        mdp: &'a FiniteMdp,
        behavior: &'a StochasticPolicy,
        target: &'a StochasticPolicy,
        start: StateId,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if start >= mdp.n_states() {
            return Err(Error::BadStart(start));
        }
        behavior.check_against(mdp, "behavior")?;
        target.check_against(mdp, "target")?;
        if !behavior.is_fully_supported() {
            return Err(Error::BadPolicy("behavior policy must give every action positive probability".into()));
        }
        Ok(Simulator { mdp, behavior, target, state: start, rng })
    }

    pub fn state(&self) -> StateId {
        self.state
    }
}

impl Iterator for Simulator<'_> {
    type Item = ChainStep;

    fn next(&mut self) -> Option<ChainStep> {
        let s = self.state;
        let a = sample_index(&mut self.rng, self.behavior.row(s));
        let next = sample_index(&mut self.rng, self.mdp.kernel_row(s, a));
        self.state = next;
        Some(ChainStep {
            transition: Transition {
                state: s,
                action: a,
                reward: self.mdp.reward(s, a, next),
                next_state: next,
            },
            rho: self.target.prob(s, a) / self.behavior.prob(s, a),
            on_target: self.target.is_greedy(s, a),
        })
    }
}

pub fn simulate(
    mdp: &FiniteMdp,
    behavior: &StochasticPolicy,
    target: &StochasticPolicy,
    start: StateId,
    steps: usize,
    seed: u64,
) -> Result<Vec<ChainStep>> {
    Ok(Simulator::new(mdp, behavior, target, start, seed)?.take(steps).collect())
}

/// State-to-state kernel and expected one-step reward under `policy`.
pub fn induced_chain(mdp: &FiniteMdp, policy: &StochasticPolicy) -> Result<(Matrix, Vec<f64>)> {
    policy.check_against(mdp, "induced")?;
    let n = mdp.n_states();
    let mut p = Matrix::zeros(n, n);
    let mut r = vec![0.0; n];
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for next in 0..n {
                let q = pa * mdp.transition_prob(s, a, next);
                p[(s, next)] += q;
                r[s] += q * mdp.reward(s, a, next);
            }
        }
    }
    Ok((p, r))
}

/// A ready-to-run off-policy evaluation problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub mdp: FiniteMdp,
    pub behavior: StochasticPolicy,
    pub target: StochasticPolicy,
    pub features: Matrix,
    pub theta_init: Vec<f64>,
    pub w_init: Vec<f64>,
    /// True state values under the target policy, when known in closed form.
    pub true_values: Option<Vec<f64>>,
}

impl Benchmark {
    pub fn validate(&self) -> Result<()> {
        self.behavior.check_against(&self.mdp, "behavior")?;
        self.target.check_against(&self.mdp, "target")?;
        if !self.behavior.is_fully_supported() {
            return Err(Error::BadPolicy("behavior policy must give every action positive probability".into()));
        }
        if self.features.rows() != self.mdp.n_states() {
            return Err(Error::BadModel(format!(
                "feature matrix has {} rows for {} states",
                self.features.rows(),
                self.mdp.n_states()
            )));
        }
        let width = self.features.cols();
        if self.theta_init.len() != width || self.w_init.len() != width {
            return Err(Error::BadModel(format!("initial parameters must have length {width}")));
        }
        if let Some(v) = &self.true_values {
            if v.len() != self.mdp.n_states() {
                return Err(Error::BadModel("true_values has the wrong length".into()));
            }
        }
        Ok(())
    }
}

pub const BAIRD_SOLID: ActionId = 0;
pub const BAIRD_DOTTED: ActionId = 1;

/// Baird's 7-star counterexample with the standard behavior (`solid` with
/// probability 1/7).
pub fn baird_env() -> Benchmark {
    baird_env_with(1.0 / 7.0).expect("1/7 is a valid probability")
}

/// Baird's 7-star problem where the behavior policy takes the `solid` action
/// (always to state 7) with probability `q`, and `dotted` (uniform over
/// states 1–6) otherwise. The target always takes `solid`.
///
/// Value of state `i ≤ 6` is `2θ(i) + θ₀`; state 7 is `θ(7) + 2θ₀`, where θ₀
/// is the last parameter.
pub fn baird_env_with(q: f64) -> Result<Benchmark> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::BadPolicy(format!("solid probability {q} must lie in (0, 1)")));
    }
    let n = 7;
    let mut kernel = vec![vec![vec![0.0; n]; 2]; n];
    for row in kernel.iter_mut() {
        row[BAIRD_SOLID][6] = 1.0;
        row[BAIRD_DOTTED][..6].fill(1.0 / 6.0);
    }
    let reward = vec![vec![vec![0.0; n]; 2]; n];
    let mdp = FiniteMdp::new(kernel, reward, 0.99)?;
    let behavior = StochasticPolicy::uniform_rows(n, &[q, 1.0 - q])?;
    let target = StochasticPolicy::uniform_rows(n, &[1.0, 0.0])?;
    let features = Matrix::from_fn(n, 8, |i, j| match (i, j) {
        (6, 6) => 1.0,
        (6, 7) => 2.0,
        (i, 7) if i < 6 => 1.0,
        (i, j) if i == j => 2.0,
        _ => 0.0,
    });
    let mut theta_init = vec![1.0; 8];
    theta_init[6] = 10.0;
    Ok(Benchmark {
        mdp,
        behavior,
        target,
        features,
        theta_init,
        w_init: vec![0.0; 8],
        true_values: Some(vec![0.0; n]),
    })
}

pub const STAY: ActionId = 0;
pub const MOVE: ActionId = 1;

fn two_state_mdp() -> FiniteMdp {
    // action 0 stays, action 1 switches state
    let kernel = vec![
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![vec![0.0, 1.0], vec![1.0, 0.0]],
    ];
    let reward = vec![vec![vec![0.0; 2]; 2]; 2];
    FiniteMdp::new(kernel, reward, 0.99).expect("static two-state MDP is valid")
}

fn two_state_benchmark(behavior: StochasticPolicy) -> Benchmark {
    let target = StochasticPolicy::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]])
        .expect("static target is valid");
    Benchmark {
        mdp: two_state_mdp(),
        behavior,
        target,
        features: Matrix::column(&[1.0, 2.0]),
        theta_init: vec![1.0],
        w_init: vec![0.0],
        true_values: Some(vec![0.0, 0.0]),
    }
}

/// The θ→2θ problem: two states valued θ and 2θ, zero rewards. The behavior
/// stays put with probability `p` and switches otherwise; the target always
/// heads for (or remains in) the second state.
pub fn theta_two_theta_env(p: f64) -> Result<Benchmark> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::BadPolicy(format!("stay probability {p} must lie in (0, 1)")));
    }
    let behavior = StochasticPolicy::new(vec![vec![p, 1.0 - p], vec![p, 1.0 - p]])?;
    Ok(two_state_benchmark(behavior))
}

/// θ→2θ where the behavior picks the target's action with probability `q` in
/// both states, so a small `q` makes the target action rare everywhere.
pub fn theta_two_theta_rare_target(q: f64) -> Result<Benchmark> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::BadPolicy(format!("target-action probability {q} must lie in (0, 1)")));
    }
    let behavior = StochasticPolicy::new(vec![vec![1.0 - q, q], vec![q, 1.0 - q]])?;
    Ok(two_state_benchmark(behavior))
}

/// Random MDP with strictly positive kernel rows and rewards in `[0, 1)`.
pub fn random_mdp(n_states: usize, n_actions: usize, seed: u64) -> Result<FiniteMdp> {
    if n_states < 2 || n_actions == 0 {
        return Err(Error::BadModel("need at least 2 states and 1 action".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kernel = Vec::with_capacity(n_states);
    let mut reward = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        let mut k_rows = Vec::with_capacity(n_actions);
        let mut r_rows = Vec::with_capacity(n_actions);
        for _ in 0..n_actions {
            k_rows.push(random_distribution(&mut rng, n_states, 0.05));
            r_rows.push((0..n_states).map(|_| rng.random::<f64>()).collect());
        }
        kernel.push(k_rows);
        reward.push(r_rows);
    }
    FiniteMdp::new(kernel, reward, 0.9)
}

/// Random probability vector with every entry at least `floor / n`.
pub fn random_distribution<R: Rng>(rng: &mut R, n: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| floor + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let mut row: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // make the row sum exactly representable as 1 up to one ulp
    let drift: f64 = 1.0 - row.iter().sum::<f64>();
    row[0] += drift;
    row
}

/// Random fully supported policy.
pub fn random_policy(n_states: usize, n_actions: usize, seed: u64) -> StochasticPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs = (0..n_states)
        .map(|_| random_distribution(&mut rng, n_actions, 0.1))
        .collect();
    StochasticPolicy::new(probs).expect("random rows are distributions")
}
