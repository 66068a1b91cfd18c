//! Declarative multi-replication experiments.
//!
//! Replication `r` is driven by `ChaCha8Rng::seed_from_u64(seed + r)`. The
//! replications run in parallel and are reduced in index order, so a config
//! always produces the same record.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    baird_env, baird_env_with, induced_chain, theta_two_theta_env, theta_two_theta_rare_target,
    Benchmark, FiniteMdp, Simulator, StochasticPolicy,
};
use crate::spectral::{solve_linear, Matrix};
use crate::td::fixed_point::{rmse, FixedPointSystem};
use crate::td::schedule::StepSchedule;
use crate::td::update::TdState;

fn half() -> f64 {
    0.5
}

fn one_u64() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineEnv {
    /// `kernel[s][a][s']`
    pub kernel: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a][s']`
    pub reward: Vec<Vec<Vec<f64>>>,
    pub discount: f64,
    pub behavior: StochasticPolicy,
    pub target: StochasticPolicy,
    pub features: Matrix,
    pub theta_init: Vec<f64>,
    #[serde(default)]
    pub w_init: Option<Vec<f64>>,
    /// Defaults to the exact target-policy values.
    #[serde(default)]
    pub true_values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Baird {
        #[serde(default)]
        solid_prob: Option<f64>,
    },
    ThetaTwoTheta {
        #[serde(default = "half")]
        p: f64,
    },
    ThetaTwoThetaRare {
        q: f64,
    },
    Inline(Box<InlineEnv>),
}

impl EnvSpec {
    pub fn build(&self) -> Result<Benchmark> {
        let bench = match self {
            EnvSpec::Baird { solid_prob: None } => baird_env(),
            EnvSpec::Baird { solid_prob: Some(q) } => baird_env_with(*q)?,
            EnvSpec::ThetaTwoTheta { p } => theta_two_theta_env(*p)?,
            EnvSpec::ThetaTwoThetaRare { q } => theta_two_theta_rare_target(*q)?,
            EnvSpec::Inline(env) => {
                let mdp = FiniteMdp::new(env.kernel.clone(), env.reward.clone(), env.discount)?;
                let true_values = match &env.true_values {
                    Some(v) => v.clone(),
                    None => policy_values(&mdp, &env.target)?,
                };
                Benchmark {
                    w_init: env.w_init.clone().unwrap_or_else(|| vec![0.0; env.features.cols()]),
                    mdp,
                    behavior: env.behavior.clone(),
                    target: env.target.clone(),
                    features: env.features.clone(),
                    theta_init: env.theta_init.clone(),
                    true_values: Some(true_values),
                }
            }
        };
        bench.validate()?;
        Ok(bench)
    }
}

/// Exact values `V = (I − γP_π)⁻¹ r_π`.
pub fn policy_values(mdp: &FiniteMdp, policy: &StochasticPolicy) -> Result<Vec<f64>> {
    let (p, r) = induced_chain(mdp, policy)?;
    let n = mdp.n_states();
    let m = Matrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - mdp.discount() * p[(i, j)]
    });
    solve_linear(&m, &r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Algorithm {
    Td0,
    Ontdc,
    Offtdc,
    GtdLambda { trace_lambda: f64 },
}

impl Algorithm {
    pub fn is_two_timescale(&self) -> bool {
        !matches!(self, Algorithm::Td0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Rmse,
    /// First component of `θ`.
    ThetaScalar,
    /// Euclidean norm of `θ`.
    ThetaNorm,
    /// `‖w − λ(θ)‖₂`
    WTrackingGap,
    Mspbe,
}

const DEFAULT_RAW_FACTOR: u64 = 1_000_000;

/// Horizon unit of an experiment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Simulated transitions.
    #[default]
    Steps,
    /// Transitions that move `θ`: positive `ρ`, or a target-greedy action for
    /// OFFTDC. Step sizes are still indexed by the transition count.
    Updates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub algorithm: Algorithm,
    pub a: StepSchedule,
    #[serde(default)]
    pub b: Option<StepSchedule>,
    pub steps: u64,
    pub replications: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    /// Record the metric every this many steps (the final step is always kept).
    #[serde(default = "one_u64")]
    pub record_every: u64,
    /// Fixed start state; drawn uniformly per replication when absent.
    #[serde(default)]
    pub start: Option<usize>,
    /// What `steps` and the recorded step column count.
    #[serde(default)]
    pub axis: Axis,
    /// Simulation budget when counting updates; defaults to
    /// `steps × 1_000_000`.
    #[serde(default)]
    pub max_raw_steps: Option<u64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if self.replications == 0 {
            return Err(Error::config("replications", "must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every", "must be at least 1"));
        }
        self.a.validate().map_err(|e| Error::config("a", e.to_string()))?;
        match (&self.b, self.algorithm.is_two_timescale()) {
            (None, true) => {
                return Err(Error::config("b", "two-timescale algorithms need a fast schedule"))
            }
            (Some(b), _) => b.validate().map_err(|e| Error::config("b", e.to_string()))?,
            (None, false) => {}
        }
        if let Algorithm::GtdLambda { trace_lambda } = self.algorithm {
            if !(0.0..=1.0).contains(&trace_lambda) {
                return Err(Error::config("algorithm.trace_lambda", "must lie in [0, 1]"));
            }
        }
        for (name, s) in [("a", Some(&self.a)), ("b", self.b.as_ref())] {
            if let Some(len) = s.and_then(StepSchedule::len) {
                if len < self.steps {
                    return Err(Error::config(name, format!("explicit schedule has {len} entries for {} steps", self.steps)));
                }
            }
        }
        Ok(())
    }

    /// Step indices at which the metric is recorded, starting with 0.
    pub fn record_steps(&self) -> Vec<u64> {
        let mut out: Vec<u64> = (0..=self.steps).step_by(self.record_every as usize).collect();
        if *out.last().expect("contains 0") != self.steps {
            out.push(self.steps);
        }
        out
    }
}

/// Metric trace of a single replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationTrace {
    pub values: Vec<f64>,
    /// Step at which the divergence guard tripped.
    pub diverged_at: Option<u64>,
    pub final_theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub steps: Vec<u64>,
    pub mean: Vec<f64>,
    /// Population variance across replications.
    pub variance: Vec<f64>,
    /// Replications that had diverged by each recorded step.
    pub n_diverged: Vec<u32>,
    pub replications: u32,
    pub final_theta_mean: Vec<f64>,
}

impl RunRecord {
    pub fn final_mean(&self) -> f64 {
        *self.mean.last().expect("a record always has step 0")
    }

    pub fn initial_mean(&self) -> f64 {
        self.mean[0]
    }

    pub fn total_diverged(&self) -> u32 {
        *self.n_diverged.last().expect("a record always has step 0")
    }
}

struct Prepared {
    bench: Benchmark,
    system: Option<FixedPointSystem>,
    v_true: Vec<f64>,
    gamma: f64,
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let bench = config.env.build()?;
    if let Some(s) = config.start {
        if s >= bench.mdp.n_states() {
            return Err(Error::BadStart(s));
        }
    }
    let gamma = bench.mdp.discount();
    let system = match config.metric {
        Metric::WTrackingGap | Metric::Mspbe => Some(FixedPointSystem::assemble(
            &bench.mdp,
            &bench.behavior,
            &bench.target,
            &bench.features,
            gamma,
        )?),
        _ => None,
    };
    let v_true = match (&bench.true_values, config.metric) {
        (Some(v), _) => v.clone(),
        (None, Metric::Rmse) => policy_values(&bench.mdp, &bench.target)?,
        (None, _) => Vec::new(),
    };
    Ok(Prepared { bench, system, v_true, gamma })
}

fn metric_value(metric: Metric, p: &Prepared, state: &TdState) -> f64 {
    match metric {
        Metric::Rmse => rmse(&state.theta, &p.bench.features, &p.v_true, None),
        Metric::ThetaScalar => state.theta[0],
        Metric::ThetaNorm => state.theta.iter().map(|t| t * t).sum::<f64>().sqrt(),
        Metric::WTrackingGap => {
            let lam = p.system.as_ref().expect("prepared for this metric").lambda(&state.theta);
            lam.iter().zip(&state.w).map(|(l, w)| (l - w).powi(2)).sum::<f64>().sqrt()
        }
        Metric::Mspbe => p.system.as_ref().expect("prepared for this metric").mspbe(&state.theta),
    }
}

fn run_prepared(config: &ExperimentConfig, p: &Prepared, replication: u32) -> Result<ReplicationTrace> {
    let bench = &p.bench;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(replication as u64));
    let start = match config.start {
        Some(s) => s,
        None => rng.random_range(0..bench.mdp.n_states()),
    };
    let sim = Simulator::with_rng(&bench.mdp, &bench.behavior, &bench.target, start, rng)?;
    let mut state = TdState::new(bench.theta_init.clone(), bench.w_init.clone());
    let record = config.record_steps();
    let mut values = Vec::with_capacity(record.len());
    values.push(metric_value(config.metric, p, &state));
    let mut next_record = 1;
    let mut diverged_at = None;
    let gamma = p.gamma;
    let phi = &bench.features;

    let raw_cap = match config.axis {
        Axis::Steps => config.steps,
        Axis::Updates => config
            .max_raw_steps
            .unwrap_or_else(|| config.steps.saturating_mul(DEFAULT_RAW_FACTOR)),
    };
    let mut count = 0u64;
    for (i, step) in sim.take(raw_cap as usize).enumerate() {
        let n = i as u64 + 1;
        let a = config.a.value(n)?;
        let moves_theta = match config.algorithm {
            Algorithm::Offtdc => step.on_target,
            _ => step.rho > 0.0,
        };
        match config.algorithm {
            Algorithm::Td0 => state.td0(&step, phi, a, gamma),
            Algorithm::Ontdc => state.ontdc(&step, phi, a, fast(config, n)?, gamma),
            Algorithm::Offtdc => state.offtdc(&step, phi, a, fast(config, n)?, gamma),
            Algorithm::GtdLambda { trace_lambda } => {
                state.gtd_lambda(&step, phi, a, fast(config, n)?, gamma, trace_lambda)
            }
        }
        match config.axis {
            Axis::Steps => count = n,
            Axis::Updates if moves_theta => count += 1,
            Axis::Updates => continue,
        }
        if state.diverged() {
            diverged_at = Some(count);
            let frozen = metric_value(config.metric, p, &state);
            let last = *values.last().expect("step 0 recorded");
            let frozen = if frozen.is_finite() { frozen } else { last };
            values.resize(record.len(), frozen);
            break;
        }
        if record[next_record] == count {
            values.push(metric_value(config.metric, p, &state));
            next_record += 1;
            if count == config.steps {
                break;
            }
        }
    }
    if values.len() < record.len() {
        return Err(Error::config(
            "max_raw_steps",
            format!("only {count} of {} updates happened within {raw_cap} steps", config.steps),
        ));
    }
    Ok(ReplicationTrace { values, diverged_at, final_theta: state.theta })
}

fn fast(config: &ExperimentConfig, n: u64) -> Result<f64> {
    config
        .b
        .as_ref()
        .ok_or_else(|| Error::config("b", "missing"))?
        .value(n)
}

/// Runs one replication on its own; used to cross-check aggregation.
pub fn run_replication(config: &ExperimentConfig, replication: u32) -> Result<ReplicationTrace> {
    let p = prepare(config)?;
    run_prepared(config, &p, replication)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    let p = prepare(config)?;
    let traces: Vec<ReplicationTrace> = (0..config.replications)
        .into_par_iter()
        .map(|r| run_prepared(config, &p, r))
        .collect::<Result<_>>()?;
    Ok(aggregate(config, &traces))
}

/// Per-step mean and population variance, folded in replication order.
pub fn aggregate(config: &ExperimentConfig, traces: &[ReplicationTrace]) -> RunRecord {
    let steps = config.record_steps();
    let len = steps.len();
    let mut mean = vec![0.0; len];
    let mut m2 = vec![0.0; len];
    let dim = traces.first().map_or(0, |t| t.final_theta.len());
    let mut theta_mean = vec![0.0; dim];
    for (count, t) in traces.iter().enumerate() {
        let k = (count + 1) as f64;
        for i in 0..len {
            let x = t.values[i];
            let d = x - mean[i];
            mean[i] += d / k;
            m2[i] += d * (x - mean[i]);
        }
        for (m, th) in theta_mean.iter_mut().zip(&t.final_theta) {
            *m += (th - *m) / k;
        }
    }
    let n = traces.len().max(1) as f64;
    let variance = m2.iter().map(|v| (v / n).max(0.0)).collect();
    let n_diverged = steps
        .iter()
        .map(|&s| traces.iter().filter(|t| t.diverged_at.is_some_and(|d| d <= s)).count() as u32)
        .collect();
    RunRecord {
        steps,
        mean,
        variance,
        n_diverged,
        replications: traces.len() as u32,
        final_theta_mean: theta_mean,
    }
}

/// Mean of `values[lo..hi]` where the window is a fraction of the trace
/// excluding step 0.
pub fn window_mean(values: &[f64], from_frac: f64, to_frac: f64) -> f64 {
    let body = &values[1..];
    let n = body.len();
    let lo = ((n as f64 * from_frac).floor() as usize).min(n.saturating_sub(1));
    let hi = ((n as f64 * to_frac).ceil() as usize).clamp(lo + 1, n);
    body[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
}
