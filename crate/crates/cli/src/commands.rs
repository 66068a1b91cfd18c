use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use markov_sa::complexity::{n0_sweep, sweep_argmin, ComplexityInputs, KGrid};
use markov_sa::experiment::{policy_values, run_experiment, ExperimentConfig, RunRecord};
use markov_sa::mdp::{baird_env, random_mdp, random_policy, theta_two_theta_env, Benchmark};
use markov_sa::risk::bounds::{bound_report, model_report, Bound};
use markov_sa::risk::{projected_mu, risk_cost, RiskModelSpec};
use markov_sa::spectral::{condition_number, norm_inf, Matrix};
use markov_sa::td::fixed_point::{fixed_point, rmse};
use markov_sa::BoundReport;

use crate::SolveEnv;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Parse { path: PathBuf, source: serde_json::Error },
    Core(markov_sa::Error),
    Io { path: Option<PathBuf>, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Parse { .. } => 2,
            CliError::Core(markov_sa::Error::Config { .. }) => 2,
            CliError::Core(_) => 3,
            CliError::Io { .. } => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Parse { path, source } => write!(f, "cannot parse {}: {source}", path.display()),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path: Some(p), source } => write!(f, "{}: {source}", p.display()),
            CliError::Io { path: None, source } => write!(f, "{source}"),
        }
    }
}

impl From<markov_sa::Error> for CliError {
    fn from(e: markov_sa::Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: Some(path.into()), source })?;
    serde_json::from_str(&text).map_err(|source| CliError::Parse { path: path.into(), source })
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, bytes).map_err(|source| CliError::Io { path: Some(path.into()), source })?;
            info!("wrote {}", path.display());
            Ok(())
        }
        None => io::stdout().write_all(bytes).map_err(|source| CliError::Io { path: None, source }),
    }
}

fn csv_bytes(write: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        write(&mut w)
            .and_then(|()| w.flush().map_err(csv::Error::from))
            .map_err(|e| CliError::Io { path: None, source: io::Error::other(e) })?;
    }
    Ok(buf)
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("reports serialize to JSON");
    bytes.push(b'\n');
    bytes
}

pub fn run(config: &Path, out: Option<&Path>, seed: Option<u64>, replications: Option<u32>) -> Result<()> {
    let mut cfg: ExperimentConfig = read_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = replications {
        cfg.replications = r;
    }
    cfg.validate()?;
    let record = run_experiment(&cfg)?;
    info!(
        "{} replications: mean metric {} -> {}, {} diverged",
        record.replications,
        record.initial_mean(),
        record.final_mean(),
        record.total_diverged()
    );
    let bytes = run_csv(&record)?;
    emit(out.or(cfg.output_path.as_deref()), &bytes)
}

fn run_csv(record: &RunRecord) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["step", "mean", "variance", "n_diverged"])?;
        for i in 0..record.steps.len() {
            w.serialize((record.steps[i], record.mean[i], record.variance[i], record.n_diverged[i]))?;
        }
        Ok(())
    })
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum BoundsInput {
    RiskModel(RiskModelSpec),
    MatrixPair { a: Matrix, b: Matrix },
}

pub fn bounds(config: &Path, out: Option<&Path>) -> Result<()> {
    let report = match read_json::<BoundsInput>(config)? {
        BoundsInput::RiskModel(spec) => model_report(&spec.build()?)?,
        BoundsInput::MatrixPair { a, b } => bound_report(&a, &b)?,
    };
    for (name, value) in report.valid_bounds() {
        info!("{name}: {value}");
    }
    emit(out, &json_bytes(&report))?;
    if let Some(path) = out {
        emit(Some(&path.with_extension("csv")), &bounds_csv(&report)?)?;
    }
    Ok(())
}

fn bounds_csv(r: &BoundReport) -> Result<Vec<u8>> {
    let cell = |b: &Bound| b.value;
    csv_bytes(|w| {
        w.write_record(["lambda", "mu", "actual_error", "spect", "bapat1", "bapat2", "bapat3", "l", "invert"])?;
        w.serialize((
            r.lambda,
            r.mu,
            r.actual_error,
            cell(&r.spect),
            cell(&r.bapat1),
            cell(&r.bapat2),
            cell(&r.bapat3),
            r.l,
            cell(&r.invert),
        ))
    })
}

pub fn complexity(config: &Path, grid: &str, out: Option<&Path>) -> Result<()> {
    let inputs: ComplexityInputs = read_json(config)?;
    let grid: KGrid = grid.parse()?;
    let rows = n0_sweep(&inputs, &grid.points())?;
    if let Some(best) = sweep_argmin(&rows) {
        info!("smallest N'0 = {} at k = {}", best.n0_prime, best.k);
    }
    let echo = serde_json::to_string(&inputs).expect("inputs serialize to JSON");
    let mut bytes = format!("# inputs: {echo}\n").into_bytes();
    bytes.extend(csv_bytes(|w| {
        w.write_record(["k", "n0", "n0_prime"])?;
        for r in &rows {
            w.serialize((r.k, r.n0, r.n0_prime))?;
        }
        Ok(())
    })?);
    emit(out, &bytes)
}

#[derive(Debug, Serialize)]
struct FixedPointSummary {
    env: String,
    theta_star: Vec<f64>,
    min_norm: bool,
    /// `None` when the matrix is numerically singular.
    a_condition: Option<f64>,
    c_condition: Option<f64>,
    b_norm_inf: f64,
    c_singular: bool,
    mspbe_at_theta_star: f64,
    true_values: Option<Vec<f64>>,
    rmse_at_theta_star: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn random_benchmark(seed: u64) -> Result<Benchmark> {
    let (n, actions) = (4, 2);
    let mdp = random_mdp(n, actions, seed)?;
    let target = random_policy(n, actions, seed.wrapping_add(2));
    let true_values = policy_values(&mdp, &target)?;
    Ok(Benchmark {
        behavior: random_policy(n, actions, seed.wrapping_add(1)),
        target,
        features: Matrix::identity(n),
        theta_init: vec![0.0; n],
        w_init: vec![0.0; n],
        true_values: Some(true_values),
        mdp,
    })
}

pub fn solve_env(env: SolveEnv, seed: u64, out: Option<&Path>) -> Result<()> {
    let (name, bench) = match env {
        SolveEnv::Baird => ("baird".to_string(), baird_env()),
        SolveEnv::Theta2theta => ("theta2theta".to_string(), theta_two_theta_env(0.5)?),
        SolveEnv::Random => (format!("random:{seed}"), random_benchmark(seed)?),
    };
    let gamma = bench.mdp.discount();
    let fp = fixed_point(&bench.mdp, &bench.behavior, &bench.target, &bench.features, gamma)?;
    let rmse_at = bench.true_values.as_ref().map(|v| rmse(&fp.theta_star, &bench.features, v, None));
    let summary = FixedPointSummary {
        env: name,
        mspbe_at_theta_star: fp.system.mspbe(&fp.theta_star),
        a_condition: finite(condition_number(&fp.system.a)),
        c_condition: finite(condition_number(&fp.system.c)),
        b_norm_inf: norm_inf(&fp.system.b),
        c_singular: fp.system.c_singular,
        theta_star: fp.theta_star,
        min_norm: fp.min_norm,
        true_values: bench.true_values,
        rmse_at_theta_star: rmse_at,
    };
    emit(out, &json_bytes(&summary))
}

#[derive(Debug, Serialize)]
struct RiskSummary {
    lambda: f64,
    cost: f64,
    v: Vec<f64>,
    x: Vec<f64>,
    poisson_residual: f64,
    mu: f64,
    projected_cost: f64,
}

pub fn solve_risk(config: &Path, out: Option<&Path>) -> Result<()> {
    let spec: RiskModelSpec = read_json(config)?;
    let model = spec.build()?;
    let rc = risk_cost(&model)?;
    let proj = projected_mu(&model)?;
    let summary = RiskSummary {
        lambda: rc.lambda,
        cost: rc.cost(),
        poisson_residual: rc.poisson_residual,
        v: rc.v,
        x: rc.x,
        mu: proj.mu,
        projected_cost: proj.mu.ln(),
    };
    emit(out, &json_bytes(&summary))
}
