//! Tail sums of squared step sizes, the lock-in probability lower bound, and
//! the explicit sample-complexity estimates for `a(n) = 1/n^k`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::td::schedule::StepSchedule;

/// Contraction modulus for which [`N_PRIME_CONSTANT`] is valid.
pub const SUPPORTED_ALPHA: f64 = 0.9;
/// `min_T (T+1)/(1 − e^{−0.1T})`, rounded.
pub const N_PRIME_CONSTANT: f64 = 15.16;
/// Iteration cap for [`iterates_to_reach`].
pub const MAX_ITERATES: u64 = 1_000_000_000;

const DIRECT_TERMS: u64 = 10_000;

fn one() -> f64 {
    1.0
}

fn alpha_default() -> f64 {
    SUPPORTED_ALPHA
}

fn k_default() -> f64 {
    0.75
}

fn d_default() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityInputs {
    /// Aggregate constant `M`.
    pub m_const: f64,
    pub eps: f64,
    pub confidence_gamma: f64,
    #[serde(default = "k_default")]
    pub k: f64,
    #[serde(default = "alpha_default")]
    pub alpha_contract: f64,
    /// Horizon `T`; when absent the minimizing horizon is used.
    #[serde(default)]
    pub t_horizon: Option<f64>,
    #[serde(default = "d_default")]
    pub d: usize,
    #[serde(default = "one")]
    pub delta_b: f64,
    #[serde(default = "one")]
    pub k_hat: f64,
    #[serde(default = "one")]
    pub c_hat: f64,
}

impl ComplexityInputs {
    pub fn new(m_const: f64, eps: f64, confidence_gamma: f64, k: f64) -> Self {
        ComplexityInputs {
            m_const,
            eps,
            confidence_gamma,
            k,
            alpha_contract: SUPPORTED_ALPHA,
            t_horizon: None,
            d: 1,
            delta_b: 1.0,
            k_hat: 1.0,
            c_hat: 1.0,
        }
    }

    pub fn with_k(&self, k: f64) -> Self {
        ComplexityInputs { k, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(name, format!("{v} must be positive")))
            }
        };
        positive("m_const", self.m_const)?;
        positive("eps", self.eps)?;
        positive("delta_b", self.delta_b)?;
        positive("k_hat", self.k_hat)?;
        positive("c_hat", self.c_hat)?;
        if !(self.confidence_gamma > 0.0 && self.confidence_gamma < 1.0) {
            return Err(Error::config("confidence_gamma", format!("{} is outside (0, 1)", self.confidence_gamma)));
        }
        if !(self.alpha_contract > 0.0 && self.alpha_contract < 1.0) {
            return Err(Error::config("alpha_contract", format!("{} is outside (0, 1)", self.alpha_contract)));
        }
        if let Some(t) = self.t_horizon {
            positive("t_horizon", t)?;
        }
        if self.d == 0 {
            return Err(Error::config("d", "dimension must be at least 1"));
        }
        check_k(self.k)
    }
}

fn check_k(k: f64) -> Result<()> {
    if k > 0.5 && k < 1.0 {
        Ok(())
    } else {
        Err(Error::BadK(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailSum {
    pub value: f64,
    /// Part of `value` supplied by the analytic remainder rather than summed.
    pub remainder: f64,
    /// `1/((2k−1)(n₀−1)^{2k−1})` for `a(n) = 1/n^k` and `n₀ ≥ 2`.
    pub bound: Option<f64>,
}

impl TailSum {
    pub fn within_bound(&self) -> Option<bool> {
        self.bound.map(|b| self.value < b)
    }
}

/// `s(n₀) = Σ_{m≥n₀} a(m)²`.
///
/// The first terms are summed directly; the rest of a power tail comes from
/// an Euler-Maclaurin expansion, and of a logarithmic tail from its integral
/// upper estimate.
pub fn tail_sum(schedule: &StepSchedule, n0: u64) -> Result<TailSum> {
    if n0 < schedule.first_index() {
        return Err(Error::BadIndex(n0));
    }
    if !schedule.is_square_summable() {
        return Err(Error::NonSquareSummable);
    }
    if let StepSchedule::Explicit { values } = schedule {
        let value = values.iter().skip((n0 - 1) as usize).map(|v| v * v).sum();
        return Ok(TailSum { value, remainder: 0.0, bound: None });
    }
    let cut = n0 + DIRECT_TERMS;
    let mut head = 0.0;
    for n in n0..cut {
        head += schedule.value(n)?.powi(2);
    }
    let x = cut as f64;
    let (remainder, bound) = match *schedule {
        StepSchedule::Power { k, scale, offset } => {
            let p = 2.0 * k;
            let c = scale * scale;
            let y = x + offset;
            let integral = c * y.powf(1.0 - p) / (p - 1.0);
            let f = c * y.powf(-p);
            let f1 = -p * c * y.powf(-p - 1.0);
            let f3 = -p * (p + 1.0) * (p + 2.0) * c * y.powf(-p - 3.0);
            let rem = integral + f / 2.0 - f1 / 12.0 + f3 / 720.0;
            let bound = (scale == 1.0 && offset == 0.0 && n0 >= 2)
                .then(|| 1.0 / ((p - 1.0) * ((n0 - 1) as f64).powf(p - 1.0)));
            (rem, bound)
        }
        StepSchedule::LogPower { p, scale } => (scale * scale / (x * x.ln().powf(2.0 * p)), None),
        StepSchedule::InvNLogN { scale } => (scale * scale / (x * x.ln().powi(2)), None),
        StepSchedule::Constant { .. } | StepSchedule::Explicit { .. } => unreachable!("handled above"),
    };
    Ok(TailSum { value: head + remainder, remainder, bound })
}

/// `1 − 2d e^{−K̂δ²/(d s)} − 2d e^{−Ĉδ²/(d s)}`, which may be negative.
pub fn lockin_lower_bound_unclamped(d: usize, delta_b: f64, k_hat: f64, c_hat: f64, s_n0: f64) -> f64 {
    let d = d as f64;
    let scaled = delta_b * delta_b / (d * s_n0);
    1.0 - 2.0 * d * (-k_hat * scaled).exp() - 2.0 * d * (-c_hat * scaled).exp()
}

/// Lock-in probability lower bound clamped to `[0, 1]`.
pub fn lockin_lower_bound(d: usize, delta_b: f64, k_hat: f64, c_hat: f64, s_n0: f64) -> f64 {
    lockin_lower_bound_unclamped(d, delta_b, k_hat, c_hat, s_n0).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleComplexity {
    pub k: f64,
    /// The six candidate values whose maximum gives `n₀`.
    pub terms: [f64; 6],
    pub n0: f64,
    pub n0_prime: f64,
}

pub fn n0_terms(m: f64, eps: f64, gamma: f64, k: f64) -> [f64; 6] {
    let q = 2.0 * k - 1.0;
    [
        (m / eps).powf(1.0 / k),
        (m / (eps * q)).powf(1.0 / q),
        (m / (eps * eps * q)).powf(1.0 / q),
        (m / eps).powf(2.0 / k),
        (m * (1.0 / gamma).ln() / (eps * eps * q)).powf(1.0 / q),
        (2.0 * m * k / (eps * q)).powf(1.0 / q),
    ]
}

/// `n₀` and `N′₀ = ⌈(n₀^{1−k} + 15.16(1−k))^{1/(1−k)}⌉`.
///
/// Counts are returned as floats since they overflow integers for `k` near
/// 1/2.
pub fn sample_complexity(inputs: &ComplexityInputs) -> Result<SampleComplexity> {
    check_k(inputs.k)?;
    if (inputs.alpha_contract - SUPPORTED_ALPHA).abs() > 1e-12 {
        return Err(Error::UnsupportedAlpha(inputs.alpha_contract));
    }
    inputs.validate()?;
    let k = inputs.k;
    let terms = n0_terms(inputs.m_const, inputs.eps, inputs.confidence_gamma, k);
    let n0 = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil().max(1.0);
    let n0_prime = (n0.powf(1.0 - k) + N_PRIME_CONSTANT * (1.0 - k)).powf(1.0 / (1.0 - k)).ceil();
    Ok(SampleComplexity { k, terms, n0, n0_prime })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: f64,
    pub n0: f64,
    pub n0_prime: f64,
}

pub fn n0_sweep(inputs: &ComplexityInputs, grid: &[f64]) -> Result<Vec<SweepRow>> {
    grid.iter()
        .map(|&k| {
            let sc = sample_complexity(&inputs.with_k(k))?;
            Ok(SweepRow { k, n0: sc.n0, n0_prime: sc.n0_prime })
        })
        .collect()
}

/// Row with the smallest `N′₀`; ties go to the smaller `k`.
pub fn sweep_argmin(rows: &[SweepRow]) -> Option<SweepRow> {
    rows.iter().copied().fold(None, |best: Option<SweepRow>, r| match best {
        Some(b) if b.n0_prime <= r.n0_prime => Some(b),
        _ => Some(r),
    })
}

/// Evenly spaced grid `start, …, end` with `n` points, written `A:B:N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KGrid {
    pub start: f64,
    pub end: f64,
    pub n: usize,
}

impl KGrid {
    pub fn points(&self) -> Vec<f64> {
        match self.n {
            0 => Vec::new(),
            1 => vec![self.start],
            n => {
                let span = self.end - self.start;
                (0..n).map(|i| self.start + span * i as f64 / (n - 1) as f64).collect()
            }
        }
    }
}

impl FromStr for KGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("grid", format!("expected A:B:N, got {s:?}"));
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, n] = parts.as_slice() else {
            return Err(bad());
        };
        let start: f64 = a.trim().parse().map_err(|_| bad())?;
        let end: f64 = b.trim().parse().map_err(|_| bad())?;
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        if n == 0 || !(start <= end) {
            return Err(bad());
        }
        Ok(KGrid { start, end, n })
    }
}

/// Smallest `m ≥ 1` with `Σ_{i=n₀+1}^{n₀+m} a(i) ≥ threshold`.
pub fn iterates_to_reach(schedule: &StepSchedule, n0: u64, threshold: f64) -> Result<u64> {
    let mut total = 0.0;
    let mut n = n0;
    loop {
        n += 1;
        if schedule.len().is_some_and(|len| n > len) || n - n0 > MAX_ITERATES {
            return Err(Error::Unreachable(threshold));
        }
        total += schedule.value(n)?;
        if total >= threshold {
            return Ok(n - n0);
        }
    }
}

/// `(T+1)/(1 − e^{−(1−α)T})`
pub fn horizon_constant(t: f64, alpha: f64) -> f64 {
    (t + 1.0) / (1.0 - (-(1.0 - alpha) * t).exp())
}

/// Iterates beyond `n₀` until `a(n) = 1/n^k` has accumulated the horizon
/// constant; with no horizon the minimizing one is used.
pub fn fixed_point_iterates_to_go(n0: u64, k: f64, t_horizon: Option<f64>, alpha: f64) -> Result<u64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config("alpha_contract", format!("{alpha} is outside (0, 1)")));
    }
    let threshold = match t_horizon {
        Some(t) if t > 0.0 => horizon_constant(t, alpha),
        Some(t) => return Err(Error::config("t_horizon", format!("{t} must be positive"))),
        None => min_horizon_constant(alpha).1,
    };
    iterates_to_reach(&StepSchedule::power(k), n0, threshold)
}

/// Golden-section minimization of [`horizon_constant`] over `T ∈ (0, 200]`;
/// returns `(T*, value)`.
pub fn min_horizon_constant(alpha: f64) -> (f64, f64) {
    let f = |t: f64| horizon_constant(t, alpha);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (1e-9, 200.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-6 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        }
    }
    let t = 0.5 * (lo + hi);
    (t, f(t))
}
