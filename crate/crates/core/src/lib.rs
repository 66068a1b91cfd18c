//! Stochastic approximation tools for off-policy temporal-difference learning
//! and risk-sensitive policy evaluation on finite Markov chains.

pub mod complexity;
pub mod error;
pub mod experiment;
pub mod mdp;
pub mod risk;
pub mod spectral;
pub mod td;

pub use complexity::{ComplexityInputs, KGrid, SampleComplexity, SweepRow};
pub use error::{Error, Result};
pub use mdp::{Benchmark, ChainStep, FiniteMdp, StochasticPolicy, Transition};
pub use risk::{BoundReport, ConditionReport, RiskCost, RiskModel, RiskModelSpec, RiskTrace};
pub use spectral::{Matrix, PerronPair};
pub use td::{FixedPointSystem, StepSchedule, TdState};
