//! Surrogate-loss methods for variational inequalities with hidden monotone
//! structure.

pub mod counterexample;
pub mod driver;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod models;
pub mod report;
pub mod rl_pbe;
pub mod seeding;
pub mod solvers;
pub mod surrogate;
pub mod verify;
pub mod vi_problems;

pub use driver::{OuterConfig, RunStatus, TrajectoryRecord, TrajectoryRow};
pub use error::{Error, Result};
pub use experiments::{ExperimentConfig, ExperimentOutput, ExperimentSpec, EXPERIMENTS};
pub use linalg::{Matrix, Vector};
pub use models::PredictionModel;
pub use solvers::{InnerStrategy, SolverKind, StopRule};
pub use surrogate::{AlphaRule, LstarMode};
pub use vi_problems::{DomainSpec, VIOperator};
