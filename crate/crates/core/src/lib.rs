//! Joint energy-bandwidth allocation for transmitters that mix harvested,
//! grid and donated energy, solved with a proximal Jacobian ADMM whose block
//! updates are all available in closed form.

pub mod admm;
pub mod baselines;
pub mod error;
pub mod experiments;
pub mod model;
pub mod oracle;
pub mod report;
pub mod scenarios;
pub mod subproblems;
pub mod tensor;

pub use admm::{solve, AdmmParams, BandwidthPolicy, SolveReport};
pub use error::{Error, Result};
pub use model::{DualState, PrimalState, ResidualReport, Scenario};
pub use scenarios::GenConfig;
