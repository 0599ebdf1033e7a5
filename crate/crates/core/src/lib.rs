//! Hidden Markov models whose state-dependent densities are penalized
//! mixtures of standardized cubic B-spline densities.
//!
//! The numerical core is generic over the floating point type through
//! [`Real`]; the aliases at the crate root fix it to `f64`, which is what
//! the command-line front end and most callers use.
//!
//! ```
//! use nphmm::{HmmModel, NormalDensity, StateDensity, TransitionMatrix};
//!
//! let gamma = TransitionMatrix::new(2, vec![0.9, 0.1, 0.1, 0.9]).unwrap();
//! let model = HmmModel::stationary(
//!     gamma,
//!     vec![
//!         StateDensity::Normal(NormalDensity::new(-1.0, 1.0).unwrap()),
//!         StateDensity::Normal(NormalDensity::new(1.0, 1.0).unwrap()),
//!     ],
//! )
//! .unwrap();
//! let series = nphmm::observed(&[-1.2, -0.8, 1.1, 0.9]);
//! let ll = nphmm::hmm::log_likelihood(&model, &series).unwrap();
//! assert!(ll.is_finite());
//! ```

pub mod basis;
pub mod density;
pub mod error;
pub mod estimation;
pub mod hmm;
pub mod inference;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod selection;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Real;

pub use estimation::{EmissionFamily, FitConfig, ModelSpec, PenaltySpec};
pub use hmm::Observation;

/// Knot grid over `f64`.
pub type KnotGrid = basis::KnotGrid<f64>;
/// Standardized cubic B-spline basis over `f64`.
pub type SplineBasis = basis::SplineBasis<f64>;
/// State-dependent density over `f64`.
pub type StateDensity = density::StateDensity<f64>;
/// Spline mixture density over `f64`.
pub type SplineDensity = density::SplineDensity<f64>;
/// Normal density over `f64`.
pub type NormalDensity = density::NormalDensity<f64>;
/// Two-component normal mixture over `f64`.
pub type NormalMixtureDensity = density::NormalMixtureDensity<f64>;
/// Transition probability matrix over `f64`.
pub type TransitionMatrix = hmm::TransitionMatrix<f64>;
/// Initial state distribution over `f64`.
pub type InitialDistribution = hmm::InitialDistribution<f64>;
/// HMM over `f64`.
pub type HmmModel = hmm::HmmModel<f64>;
/// Forward pass output over `f64`.
pub type ForwardPass = hmm::ForwardPass<f64>;
/// Fit output over `f64`.
pub type FitResult = estimation::FitResult<f64>;
/// Bootstrap ensemble over `f64`.
pub type BootstrapEnsemble = inference::BootstrapEnsemble<f64>;
/// Density band over `f64`.
pub type DensityBand = inference::DensityBand<f64>;
/// Pseudo-residuals over `f64`.
pub type ResidualSeries = inference::ResidualSeries<f64>;
/// Cross-validation report over `f64`.
pub type CvReport = selection::CvReport<f64>;
/// Simulation scenario over `f64`.
pub type SimScenario = sim::SimScenario<f64>;

/// Wraps fully observed values as a series without missing entries.
pub fn observed<F: Copy>(values: &[F]) -> Vec<Option<F>> {
    values.iter().copied().map(Some).collect()
}
