//! Shadow-energy tracking for splitting integrators of separable
//! Hamiltonian systems.
//!
//! Integrate with an explicit splitting scheme carrying Skeel's auxiliary
//! variable β, then recover the modified Hamiltonian along the numerical
//! trajectory by Richardson extrapolation of central differences:
//!
//! ```no_run
//! use shadow_energy::{integrator, problems, shadow, xnum::Precision};
//!
//! let prec = Precision::new(120)?;
//! let ham = problems::pendulum(&prec);
//! let init = problems::pendulum_initial(&prec, &prec.one());
//! let h = prec.ratio(1, 8);
//! let policy = shadow::OrderPolicy::windowed(200);
//! let traj = integrator::integrate_padded(
//!     &ham, &integrator::stormer_verlet(&prec), &init, &h, 800, policy.max_order(),
//! )?;
//! let series = shadow::shadow_series(&traj, policy, 1)?;
//! println!("drift = {}", shadow::drift(&series)?);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod harness;
pub mod integrator;
pub mod problems;
pub mod shadow;
pub mod xnum;

pub use integrator::{PhaseState, SchemeId, SplittingScheme, Trajectory};
pub use problems::{InitialState, SeparableHamiltonian};
pub use shadow::{OrderPolicy, ShadowEstimate, ShadowSeries};
pub use xnum::{Precision, XReal};
