//! Stochastic dephasing noise in four regimes (equilibrium or quenched,
//! Markovian or second-order Langevin), the Ramsey decay it produces, and
//! tools to recover the regime from a measured decay.
//!
//! * [`model`]: parameters, damping regimes, preparation modes, time grids.
//! * [`correlation`]: two-time correlations and spectral densities.
//! * [`ramsey`]: attenuation factor `chi(t)` and `S(t) = exp(-chi)`.
//! * [`trajectory`]: seeded noise generators.
//! * [`montecarlo`]: ensemble Ramsey simulation and correlation estimates.
//! * [`quadrature`]: adaptive quadrature, including the `chi` oracle.
//! * [`fitting`]: least-squares fits with identifiability diagnostics.
//! * [`classifier`]: short-time exponents, revival detection, labels.

pub mod classifier;
pub mod correlation;
pub mod curve;
pub mod error;
pub mod fitting;
pub mod model;
pub mod montecarlo;
pub mod quadrature;
pub mod ramsey;
pub mod rng;
pub mod trajectory;

pub use curve::{Provenance, RamseyCurve};
pub use error::{Error, Result};
pub use model::{InitialCondition, NoiseKind, NoiseParams, TimeGrid};
