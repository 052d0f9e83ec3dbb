//! Heat-flow transport maps from the standard Gaussian onto perturbed targets.
//!
//! The map is the time-one flow of `∂_t X_t = V(t, X_t)`, where
//! `V(t,x) = (1/t) ∇ log Q_t r(x)` and `Q_t r(x) = E[r(t x + sqrt(1-t²) Z)]`
//! smooths the density ratio `r = p/γ_d`. Modules follow the data path:
//!
//! - [`density`]: targets and their log-ratio `log r`, plus an exact sampler.
//! - [`quadrature`] and [`moments`]: integrals against the tilted measure `p^{t,x}`.
//! - [`velocity`]: `V`, `∇V` and the diffusion score.
//! - [`flow`]: the transport ODE, its Jacobian, the Langevin variant and the inverse.
//! - [`regularity`]: finite-difference derivative probes and exponent fits.
//! - [`diagnostics`]: independent oracles and two-sample statistics.

pub mod density;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod moments;
pub mod ode;
pub mod quadrature;
pub mod regularity;
pub mod rng;
pub mod velocity;

pub use density::{
    BoundaryProfile, DensityKind, FamilyVariant, MixtureComponent, Perturbation, PerturbationFamily,
    TargetDensity, WeierstrassSpec,
};
pub use error::{Error, Result};
pub use flow::{FlowConfig, FlowResult, TimeParametrization};
pub use moments::{TiltedMeasure, TiltedMoments};
pub use quadrature::{Quadrature, QuadratureMethod, QuadratureSpec};
pub use velocity::{VelocityEval, VelocityMode};
