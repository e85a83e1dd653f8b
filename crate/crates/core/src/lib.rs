//! Kasner backgrounds, CMC-gauge Einstein-vacuum evolution in transported
//! spatial coordinates, and the diagnostics used to probe stable big-bang
//! formation on reduced periodic grids.
//!
//! Fields live on grids with at most three active periodic directions and stay
//! constant along the remaining ones, while every one of the `D²` tensor
//! components is kept. Directions are 0-based throughout the API.

pub mod constraints;
pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod field;
pub mod geodesics;
pub mod geometry;
pub mod grid;
pub mod kasner;
pub mod lapse;
pub mod linalg;
pub mod norms;
pub mod snapshot;
pub mod spectral;
pub mod state;
pub mod vtd;

pub use constraints::{cmc_residual, hamiltonian_residual, momentum_residual, ConstraintResiduals};
pub use diagnostics::{high_norms, low_norms, DiagnosticsRecord, HighNorms, LowNorms, NormParams, CSV_HEADER};
pub use error::{Error, Result};
pub use evolution::{rhs, simulate, step, EvolState, IntegratorConfig, Method, Monitor, RunSummary};
pub use field::{TensorField, Valence};
pub use geodesics::{affine_bound_check, integrate_geodesic, GeodesicPath, KasnerSpacetime, SliceSpacetime, Spacetime};
pub use geometry::{christoffel, curvature_blocks, kretschmann_scalar, ricci_mixed, riemann, scalar_curvature, CurvatureBlocks, GeometryCache};
pub use grid::{GridSpec, Scheme};
pub use kasner::{construct_exponents, kasner_state, kretschmann_constant, validate_exponents, ExponentReport, KasnerExponents, Root};
pub use lapse::{solve_lapse, LapseConfig, LapseSolveReport};
pub use state::SolutionState;
pub use vtd::{ricci_decay_check, vtd_metric, DecayReport, VtdProfile};
