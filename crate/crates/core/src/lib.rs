//! Simulation, optimization and maximum-principle checks for impulsive control
//! systems with one state delay.
//!
//! The system is `dx = f(x(t), x(t-h)) dt + g(x(t), x(t-h)) dmu(t)` on `[0, T]`
//! with `T = N h`. Measures with atoms are handled through a reparameterization
//! that turns every jump into an ordinary time interval; see [`reparam`].

pub mod approx;
pub mod document;
pub mod error;
pub mod expr;
pub mod measure;
pub mod ode;
pub mod optimize;
pub mod pmp;
pub mod reparam;
pub mod scenario;
pub mod simulate;
pub mod step;
pub mod timechange;

pub use approx::{convergence_study, density_controls, limit_family, mollify_atoms, Side, Study, StudyReport};
pub use document::{load_scenario, parse_control, read_scenario_file, write_control, ControlSpec, ScenarioDoc};
pub use error::{Error, Result};
pub use expr::{parse_expression, Expr, Slot, Var};
pub use measure::{
    segment_measures, tv_norm, validate_impulsive_control, with_defaults, AttachedControlFamily, ImpulsiveControl,
    Measure, ValidationReport,
};
pub use optimize::{project_simplex, solve, transcribe, Nlp, Solution, SolveOptions};
pub use pmp::{
    build_p_eta, certify, check_conditions, estimate_multipliers, fit_multipliers, hamiltonian, integrate_costate,
    Certificate, Costate, Multipliers, Tolerances,
};
pub use reparam::{from_reparam, roundtrip_residual, to_reparam, ReparamControls};
pub use scenario::{Scenario, Target};
pub use simulate::{
    assemble_by_segments, assemble_extended, integrate_jump, integrate_reparam, simulate_extended, simulate_strict,
    ExtendedTrajectory, ReparamProcess, SimOptions,
};
pub use step::{MultiStep, StepFunction};
pub use timechange::{build_phi, pushforward_integral, TimeChange};
