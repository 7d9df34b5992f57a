//! Scalability toolkit for delayed multi-agent formations under multiplex
//! integral control.
//!
//! The crate certifies that a formation protocol rejects polynomial
//! disturbances and does not amplify residual ones as the network grows,
//! synthesizes certified control gains by eigenvalue-based feasibility
//! search, and simulates the closed-loop delay differential equations to
//! validate the certificates:
//!
//! * [`linalg`] — small dense kernel: p-norms, matrix measures, a Jacobi
//!   eigensolver and composite block bounds;
//! * [`halanay`] — delayed convergence rates and the deviation envelopes;
//! * [`protocol`] — the multiplex control law, disturbance model and the
//!   concentric-circle topology;
//! * [`certifier`] — margin evaluation and certificates;
//! * [`synthesis`] — gain design over a transformation-parameter grid;
//! * [`simulator`] — method-of-steps RK4 integration and metrics.

pub mod certifier;
pub mod halanay;
pub mod linalg;
pub mod protocol;
pub mod simulator;
pub mod synthesis;
pub mod vec2;

pub use certifier::{certify, Certificate};
pub use halanay::{convergence_rate, ContractionMargins, ScalabilityBoundCoeffs};
pub use protocol::{build_topology, DisturbanceSpec, FormationTopology, GainSet};
pub use simulator::{run, LeaderPath, SimConfig, SimMetrics};
pub use synthesis::{grid_sweep, SynthesisProblem, SynthesisResult};
pub use vec2::Vec2;
