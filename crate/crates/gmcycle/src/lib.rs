//! Localized steady states of the Gierer-Meinhardt activator-inhibitor
//! system on a cycle graph.
//!
//! The full model on `n` ring nodes is
//!
//! ```text
//!     u_t     = D_u L u - u + u^2 / v
//!     tau v_t = D_v L v - v + u^2
//! ```
//!
//! with `L` the periodic second-difference Laplacian. The crate constructs
//! its localized steady states (spikes, zigzags, mesas), decides their
//! linear stability both by reduced closed forms and by direct eigensolves,
//! integrates the dynamics, and traces solution branches in a parameter.
//!
//! Module map:
//!
//! - [`lattice`]: the discretization, steady-state residual, Jacobian.
//! - [`greens`]: continuum Green's functions of `d^2 G'' - G = -delta`.
//! - [`spikes`]: the reduced height system, closed-form two/three-spike
//!   branches, profile assembly and Newton refinement.
//! - [`stability`]: reduced K x K spectra, Floquet closed forms, symmetric
//!   thresholds, full-pencil eigensolves, the local-optimality probe.
//! - [`exact`]: exact discrete symmetric K-spike solutions (zigzags) and
//!   their critical inhibitor diffusion.
//! - [`mesa`]: small-diffusion plateau states, the tail recursion, and the
//!   kappa = 4 existence boundary.
//! - [`dynamics`]: time integration (explicit / IMEX / differential-
//!   algebraic) and simulation-based stability classification.
//! - [`continuation`]: pseudo-arclength branch tracing with fold detection.
//! - [`cli`]: the `gmcycle` command-line front end.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod cli;
pub mod continuation;
pub mod dynamics;
pub mod error;
pub mod exact;
pub mod greens;
pub mod lattice;
pub mod mesa;
pub mod spikes;
pub mod stability;

pub use error::{Error, Result};
