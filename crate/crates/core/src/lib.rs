//! Distributionally robust emergency frequency control.
//!
//! The crate is `no_std` (it needs `alloc`) and holds the numerical core:
//!
//! - [`sfr`]: a two-state system-frequency-response plant used as ground truth,
//! - [`koopman`]: EDMD training of a lifted linear frequency predictor,
//! - [`gmm`]: Gaussian mixtures (EM fitting, sampling, marginals, conditioning),
//! - [`ambiguity`]: the mixture Wasserstein distance and the ambiguity ball around a reference mixture,
//! - [`dro`]: quantiles of mixtures and the worst-case VaR margin over the ball,
//! - [`qp`]: a dense strictly convex QP solver,
//! - [`control`]: the margin-shifted control problem, one-shot load shedding and the
//!   moving-horizon DC regulation loop.
//!
//! File formats, the experiment harness and the command line live in the `drefc` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ambiguity;
pub mod control;
pub mod dro;
mod error;
pub mod gmm;
pub mod koopman;
pub(crate) mod linalg;
pub mod qp;
pub mod rng;
pub mod sfr;
pub mod special;
mod transport;

pub use ambiguity::{membership, mw2, w2_gaussian, AmbiguitySet, Coupling};
pub use control::{
    closed_loop_dc, max_margin, one_shot_load_shed, solve_drefc_u, solve_scenarios, ControlProblem,
    ControlSolution, DcLoopConfig, DcRun, ErrorReference, LinearPlant, LoopState, Margin,
    Parametrization, Plant, SampledSfr, WindowFlag,
};
pub use dro::{approx_icdf, exact_icdf, worst_case_margin, VarSpec, WorstCaseResult};
pub use error::{Error, Result};
pub use gmm::{FitReport, Gmm, JointGmm};
pub use koopman::{DictionarySpec, KoopmanModel, PredictionErrorSample};
pub use sfr::{Disturbance, SfrParams, SfrPlant, Trajectory};
pub use special::normal_quantile;
