//! Reduced-order discrete-time state-space models from measured multichannel
//! impulse responses.
//!
//! The pipeline factors the block Hankel matrix of the measured Markov
//! parameters with an adaptive randomized range finder, realizes a state-space
//! model from the truncated factors, and optionally extracts per-channel dead
//! times beforehand so the realized core only has to cover the residual
//! dynamics. Dead-time extraction is posed as a small linear program over the
//! onset-delay matrix.
//!
//! Modules:
//! - [`system`]: sequences, state-space models, norms and error metrics
//! - [`hankel`]: implicit FFT-backed block Hankel operator
//! - [`orthqr`]: shifted CholeskyQR orthogonalization and block updates
//! - [`rsvd`]: adaptive randomized SVD with leave-one-out error estimation
//! - [`era`]: realization from low-rank Hankel factors and error bounds
//! - [`deadtime`]: onset detection, dead-time splitting, rectification
//! - [`io`]: impulse-response and model containers, evaluation export
//! - [`synth`]: synthetic free-field benchmark generator

pub mod deadtime;
pub mod era;
mod error;
pub mod hankel;
pub mod io;
pub mod linop;
pub mod orthqr;
pub mod rsvd;
pub mod synth;
pub mod system;

pub use deadtime::{
    assemble, count_dofs, estimate_delays, rectify, solve_dts, solve_least_common, DeadTimeSpec,
    DelayMatrix, DelayMode, DtsLp,
};
pub use era::{
    adaptive_era, dense_era, error_estimate_db, fixed_order_era, kung_bound_corrected,
    kung_bound_erroneous, realize, EraOptions, EraResult,
};
pub use error::{Error, Result};
pub use hankel::HankelOperator;
pub use io::{export_eval, read_ir, read_rom, write_ir, write_rom, EvalRecord, Provenance};
pub use linop::{DenseOperator, LinOp};
pub use orthqr::{cholqr_update, shifted_cholqr, QRPair};
pub use rsvd::{
    adaptive_rsvd, fixed_width_rsvd, loo_estimate, RsvdOptions, RsvdResult, SketchState,
};
pub use synth::{synthesize, Geometry, SynthConfig, SynthOutput};
pub use system::{
    hankel_weights, relative_error_db, DiscreteLti, MarkovSequence, StateSpaceModel,
    StructuredModel, DB_FLOOR,
};
