//! Approximate Earth Mover's Distance between sets of weighted points, line
//! segments, triangles and d-dimensional simplices.
//!
//! Every continuous input is reduced to a transportation problem between
//! weighted representative points: objects are adaptively subdivided until
//! each piece sees every opposite-side entity within a `1 + δ` distance
//! ratio, the discrete problem is solved exactly, and the flow is lifted
//! back into a continuous plan whose cost is bracketed from both sides.
//!
//! Module map:
//!
//! * [`geometry`] — points, segments, simplices, boxes, distances and clipping.
//! * [`scene`] — input model, JSON ingestion, validation and normalization.
//! * [`discretize`] — adaptive subdivision into [`discretize::Piece`]s.
//! * [`prematch`] — greedy cancellation of nearby mass for continuous pairs.
//! * [`flowsolve`] — exact network simplex for the transportation problem.
//! * [`lift`] — plan assembly, validation and cost quadrature.
//! * [`l1exact`] — exact points→segments solver under the L1 metric.
//! * [`oracle`] — brute-force reference by uniform discretization.
//! * [`pipeline`] — end-to-end drivers and guarantee bookkeeping.
//! * [`cli`], [`svg`] — command-line front end and rendering.

pub mod cli;
pub mod discretize;
pub mod error;
pub mod flowsolve;
pub mod geometry;
pub mod l1exact;
pub mod lift;
pub mod oracle;
pub mod pipeline;
pub mod prematch;
pub mod quadrature;
pub mod scene;
pub mod svg;

pub use error::{EmdError, Result};
