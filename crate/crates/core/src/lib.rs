//! Unsupervised alignment of two attributed graphs.
//!
//! The pipeline has four stages:
//!
//! 1. [`embed::wl_alignment`]: a parameter-free prior from a frozen random encoder.
//! 2. [`marginals::Marginals`]: node weights for the transport problem, taken
//!    from the prior, uniform, or recomputed from learned embeddings.
//! 3. [`gw::graft`]: Gromov-Wasserstein learning of a transport plan with
//!    learnable multi-view intra-graph costs.
//! 4. [`combine::combine`]: a maximum-weight matching over the top candidates
//!    of the plan, weighted by both matrices.
//!
//! [`pipeline`] wires them together and [`eval`] scores the results.

pub mod alignment;
pub mod combine;
pub mod embed;
mod error;
pub mod eval;
pub mod graph;
pub mod gw;
pub mod io;
pub mod marginals;
pub mod pipeline;
pub mod synth;

pub use alignment::AlignmentMatrix;
pub use error::{Error, Result};
pub use graph::{Graph, GroundTruth};
