//! Multiscale finite-volume pressure solver with learned basis functions,
//! plus the surrounding machinery: Gaussian random permeability fields,
//! tracer transport, and Monte-Carlo error/QoI campaigns.

// negated float comparisons are NaN traps by intent, and explicit index
// loops read better than iterator gymnastics in strided matrix kernels
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]

pub mod dense;
pub mod error;
pub mod fvm;
pub mod grf;
pub mod grid;
pub mod io;
pub mod msfv;
pub mod nn;
pub mod sparse;
pub mod surrogate;
pub mod transport;
pub mod tuner;
pub mod uq;

pub use error::{CoreError, Result};
pub use fvm::{BoundarySpec, FluxField, PressureSolution, Side, SideBc};
pub use grid::{CellRect, CoarseLayout, FineGrid, NodeClass, PermField};
