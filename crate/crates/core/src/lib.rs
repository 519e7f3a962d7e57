//! Anatomical adjacency priors for multi-label 3D segmentation.
//!
//! - [`volume`]: labelmaps, probability and logit volumes, softmax.
//! - [`adjacency`]: hard/soft adjacency matrices, the cross-subject prior and
//!   the non-adjacency penalty with its gradient.
//! - [`losses`]: soft Dice + cross-entropy, the λ-weighted total loss, gradients.
//! - [`metrics`]: volumes, volumetric error, Dice score, HD95.
//! - [`postprocess`]: largest connected component and hole filling.
//! - [`phantom`]: synthetic phantoms and two-phase logit refinement.
//! - [`io`]: the AVOL volume container, prior JSON, report and trace files.
//! - [`gradcheck`]: finite-difference verification of every gradient.

pub mod adjacency;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod phantom;
pub mod postprocess;
pub mod volume;

pub use error::{Error, Result};
