//! Desk-scale computational tomography laboratory.
//!
//! The crate covers three connected workflows on synthetic phantoms:
//!
//! * sparse-framelet image reconstruction by half-quadratic splitting and
//!   ADMM, with solver hyperparameters fitted to data ([`solvers`], [`hyperlearn`]);
//! * adaptive scanning cast as a Markov decision process over projection
//!   angles and dose, with baseline and trainable policies ([`scanmdp`]);
//! * task-driven evaluation that chains sensing, reconstruction and a
//!   classifier ([`taskpipe`]).

pub mod error;
pub mod framelet;
pub mod grid;
pub mod hyperlearn;
pub mod phantom;
pub mod plot;
pub mod projector;
pub mod scanmdp;
pub mod solvers;
pub mod taskpipe;
pub mod vecops;

pub use error::{Error, Result};
pub use grid::{psnr, ImageGrid, QualityReport, Sinogram};
pub use projector::ProjectionGeometry;
