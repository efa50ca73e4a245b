//! Presentation attack detection built on remote photoplethysmography:
//! skin regions in live video carry a faint pulse-synchronous color
//! oscillation that printed photos and masks lack, so a detector that reads
//! pulse evidence separates bona-fide faces from most artefacts.
//!
//! The crate provides the whole desk-scale pipeline:
//!
//! * [`tensor`]: f64 tensors and reverse-mode autodiff on a per-pass tape.
//! * [`preprocess`]: face-box handling, normalized frame differences, and
//!   per-clip standardization.
//! * [`network`]: a two-branch convolutional network where an appearance
//!   branch gates a motion branch through normalized attention masks.
//! * [`training`]: Adam, MSE/BCE losses, and three regimes (from scratch,
//!   full retrain, frozen-body transfer).
//! * [`metrics`]: video-level scoring, EER calibration, APCER/BPCER/ACER
//!   reporting, and ROC curves.
//! * [`synthdata`]: a deterministic synthetic video corpus with a ground-truth
//!   pulse, including attack renditions with and without that pulse.
//! * [`dataset`]: manifest and clip file formats shared by the above.
//!
//! The companion `padphys` binary chains these into `gen`, `train`,
//! `calibrate`, `eval`, and `report` commands. The book under `book/` walks
//! through the concepts; its code snippets compile and run as doc-tests.

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod network;
pub mod preprocess;
pub mod synthdata;
pub mod tensor;
pub mod training;
pub mod util;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book;
