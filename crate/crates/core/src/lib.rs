//! Masked learning from label proportions.
//!
//! A two-stage estimator for the positive fraction among tumor cells in an
//! image: stage one detects cells and classifies them as tumor or not,
//! producing a tumor mask; stage two scores every pixel as positive or
//! negative, aggregates the scores inside the mask, and is trained only from
//! interval-valued proportion labels.

pub mod checkpoint;
pub mod dataset;
pub mod detect;
pub mod error;
pub mod eval;
pub mod grid;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod pnm;
pub mod propnet;
pub mod synthgen;

pub use dataset::{
    interval_of, load_dataset, save_dataset, CellClass, CellRecord, IntervalId, ProportionInterval, Sample,
};
pub use error::{Error, Result};
pub use grid::ImageGrid;
pub use losses::LossMode;
