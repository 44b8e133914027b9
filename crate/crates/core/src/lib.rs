//! Synthetic resistivity models, 2.5-D finite-element pseudo-sections and a
//! U-Net inversion network trained with a depth-weighted TV loss.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod dataset;
pub mod features;
pub mod forward;
pub mod io;
pub mod model;
pub mod nn;
pub mod objective;
pub mod profile;
pub mod raster;
pub mod rng;
pub mod train;
