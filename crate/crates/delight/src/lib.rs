//! File formats, training driver, evaluation and the command-line front end
//! for the portrait delighting pipeline in `delight-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod fit;
pub mod io;
