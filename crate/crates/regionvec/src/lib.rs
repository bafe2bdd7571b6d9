//! File formats, parallel sweeps and the command line around
//! [`regionvec_core`].

pub mod cli;
pub mod error;
pub mod io;
pub mod pipeline;

pub use error::{Error, Result};
