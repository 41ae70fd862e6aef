//! Recursive identification of structured recurrent models.
//!
//! The model is a chain of Euler-discretized integrators topped by a static
//! network, [`model::StructuredModelSpec`]. Parameters are estimated one
//! sample at a time by [`ident::identify`] using recursive ADAM or one of
//! the two reference updaters in [`optim`]. [`analysis`] measures the
//! averaged update directions at frozen parameters and the resulting
//! Lyapunov derivatives. [`plant`] provides the data-generating systems.

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod ident;
pub mod mlp;
pub mod model;
pub mod optim;
pub mod plant;

pub use error::{Error, Result};
