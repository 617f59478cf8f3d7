//! Fattening, zero extension and Whitney-average extension of fractional
//! Sobolev functions with a vanishing trace on part of the boundary, with
//! numerical certification of the thickness conditions the construction
//! needs.
//!
//! Pipeline: [`geometry`] regions → [`whitney`] decomposition of the
//! complement of `cl(N)` → [`fattening`] into 𝑶 → [`extension`] by zero and
//! by Whitney averages, with [`norms`] for the quadrature and [`thickness`]
//! for the measure-density checks.

pub mod corpus;
pub mod error;
pub mod extension;
pub mod fattening;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod norms;
pub mod numeric;
pub mod pipeline;
pub mod thickness;
pub mod whitney;

pub use error::{Error, Result};
