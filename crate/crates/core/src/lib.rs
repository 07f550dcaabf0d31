//! Cellular sheaf diffusion on graphs and a spatio-temporal forecasting
//! model built on input-dependent restriction maps.
//!
//! The crate is organized bottom-up:
//!
//! - [`graph`]: undirected topology with a stored orientation per edge and
//!   degree-normalized edge weights.
//! - [`sheaf`]: diagonal-restriction sheaves, coboundary, Laplacian,
//!   energies and kernel dimension.
//! - [`spectral`]: spectra, gradient-flow diffusion, the oversmoothing metric
//!   and the GCN propagation baseline.
//! - [`autodiff`]: a small reverse-mode engine used to train the model.
//! - [`model`]: the forecasting network and its ablation variants.
//! - [`training`]: windowing, normalization, Adam, early stopping, metrics.
//! - [`data`]: series files and synthetic generators.
//! - [`experiments`]: the oversmoothing, ablation and stalk-sweep drivers.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod model;
pub mod sheaf;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
pub use graph::Graph;
pub use sheaf::{NodeSignal, Sheaf, SheafMaps};
pub use spectral::{DiffusionTrace, SpectrumMethod, SpectrumOptions, SpectrumReport};
