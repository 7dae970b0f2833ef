//! Graph Fourier transform network (GFTNN) for highway trajectory prediction.
//!
//! A scenario is a graph signal on the Cartesian product of a temporal path
//! graph and a spatial interaction graph. Its multidimensional graph Fourier
//! transform feeds a small feed-forward encoder whose three outputs
//! parameterize a closed-form trajectory decoder.

pub mod checkpoint;
pub mod eigen;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod scenario;
pub mod spectral;
pub mod training;

pub use error::{GftnnError, Result};
