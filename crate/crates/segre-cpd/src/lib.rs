//! Best rank-r canonical polyadic approximation of complete and incomplete
//! tensors by Riemannian conjugate gradient over a product of Segre
//! manifolds, using closed-form geodesics as retractions.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense and coordinate-sparse containers and multilinear
//!   kernels (outer products, entry evaluation, masked residuals, sparse
//!   mode contractions).
//! * [`segre`]: the cone-over-spheres geometry of rank-1 tensors (metric,
//!   tangent embedding/projection, geodesics, exponential retraction,
//!   vector transport) and its r-fold products.
//! * [`objective`]: masked least-squares objectives with an optional range
//!   penalty, and their Riemannian gradients.
//! * [`rcg`]: the conjugate-gradient loop with Hestenes-Stiefel directions
//!   and a quadratic-interpolation line search with Armijo backtracking
//!   fallback.
//! * [`diagnostics`]: RMSE, relative error, rating-prediction rules, core
//!   consistency, and the secant-dimension sampling budget.
//! * [`formats`]: text formats (COO entry lists, dense slabs, factor CSVs,
//!   fit manifests).
//! * [`ratings`]: rating tables, one-hot tensorization, seeded splits.
//! * [`pipeline`]: the two experiment pipelines (rating completion with
//!   RMSE, mask-subsampled completion with relative error and core
//!   consistency) and their report files.

pub mod diagnostics;
pub mod error;
pub mod formats;
pub mod objective;
pub mod pipeline;
pub mod ratings;
pub mod rcg;
pub mod segre;
pub mod tensor;

pub use error::{Error, Result};
