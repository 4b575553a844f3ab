//! Decoupling of noisy multivariate polynomial maps through a weighted
//! canonical polyadic decomposition of their Jacobian tensor.
//!
//! A polynomial map `f: R^m -> R^n` is rewritten as `W g(V^T u)` with `r`
//! univariate branches. The Jacobians of `f` at `N` sampling points form an
//! `n x m x N` tensor whose rank-`r` CPD yields `W`, `V` and the branch
//! derivatives. When the coefficient covariance of `f` is known, it is
//! propagated to the Jacobian tensor and used to weight the decomposition.
//!
//! Layout:
//! - [`poly`]: monomial bases, polynomial maps, symbolic Jacobians, `A(u)`.
//! - [`tensor`]: order-3 tensors, unfoldings, Khatri-Rao, permutations.
//! - [`covariance`]: coefficient to Jacobian covariance propagation, SVD split.
//! - [`wls`]: weighted least-squares primitives shared by the ALS engines.
//! - [`decouple`]: weighted ALS, branch reconstruction and the full pipeline.
//! - [`bench`]: the correlated-error and system identification experiments.
//! - [`io`]: JSON file formats.

pub mod bench;
pub mod covariance;
pub mod decouple;
mod error;
pub mod io;
pub mod poly;
pub mod tensor;
pub mod wls;

pub use error::{Error, Result};
