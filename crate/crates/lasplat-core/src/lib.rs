//! Differentiable Gaussian splatting on the CPU, built for small synthetic
//! scenes where every quantity can be checked against an independent oracle.
//!
//! The crate is `no_std`-compatible (with `alloc`); everything that touches
//! the filesystem, threads by default, or wall clocks lives in the companion
//! `lasplat` crate. Enable the `parallel` feature to let the rasterizer fan
//! out over image rows on the ambient rayon pool; results are bit-identical
//! to the serial path because row partials are always merged in row order.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod camera;
pub mod densify;
pub mod edgecache;
pub mod imaging;
pub mod math;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod render;
pub mod scenes;

use core::fmt;

/// Errors surfaced by the numeric core.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Error {
    /// A parameter was non-finite or outside its documented domain.
    InvalidParameter(&'static str),
    /// Two image-like buffers disagreed on resolution.
    ResolutionMismatch,
    /// An operation that samples views was handed an empty view set.
    EmptyViewSet,
    /// A matrix that must be invertible was numerically singular.
    SingularMatrix,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(what) => write!(f, "invalid parameter: {what}"),
            Error::ResolutionMismatch => write!(f, "image resolutions do not match"),
            Error::EmptyViewSet => write!(f, "view set is empty"),
            Error::SingularMatrix => write!(f, "matrix is singular"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
