//! Censored quantile instrumental variable estimation.
//!
//! [`estimate`] runs the full estimator on a [`data::Dataset`] under an
//! [`engine::CqivConfig`]. The modules below expose every stage separately.

// NaN must fail range checks, so several guards are written `!(x > a)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod control;
pub mod data;
pub mod engine;
pub mod error;
pub mod inference;
pub mod numkit;
pub mod simlab;

pub use error::{CqivError, Result};
pub use inference::estimate;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/control.md")]
    mod control {}
    #[doc = include_str!("../../../book/src/algorithm.md")]
    mod algorithm {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
}
