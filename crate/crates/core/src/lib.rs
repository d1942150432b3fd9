//! Shielded, constrained scheduling of model-update primitives across UEs.

pub mod action;
pub mod agent;
pub mod baselines;
pub mod env;
pub mod error;
pub mod harness;
pub mod latency;
pub mod metrics;
pub mod nn;
pub mod rollout;
pub mod shield;

pub use action::{Action, Primitive};
pub use env::{EnvConfig, Environment};
pub use error::{Error, Result};

// The guide's code listings run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/latency.md")]
    pub mod latency {}
    #[doc = include_str!("../../../book/src/environment.md")]
    pub mod environment {}
    #[doc = include_str!("../../../book/src/shield.md")]
    pub mod shield {}
    #[doc = include_str!("../../../book/src/networks.md")]
    pub mod networks {}
    #[doc = include_str!("../../../book/src/cppo.md")]
    pub mod cppo {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    pub mod baselines {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub mod experiments {}
}
