//! Ergodic constants, cell problems and homogenized boundary conditions for
//! second-order elliptic equations posed in periodic half-space type domains.

pub mod dsl;
pub mod boundary;
pub mod correctors;
pub mod corpus;
pub mod error;
pub mod grid;
pub mod halfspace;
pub mod homogenize;
pub mod interior;
pub mod mc;
pub mod model;
pub mod problem;
pub mod scheme;
pub mod sparse;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/expressions.md")]
    pub struct Expressions;
    #[doc = include_str!("../../../book/src/interior.md")]
    pub struct Interior;
    #[doc = include_str!("../../../book/src/boundary.md")]
    pub struct Boundary;
    #[doc = include_str!("../../../book/src/halfspace.md")]
    pub struct Halfspace;
    #[doc = include_str!("../../../book/src/monte_carlo.md")]
    pub struct MonteCarlo;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
