//! Compiles the code listings of the guide in `book/src` as doc-tests.

#[doc = include_str!("../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../book/src/discretization.md")]
pub mod discretization {}
#[doc = include_str!("../../book/src/geometry.md")]
pub mod geometry {}
#[doc = include_str!("../../book/src/relaxation.md")]
pub mod relaxation {}
#[doc = include_str!("../../book/src/solver.md")]
pub mod solver {}
#[doc = include_str!("../../book/src/certification.md")]
pub mod certification {}
#[doc = include_str!("../../book/src/repair.md")]
pub mod repair {}
#[doc = include_str!("../../book/src/scenarios.md")]
pub mod scenarios {}
