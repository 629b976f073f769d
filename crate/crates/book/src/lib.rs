//! The guide's chapters, one module each, so `cargo test` runs every listing
//! in `book/src` as a doctest.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/profiles.md")]
pub mod profiles {}
#[doc = include_str!("../../../book/src/codegen.md")]
pub mod codegen {}
#[doc = include_str!("../../../book/src/fsm.md")]
pub mod fsm {}
#[doc = include_str!("../../../book/src/agents.md")]
pub mod agents {}
#[doc = include_str!("../../../book/src/transport.md")]
pub mod transport {}
#[doc = include_str!("../../../book/src/simulators.md")]
pub mod simulators {}
#[doc = include_str!("../../../book/src/dataset.md")]
pub mod dataset {}
#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}
#[doc = include_str!("../../../README.md")]
pub mod readme {}
