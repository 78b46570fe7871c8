//! The mdbook guide, compiled as doctests.
//!
//! mdbook itself cannot resolve crate dependencies when testing snippets, so
//! each chapter is also attached here as module documentation; `cargo test`
//! then builds and runs every fenced Rust block. Keep `book/src/SUMMARY.md`
//! and this list in sync.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/quantizer.md")]
pub mod quantizer_chapter {}

#[doc = include_str!("../../../book/src/topology.md")]
pub mod topology_chapter {}

#[doc = include_str!("../../../book/src/algorithm.md")]
pub mod algorithm_chapter {}

#[doc = include_str!("../../../book/src/privacy.md")]
pub mod privacy_chapter {}

#[doc = include_str!("../../../book/src/running.md")]
pub mod running_chapter {}
