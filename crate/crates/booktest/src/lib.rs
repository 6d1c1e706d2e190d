//! The guide's chapters, included as documentation so that `cargo test`
//! runs every Rust snippet in them.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/panel.md")]
pub mod panel {}

#[doc = include_str!("../../../book/src/pools.md")]
pub mod pools {}

#[doc = include_str!("../../../book/src/cusum.md")]
pub mod cusum {}

#[doc = include_str!("../../../book/src/design.md")]
pub mod design {}

#[doc = include_str!("../../../book/src/svm.md")]
pub mod svm {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
