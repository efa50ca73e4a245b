//! Compiles every Rust code block in the book as a doc-test, one module
//! per chapter so a failure names its source file. mdbook itself cannot
//! run snippets against the crate; routing the chapters through rustdoc
//! keeps the book honest about the API it shows.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/synthetic-videos.md")]
mod synthetic_videos {}

#[doc = include_str!("../../../book/src/motion-input.md")]
mod motion_input {}

#[doc = include_str!("../../../book/src/preprocessing.md")]
mod preprocessing {}

#[doc = include_str!("../../../book/src/network.md")]
mod network {}

#[doc = include_str!("../../../book/src/autodiff.md")]
mod autodiff {}

#[doc = include_str!("../../../book/src/training.md")]
mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
mod evaluation {}

#[doc = include_str!("../../../book/src/tooling.md")]
mod tooling {}
