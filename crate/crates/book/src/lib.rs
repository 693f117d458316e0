//! Every chapter of the guide in `book/src`, compiled as documentation so
//! `cargo test` runs its snippets.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/minilang.md")]
pub mod minilang {}
#[doc = include_str!("../../../book/src/slicing.md")]
pub mod slicing {}
#[doc = include_str!("../../../book/src/corpus.md")]
pub mod corpus {}
#[doc = include_str!("../../../book/src/tsed.md")]
pub mod tsed {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/decoding.md")]
pub mod decoding {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
