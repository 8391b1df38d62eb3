//! Compiles every code block of the guide under `book/src` as a doctest.

#[doc = include_str!("../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../book/src/numeric.md")]
pub mod numeric {}
#[doc = include_str!("../../book/src/streams.md")]
pub mod streams {}
#[doc = include_str!("../../book/src/graph.md")]
pub mod graph {}
#[doc = include_str!("../../book/src/prompts.md")]
pub mod prompts {}
#[doc = include_str!("../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../README.md")]
pub mod readme {}
