//! The book under `book/src`, compiled so its snippets run as doc-tests.
#![doc = include_str!("../../../book/src/introduction.md")]

#[doc = include_str!("../../../book/src/beliefs.md")]
pub mod beliefs {}

#[doc = include_str!("../../../book/src/update.md")]
pub mod update {}

#[doc = include_str!("../../../book/src/oracles.md")]
pub mod oracles {}

#[doc = include_str!("../../../book/src/limits.md")]
pub mod limits {}

#[doc = include_str!("../../../book/src/environments.md")]
pub mod environments {}

#[doc = include_str!("../../../book/src/agents.md")]
pub mod agents {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
