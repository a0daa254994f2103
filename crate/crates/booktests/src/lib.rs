//! Pulls the chapters of the guide in `book/` into rustdoc so that
//! `cargo test` compiles and runs every listing.

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/volumes.md")]
pub mod volumes {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/prompts.md")]
pub mod prompts {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/protocol.md")]
pub mod protocol {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/propagation.md")]
pub mod propagation {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
