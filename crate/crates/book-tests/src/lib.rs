//! Compiles the guide's code blocks as doc-tests. Each chapter gets its own
//! module so a failing snippet can be traced back to its file.

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/detection.md")]
mod detection {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/scoring.md")]
mod scoring {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/noise-policy.md")]
mod noise_policy {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/token-dp.md")]
mod token_dp {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/accounting.md")]
mod accounting {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
mod training {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/comparison.md")]
mod comparison {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}
