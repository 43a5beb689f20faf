//! The narrative guide, one module per chapter of the mdBook under `book/`.
//!
//! Each chapter's code blocks compile and run as doctests of this crate
//! (`cargo test --doc`), which is what keeps the book's numbers honest; the
//! rendered book is just `mdbook build book`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/parameters.md")]
pub mod parameters {}

#[doc = include_str!("../../../book/src/membrane-dispersion.md")]
pub mod membrane_dispersion {}

#[doc = include_str!("../../../book/src/transparency-window.md")]
pub mod transparency_window {}

#[doc = include_str!("../../../book/src/amplification.md")]
pub mod amplification {}

#[doc = include_str!("../../../book/src/time-domain-check.md")]
pub mod time_domain_check {}

#[doc = include_str!("../../../book/src/fitting.md")]
pub mod fitting {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
