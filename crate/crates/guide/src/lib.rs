//! The chapters of `book/`, one module each, so `cargo test --doc` runs
//! every code block in the book.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/volumes.md")]
pub mod volumes {}

#[doc = include_str!("../../../book/src/preprocessing.md")]
pub mod preprocessing {}

#[doc = include_str!("../../../book/src/tensors.md")]
pub mod tensors {}

#[doc = include_str!("../../../book/src/network.md")]
pub mod network {}

#[doc = include_str!("../../../book/src/localization.md")]
pub mod localization {}

#[doc = include_str!("../../../book/src/views.md")]
pub mod views {}

#[doc = include_str!("../../../book/src/augmentation.md")]
pub mod augmentation {}

#[doc = include_str!("../../../book/src/phantoms.md")]
pub mod phantoms {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
