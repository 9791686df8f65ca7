//! Cardiac landmark localization and view planning for volumetric MRI.

pub mod augment;
pub mod enet3d;
pub mod error;
pub mod fsio;
pub mod localize;
pub mod phantom;
pub mod pipeline;
pub mod prep;
pub mod tensornet;
pub mod views;
pub mod volcore;

pub use error::{Error, Result};
