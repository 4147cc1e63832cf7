pub mod augment;
pub mod error;
pub mod fsutil;
pub mod imqual;
pub mod ossart;
pub mod phantom;
pub mod pipeline;
pub mod plahe;
pub mod segdose;
pub mod volgrid;
pub mod xproject;

pub use error::{Error, Result};
