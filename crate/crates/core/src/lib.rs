pub mod base;
pub mod block;
pub mod engine;
pub mod error;
pub mod ggm;
pub mod locality;
pub mod lpn;
pub mod nmp;
pub mod params;
pub mod prg;
pub mod spcot;
pub mod transport;

pub use block::Block;
pub use error::{Error, Result};
