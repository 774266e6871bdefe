//! Hybrid mesoscopic-macroscopic traffic simulation.
//!
//! A road network is cut into regions. Each region runs one of three models:
//! the cell transmission model, the link transmission model, or a bathtub
//! model driven by the region's speed-accumulation curve. Vehicles travel as
//! packets along fixed paths and cross model boundaries through a common
//! junction rule.

pub mod bathtub;
pub mod ctm;
pub mod demand;
pub mod engine;
pub mod error;
pub mod io;
pub mod ltm;
pub mod network;
pub mod packet;
pub mod synthetic;
pub mod transfer;

pub use error::{Error, Result};

/// Chapters of the guide in `book/`, compiled so their examples run as tests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/network.md")]
    pub mod network {}
    #[doc = include_str!("../../../book/src/demand.md")]
    pub mod demand {}
    #[doc = include_str!("../../../book/src/link_models.md")]
    pub mod link_models {}
    #[doc = include_str!("../../../book/src/bathtub.md")]
    pub mod bathtub {}
    #[doc = include_str!("../../../book/src/junctions.md")]
    pub mod junctions {}
    #[doc = include_str!("../../../book/src/running.md")]
    pub mod running {}
}
