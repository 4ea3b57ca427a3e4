//! Joint structure and configuration optimization for agents expressed as
//! typed stochastic computation graphs.

pub mod bench;
pub mod budget;
pub mod config;
pub mod cstep;
pub mod doc;
pub mod eval;
pub mod feedback;
pub mod graph;
pub mod gstep;
pub mod maestro;
pub mod protocol;
pub mod seed;
pub mod value;
