pub mod config;
pub mod io;
pub mod metrics;
pub mod render;
pub mod runner;

pub use config::*;
pub use metrics::*;
pub use runner::*;
