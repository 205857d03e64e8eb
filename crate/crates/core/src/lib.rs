//! Reference-image to slide-code engine.

pub mod cgseg;
pub mod cli;
pub mod config;
pub mod eval;
pub mod inventory;
pub mod kb;
pub mod llm;
pub mod pipeline;
pub mod prompts;
pub mod raster;
pub mod runner;
pub mod scm;
