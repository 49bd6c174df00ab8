//! Functional and timing simulator for a programmable speech-recognition
//! accelerator, with a complete reference workload (MFCC frontend, TDS
//! acoustic model and CTC lexicon/LM beam search) written as kernels for
//! the simulated machine.

pub mod command;
pub mod ctc;
pub mod config;
pub mod cost;
pub mod error;
pub mod exec;
pub mod frontend;
pub mod hypothesis;
pub mod kernel;
pub mod memory;
pub mod model;
pub mod reference;
pub mod runner;

pub use config::{AcceleratorConfig, SearchParams, Settings};
pub use error::{Error, ErrorCategory, Fault, Result};
pub use command::Accelerator;
