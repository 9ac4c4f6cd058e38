//! Library surface of the pipeline front end; the binary in `main.rs` is
//! a thin argument-parsing shell over these functions, and the acceptance
//! suite drives them directly.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_evaluate, cmd_generate, cmd_prepare, EvaluateOptions, Manifest};
pub use config::{EffectiveConfig, FlagOverrides};
pub use error::CliError;
