//! Command-line driver: corpus generation and preparation, training of the
//! rule, span, bag-of-words and CNN extractors, prediction and evaluation.

mod args;
mod commands;
mod files;
mod pool;

pub use args::{Cli, Command, EvalMode, ModelKind, SchemeArg, TrainKind};
pub use commands::run;
pub use files::{atomic_write, CliError};
pub use pool::{run_jobs, worker_count};
