//! Benchmark harness for the `logitspec` engine: corpus-level evaluation across
//! decoding modes, machine-readable reports, and the `logitspec` command line.

pub mod cli;
pub mod evaluate;
pub mod report;

pub use evaluate::{evaluate, prompt_seed, EvalConfig, Evaluation};
pub use report::{ModeReport, PromptRow, RunReport};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
