#![allow(dead_code)]

mod fixture;

use std::path::Path;
use std::process::{Command, Output};

pub use fixture::*;

pub fn mufu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mufu"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("mufu binary runs")
}

pub fn run_all(config: &Path) -> Output {
    mufu(&["run", "--config", config.to_str().unwrap(), "--stage", "all"])
}

