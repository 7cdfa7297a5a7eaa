pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod stage;

pub use config::RunConfig;
pub use manifest::DependencyError;
pub use pipeline::{Outcome, Pipeline, RunOptions};
pub use stage::Stage;

#[cfg(test)]
#[path = "../tests/common/fixture.rs"]
mod fixture;

/// Process exit code for a failed command: 2 for dependency errors, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<DependencyError>().is_some() {
        2
    } else {
        1
    }
}
