//! Library side of the `vera` command: configuration resolution and the
//! command implementations, callable without spawning the binary.

pub mod config;
pub mod tools;
pub mod train;

use vera_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Process exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Unsupported(_) | Error::Data { .. } => EXIT_CONFIG,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::NonFinite(_) | Error::Sampler(_) => EXIT_NUMERICAL,
        _ => EXIT_OTHER,
    }
}
