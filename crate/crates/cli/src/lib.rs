//! Library side of the `muse` binary: configuration layering and subcommands.

pub mod commands;
pub mod config;

use muse_core::MuseError;

/// 1 for bad input or configuration, 2 for runtime failures.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<MuseError>() {
            return match e {
                MuseError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 1,
                e if e.is_validation() => 1,
                _ => 2,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            return if io.kind() == std::io::ErrorKind::NotFound {
                1
            } else {
                2
            };
        }
    }
    2
}
