//! Experiment drivers and report plumbing behind the `ceest` binary.

pub mod curve_arg;
pub mod eval;
pub mod report;

use ceest::Error;

/// Process exit status for a failed command: 3 for numerical failures, 2 for
/// everything the caller can fix.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Numerical { .. } => 3,
        _ => 2,
    }
}
