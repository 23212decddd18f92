//! File formats: MetaImage volumes/fields, landmark tables, run configs.

use std::path::Path;

pub mod config;
pub mod landmarks;
pub mod mhd;

/// Filesystem errors are reported with the offending path prepended.
pub(crate) fn io_at(path: &Path, e: std::io::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}
