pub mod bundle;
pub mod convert;
pub mod eval;
pub mod label;
pub mod report;
pub mod split;
pub mod synth;
pub mod trend;

use std::path::{Path, PathBuf};

/// Resolves `reference` against `base` unless it is already absolute.
pub(crate) fn resolve(base: &Path, reference: &str) -> PathBuf {
    let p = Path::new(reference);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub(crate) fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}
