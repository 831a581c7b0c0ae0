//! Small file-system helpers shared by the stores.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Suffix marking in-flight temporary files; anything carrying it is garbage
/// after a crash.
pub const TMP_MARKER: &str = ".tmp-";

/// Sibling temp path for `path`.
pub fn tmp_path(path: &Path) -> PathBuf {
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let name = path.file_name().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
    path.with_file_name(format!("{name}{TMP_MARKER}{}-{n}", std::process::id()))
}

/// Writes and syncs a temporary sibling; the caller renames it into place.
pub fn write_tmp(path: &Path, bytes: &[u8]) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::storage(parent, e))?;
        }
    }
    let tmp = tmp_path(path);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::storage(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::storage(&tmp, e))?;
    Ok(tmp)
}

pub fn rename(from: &Path, to: &Path) -> Result<()> {
    fs::rename(from, to).map_err(|e| Error::storage(to, e))
}

/// Write-new-then-rename: readers see the old bytes or the new bytes, never a mix.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = write_tmp(path, bytes)?;
    rename(&tmp, path)
}

pub fn is_tmp_name(name: &str) -> bool {
    name.contains(TMP_MARKER)
}
