use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{DcmError, Result};

/// Writes `bytes` to a temporary sibling file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| DcmError::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| DcmError::config(format!("`{}` is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| DcmError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| DcmError::io(&tmp, e))?;
    f.sync_all().map_err(|e| DcmError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| DcmError::io(path, e))
}
