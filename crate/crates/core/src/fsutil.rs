use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{FavarError, Result};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| FavarError::io(dir, e))?;
    let file_name = path
        .file_name()
        .ok_or_else(|| FavarError::Data(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| FavarError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| FavarError::io(&tmp, e))?;
        f.sync_all().map_err(|e| FavarError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| FavarError::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| FavarError::io(path, e))
}
