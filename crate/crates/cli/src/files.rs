use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;

/// Environment variable that replaces the default output directory.
pub const OUTPUT_DIR_ENV: &str = "OTADP_OUTPUT_DIR";
/// Environment variable that replaces the default MNIST directory.
pub const DATA_DIR_ENV: &str = "OTADP_DATA_DIR";

pub const DEFAULT_OUTPUT_DIR: &str = "results";
pub const DEFAULT_DATA_DIR: &str = "data/mnist-desk";

/// Explicit flag, then the environment, then the default.
pub fn resolve_dir(flag: Option<&Path>, env: &str, default: &str) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(env).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(default))
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn flag_beats_default() {
        let d = resolve_dir(Some(Path::new("/x")), "OTADP_TEST_UNSET_VAR", "y");
        assert_eq!(d, PathBuf::from("/x"));
        assert_eq!(resolve_dir(None, "OTADP_TEST_UNSET_VAR", "y"), PathBuf::from("y"));
    }
}
