//! Run directories, logging, and exit-code mapping.

use std::io::Write;
use std::path::{Path, PathBuf};
use voxalign_core::CoreError;

/// 2 = config error, 3 = data error, 4 = numeric divergence.
pub fn exit_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Config(_) => 2,
        CoreError::Divergence(_) => 4,
        _ => 3,
    }
}

/// The run directory: `out` when given, else a timestamped directory under
/// ./runs. Created only after the config has validated.
pub fn create_run_dir(out: Option<&Path>, command: &str) -> Result<PathBuf, CoreError> {
    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
            PathBuf::from("runs").join(format!("{command}-{stamp}"))
        }
    };
    std::fs::create_dir_all(&dir).map_err(|e| CoreError::io(dir.display().to_string(), e))?;
    Ok(dir)
}

/// Append a timestamped line to the run log (stdout mirror is the caller's
/// choice).
pub fn log_line(dir: &Path, line: &str) {
    if let Ok(mut f) = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("log.txt"))
    {
        let _ = writeln!(f, "[{}] {line}", chrono::Local::now().format("%Y-%m-%dT%H:%M:%S"));
    }
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CoreError> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| CoreError::io(path.display().to_string(), e))
}
