pub mod fit;
pub mod gen;
pub mod pipeline;
pub mod viz;

use std::path::{Path, PathBuf};

use dirpose::io::{read_manifest, ManifestRecord};

use crate::error::{CliError, CliResult};
use crate::run::Run;

pub const MANIFEST: &str = "manifest.jsonl";

/// Reads the manifest at `path` (default `<out>/manifest.jsonl`); returns it with the
/// directory its file names are relative to.
pub fn open_manifest(run: &Run, path: Option<PathBuf>) -> CliResult<(PathBuf, Vec<ManifestRecord>)> {
    let path = path.unwrap_or_else(|| run.path(MANIFEST));
    if !path.is_file() {
        return Err(CliError::usage(format!("manifest {} does not exist; run `dirpose gen` first", path.display())));
    }
    let records = read_manifest(&path)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((dir, records))
}
