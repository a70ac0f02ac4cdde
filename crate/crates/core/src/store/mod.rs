//! On-disk interchange: EMBX activation files and their manifest.

pub mod embx;
pub mod manifest;

use std::fs::{self, File};
use std::path::Path;

use crate::error::{Error, Result};

pub use embx::{read_activation, write_activation, ActivationStack, EmbxHeader};
pub use manifest::{Manifest, ManifestRecord, Modality};

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written file.
pub(crate) fn write_atomically(path: &Path, write: impl FnOnce(&mut File) -> std::io::Result<()>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::storage(parent, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::contract(format!("{} has no file name", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = File::create(&tmp).and_then(|mut f| write(&mut f));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::storage(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| Error::storage(path, e))
}
