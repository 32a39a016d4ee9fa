//! Corpus manifests: one JSON document with `categories` and `criteria`.

use std::fs;
use std::io::Write;
use std::path::Path;

use valulens_core::{Corpus, CorpusManifest};

use crate::error::{Error, Result};

pub fn parse_manifest(text: &str, context: &str) -> Result<Corpus> {
    let manifest: CorpusManifest = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: context.to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    Ok(Corpus::from_manifest(manifest)?)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, &path.display().to_string())
}

/// Pretty-printed JSON with a trailing newline. Saving a loaded canonical
/// manifest reproduces it byte for byte.
pub fn to_canonical_json(corpus: &Corpus) -> String {
    let mut text = serde_json::to_string_pretty(corpus.manifest()).expect("manifest serializes");
    text.push('\n');
    text
}

/// Writes to a temporary file next to `path` and renames it into place, so
/// readers never see a partial manifest.
pub fn save_manifest(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(to_canonical_json(corpus).as_bytes())
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
