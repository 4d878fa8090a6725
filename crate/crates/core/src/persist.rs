//! Versioned JSON documents for trained models and evaluation reports.
//! Every artifact carries `version` and `kind` fields so a loader can
//! reject files written by a different tool or format revision.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("expected a {expected:?} document, found {found:?}")]
    WrongKind { expected: String, found: String },
    #[error("{kind:?} document version {found} is not supported (expected {expected})")]
    UnsupportedVersion { kind: String, found: u32, expected: u32 },
}

#[derive(Serialize)]
struct DocumentRef<'a, T: Serialize> {
    version: u32,
    kind: &'a str,
    #[serde(flatten)]
    payload: &'a T,
}

#[derive(Deserialize)]
struct Document<T> {
    version: u32,
    kind: String,
    #[serde(flatten)]
    payload: T,
}

pub fn save_document<T: Serialize>(
    path: &Path,
    kind: &str,
    version: u32,
    payload: &T,
) -> Result<(), PersistError> {
    let doc = DocumentRef { version, kind, payload };
    let text = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_document<T: DeserializeOwned>(
    path: &Path,
    kind: &str,
    version: u32,
) -> Result<T, PersistError> {
    let text = std::fs::read_to_string(path)?;
    let doc: Document<T> = serde_json::from_str(&text)?;
    if doc.kind != kind {
        return Err(PersistError::WrongKind {
            expected: kind.to_string(),
            found: doc.kind,
        });
    }
    if doc.version != version {
        return Err(PersistError::UnsupportedVersion {
            kind: doc.kind,
            found: doc.version,
            expected: version,
        });
    }
    Ok(doc.payload)
}
