//! Content-addressed asset store. An asset's URI is `<kind>/<sha256>.<ext>`,
//! so equal bytes always get the same URI.

use std::fs;
use std::path::{Path, PathBuf};

use styleweave::checkpoint::sha256_hex;

use crate::error::{Result, StudioError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssetKind {
    Images,
    Masks,
    Plans,
    Traces,
    Checkpoints,
    Styles,
    Coeffs,
}

impl AssetKind {
    pub const ALL: [AssetKind; 7] = [
        AssetKind::Images,
        AssetKind::Masks,
        AssetKind::Plans,
        AssetKind::Traces,
        AssetKind::Checkpoints,
        AssetKind::Styles,
        AssetKind::Coeffs,
    ];

    pub fn dir(self) -> &'static str {
        match self {
            AssetKind::Images => "images",
            AssetKind::Masks => "masks",
            AssetKind::Plans => "plans",
            AssetKind::Traces => "traces",
            AssetKind::Checkpoints => "checkpoints",
            AssetKind::Styles => "styles",
            AssetKind::Coeffs => "coeffs",
        }
    }

    pub fn ext(self) -> &'static str {
        match self {
            AssetKind::Images | AssetKind::Masks => "png",
            AssetKind::Plans | AssetKind::Styles | AssetKind::Coeffs => "json",
            AssetKind::Traces => "csv",
            AssetKind::Checkpoints => "ckpt",
        }
    }

    pub fn content_type(self) -> &'static str {
        match self.ext() {
            "png" => "image/png",
            "json" => "application/json",
            "csv" => "text/csv",
            _ => "application/octet-stream",
        }
    }

    pub fn from_dir(dir: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.dir() == dir)
    }
}

/// A parsed, path-safe asset URI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetUri {
    pub kind: AssetKind,
    pub hash: String,
}

impl AssetUri {
    pub fn parse(uri: &str) -> Result<Self> {
        let bad = || StudioError::bad(format!("malformed asset uri `{uri}`"));
        let (dir, file) = uri.split_once('/').ok_or_else(bad)?;
        let kind = AssetKind::from_dir(dir).ok_or_else(bad)?;
        let hash = file
            .strip_suffix(kind.ext())
            .and_then(|f| f.strip_suffix('.'))
            .ok_or_else(bad)?;
        if hash.len() != 64
            || !hash
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
        {
            return Err(bad());
        }
        Ok(AssetUri {
            kind,
            hash: hash.to_string(),
        })
    }

    /// Parses and additionally requires `kind`.
    pub fn parse_as(uri: &str, kind: AssetKind) -> Result<Self> {
        let parsed = Self::parse(uri)?;
        if parsed.kind != kind {
            return Err(StudioError::bad(format!(
                "`{uri}` is not a {} asset",
                kind.dir()
            )));
        }
        Ok(parsed)
    }

    pub fn relative_path(&self) -> PathBuf {
        Path::new(self.kind.dir()).join(format!("{}.{}", self.hash, self.kind.ext()))
    }
}

impl std::fmt::Display for AssetUri {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}.{}", self.kind.dir(), self.hash, self.kind.ext())
    }
}

#[derive(Debug, Clone)]
pub struct AssetStore {
    root: PathBuf,
}

impl AssetStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        AssetStore { root: root.into() }
    }

    pub fn path(&self, uri: &AssetUri) -> PathBuf {
        self.root.join(uri.relative_path())
    }

    /// Stores `bytes` and returns its URI. Existing content is left alone.
    pub fn put(&self, kind: AssetKind, bytes: &[u8]) -> Result<AssetUri> {
        let uri = AssetUri {
            kind,
            hash: sha256_hex(bytes),
        };
        let path = self.path(&uri);
        if !path.exists() {
            let dir = self.root.join(kind.dir());
            fs::create_dir_all(&dir).map_err(|e| StudioError::io(&dir, e))?;
            // Write then rename so readers never see a partial file.
            let tmp = dir.join(format!(".{}.{}.tmp", uri.hash, uuid::Uuid::new_v4()));
            fs::write(&tmp, bytes).map_err(|e| StudioError::io(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| StudioError::io(&path, e))?;
        }
        Ok(uri)
    }

    pub fn get(&self, uri: &AssetUri) -> Result<Vec<u8>> {
        let path = self.path(uri);
        match fs::read(&path) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(StudioError::NotFound(format!("asset {uri}")))
            }
            Err(e) => Err(StudioError::io(path, e)),
        }
    }

    pub fn get_str(&self, uri: &str, kind: AssetKind) -> Result<Vec<u8>> {
        self.get(&AssetUri::parse_as(uri, kind)?)
    }
}
