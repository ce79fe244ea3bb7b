//! On-disk model container.
//!
//! Layout: the magic line `AVDB1`, then `kind <knn|svm|cnn>`, `version 1`,
//! the full run configuration as `key = value` lines, and `payload <n>`
//! followed by exactly `n` bytes of little-endian model data.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::cnn::CnnModel;
use crate::codec::{ByteReader, ByteWriter, CodecError};
use crate::config::{ConfigError, RunConfig};
use crate::knn::KnnModel;
use crate::svm::SvmModel;

pub const MAGIC: &[u8] = b"AVDB1\n";
pub const VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a model container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}, expected {VERSION}")]
    UnsupportedVersion(String),
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("container configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("container payload: {0}")]
    Codec(#[from] CodecError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Knn,
    Svm,
    Cnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Knn, ModelKind::Svm, ModelKind::Cnn];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Knn => "knn",
            ModelKind::Svm => "svm",
            ModelKind::Cnn => "cnn",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        ModelKind::ALL.into_iter().find(|k| k.tag() == tag)
    }

    /// Upper-case name used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Knn => "KNN",
            ModelKind::Svm => "SVM",
            ModelKind::Cnn => "CNN",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Knn(KnnModel),
    Svm(SvmModel),
    Cnn(CnnModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Knn(_) => ModelKind::Knn,
            Model::Svm(_) => ModelKind::Svm,
            Model::Cnn(_) => ModelKind::Cnn,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelContainer {
    pub config: RunConfig,
    pub model: Model,
}

fn next_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str, ContainerError> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ContainerError::Malformed("header ends without a payload line".into()))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end])
        .map_err(|_| ContainerError::Malformed("header is not UTF-8".into()))
}

impl ModelContainer {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        match &self.model {
            Model::Knn(m) => m.write_payload(&mut w),
            Model::Svm(m) => m.write_payload(&mut w),
            Model::Cnn(m) => m.write_payload(&mut w),
        }
        let payload = w.into_bytes();
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(
            format!("kind {}\nversion {VERSION}\n", self.model.kind()).as_bytes(),
        );
        out.extend_from_slice(self.config.to_text().as_bytes());
        out.extend_from_slice(format!("payload {}\n", payload.len()).as_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        if !bytes.starts_with(MAGIC) {
            return Err(ContainerError::BadMagic);
        }
        let mut pos = MAGIC.len();
        let kind = next_line(bytes, &mut pos)?
            .strip_prefix("kind ")
            .and_then(ModelKind::from_tag)
            .ok_or_else(|| ContainerError::Malformed("missing or unknown kind line".into()))?;
        let version = next_line(bytes, &mut pos)?
            .strip_prefix("version ")
            .ok_or_else(|| ContainerError::Malformed("missing version line".into()))?;
        if version.parse::<u64>().ok() != Some(VERSION) {
            return Err(ContainerError::UnsupportedVersion(version.to_string()));
        }
        let mut config_text = String::new();
        let payload_len = loop {
            let line = next_line(bytes, &mut pos)?;
            if let Some(n) = line.strip_prefix("payload ") {
                break n
                    .parse::<usize>()
                    .map_err(|_| ContainerError::Malformed(format!("bad payload length `{n}`")))?;
            }
            config_text.push_str(line);
            config_text.push('\n');
        };
        let config = RunConfig::from_text(&config_text)?;
        let payload = &bytes[pos..];
        if payload.len() != payload_len {
            return Err(ContainerError::Malformed(format!(
                "payload declares {payload_len} bytes but {} follow",
                payload.len()
            )));
        }
        let mut r = ByteReader::new(payload);
        let model = match kind {
            ModelKind::Knn => Model::Knn(KnnModel::read_payload(&mut r)?),
            ModelKind::Svm => Model::Svm(SvmModel::read_payload(&mut r)?),
            ModelKind::Cnn => Model::Cnn(CnnModel::read_payload(&mut r)?),
        };
        r.finish()?;
        Ok(ModelContainer { config, model })
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| ContainerError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        let bytes = std::fs::read(path).map_err(|source| ContainerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn svm_container() -> ModelContainer {
        ModelContainer {
            config: RunConfig::default(),
            model: Model::Svm(SvmModel::new(vec![0.25, -1.5, 3.0], 0.125)),
        }
    }

    #[test]
    fn round_trip() {
        let c = svm_container();
        assert_eq!(ModelContainer::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn header_is_readable_text() {
        let bytes = svm_container().to_bytes();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.starts_with("AVDB1\nkind svm\nversion 1\nimage_size = 64\n"));
    }

    #[test]
    fn rejects_bad_magic_version_and_length() {
        let good = svm_container().to_bytes();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            ModelContainer::from_bytes(&bad),
            Err(ContainerError::BadMagic)
        ));

        let at = good.windows(9).position(|w| w == b"version 1").unwrap();
        let mut v2 = good.clone();
        v2[at + 8] = b'2';
        assert!(matches!(
            ModelContainer::from_bytes(&v2),
            Err(ContainerError::UnsupportedVersion(_))
        ));

        let short = &good[..good.len() - 3];
        assert!(matches!(
            ModelContainer::from_bytes(short),
            Err(ContainerError::Malformed(_))
        ));
        assert!(matches!(
            ModelContainer::from_bytes(b"AVDB1\nkind dog\n"),
            Err(ContainerError::Malformed(_))
        ));
    }
}
