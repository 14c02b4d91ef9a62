//! Model checkpoints: one JSON header line, then raw little-endian doubles.
//!
//! The header is human-inspectable (`head -1 model.ckpt`), self-describing
//! (config, group registry, parameter count), and versioned; the payload is
//! the flat parameter vector, bit-exact.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::Model;
use crate::error::{Error, Result};
use crate::linalg::FlatVector;

pub const FORMAT_TAG: &str = "attention-curvature-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    registry: BTreeMap<String, Vec<usize>>,
    param_count: usize,
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let header = Header {
        format: FORMAT_TAG.to_string(),
        version: FORMAT_VERSION,
        config: model.config().clone(),
        registry: model.registry().as_map(),
        param_count: model.param_count(),
    };
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for &v in &model.params.0 {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    let file = std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact { path: path.display().to_string() }
        } else {
            Error::Io(e)
        }
    })?;
    let mut reader = BufReader::new(file);

    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let read = reader.read(&mut byte)?;
        if read == 0 {
            return Err(Error::Format {
                message: format!("{}: missing header line", path.display()),
            });
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&header_bytes).map_err(|e| Error::Format {
        message: format!("{}: bad header: {e}", path.display()),
    })?;
    if header.format != FORMAT_TAG {
        return Err(Error::Format {
            message: format!(
                "{}: format tag '{}' is not '{FORMAT_TAG}'",
                path.display(),
                header.format
            ),
        });
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::SchemaVersion { expected: FORMAT_VERSION, found: header.version });
    }

    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != header.param_count * 8 {
        return Err(Error::Format {
            message: format!(
                "{}: payload holds {} bytes, header promises {} parameters ({} bytes)",
                path.display(),
                payload.len(),
                header.param_count,
                header.param_count * 8
            ),
        });
    }
    let params = FlatVector(
        payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunks_exact(8)")))
            .collect(),
    );

    let model = Model::from_parts(header.config, params)?;
    // The registry is derived from the config; a mismatch means the file was
    // produced by an incompatible build and silently wrong groups would
    // follow, so fail loudly instead.
    if model.registry().as_map() != header.registry {
        return Err(Error::Format {
            message: format!(
                "{}: stored group registry does not match the one derived from the config",
                path.display()
            ),
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::config::ModelKind;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = Model::build(ModelConfig::with_kind(ModelKind::Hierarchical)).unwrap();
        // Make the payload distinctive, including awkward values.
        model.params.0[0] = -0.0;
        model.params.0[1] = f64::MIN_POSITIVE;
        model.params.0[2] = 1.0 / 3.0;
        save(&model, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.param_count(), model.param_count());
        for (a, b) in back.params.0.iter().zip(&model.params.0) {
            assert_eq!(a.to_bits(), b.to_bits(), "parameter bytes must survive");
        }
    }

    #[test]
    fn header_is_readable_json_on_first_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = Model::build(ModelConfig::with_kind(ModelKind::Selfattn)).unwrap();
        save(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let newline = bytes.iter().position(|&b| b == b'\n').unwrap();
        let v: serde_json::Value = serde_json::from_slice(&bytes[..newline]).unwrap();
        assert_eq!(v["format"], FORMAT_TAG);
        assert_eq!(v["param_count"], model.param_count());
        assert!(v["registry"]["query_proj"].is_array());
    }

    #[test]
    fn wrong_version_is_rejected_with_both_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = Model::build(ModelConfig::with_kind(ModelKind::Selfattn)).unwrap();
        save(&model, &path).unwrap();
        let text = std::fs::read(&path).unwrap();
        let patched = String::from_utf8_lossy(&text).replace("\"version\":1", "\"version\":9");
        std::fs::write(&path, patched).unwrap();
        match load(&path).unwrap_err() {
            Error::SchemaVersion { expected, found } => {
                assert_eq!((expected, found), (FORMAT_VERSION, 9));
            }
            other => panic!("expected SchemaVersion, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = Model::build(ModelConfig::with_kind(ModelKind::Selfattn)).unwrap();
        save(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load(&path).unwrap_err(), Error::Format { .. }));
    }

    #[test]
    fn missing_file_is_a_missing_artifact() {
        let err = load(Path::new("/nonexistent/model.ckpt")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { .. }));
    }
}
