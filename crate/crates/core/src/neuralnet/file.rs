//! Model file: JSON with a format tag, a version and the SHA-256 of the
//! serialized model, so truncated or edited files are rejected whole.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::QMlpModel;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "ncsim-mlp";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    sha256: String,
    model: serde_json::Value,
}

fn digest(model_json: &str) -> String {
    hex::encode(Sha256::digest(model_json.as_bytes()))
}

impl QMlpModel {
    pub fn to_file_string(&self) -> Result<String> {
        let err = |e: serde_json::Error| Error::ModelFile(e.to_string());
        // the digest covers the canonical (key-sorted) form that loading recomputes
        let model = serde_json::to_value(self).map_err(err)?;
        let body = serde_json::to_string(&model).map_err(err)?;
        let env = Envelope {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            sha256: digest(&body),
            model,
        };
        serde_json::to_string_pretty(&env).map_err(err)
    }

    pub fn from_file_str(text: &str) -> Result<Self> {
        let env: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::ModelFile(format!("unreadable model file: {e}")))?;
        let format = env.get("format").and_then(|v| v.as_str());
        if format != Some(MODEL_FORMAT) {
            return Err(Error::ModelFile(format!("not a model file (format {format:?})")));
        }
        match env.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(MODEL_VERSION) => {}
            other => {
                return Err(Error::ModelFile(format!(
                    "unsupported model file version {other:?}, expected {MODEL_VERSION}"
                )))
            }
        }
        let env: Envelope =
            serde_json::from_value(env).map_err(|e| Error::ModelFile(format!("malformed model file: {e}")))?;
        let body = serde_json::to_string(&env.model).map_err(|e| Error::ModelFile(e.to_string()))?;
        if digest(&body) != env.sha256 {
            return Err(Error::ModelFile("checksum mismatch".into()));
        }
        serde_json::from_str(&body).map_err(|e| Error::ModelFile(format!("invalid model: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_file_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{QuantConfig, CARTPOLE_LAYERS};
    use super::*;

    fn model() -> QMlpModel {
        QMlpModel::new(&CARTPOLE_LAYERS, QuantConfig::cartpole(), 5).unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        let m = model();
        let back = QMlpModel::from_file_str(&m.to_file_string().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let text = model().to_file_string().unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(QMlpModel::from_file_str(cut), Err(Error::ModelFile(_))));
    }

    #[test]
    fn tampered_weights_fail_the_checksum() {
        let text = model().to_file_string().unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["model"]["layers"][0]["bias"][0] = serde_json::json!(0.5);
        match QMlpModel::from_file_str(&v.to_string()) {
            Err(Error::ModelFile(msg)) => assert!(msg.contains("checksum"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn legacy_version_is_unsupported() {
        let text = model().to_file_string().unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["version"] = serde_json::json!(0);
        match QMlpModel::from_file_str(&v.to_string()) {
            Err(Error::ModelFile(msg)) => assert!(msg.contains("unsupported"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
