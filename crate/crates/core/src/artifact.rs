//! Versioned, checksummed persistence of fitted models.
//!
//! An artifact is a JSON document:
//!
//! ```json
//! {"format_version":1,"family":"arima","created_at":"…","fingerprint":"…",
//!  "payload_sha256":"…","payload":{…}}
//! ```
//!
//! `payload` is the serialised [`Fit`]; `payload_sha256` is taken over its
//! compact JSON form and `fingerprint` identifies the training series.

use std::path::Path;

use chrono::{DateTime, Utc};
use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forecast::{Fit, ModelFamily};
use crate::series::{format_ts, StockSeries};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub family: ModelFamily,
    pub created_at: DateTime<Utc>,
    pub fingerprint: String,
    pub fit: Fit,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    family: ModelFamily,
    created_at: DateTime<Utc>,
    fingerprint: String,
    payload_sha256: String,
    payload: serde_json::Value,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the series' category, index and values.
pub fn series_fingerprint(series: &StockSeries) -> String {
    let mut h = Sha256::new();
    h.update(series.category().as_str().as_bytes());
    h.update(format_ts(series.index().start()).as_bytes());
    h.update((series.len() as u64).to_le_bytes());
    for v in series.values() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

impl ModelArtifact {
    pub fn new(fit: Fit, series: &StockSeries, created_at: DateTime<Utc>) -> Self {
        Self { format_version: FORMAT_VERSION, family: fit.family(), created_at, fingerprint: series_fingerprint(series), fit }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload = serde_json::to_value(&self.fit)?;
        let envelope = Envelope {
            format_version: self.format_version,
            family: self.family,
            created_at: self.created_at,
            fingerprint: self.fingerprint.clone(),
            payload_sha256: sha256_hex(serde_json::to_string(&payload)?.as_bytes()),
            payload,
        };
        let mut bytes = serde_json::to_vec_pretty(&envelope)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| Error::Integrity(format!("unreadable artifact: {e}")))?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Integrity("missing format_version".into()))? as u32;
        if found != FORMAT_VERSION {
            return Err(Error::IncompatibleVersion { found, expected: FORMAT_VERSION });
        }
        let envelope: Envelope =
            serde_json::from_value(value).map_err(|e| Error::Integrity(format!("malformed artifact: {e}")))?;
        let digest = sha256_hex(serde_json::to_string(&envelope.payload)?.as_bytes());
        if digest != envelope.payload_sha256 {
            return Err(Error::Integrity("payload checksum mismatch".into()));
        }
        let fit: Fit = serde_json::from_value(envelope.payload)
            .map_err(|e| Error::Integrity(format!("payload does not decode: {e}")))?;
        if fit.family() != envelope.family {
            return Err(Error::Integrity(format!("family {} does not match payload {}", envelope.family, fit.family())));
        }
        Ok(Self {
            format_version: envelope.format_version,
            family: envelope.family,
            created_at: envelope.created_at,
            fingerprint: envelope.fingerprint,
            fit,
        })
    }

    /// `true` when `series` is the one the model was trained on. Logs a
    /// warning otherwise.
    pub fn check_fingerprint(&self, series: &StockSeries) -> bool {
        let ok = series_fingerprint(series) == self.fingerprint;
        if !ok {
            warn!("artifact was trained on a different series than the one supplied");
        }
        ok
    }
}

/// Writes through a temporary file and renames, so readers never see a
/// partial artifact.
pub fn save_artifact(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    let bytes = artifact.to_bytes()?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_artifact(path: &Path) -> Result<ModelArtifact> {
    ModelArtifact::from_bytes(&std::fs::read(path)?)
}
