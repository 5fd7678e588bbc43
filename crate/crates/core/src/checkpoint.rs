//! Binary parameter files.
//!
//! Layout: the magic line `TDACKPT1`, one line of JSON header (model config,
//! tensor layout and any caller metadata), then the raw little-endian f64
//! payload. Files are written to a temporary sibling and renamed into place,
//! so a killed process never leaves a truncated checkpoint behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::{Layout, ParamVector};

const MAGIC: &[u8] = b"TDACKPT1\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: ModelConfig,
    pub layout: Layout,
    /// Number of f64 values following the header.
    pub payload_len: usize,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

pub fn encode(header: &Header, payload: &[f64]) -> Result<Vec<u8>> {
    if payload.len() != header.payload_len {
        return Err(Error::dim("checkpoint", "payload length disagrees with header"));
    }
    let json = serde_json::to_vec(header).map_err(|e| Error::Schema(e.to_string()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + json.len() + 1 + 8 * payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&json);
    out.push(b'\n');
    for x in payload {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> std::result::Result<(Header, Vec<f64>), String> {
    let rest = bytes.strip_prefix(MAGIC).ok_or("missing checkpoint magic")?;
    let nl = rest.iter().position(|&b| b == b'\n').ok_or("unterminated header")?;
    let header: Header = serde_json::from_slice(&rest[..nl]).map_err(|e| format!("bad header: {e}"))?;
    header.layout.validate().map_err(|e| e.to_string())?;
    let body = &rest[nl + 1..];
    if body.len() != 8 * header.payload_len {
        return Err(format!("payload holds {} bytes, header declares {} values", body.len(), header.payload_len));
    }
    let payload = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, payload))
}

/// Writes `bytes` to `path` via a temporary file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_raw(path: &Path, header: &Header, payload: &[f64]) -> Result<()> {
    write_atomic(path, &encode(header, payload)?)
}

pub fn load_raw(path: &Path) -> Result<(Header, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|d| Error::format(path, d))
}

/// Saves model parameters together with the config that produced them.
pub fn save_params(path: &Path, config: &ModelConfig, params: &ParamVector<f64>) -> Result<()> {
    let header = Header {
        config: config.clone(),
        layout: params.layout().as_ref().clone(),
        payload_len: params.len(),
        meta: serde_json::Value::Null,
    };
    save_raw(path, &header, params.values())
}

pub fn load_params(path: &Path) -> Result<(ModelConfig, ParamVector<f64>)> {
    let (header, payload) = load_raw(path)?;
    if payload.len() != header.layout.total() {
        return Err(Error::format(path, "payload does not match the layout size"));
    }
    if header.layout != header.config.layout() {
        return Err(Error::format(path, "stored layout disagrees with the stored model config"));
    }
    let params = ParamVector::new(Arc::new(header.layout), payload)?;
    Ok((header.config, params))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub step: usize,
    pub learning_rate: f64,
    /// Relative paths are resolved against the manifest's directory.
    pub path: PathBuf,
}

/// Saved training snapshots, listed in step order, plus the final parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSet {
    pub entries: Vec<CheckpointEntry>,
    #[serde(rename = "final")]
    pub final_params: PathBuf,
    #[serde(skip)]
    pub base: PathBuf,
}

impl CheckpointSet {
    pub fn new(entries: Vec<CheckpointEntry>, final_params: PathBuf) -> Self {
        CheckpointSet { entries, final_params, base: PathBuf::new() }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(self).map_err(|e| Error::Schema(e.to_string()))?;
        text.push(b'\n');
        write_atomic(path, &text)
    }

    pub fn read_manifest(path: &Path) -> Result<Self> {
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut set: CheckpointSet = serde_json::from_slice(&text).map_err(|e| Error::format(path, e.to_string()))?;
        set.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if set.entries.windows(2).any(|w| w[0].step >= w[1].step) {
            return Err(Error::format(path, "entries are not in increasing step order"));
        }
        Ok(set)
    }

    /// Loads entry `i`, turning any failure into a manifest error naming it.
    pub fn load_entry(&self, i: usize) -> Result<(ModelConfig, ParamVector<f64>)> {
        let e = self.entries.get(i).ok_or_else(|| Error::Manifest { entry: format!("#{i}"), detail: "no such entry".into() })?;
        let label = format!("step {} ({})", e.step, e.path.display());
        if !e.learning_rate.is_finite() {
            return Err(Error::Manifest { entry: label, detail: "learning rate is not finite".into() });
        }
        load_params(&self.resolve(&e.path)).map_err(|err| Error::Manifest { entry: label, detail: err.to_string() })
    }

    pub fn load_final(&self) -> Result<(ModelConfig, ParamVector<f64>)> {
        let p = self.resolve(&self.final_params);
        load_params(&p).map_err(|err| Error::Manifest { entry: format!("final ({})", p.display()), detail: err.to_string() })
    }
}
