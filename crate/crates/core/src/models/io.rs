use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use serde::{Deserialize, Serialize};

use super::{ModelError, TrainedModel};
use crate::features::FeatureSpec;

const MAGIC: &[u8; 8] = b"GEOACTMD";
pub const MODEL_FORMAT_VERSION: u16 = 1;

/// On-disk model: magic, little-endian format version, gzip-compressed JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub run_config_hash: String,
    pub city: String,
    /// Feature spec the model was trained under; refitting it on the same
    /// training split reproduces the training-time extractor.
    pub features: FeatureSpec,
    pub split_fingerprint: String,
    pub model: TrainedModel,
}

pub fn save_model(path: impl AsRef<Path>, file: &ModelFile) -> Result<(), crate::Error> {
    let path = path.as_ref();
    let io = |e| crate::Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&MODEL_FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    let mut gz = GzEncoder::new(w, flate2::Compression::default());
    serde_json::to_writer(&mut gz, file)?;
    gz.finish().map_err(io)?.flush().map_err(io)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile, crate::Error> {
    let path = path.as_ref();
    let io = |e| crate::Error::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut head = [0u8; 10];
    r.read_exact(&mut head)
        .map_err(|_| ModelError::Format(format!("{}: truncated header", path.display())))?;
    if &head[..8] != MAGIC {
        return Err(ModelError::Format(format!("{}: not a model file", path.display())).into());
    }
    let version = u16::from_le_bytes([head[8], head[9]]);
    if version != MODEL_FORMAT_VERSION {
        return Err(ModelError::Format(format!("unsupported format version {version}")).into());
    }
    let file: ModelFile = serde_json::from_reader(GzDecoder::new(r))
        .map_err(|e| ModelError::Format(format!("{}: {e}", path.display())))?;
    Ok(file)
}
