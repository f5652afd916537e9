//! Versioned model checkpoints.
//!
//! A checkpoint is a single JSON document with a magic tag and format
//! version, followed by the full model: layer shapes and row-major
//! parameters for both nets, the latent transition matrix, and the
//! standardization statistics. JSON floats round-trip exactly, so a loaded
//! model is bitwise identical to the saved one.

use crate::koopman::SplitKoopmanModel;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &str = "KOOPMON-CKPT";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    magic: String,
    version: u32,
    model: SplitKoopmanModel,
}

pub fn save<W: Write>(model: &SplitKoopmanModel, w: W) -> Result<()> {
    model.validate()?;
    let file = CheckpointFile {
        magic: MAGIC.to_string(),
        version: VERSION,
        model: model.clone(),
    };
    serde_json::to_writer(w, &file).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn load<R: Read>(r: R) -> Result<SplitKoopmanModel> {
    let file: CheckpointFile =
        serde_json::from_reader(r).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if file.magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic `{}` (expected `{MAGIC}`)",
            file.magic
        )));
    }
    if file.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {VERSION})",
            file.version
        )));
    }
    file.model.validate()?;
    Ok(file.model)
}

pub fn save_path<P: AsRef<Path>>(model: &SplitKoopmanModel, path: P) -> Result<()> {
    save(model, BufWriter::new(File::create(path)?))
}

pub fn load_path<P: AsRef<Path>>(path: P) -> Result<SplitKoopmanModel> {
    load(BufReader::new(File::open(path)?))
}
