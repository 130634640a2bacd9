//! Checkpoint container: magic `MSHIFT1`, then length-prefixed named tensor
//! records (name, dtype tag, shape, row-major little-endian floats).
//!
//! Optimizer state rides along under the reserved `opt/` name prefix
//! (`opt/step`, `opt/m/<param>`, `opt/v/<param>`), so a checkpoint restores
//! training exactly or serves as inference weights when the prefix is absent.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::adam::OptimizerState;
use super::params::{Param, ParamStore};
use super::scalar::Scalar;

const MAGIC: &[u8; 7] = b"MSHIFT1";
const OPT_PREFIX: &str = "opt/";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unknown dtype tag {0}")]
    BadDtype(u8),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Write parameters (and optionally optimizer state) to `path`.
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    params: &ParamStore<S>,
    opt: Option<&OptimizerState<S>>,
) -> Result<(), CheckpointError> {
    let mut records: Vec<(String, usize, usize, &[S])> = Vec::new();
    for (name, p) in params.iter() {
        if name.starts_with(OPT_PREFIX) {
            return Err(CheckpointError::Corrupt(format!(
                "parameter name `{name}` collides with the reserved `{OPT_PREFIX}` prefix"
            )));
        }
        records.push((name.clone(), p.rows, p.cols, &p.data));
    }
    let step_record;
    if let Some(opt) = opt {
        step_record = [S::from_f64(opt.step as f64)];
        records.push(("opt/step".into(), 1, 1, &step_record));
        for (name, m) in &opt.m {
            records.push((format!("opt/m/{name}"), 1, m.len(), m));
        }
        for (name, v) in &opt.v {
            records.push((format!("opt/v/{name}"), 1, v.len(), v));
        }
    }

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, rows, cols, data) in records {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[S::DTYPE])?;
        w.write_all(&(rows as u32).to_le_bytes())?;
        w.write_all(&(cols as u32).to_le_bytes())?;
        match S::DTYPE {
            1 => {
                for x in data {
                    w.write_all(&(x.to_f64() as f32).to_le_bytes())?;
                }
            }
            2 => {
                for x in data {
                    w.write_all(&x.to_f64().to_le_bytes())?;
                }
            }
            other => return Err(CheckpointError::BadDtype(other)),
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint. Tensors stored at a different float width are
/// converted to `S`.
pub fn load_checkpoint<S: Scalar>(
    path: &Path,
) -> Result<(ParamStore<S>, Option<OptimizerState<S>>), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let count = read_u32(&mut r)? as usize;

    let mut params = ParamStore::new();
    let mut m: BTreeMap<String, Vec<S>> = BTreeMap::new();
    let mut v: BTreeMap<String, Vec<S>> = BTreeMap::new();
    let mut step: Option<u64> = None;
    let mut seen_opt = false;

    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(CheckpointError::Corrupt(format!(
                "implausible name length {name_len}"
            )));
        }
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::Corrupt("name is not UTF-8".into()))?;
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype)?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| CheckpointError::Corrupt("shape overflow".into()))?;
        let mut data = Vec::with_capacity(len);
        match dtype[0] {
            1 => {
                let mut buf = [0u8; 4];
                for _ in 0..len {
                    r.read_exact(&mut buf)?;
                    data.push(S::from_f64(f32::from_le_bytes(buf) as f64));
                }
            }
            2 => {
                let mut buf = [0u8; 8];
                for _ in 0..len {
                    r.read_exact(&mut buf)?;
                    data.push(S::from_f64(f64::from_le_bytes(buf)));
                }
            }
            other => return Err(CheckpointError::BadDtype(other)),
        }

        if let Some(rest) = name.strip_prefix(OPT_PREFIX) {
            seen_opt = true;
            if rest == "step" {
                step = Some(data[0].to_f64() as u64);
            } else if let Some(p) = rest.strip_prefix("m/") {
                m.insert(p.to_string(), data);
            } else if let Some(p) = rest.strip_prefix("v/") {
                v.insert(p.to_string(), data);
            } else {
                return Err(CheckpointError::Corrupt(format!(
                    "unknown optimizer record `{name}`"
                )));
            }
        } else {
            params.insert(name, Param { rows, cols, data });
        }
    }

    let opt = if seen_opt {
        Some(OptimizerState {
            step: step.ok_or_else(|| {
                CheckpointError::Corrupt("optimizer records without opt/step".into())
            })?,
            m,
            v,
        })
    } else {
        None
    };
    Ok((params, opt))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
