//! Model archives: fitted parameters on disk, in a text or binary container.
//!
//! Text archives are a directory with one CSV per matrix plus
//! `metadata.json`. Binary archives are a single file:
//!
//! ```text
//! magic "GASARCH1" (8 bytes)
//! u64 LE: metadata length in bytes, then that many bytes of JSON
//! u64 LE: number of matrices, then per matrix:
//!   u64 LE name length, name bytes (UTF-8),
//!   u64 LE rows, u64 LE cols,
//!   rows*cols f64 LE values in column-major order
//! ```
//!
//! The metadata record carries the families of both blocks, the fitted
//! ranks, the seed used (if any), and a format version.

use crate::error::{GassoError, Result};
use crate::expfam::Family;
use crate::model::{GasParams, Ranks};
use crate::numkit::{Matrix, Vector};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"GASARCH1";
pub const FORMAT_VERSION: u32 = 1;

/// Metadata stored alongside the parameter matrices.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArchiveMetadata {
    pub version: u32,
    pub families1: Vec<Family>,
    pub families2: Vec<Family>,
    pub ranks: Ranks,
    pub seed: Option<u64>,
}

/// A fitted model plus its metadata, as written to or read from disk.
#[derive(Debug, Clone)]
pub struct ModelArchive {
    pub metadata: ArchiveMetadata,
    pub params: GasParams,
}

const MATRIX_NAMES: [&str; 9] = ["mu1", "mu2", "u0", "u1", "u2", "v1", "v2", "a1", "a2"];

fn matrices_of(params: &GasParams) -> Vec<(&'static str, Matrix)> {
    let as_col = |v: &Vector| Matrix::from_column_slice(v.len(), 1, v.as_slice());
    vec![
        ("mu1", as_col(&params.mu1)),
        ("mu2", as_col(&params.mu2)),
        ("u0", params.u0.clone()),
        ("u1", params.u1.clone()),
        ("u2", params.u2.clone()),
        ("v1", params.v1.clone()),
        ("v2", params.v2.clone()),
        ("a1", params.a1.clone()),
        ("a2", params.a2.clone()),
    ]
}

fn params_from(mut map: std::collections::BTreeMap<String, Matrix>) -> Result<GasParams> {
    let mut take = |name: &str| {
        map.remove(name)
            .ok_or_else(|| GassoError::Parse(format!("archive missing matrix '{name}'")))
    };
    let col = |m: Matrix, name: &str| -> Result<Vector> {
        if m.ncols() != 1 {
            return Err(GassoError::Dimension(format!(
                "'{name}' must be a single column, got {} columns",
                m.ncols()
            )));
        }
        Ok(m.column(0).clone_owned())
    };
    let mu1 = col(take("mu1")?, "mu1")?;
    let mu2 = col(take("mu2")?, "mu2")?;
    let params = GasParams {
        mu1,
        mu2,
        u0: take("u0")?,
        u1: take("u1")?,
        u2: take("u2")?,
        v1: take("v1")?,
        v2: take("v2")?,
        a1: take("a1")?,
        a2: take("a2")?,
    };
    params.check_dims()?;
    Ok(params)
}

impl ModelArchive {
    pub fn new(params: GasParams, metadata: ArchiveMetadata) -> Result<ModelArchive> {
        params.check_dims()?;
        if metadata.families1.len() != params.p1() || metadata.families2.len() != params.p2() {
            return Err(GassoError::Dimension(
                "metadata family lists do not match the parameter dimensions".into(),
            ));
        }
        Ok(ModelArchive { metadata, params })
    }

    /// Write as a directory of CSVs plus `metadata.json`.
    pub fn write_text(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&self.metadata)
            .map_err(|e| GassoError::Parse(format!("metadata: {e}")))?;
        std::fs::write(dir.join("metadata.json"), json)?;
        for (name, m) in matrices_of(&self.params) {
            let mut out =
                std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{name}.csv")))?);
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    if j > 0 {
                        write!(out, ",")?;
                    }
                    write!(out, "{:.17e}", m[(i, j)])?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }

    /// Read a text archive written by [`write_text`](Self::write_text).
    pub fn read_text(dir: &Path) -> Result<ModelArchive> {
        let json = std::fs::read_to_string(dir.join("metadata.json"))?;
        let metadata: ArchiveMetadata = serde_json::from_str(&json)
            .map_err(|e| GassoError::Parse(format!("metadata.json: {e}")))?;
        if metadata.version != FORMAT_VERSION {
            return Err(GassoError::Parse(format!(
                "unsupported archive version {}",
                metadata.version
            )));
        }
        let mut map = std::collections::BTreeMap::new();
        for name in MATRIX_NAMES {
            let text = std::fs::read_to_string(dir.join(format!("{name}.csv")))?;
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let row = line
                    .split(',')
                    .map(|f| f.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<f64>, _>>()
                    .map_err(|e| {
                        GassoError::Parse(format!("{name}.csv line {}: {e}", lineno + 1))
                    })?;
                if let Some(first) = rows.first() {
                    if row.len() != first.len() {
                        return Err(GassoError::Parse(format!(
                            "{name}.csv line {}: ragged row",
                            lineno + 1
                        )));
                    }
                }
                rows.push(row);
            }
            let nr = rows.len();
            let nc = rows.first().map_or(0, |r| r.len());
            map.insert(name.to_string(), Matrix::from_fn(nr, nc, |i, j| rows[i][j]));
        }
        ModelArchive::new(params_from(map)?, metadata)
    }

    /// Write as a single binary file.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(MAGIC)?;
        let json = serde_json::to_vec(&self.metadata)
            .map_err(|e| GassoError::Parse(format!("metadata: {e}")))?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        let mats = matrices_of(&self.params);
        out.write_all(&(mats.len() as u64).to_le_bytes())?;
        for (name, m) in mats {
            out.write_all(&(name.len() as u64).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(m.nrows() as u64).to_le_bytes())?;
            out.write_all(&(m.ncols() as u64).to_le_bytes())?;
            for v in m.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Read a binary archive written by [`write_binary`](Self::write_binary).
    pub fn read_binary(path: &Path) -> Result<ModelArchive> {
        let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(GassoError::Parse(format!(
                "{}: not a model archive (bad magic)",
                path.display()
            )));
        }
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |input: &mut dyn Read| -> Result<u64> {
            input.read_exact(&mut u64buf)?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let json_len = read_u64(&mut input)? as usize;
        if json_len > 1 << 24 {
            return Err(GassoError::Parse("metadata block too large".into()));
        }
        let mut json = vec![0u8; json_len];
        input.read_exact(&mut json)?;
        let metadata: ArchiveMetadata = serde_json::from_slice(&json)
            .map_err(|e| GassoError::Parse(format!("metadata: {e}")))?;
        if metadata.version != FORMAT_VERSION {
            return Err(GassoError::Parse(format!(
                "unsupported archive version {}",
                metadata.version
            )));
        }
        let count = read_u64(&mut input)? as usize;
        let mut map = std::collections::BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u64(&mut input)? as usize;
            if name_len > 256 {
                return Err(GassoError::Parse("matrix name too long".into()));
            }
            let mut name_buf = vec![0u8; name_len];
            input.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| GassoError::Parse("matrix name is not UTF-8".into()))?;
            let rows = read_u64(&mut input)? as usize;
            let cols = read_u64(&mut input)? as usize;
            if rows.saturating_mul(cols) > 1 << 28 {
                return Err(GassoError::Parse(format!("matrix '{name}' too large")));
            }
            let mut data = vec![0.0f64; rows * cols];
            let mut fbuf = [0u8; 8];
            for v in data.iter_mut() {
                input.read_exact(&mut fbuf)?;
                *v = f64::from_le_bytes(fbuf);
            }
            map.insert(name, Matrix::from_column_slice(rows, cols, &data));
        }
        ModelArchive::new(params_from(map)?, metadata)
    }
}
