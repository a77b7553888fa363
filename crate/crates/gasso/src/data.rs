//! CSV ingestion, Gaussian preprocessing, and manifest parsing.
//!
//! Data blocks travel as CSV with a header row and a leading sample-ID
//! column. A manifest is a plain `key = value` file naming both blocks and
//! their families so the CLI can load a paired dataset in one flag.

use crate::error::{GassoError, Result};
use crate::expfam::Family;
use crate::model::DataBlock;
use crate::numkit::{self, Matrix};
use std::io::{BufRead, Write};
use std::path::Path;

fn parse_family(s: &str) -> Result<Family> {
    match s.trim().to_ascii_lowercase().as_str() {
        "gaussian" | "normal" => Ok(Family::GaussianUnitVar),
        "bernoulli" | "binary" => Ok(Family::Bernoulli),
        "poisson" | "count" => Ok(Family::Poisson),
        other => Err(GassoError::Parse(format!(
            "unknown family '{other}' (expected gaussian, bernoulli, or poisson)"
        ))),
    }
}

/// Family declaration for a block: one family for every column, or an
/// explicit per-column list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FamilyDecl {
    Uniform(Family),
    PerColumn(Vec<Family>),
}

impl FamilyDecl {
    /// Parse `gaussian` or a comma-separated per-column list.
    pub fn parse(s: &str) -> Result<FamilyDecl> {
        if s.contains(',') {
            let fams = s
                .split(',')
                .map(parse_family)
                .collect::<Result<Vec<Family>>>()?;
            Ok(FamilyDecl::PerColumn(fams))
        } else {
            Ok(FamilyDecl::Uniform(parse_family(s)?))
        }
    }

    fn expand(&self, p: usize) -> Result<Vec<Family>> {
        match self {
            FamilyDecl::Uniform(f) => Ok(vec![*f; p]),
            FamilyDecl::PerColumn(fams) if fams.len() == p => Ok(fams.clone()),
            FamilyDecl::PerColumn(fams) => Err(GassoError::Dimension(format!(
                "family list has {} entries but the block has {p} columns",
                fams.len()
            ))),
        }
    }
}

/// A parsed CSV block: sample IDs, column names, and the validated data.
#[derive(Debug, Clone)]
pub struct CsvBlock {
    pub sample_ids: Vec<String>,
    pub column_names: Vec<String>,
    pub block: DataBlock,
}

/// Read a CSV block: header row, first column sample IDs, remaining columns
/// numeric. Support is validated against the declared families.
pub fn read_block(path: &Path, families: &FamilyDecl) -> Result<CsvBlock> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| GassoError::Parse(format!("{}: empty file", path.display())))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 {
        return Err(GassoError::Parse(format!(
            "{}: need a sample-ID column plus at least one data column",
            path.display()
        )));
    }
    let column_names: Vec<String> = cols[1..].iter().map(|s| s.trim().to_string()).collect();
    let p = column_names.len();

    let mut sample_ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != p + 1 {
            return Err(GassoError::Parse(format!(
                "{}: line {} has {} fields, expected {}",
                path.display(),
                lineno + 2,
                fields.len(),
                p + 1
            )));
        }
        sample_ids.push(fields[0].trim().to_string());
        let mut row = Vec::with_capacity(p);
        for (j, f) in fields[1..].iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| {
                GassoError::Parse(format!(
                    "{}: line {}, column '{}': '{}' is not a number",
                    path.display(),
                    lineno + 2,
                    column_names[j],
                    f.trim()
                ))
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(GassoError::Parse(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let n = rows.len();
    let x = Matrix::from_fn(n, p, |i, j| rows[i][j]);
    let block = DataBlock::new(x, families.expand(p)?)?;
    Ok(CsvBlock {
        sample_ids,
        column_names,
        block,
    })
}

/// Write a block back to CSV in the same layout `read_block` expects.
pub fn write_block(path: &Path, block: &CsvBlock) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "id")?;
    for name in &block.column_names {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for (i, id) in block.sample_ids.iter().enumerate() {
        write!(out, "{id}")?;
        for j in 0..block.block.x.ncols() {
            let v = block.block.x[(i, j)];
            if v.fract() == 0.0 && v.abs() < 1e15 {
                write!(out, ",{}", v as i64)?;
            } else {
                write!(out, ",{v:.17e}")?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Standardize a Gaussian block and rescale it to unit noise variance.
///
/// Columns are centered and scaled to standard deviation one, then the whole
/// matrix is divided by a noise estimate σ̂ read off the spectrum: k̂ is the
/// largest index below min(n,p)/2 whose singular-value gap ratio exceeds 2
/// (k̂ = 0 when no gap does — the whole spectrum is noise), and σ̂² averages
/// the trailing squared singular values over the remaining (n−k̂)(p−k̂)
/// degrees of freedom.
pub fn preprocess_gaussian(x: &Matrix) -> Result<(Matrix, f64)> {
    let (n, p) = (x.nrows(), x.ncols());
    if n < 2 {
        return Err(GassoError::Dimension(
            "need at least two rows to standardize".into(),
        ));
    }
    let mut xs = x.clone();
    for j in 0..p {
        let col = xs.column(j);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let scale = 1.0 + mean * mean;
        if var <= 1e-24 * scale {
            return Err(GassoError::Domain(format!(
                "column {j} has zero variance; drop it before preprocessing"
            )));
        }
        let sd = var.sqrt();
        for v in xs.column_mut(j).iter_mut() {
            *v = (*v - mean) / sd;
        }
    }
    let (_u, d, _v) = numkit::svd_raw(&xs)?;
    let m = d.len();
    let cap = m.min(n.min(p) / 2);
    let mut k_hat = 0;
    for k in (1..=cap.min(m - 1)).rev() {
        if d[k] > 0.0 && d[k - 1] / d[k] > 2.0 {
            k_hat = k;
            break;
        }
    }
    let tail: f64 = (k_hat..m).map(|i| d[i] * d[i]).sum();
    let dof = ((n - k_hat) * (p - k_hat)) as f64;
    if dof <= 0.0 || tail <= 0.0 {
        return Err(GassoError::Domain(
            "spectrum leaves no degrees of freedom for the noise estimate".into(),
        ));
    }
    let sigma_hat = (tail / dof).sqrt();
    xs /= sigma_hat;
    Ok((xs, sigma_hat))
}

/// Paired-dataset manifest parsed from a `key = value` file.
///
/// Recognized keys: `block1.path`, `block1.family`, `block2.path`,
/// `block2.family`, and optional `block1.standardize` / `block2.standardize`
/// (true/false, Gaussian blocks only). Lines starting with `#` are comments.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub block1_path: String,
    pub block1_family: FamilyDecl,
    pub block1_standardize: bool,
    pub block2_path: String,
    pub block2_family: FamilyDecl,
    pub block2_standardize: bool,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Manifest> {
        let mut kv = std::collections::BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                GassoError::Parse(format!("manifest line {}: expected key = value", lineno + 1))
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .cloned()
                .ok_or_else(|| GassoError::Parse(format!("manifest missing key '{k}'")))
        };
        let get_bool = |k: &str| -> Result<bool> {
            match kv.get(k).map(|s| s.as_str()) {
                None => Ok(false),
                Some("true") => Ok(true),
                Some("false") => Ok(false),
                Some(other) => Err(GassoError::Parse(format!(
                    "manifest key '{k}': expected true or false, got '{other}'"
                ))),
            }
        };
        Ok(Manifest {
            block1_path: get("block1.path")?,
            block1_family: FamilyDecl::parse(&get("block1.family")?)?,
            block1_standardize: get_bool("block1.standardize")?,
            block2_path: get("block2.path")?,
            block2_family: FamilyDecl::parse(&get("block2.family")?)?,
            block2_standardize: get_bool("block2.standardize")?,
        })
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        Manifest::parse(&std::fs::read_to_string(path)?)
    }

    /// Read both blocks, check the sample IDs align, and apply any requested
    /// standardization. Returns the blocks plus the σ̂ used for each (1.0
    /// when untouched).
    pub fn load_blocks(&self, base: &Path) -> Result<(CsvBlock, CsvBlock, f64, f64)> {
        let resolve = |p: &str| {
            let pb = Path::new(p);
            if pb.is_absolute() {
                pb.to_path_buf()
            } else {
                base.join(pb)
            }
        };
        let mut b1 = read_block(&resolve(&self.block1_path), &self.block1_family)?;
        let mut b2 = read_block(&resolve(&self.block2_path), &self.block2_family)?;
        if b1.sample_ids != b2.sample_ids {
            return Err(GassoError::Domain(
                "sample IDs of the two blocks do not match in order".into(),
            ));
        }
        let mut sig = (1.0, 1.0);
        if self.block1_standardize {
            let (xs, s) = preprocess_gaussian(&b1.block.x)?;
            b1.block = DataBlock::new(xs, b1.block.families.clone())?;
            sig.0 = s;
        }
        if self.block2_standardize {
            let (xs, s) = preprocess_gaussian(&b2.block.x)?;
            b2.block = DataBlock::new(xs, b2.block.families.clone())?;
            sig.1 = s;
        }
        Ok((b1, b2, sig.0, sig.1))
    }
}
