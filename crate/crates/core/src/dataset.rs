//! Block ingestion and preprocessing.
//!
//! A block is an `n x J_b` matrix of variables observed on the same `n`
//! individuals as every other block. Columns are always centered at load
//! time; unit-variance scaling (1/n convention) is optional. The superblock
//! is the column concatenation of the blocks and is never re-centered.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Column scaling applied after centering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scaling {
    #[default]
    None,
    /// Divide every column by its standard deviation (1/n convention).
    UnitVariance,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub delimiter: u8,
    /// First column holds row identifiers rather than data.
    pub row_ids: bool,
    pub scaling: Scaling,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            row_ids: false,
            scaling: Scaling::None,
        }
    }
}

/// Record of what was subtracted and divided, per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessing {
    pub means: Vec<f64>,
    /// 1.0 for every column when no scaling was requested.
    pub scales: Vec<f64>,
    pub scaling: Scaling,
}

#[derive(Debug, Clone)]
pub struct Block {
    id: String,
    matrix: DMatrix<f64>,
    column_names: Vec<String>,
    row_ids: Option<Vec<String>>,
    preprocessing: Preprocessing,
}

impl Block {
    /// Centers (and optionally scales) `raw` and wraps it as a block.
    pub fn from_raw(
        id: impl Into<String>,
        raw: DMatrix<f64>,
        column_names: Option<Vec<String>>,
        scaling: Scaling,
    ) -> Result<Self> {
        let id = id.into();
        let (n, p) = raw.shape();
        if n < 2 {
            return Err(Error::Dimension(format!(
                "block `{id}` needs at least 2 individuals, got {n}"
            )));
        }
        if p == 0 {
            return Err(Error::Dimension(format!("block `{id}` has no variables")));
        }
        let column_names = match column_names {
            Some(names) if names.len() != p => {
                return Err(Error::Dimension(format!(
                    "block `{id}`: {} column names for {p} columns",
                    names.len()
                )))
            }
            Some(names) => names,
            None => (1..=p).map(|j| format!("V{j}")).collect(),
        };
        if let Some((i, j)) = (0..p)
            .flat_map(|j| (0..n).map(move |i| (i, j)))
            .find(|&(i, j)| !raw[(i, j)].is_finite())
        {
            return Err(Error::Parse {
                source_name: id,
                row: i + 1,
                column: j + 1,
                message: "non-finite value".into(),
            });
        }

        let mut matrix = raw;
        let mut means = Vec::with_capacity(p);
        let mut scales = Vec::with_capacity(p);
        let nf = n as f64;
        for (j, name) in column_names.iter().enumerate() {
            let mut col = matrix.column_mut(j);
            let raw_max = col.amax();
            let mean = col.sum() / nf;
            col.add_scalar_mut(-mean);
            // second pass removes the rounding left by the first
            let residual = col.sum() / nf;
            col.add_scalar_mut(-residual);
            means.push(mean + residual);

            let scale = match scaling {
                Scaling::None => 1.0,
                Scaling::UnitVariance => {
                    let sd = (col.norm_squared() / nf).sqrt();
                    if sd == 0.0 || sd <= 1e-13 * raw_max {
                        return Err(Error::DegenerateColumn {
                            block: id,
                            column: name.clone(),
                        });
                    }
                    col /= sd;
                    sd
                }
            };
            scales.push(scale);
        }

        Ok(Self {
            id,
            matrix,
            column_names,
            row_ids: None,
            preprocessing: Preprocessing {
                means,
                scales,
                scaling,
            },
        })
    }

    pub fn with_row_ids(mut self, row_ids: Vec<String>) -> Result<Self> {
        if row_ids.len() != self.n() {
            return Err(Error::Dimension(format!(
                "block `{}`: {} row ids for {} rows",
                self.id,
                row_ids.len(),
                self.n()
            )));
        }
        self.row_ids = Some(row_ids);
        Ok(self)
    }

    /// Same labels and preprocessing record, different (already centered)
    /// data. Used by deflation.
    pub(crate) fn with_matrix(&self, matrix: DMatrix<f64>) -> Self {
        debug_assert_eq!(matrix.shape(), self.matrix.shape());
        Self {
            matrix,
            ..self.clone()
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn row_ids(&self) -> Option<&[String]> {
        self.row_ids.as_deref()
    }

    pub fn preprocessing(&self) -> &Preprocessing {
        &self.preprocessing
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Parses a delimiter-separated table with a header row into a block.
pub fn load_block<R: Read>(reader: R, id: &str, options: &LoadOptions) -> Result<Block> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let parse_err = |row: usize, column: usize, message: String| Error::Parse {
        source_name: id.to_string(),
        row,
        column,
        message,
    };

    let headers = rdr.headers().map_err(|e| parse_err(1, 0, e.to_string()))?.clone();
    let skip = usize::from(options.row_ids);
    let names: Vec<String> = headers.iter().skip(skip).map(str::to_string).collect();
    let p = names.len();

    let mut values = Vec::new();
    let mut row_ids = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        // line 1 is the header
        let line = r + 2;
        let record = record.map_err(|e| parse_err(line, 0, e.to_string()))?;
        if record.len() != p + skip {
            return Err(parse_err(
                line,
                record.len(),
                format!("expected {} fields, found {}", p + skip, record.len()),
            ));
        }
        if options.row_ids {
            row_ids.push(record[0].to_string());
        }
        for (c, field) in record.iter().enumerate().skip(skip) {
            let x: f64 = field
                .parse()
                .map_err(|_| parse_err(line, c + 1, format!("`{field}` is not a number")))?;
            if !x.is_finite() {
                return Err(parse_err(line, c + 1, format!("`{field}` is not finite")));
            }
            values.push(x);
        }
    }
    let n = values.len().checked_div(p).unwrap_or(0);
    let raw = DMatrix::from_row_slice(n, p, &values);
    let block = Block::from_raw(id, raw, Some(names), options.scaling)?;
    if options.row_ids {
        block.with_row_ids(row_ids)
    } else {
        Ok(block)
    }
}

pub fn load_block_file(path: &Path, id: &str, options: &LoadOptions) -> Result<Block> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_block(file, id, options)
}

/// Loads one block per file, checking that row counts (and row ids, when
/// present) agree across files.
pub fn load_blocks<P: AsRef<Path>>(files: &[(P, String)], options: &LoadOptions) -> Result<BlockSet> {
    let mut blocks: Vec<Block> = Vec::with_capacity(files.len());
    for (path, id) in files {
        let block = load_block_file(path.as_ref(), id, options)?;
        if let Some(first) = blocks.first() {
            if first.n() != block.n() {
                return Err(Error::Dimension(format!(
                    "block `{}` has {} rows but block `{}` has {}",
                    block.id(),
                    block.n(),
                    first.id(),
                    first.n()
                )));
            }
            if let (Some(a), Some(b)) = (first.row_ids(), block.row_ids()) {
                if let Some(i) = (0..a.len()).find(|&i| a[i] != b[i]) {
                    return Err(Error::Dimension(format!(
                        "row id mismatch at row {}: `{}` in block `{}` vs `{}` in block `{}`",
                        i + 1,
                        a[i],
                        first.id(),
                        b[i],
                        block.id()
                    )));
                }
            }
        }
        blocks.push(block);
    }
    build_blockset(blocks)
}

/// Blocks plus their superblock.
#[derive(Debug, Clone)]
pub struct BlockSet {
    blocks: Vec<Block>,
    superblock: DMatrix<f64>,
    offsets: Vec<usize>,
}

/// Concatenates the blocks column-wise into the superblock.
pub fn build_blockset(blocks: Vec<Block>) -> Result<BlockSet> {
    let Some(first) = blocks.first() else {
        return Err(Error::Argument("at least one block is required".into()));
    };
    let n = first.n();
    if let Some(bad) = blocks.iter().find(|b| b.n() != n) {
        return Err(Error::Dimension(format!(
            "block `{}` has {} rows, expected {n}",
            bad.id(),
            bad.n()
        )));
    }
    let superblock = concat_columns(blocks.iter().map(Block::matrix), n);
    Ok(BlockSet::assemble(blocks, superblock))
}

fn concat_columns<'a>(parts: impl Iterator<Item = &'a DMatrix<f64>> + Clone, n: usize) -> DMatrix<f64> {
    let total: usize = parts.clone().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(n, total);
    let mut at = 0;
    for m in parts {
        out.columns_mut(at, m.ncols()).copy_from(m);
        at += m.ncols();
    }
    out
}

impl BlockSet {
    fn assemble(blocks: Vec<Block>, superblock: DMatrix<f64>) -> Self {
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        let mut at = 0;
        for b in &blocks {
            offsets.push(at);
            at += b.ncols();
        }
        offsets.push(at);
        Self {
            blocks,
            superblock,
            offsets,
        }
    }

    /// Blocks with an independently supplied superblock. Only deflation on
    /// the superblock's own components produces such a set.
    pub(crate) fn with_superblock(blocks: Vec<Block>, superblock: DMatrix<f64>) -> Self {
        Self::assemble(blocks, superblock)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, b: usize) -> &Block {
        &self.blocks[b]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn n(&self) -> usize {
        self.superblock.nrows()
    }

    pub fn superblock(&self) -> &DMatrix<f64> {
        &self.superblock
    }

    /// Column range of block `b` inside the superblock.
    pub fn column_range(&self, b: usize) -> std::ops::Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }

    /// `block:variable` labels for every superblock column.
    pub fn superblock_column_names(&self) -> Vec<String> {
        self.blocks
            .iter()
            .flat_map(|b| b.column_names().iter().map(move |c| format!("{}:{c}", b.id())))
            .collect()
    }

    /// Row ids from the first block that carries them, else `1..=n`.
    pub fn row_ids(&self) -> Vec<String> {
        self.blocks
            .iter()
            .find_map(|b| b.row_ids().map(<[String]>::to_vec))
            .unwrap_or_else(|| (1..=self.n()).map(|i| i.to_string()).collect())
    }
}

/// Sample covariance `(1/n) x'y` of two centered vectors.
pub fn sample_cov(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "covariance of vectors with lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::Dimension("covariance of empty vectors".into()));
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    Ok(dot / x.len() as f64)
}

/// Correlation of two centered vectors; 0 when either is constant.
pub fn sample_cor(x: &[f64], y: &[f64]) -> Result<f64> {
    let sxy = sample_cov(x, y)?;
    let sxx = sample_cov(x, x)?;
    let syy = sample_cov(y, y)?;
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}
