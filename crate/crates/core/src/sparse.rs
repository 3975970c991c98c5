//! Sparse rows, the feature-space layout and the design-matrix text format.
//!
//! A [`FeatureSpace`] is an ordered list of named blocks (users, items,
//! skills, counters, extra categoricals). Each block owns a contiguous column
//! range; the offset of a block is the sum of the widths declared before it.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{KtmError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Block>", into = "Vec<Block>")]
pub struct FeatureSpace {
    blocks: Vec<Block>,
    offsets: Vec<usize>,
    total: usize,
}

impl FeatureSpace {
    pub fn new<S: Into<String>>(blocks: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let blocks = blocks
            .into_iter()
            .map(|(name, width)| Block {
                name: name.into(),
                width,
            })
            .collect::<Vec<_>>();
        Self::from_blocks(blocks)
    }

    fn from_blocks(blocks: Vec<Block>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut total = 0usize;
        for (i, b) in blocks.iter().enumerate() {
            if blocks[..i].iter().any(|o| o.name == b.name) {
                return Err(KtmError::DuplicateBlock(b.name.clone()));
            }
            if b.width == 0 {
                return Err(KtmError::EmptyBlock(b.name.clone()));
            }
            offsets.push(total);
            total += b.width;
        }
        if blocks.is_empty() {
            return Err(KtmError::InvalidConfig("feature space has no blocks".into()));
        }
        Ok(Self {
            blocks,
            offsets,
            total,
        })
    }

    /// Single anonymous block, used when only the width is known (e.g. a
    /// design matrix read back from text).
    pub fn flat(width: usize) -> Result<Self> {
        Self::new([("features", width)])
    }

    pub fn total_width(&self) -> usize {
        self.total
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    fn position(&self, block: &str) -> Result<usize> {
        self.blocks
            .iter()
            .position(|b| b.name == block)
            .ok_or_else(|| KtmError::UnknownBlock(block.to_string()))
    }

    pub fn has_block(&self, block: &str) -> bool {
        self.blocks.iter().any(|b| b.name == block)
    }

    pub fn offset(&self, block: &str) -> Result<usize> {
        Ok(self.offsets[self.position(block)?])
    }

    pub fn width(&self, block: &str) -> Result<usize> {
        Ok(self.blocks[self.position(block)?].width)
    }

    pub fn feature_index(&self, block: &str, local_id: usize) -> Result<usize> {
        let p = self.position(block)?;
        let width = self.blocks[p].width;
        if local_id >= width {
            return Err(KtmError::LocalIdOutOfRange {
                block: block.to_string(),
                id: local_id,
                width,
            });
        }
        Ok(self.offsets[p] + local_id)
    }

    /// Inverse of [`feature_index`](Self::feature_index).
    pub fn locate(&self, index: usize) -> Result<(&str, usize)> {
        if index >= self.total {
            return Err(KtmError::IndexOutOfRange {
                index,
                width: self.total,
            });
        }
        let p = self.offsets.partition_point(|&o| o <= index) - 1;
        Ok((&self.blocks[p].name, index - self.offsets[p]))
    }
}

impl TryFrom<Vec<Block>> for FeatureSpace {
    type Error = KtmError;

    fn try_from(blocks: Vec<Block>) -> Result<Self> {
        Self::from_blocks(blocks)
    }
}

impl From<FeatureSpace> for Vec<Block> {
    fn from(space: FeatureSpace) -> Self {
        space.blocks
    }
}

/// Nonzero `(index, value)` pairs of one observation, indices ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    entries: Vec<(usize, f64)>,
}

impl SparseRow {
    /// Validates ordering and finiteness; zero values are dropped.
    pub fn new(entries: Vec<(usize, f64)>) -> Result<Self> {
        let mut prev: Option<usize> = None;
        for &(index, value) in &entries {
            if !value.is_finite() {
                return Err(KtmError::NonFinite { index, value });
            }
            if let Some(p) = prev {
                if index <= p {
                    return Err(KtmError::UnsortedRow { prev: p, next: index });
                }
            }
            prev = Some(index);
        }
        let mut entries = entries;
        entries.retain(|&(_, v)| v != 0.0);
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_dense(dense: &[f64]) -> Result<Self> {
        Self::new(dense.iter().copied().enumerate().collect())
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<(usize, f64)> {
        self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Largest stored index plus one, or 0 for an empty row.
    pub fn min_width(&self) -> usize {
        self.entries.last().map_or(0, |&(i, _)| i + 1)
    }

    pub fn check_width(&self, width: usize) -> Result<()> {
        match self.entries.last() {
            Some(&(index, _)) if index >= width => Err(KtmError::IndexOutOfRange { index, width }),
            _ => Ok(()),
        }
    }

    pub fn densify(&self, width: usize) -> Result<Vec<f64>> {
        self.check_width(width)?;
        let mut dense = vec![0.0; width];
        for &(i, v) in &self.entries {
            dense[i] = v;
        }
        Ok(dense)
    }

    pub fn dot(&self, dense: &[f64]) -> Result<f64> {
        self.check_width(dense.len())?;
        Ok(self.entries.iter().map(|&(i, v)| v * dense[i]).sum())
    }

    /// Concatenates a fragment whose indices all exceed this row's.
    pub(crate) fn extend_sorted(&mut self, other: impl IntoIterator<Item = (usize, f64)>) {
        for (i, v) in other {
            debug_assert!(self.entries.last().is_none_or(|&(p, _)| p < i));
            if v != 0.0 {
                self.entries.push((i, v));
            }
        }
    }
}

/// `sparse_dot` as a free function.
pub fn sparse_dot(row: &SparseRow, dense: &[f64]) -> Result<f64> {
    row.dot(dense)
}

/// Rows with binary labels over one feature space, in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    space: FeatureSpace,
    rows: Vec<SparseRow>,
    labels: Vec<u8>,
}

impl DesignMatrix {
    pub fn new(space: FeatureSpace, rows: Vec<SparseRow>, labels: Vec<u8>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(KtmError::LengthMismatch {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
            return Err(KtmError::InvalidLabel(bad.to_string()));
        }
        for row in &rows {
            row.check_width(space.total_width())?;
        }
        Ok(Self {
            space,
            rows,
            labels,
        })
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.space.total_width()
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            space: self.space.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#N {}", self.width());
        for (row, y) in self.rows.iter().zip(&self.labels) {
            out.push_str(if *y == 1 { "1" } else { "0" });
            for &(i, v) in row.entries() {
                let _ = write!(out, " {i}:{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_text().as_bytes())
    }

    /// Parses the `#N <width>` text format. The layout comes back as a single
    /// flat block since only the width is recorded.
    pub fn read_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let width = loop {
            let Some((no, line)) = lines.next() else {
                return Err(KtmError::Parse {
                    line: 0,
                    msg: "missing `#N` header".into(),
                });
            };
            let line = line.map_err(|e| KtmError::Parse {
                line: no + 1,
                msg: e.to_string(),
            })?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let width = line
                .strip_prefix("#N")
                .and_then(|w| w.trim().parse::<usize>().ok())
                .ok_or_else(|| KtmError::Parse {
                    line: no + 1,
                    msg: format!("expected `#N <width>`, got `{line}`"),
                })?;
            break width;
        };
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (no, line) in lines {
            let line = line.map_err(|e| KtmError::Parse {
                line: no + 1,
                msg: e.to_string(),
            })?;
            let mut tokens = line.split_whitespace();
            let Some(label) = tokens.next() else { continue };
            let parse_err = |msg: String| KtmError::Parse { line: no + 1, msg };
            labels.push(match label {
                "0" => 0,
                "1" => 1,
                other => return Err(parse_err(format!("label must be 0 or 1, got `{other}`"))),
            });
            let mut entries = Vec::new();
            for tok in tokens {
                let (i, v) = tok
                    .split_once(':')
                    .ok_or_else(|| parse_err(format!("expected idx:value, got `{tok}`")))?;
                let i = i
                    .parse::<usize>()
                    .map_err(|e| parse_err(format!("bad index `{i}`: {e}")))?;
                let v = v
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("bad value `{v}`: {e}")))?;
                entries.push((i, v));
            }
            let row = SparseRow::new(entries).map_err(|e| parse_err(e.to_string()))?;
            row.check_width(width)
                .map_err(|e| parse_err(e.to_string()))?;
            rows.push(row);
        }
        Self::new(FeatureSpace::flat(width.max(1))?, rows, labels)
    }
}
