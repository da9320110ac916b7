//! Disjoint block partitions of the row set `{0..K}`.
//!
//! Line partitions follow the Kronecker structure of `A0 = phi (x) phi` on
//! column-major vectorised arrays: flat index `r = inner + side * outer`.
//! A vertical line `phi_{k,:} (x) phi` fixes the outer index (one column of
//! the k-space array, contiguous in memory); a horizontal line
//! `phi (x) phi_{k,:}` fixes the inner index (stride `side`).

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("index {0} appears in more than one block")]
    Overlap(usize),
    #[error("index {0} is not covered by any block")]
    Uncovered(usize),
    #[error("index {index} outside domain of size {len}")]
    OutOfDomain { index: usize, len: usize },
    #[error("empty block {0}")]
    EmptyBlock(usize),
    #[error("square side {square} does not tile grid side {side}")]
    BadSquare { square: usize, side: usize },
    #[error("cannot parse partition '{0}'")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PartitionKind {
    Singletons,
    VerticalLines,
    HorizontalLines,
    Squares(usize),
    Custom,
}

impl fmt::Display for PartitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionKind::Singletons => write!(f, "singletons"),
            PartitionKind::VerticalLines => write!(f, "lines-v"),
            PartitionKind::HorizontalLines => write!(f, "lines-h"),
            PartitionKind::Squares(s) => write!(f, "squares:{s}"),
            PartitionKind::Custom => write!(f, "custom"),
        }
    }
}

impl FromStr for PartitionKind {
    type Err = PartitionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "singletons" | "isolated" => Ok(PartitionKind::Singletons),
            "lines-v" => Ok(PartitionKind::VerticalLines),
            "lines-h" => Ok(PartitionKind::HorizontalLines),
            other => other
                .strip_prefix("squares:")
                .and_then(|n| n.parse().ok())
                .map(PartitionKind::Squares)
                .ok_or_else(|| PartitionError::Parse(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    kind: PartitionKind,
    len: usize,
    blocks: Vec<Vec<usize>>,
}

impl BlockPartition {
    pub fn singletons(len: usize) -> Self {
        Self {
            kind: PartitionKind::Singletons,
            len,
            blocks: (0..len).map(|i| vec![i]).collect(),
        }
    }

    pub fn vertical_lines(side: usize) -> Self {
        Self {
            kind: PartitionKind::VerticalLines,
            len: side * side,
            blocks: (0..side).map(|k| (0..side).map(|i| k * side + i).collect()).collect(),
        }
    }

    pub fn horizontal_lines(side: usize) -> Self {
        Self {
            kind: PartitionKind::HorizontalLines,
            len: side * side,
            blocks: (0..side).map(|k| (0..side).map(|j| k + side * j).collect()).collect(),
        }
    }

    /// `square x square` tiles of the `side x side` storage grid, tiles
    /// enumerated column-major.
    pub fn squares(side: usize, square: usize) -> Result<Self, PartitionError> {
        if square == 0 || square > side || side % square != 0 {
            return Err(PartitionError::BadSquare { square, side });
        }
        let tiles = side / square;
        let mut blocks = Vec::with_capacity(tiles * tiles);
        for tj in 0..tiles {
            for ti in 0..tiles {
                let mut b = Vec::with_capacity(square * square);
                for j in 0..square {
                    for i in 0..square {
                        b.push((ti * square + i) + side * (tj * square + j));
                    }
                }
                blocks.push(b);
            }
        }
        Ok(Self {
            kind: PartitionKind::Squares(square),
            len: side * side,
            blocks,
        })
    }

    /// Builds a partition of `side x side` (or length `len` for singletons).
    pub fn from_kind(kind: PartitionKind, len: usize, side: usize) -> Result<Self, PartitionError> {
        match kind {
            PartitionKind::Singletons => Ok(Self::singletons(len)),
            PartitionKind::VerticalLines => Ok(Self::vertical_lines(side)),
            PartitionKind::HorizontalLines => Ok(Self::horizontal_lines(side)),
            PartitionKind::Squares(s) => Self::squares(side, s),
            PartitionKind::Custom => Err(PartitionError::Parse("custom".into())),
        }
    }

    /// Validates an arbitrary partition.
    pub fn custom(len: usize, blocks: Vec<Vec<usize>>) -> Result<Self, PartitionError> {
        let mut seen = vec![false; len];
        for (b, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(PartitionError::EmptyBlock(b));
            }
            for &i in block {
                if i >= len {
                    return Err(PartitionError::OutOfDomain { index: i, len });
                }
                if seen[i] {
                    return Err(PartitionError::Overlap(i));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(PartitionError::Uncovered(i));
        }
        Ok(Self {
            kind: PartitionKind::Custom,
            len,
            blocks,
        })
    }

    pub fn kind(&self) -> PartitionKind {
        self.kind
    }

    /// Size `K` of the partitioned set.
    pub fn domain_len(&self) -> usize {
        self.len
    }

    /// Number of blocks `M`.
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, k: usize) -> Option<&[usize]> {
        self.blocks.get(k).map(Vec::as_slice)
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Line partitions use the closed-form density path.
    pub fn is_lines(&self) -> bool {
        matches!(self.kind, PartitionKind::VerticalLines | PartitionKind::HorizontalLines)
    }
}
