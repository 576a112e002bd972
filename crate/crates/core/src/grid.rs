//! Dense `H x W x F` tensors built from grid layouts, plus the on-disk
//! tensor container.
//!
//! A vertex at cell `[x, y]` lands at row `y`, column `x` of a window whose
//! top-left corner is the layout origin. Cells without vertices hold zero
//! vectors; vertices sharing a cell are pooled by a [`MergeRule`].

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::layout::GridLayout;

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("layout spans {width}x{height} cells (columns x rows), window is {window_w}x{window_h}")]
    WindowOverflow {
        width: usize,
        height: usize,
        window_w: usize,
        window_h: usize,
    },
    #[error("{layout} layout cells but {features} feature vectors")]
    FeatureCount { layout: usize, features: usize },
    #[error("feature vectors must share one dimension >= 1")]
    FeatureDim,
    #[error("window dimensions must be >= 1")]
    EmptyWindow,
    #[error("no vertex-loss reports")]
    NoReports,
    #[error("malformed tensor container: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeRule {
    #[default]
    Average,
    Max,
}

impl std::str::FromStr for MergeRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "average" | "avg" | "mean" => Ok(Self::Average),
            "max" => Ok(Self::Max),
            other => Err(format!("unknown merge rule `{other}` (expected average|max)")),
        }
    }
}

/// Row-major, channel-last feature volume with explicit occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub occupancy: Vec<bool>,
}

impl GridTensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
            occupancy: vec![false; height * width],
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let base = (row * self.width + col) * self.channels;
        &self.data[base..base + self.channels]
    }

    pub fn is_occupied(&self, row: usize, col: usize) -> bool {
        self.occupancy[row * self.width + col]
    }

    pub fn occupied_cells(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }
}

/// Accounting of vertices merged into shared cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexLossReport {
    pub graph_vertex_count: usize,
    pub grid_cell_count: usize,
    pub lost: usize,
    /// Vertex sets sharing one cell (only groups of two or more).
    pub merge_groups: Vec<Vec<usize>>,
}

/// Places per-vertex features into a `window = (height, width)` tensor.
pub fn build_grid_tensor(
    layout: &GridLayout,
    features: &[Vec<f64>],
    window: (usize, usize),
    merge: MergeRule,
) -> Result<(GridTensor, VertexLossReport), GridError> {
    let (window_h, window_w) = window;
    if window_h == 0 || window_w == 0 {
        return Err(GridError::EmptyWindow);
    }
    if features.len() != layout.n() {
        return Err(GridError::FeatureCount {
            layout: layout.n(),
            features: features.len(),
        });
    }
    let channels = features.first().map_or(1, Vec::len);
    if channels == 0 || features.iter().any(|f| f.len() != channels) {
        return Err(GridError::FeatureDim);
    }
    if layout.width() > window_w || layout.height() > window_h {
        return Err(GridError::WindowOverflow {
            width: layout.width(),
            height: layout.height(),
            window_w,
            window_h,
        });
    }

    // cell -> members, keyed row-major so iteration is deterministic
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (v, &[x, y]) in layout.cells().iter().enumerate() {
        cells.entry((y as usize, x as usize)).or_default().push(v);
    }

    let mut tensor = GridTensor::zeros(window_h, window_w, channels);
    let mut merge_groups = Vec::new();
    for (&(row, col), members) in &cells {
        let pooled: Vec<f64> = match merge {
            MergeRule::Average => (0..channels)
                .map(|c| members.iter().map(|&v| features[v][c]).sum::<f64>() / members.len() as f64)
                .collect(),
            MergeRule::Max => (0..channels)
                .map(|c| members.iter().map(|&v| features[v][c]).fold(f64::NEG_INFINITY, f64::max))
                .collect(),
        };
        let base = (row * window_w + col) * channels;
        for (dst, val) in tensor.data[base..base + channels].iter_mut().zip(pooled) {
            *dst = val as f32;
        }
        tensor.occupancy[row * window_w + col] = true;
        if members.len() > 1 {
            merge_groups.push(members.clone());
        }
    }
    merge_groups.sort_unstable_by_key(|g| g[0]);

    let report = VertexLossReport {
        graph_vertex_count: layout.n(),
        grid_cell_count: cells.len(),
        lost: layout.n() - cells.len(),
        merge_groups,
    };
    Ok((tensor, report))
}

/// Percentage of vertices lost to merging across all reports.
pub fn vertex_loss_ratio(reports: &[VertexLossReport]) -> Result<f64, GridError> {
    if reports.is_empty() {
        return Err(GridError::NoReports);
    }
    let lost: usize = reports.iter().map(|r| r.lost).sum();
    let total: usize = reports.iter().map(|r| r.graph_vertex_count).sum();
    if total == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * lost as f64 / total as f64)
}

/// First line of a tensor container.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub count: usize,
    pub dtype: String,
    pub order: String,
}

pub const CONTAINER_DTYPE: &str = "f32";
pub const CONTAINER_ORDER: &str = "row-major, channel-last";

impl ContainerHeader {
    pub fn new(height: usize, width: usize, channels: usize, count: usize) -> Self {
        Self {
            height,
            width,
            channels,
            count,
            dtype: CONTAINER_DTYPE.to_string(),
            order: CONTAINER_ORDER.to_string(),
        }
    }

    pub fn tensor_len(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// Writes a one-line JSON header, a newline, then every tensor as raw
/// little-endian `f32`, back to back.
pub fn write_container<W: Write>(out: &mut W, tensors: &[GridTensor]) -> Result<ContainerHeader, GridError> {
    let first = tensors
        .first()
        .ok_or_else(|| GridError::Container("no tensors to write".into()))?;
    let header = ContainerHeader::new(first.height, first.width, first.channels, tensors.len());
    if tensors
        .iter()
        .any(|t| (t.height, t.width, t.channels) != (first.height, first.width, first.channels))
    {
        return Err(GridError::Container("tensors differ in shape".into()));
    }
    let line = serde_json::to_string(&header).map_err(|e| GridError::Container(e.to_string()))?;
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(header.tensor_len() * 4);
    for t in tensors {
        buf.clear();
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(header)
}

/// Reads a container written by [`write_container`]. Occupancy is not
/// stored on disk, so only the raw volumes come back.
pub fn read_container<R: BufRead>(input: &mut R) -> Result<(ContainerHeader, Vec<Vec<f32>>), GridError> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: ContainerHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| GridError::Container(format!("header: {e}")))?;
    if header.dtype != CONTAINER_DTYPE || header.order != CONTAINER_ORDER {
        return Err(GridError::Container(format!(
            "unsupported dtype/order {}/{}",
            header.dtype, header.order
        )));
    }
    let len = header.tensor_len();
    let mut bytes = vec![0u8; len * 4];
    let mut tensors = Vec::with_capacity(header.count);
    for i in 0..header.count {
        input
            .read_exact(&mut bytes)
            .map_err(|e| GridError::Container(format!("tensor {i}: {e}")))?;
        tensors.push(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        );
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(GridError::Container("trailing bytes after last tensor".into()));
    }
    Ok((header, tensors))
}
