//! TUDataset loading, vertex featurization, corpus statistics and tensor
//! export.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentedSet;
use crate::graph::{Graph, GraphError};
use crate::grid::{build_grid_tensor, read_container, write_container, ContainerHeader, GridError, MergeRule};

/// Default upper bound on the degree one-hot width.
pub const DEFAULT_DEGREE_CAP: usize = 256;

pub const TENSOR_FILE: &str = "tensors.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("{file}:{line}: index {index} out of range (max {max})")]
    Index {
        file: String,
        line: usize,
        index: usize,
        max: usize,
    },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("dataset has no node labels")]
    MissingNodeLabels,
    #[error("dataset is empty")]
    Empty,
    #[error("nothing to export")]
    NothingToExport,
    #[error("graph {graph_id}: {source}")]
    Tensor {
        graph_id: usize,
        #[source]
        source: GridError,
    },
    #[error("graph {graph_id}: {source}")]
    Graph {
        graph_id: usize,
        #[source]
        source: GraphError,
    },
    #[error(transparent)]
    Container(#[from] GridError),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A labelled graph-classification corpus.
#[derive(Debug, Clone)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    /// Class index per graph, in `0..class_count`.
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Original label value for each class index.
    pub class_values: Vec<i64>,
    /// Raw node labels per graph, when the corpus ships them.
    pub node_labels: Option<Vec<Vec<i64>>>,
}

impl GraphDataset {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, DatasetError> {
    if !path.is_file() {
        return Err(DatasetError::MissingFile(path.to_path_buf()));
    }
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line?);
    }
    // tolerate trailing blank lines only
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    Ok(lines)
}

fn file_label(path: &Path) -> String {
    path.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned())
}

fn parse_ints(path: &Path, lineno: usize, line: &str, expect: usize) -> Result<Vec<i64>, DatasetError> {
    let parts: Vec<&str> = line.split(',').map(str::trim).collect();
    if parts.len() != expect {
        return Err(DatasetError::Parse {
            file: file_label(path),
            line: lineno,
            msg: format!("expected {expect} comma-separated integers, got `{line}`"),
        });
    }
    parts
        .iter()
        .map(|p| {
            p.parse::<i64>().map_err(|e| DatasetError::Parse {
                file: file_label(path),
                line: lineno,
                msg: format!("`{p}`: {e}"),
            })
        })
        .collect()
}

/// Resolves the `DS` prefix: the directory name if `DS_A.txt` exists,
/// otherwise the unique `*_A.txt` file in the directory.
fn dataset_prefix(dir: &Path) -> Result<String, DatasetError> {
    if let Some(name) = dir.file_name().map(|n| n.to_string_lossy().into_owned()) {
        if dir.join(format!("{name}_A.txt")).is_file() {
            return Ok(name);
        }
    }
    let mut found = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(prefix) = name.strip_suffix("_A.txt") {
            found.push(prefix.to_string());
        }
    }
    found.sort();
    match found.as_slice() {
        [one] => Ok(one.clone()),
        _ => Err(DatasetError::MissingFile(dir.join("DS_A.txt"))),
    }
}

/// Loads a TUDataset directory (`DS_A.txt`, `DS_graph_indicator.txt`,
/// `DS_graph_labels.txt`, optional `DS_node_labels.txt`).
///
/// Edges are made undirected and deduplicated; self-loops are dropped.
/// Graph labels are remapped to `0..C` in ascending order of the raw values.
pub fn load_tudataset(dir: impl AsRef<Path>) -> Result<GraphDataset, DatasetError> {
    let dir = dir.as_ref();
    let name = dataset_prefix(dir)?;
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let indicator_path = file("graph_indicator");
    let indicator: Vec<usize> = read_lines(&indicator_path)?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let v = parse_ints(&indicator_path, i + 1, l, 1)?[0];
            if v < 1 {
                return Err(DatasetError::Index {
                    file: file_label(&indicator_path),
                    line: i + 1,
                    index: v.max(0) as usize,
                    max: usize::MAX,
                });
            }
            Ok(v as usize - 1)
        })
        .collect::<Result<_, _>>()?;

    let labels_path = file("graph_labels");
    let raw_labels: Vec<i64> = read_lines(&labels_path)?
        .iter()
        .enumerate()
        .map(|(i, l)| Ok(parse_ints(&labels_path, i + 1, l, 1)?[0]))
        .collect::<Result<_, DatasetError>>()?;
    let num_graphs = raw_labels.len();
    if num_graphs == 0 {
        return Err(DatasetError::Empty);
    }
    if let Some((line, &g)) = indicator.iter().enumerate().find(|(_, &g)| g >= num_graphs) {
        return Err(DatasetError::Index {
            file: file_label(&indicator_path),
            line: line + 1,
            index: g + 1,
            max: num_graphs,
        });
    }

    // global node -> (graph, local index), locals in file order
    let mut sizes = vec![0usize; num_graphs];
    let local: Vec<usize> = indicator
        .iter()
        .map(|&g| {
            sizes[g] += 1;
            sizes[g] - 1
        })
        .collect();

    let a_path = file("A");
    let mut edge_sets: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); num_graphs];
    for (i, line) in read_lines(&a_path)?.iter().enumerate() {
        let v = parse_ints(&a_path, i + 1, line, 2)?;
        let mut ends = [0usize; 2];
        for (slot, &raw) in ends.iter_mut().zip(&v) {
            if raw < 1 || raw as usize > indicator.len() {
                return Err(DatasetError::Index {
                    file: file_label(&a_path),
                    line: i + 1,
                    index: raw.max(0) as usize,
                    max: indicator.len(),
                });
            }
            *slot = raw as usize - 1;
        }
        let [a, b] = ends;
        if indicator[a] != indicator[b] {
            return Err(DatasetError::Parse {
                file: file_label(&a_path),
                line: i + 1,
                msg: format!("edge joins graphs {} and {}", indicator[a] + 1, indicator[b] + 1),
            });
        }
        if a == b {
            continue;
        }
        let (la, lb) = (local[a], local[b]);
        edge_sets[indicator[a]].insert((la.min(lb), la.max(lb)));
    }

    let graphs = edge_sets
        .into_iter()
        .enumerate()
        .map(|(graph_id, edges)| {
            Graph::new(sizes[graph_id], &edges.into_iter().collect::<Vec<_>>())
                .map_err(|source| DatasetError::Graph { graph_id, source })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let node_labels_path = file("node_labels");
    let node_labels = if node_labels_path.is_file() {
        let lines = read_lines(&node_labels_path)?;
        if lines.len() != indicator.len() {
            return Err(DatasetError::Parse {
                file: file_label(&node_labels_path),
                line: lines.len(),
                msg: format!("{} node labels for {} nodes", lines.len(), indicator.len()),
            });
        }
        let mut per_graph: Vec<Vec<i64>> = sizes.iter().map(|&n| Vec::with_capacity(n)).collect();
        for (i, l) in lines.iter().enumerate() {
            // multi-column label files keep their first column
            let first = l.split(',').next().unwrap_or("");
            per_graph[indicator[i]].push(parse_ints(&node_labels_path, i + 1, first, 1)?[0]);
        }
        Some(per_graph)
    } else {
        None
    };

    let class_values: Vec<i64> = raw_labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let class_index: HashMap<i64, usize> = class_values.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    Ok(GraphDataset {
        name,
        graphs,
        labels: raw_labels.iter().map(|v| class_index[v]).collect(),
        class_count: class_values.len(),
        class_values,
        node_labels,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    OneHotLabel,
    OneHotDegree,
    /// Labels when present, degrees otherwise.
    #[default]
    Auto,
}

impl std::str::FromStr for FeatureMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one_hot_label" | "label" => Ok(Self::OneHotLabel),
            "one_hot_degree" | "degree" => Ok(Self::OneHotDegree),
            "auto" => Ok(Self::Auto),
            other => Err(format!("unknown feature mode `{other}`")),
        }
    }
}

/// Attaches one-hot vertex features to every graph.
///
/// Label one-hots index the sorted set of labels seen in the corpus. Degree
/// one-hots have width `min(max_degree + 1, degree_cap)`; degrees beyond the
/// last bin fall into it.
pub fn featurize(ds: &GraphDataset, mode: FeatureMode, degree_cap: usize) -> Result<GraphDataset, DatasetError> {
    let use_labels = match mode {
        FeatureMode::OneHotLabel => true,
        FeatureMode::OneHotDegree => false,
        FeatureMode::Auto => ds.node_labels.is_some(),
    };
    let one_hot = |dim: usize, hot: usize| -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[hot] = 1.0;
        v
    };
    let features: Vec<Vec<Vec<f64>>> = if use_labels {
        let labels = ds.node_labels.as_ref().ok_or(DatasetError::MissingNodeLabels)?;
        let vocab: BTreeMap<i64, usize> = labels
            .iter()
            .flatten()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v, i))
            .collect();
        labels
            .par_iter()
            .map(|ls| ls.iter().map(|l| one_hot(vocab.len(), vocab[l])).collect())
            .collect()
    } else {
        let max_degree = ds.graphs.iter().map(Graph::max_degree).max().unwrap_or(0);
        let dim = (max_degree + 1).min(degree_cap.max(1));
        ds.graphs
            .par_iter()
            .map(|g| (0..g.num_vertices()).map(|v| one_hot(dim, g.degree(v).min(dim - 1))).collect())
            .collect()
    };

    let graphs = ds
        .graphs
        .iter()
        .cloned()
        .zip(features)
        .enumerate()
        .map(|(graph_id, (g, f))| {
            g.with_features(f)
                .map_err(|source| DatasetError::Graph { graph_id, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GraphDataset {
        graphs,
        ..ds.clone()
    })
}

/// Corpus-level summary in the shape of the usual benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    pub num_graphs: usize,
    pub num_classes: usize,
    pub avg_nodes: f64,
    pub avg_edges: f64,
    /// Mean over graphs of the per-graph mean vertex degree `2|E|/|V|`.
    pub avg_degree: f64,
    /// `avg_edges / avg_nodes`, the convention behind commonly quoted
    /// "average degree" columns for these corpora.
    pub edge_node_ratio: f64,
    pub max_degree: usize,
    pub feature_dim: Option<usize>,
    /// Graphs per class index.
    pub class_sizes: Vec<usize>,
}

pub fn dataset_stats(ds: &GraphDataset) -> DatasetStats {
    let n = ds.graphs.len().max(1) as f64;
    let avg_nodes = ds.graphs.iter().map(|g| g.num_vertices() as f64).sum::<f64>() / n;
    let avg_edges = ds.graphs.iter().map(|g| g.num_edges() as f64).sum::<f64>() / n;
    let avg_degree = ds
        .graphs
        .iter()
        .map(|g| {
            if g.num_vertices() == 0 {
                0.0
            } else {
                2.0 * g.num_edges() as f64 / g.num_vertices() as f64
            }
        })
        .sum::<f64>()
        / n;
    let mut class_sizes = vec![0; ds.class_count];
    for &l in &ds.labels {
        class_sizes[l] += 1;
    }
    DatasetStats {
        name: ds.name.clone(),
        num_graphs: ds.graphs.len(),
        num_classes: ds.class_count,
        avg_nodes,
        avg_edges,
        avg_degree,
        edge_node_ratio: if avg_nodes > 0.0 { avg_edges / avg_nodes } else { 0.0 },
        max_degree: ds.graphs.iter().map(Graph::max_degree).max().unwrap_or(0),
        feature_dim: ds.graphs.first().and_then(Graph::feature_dim),
        class_sizes,
    }
}

/// One exported tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub graph_id: usize,
    pub seed: u64,
    pub label: usize,
    /// Vertices merged away in this tensor.
    pub lost: usize,
}

/// Sidecar describing a tensor container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    pub tensor_file: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub count: usize,
    pub class_count: usize,
    pub merge: MergeRule,
    pub entries: Vec<ManifestEntry>,
    /// Graphs whose layout runs failed, with the failing seeds.
    pub failed: Vec<(usize, u64)>,
}

/// Builds every tensor, then writes `tensors.bin` and `manifest.json` into
/// `dir`. Nothing is written if any tensor cannot be built.
pub fn export_tensors(
    sets: &[AugmentedSet],
    ds: &GraphDataset,
    dir: impl AsRef<Path>,
    window: (usize, usize),
    merge: MergeRule,
) -> Result<Manifest, DatasetError> {
    if sets.iter().all(|s| s.layouts.is_empty()) {
        return Err(DatasetError::NothingToExport);
    }
    let built: Vec<Vec<_>> = sets
        .par_iter()
        .map(|set| {
            let graph = ds.graphs.get(set.graph_id).ok_or_else(|| DatasetError::Index {
                file: "augmented sets".into(),
                line: 0,
                index: set.graph_id,
                max: ds.graphs.len(),
            })?;
            let features = graph.features().ok_or(DatasetError::Graph {
                graph_id: set.graph_id,
                source: GraphError::FeatureCount {
                    expected: graph.num_vertices(),
                    got: 0,
                },
            })?;
            set.layouts
                .iter()
                .map(|l| {
                    build_grid_tensor(&l.grid, features, window, merge)
                        .map(|(t, r)| (set.graph_id, l.seed, t, r.lost))
                        .map_err(|source| DatasetError::Tensor {
                            graph_id: set.graph_id,
                            source,
                        })
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let built: Vec<_> = built.into_iter().flatten().collect();

    let entries = built
        .iter()
        .enumerate()
        .map(|(index, (graph_id, seed, _, lost))| ManifestEntry {
            index,
            graph_id: *graph_id,
            seed: *seed,
            label: ds.labels[*graph_id],
            lost: *lost,
        })
        .collect();
    let tensors: Vec<_> = built.into_iter().map(|(_, _, t, _)| t).collect();

    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(File::create(dir.join(TENSOR_FILE))?);
    let header = write_container(&mut out, &tensors)?;
    out.flush()?;

    let manifest = Manifest {
        dataset: ds.name.clone(),
        tensor_file: TENSOR_FILE.to_string(),
        height: header.height,
        width: header.width,
        channels: header.channels,
        count: header.count,
        class_count: ds.class_count,
        merge,
        entries,
        failed: sets
            .iter()
            .flat_map(|s| s.failures.iter().map(move |f| (s.graph_id, f.seed)))
            .collect(),
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

/// Reads back an export directory.
pub fn load_exported(dir: impl AsRef<Path>) -> Result<(Manifest, ContainerHeader, Vec<Vec<f32>>), DatasetError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(DatasetError::MissingFile(manifest_path));
    }
    let manifest: Manifest =
        serde_json::from_slice(&fs::read(&manifest_path)?).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    let mut input = BufReader::new(File::open(dir.join(&manifest.tensor_file))?);
    let (header, tensors) = read_container(&mut input)?;
    if header.count != manifest.entries.len()
        || (header.height, header.width, header.channels) != (manifest.height, manifest.width, manifest.channels)
    {
        return Err(DatasetError::Manifest("manifest does not match tensor container".into()));
    }
    Ok((manifest, header, tensors))
}
