//! Graph-preserving grid layouts.
//!
//! Projects undirected graphs onto the integer grid with a regularized
//! Kamada-Kawai objective, turns the resulting layouts into dense
//! `H x W x F` tensors, and handles TUDataset loading and tensor export.

pub mod augment;
pub mod dataset;
pub mod graph;
pub mod grid;
pub mod layout;

pub use augment::{augment, AugmentedLayout, AugmentedSet, FailedRun};
pub use dataset::{
    dataset_stats, export_tensors, featurize, load_exported, load_tudataset, DatasetError, DatasetStats, FeatureMode,
    GraphDataset, Manifest, ManifestEntry,
};
pub use graph::{connected_components, shortest_path_distances, Component, DistanceMatrix, Graph, GraphError};

pub use grid::{build_grid_tensor, vertex_loss_ratio, GridError, GridTensor, MergeRule, VertexLossReport};
pub use layout::{
    circular_init, gpgl_layout, gpgl_loss_and_grad, kk_loss, layout_graph, minimize, rescale_layout,
    round_layout, separation_penalty, GridLayout, Layout, LayoutDiagnostics, LayoutError, LayoutParams,
    Optimizer,
};
