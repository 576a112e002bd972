//! Undirected graphs, connected components and all-pairs hop distances.

use std::collections::{BTreeSet, VecDeque};

use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("edge ({0}, {1}) has an endpoint outside 0..{2}")]
    EndpointOutOfRange(usize, usize, usize),
    #[error("self-loop on vertex {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("expected {expected} feature vectors, got {got}")]
    FeatureCount { expected: usize, got: usize },
    #[error("feature vectors must share one dimension >= 1 (vertex {vertex} has {dim}, expected {expected})")]
    FeatureDim {
        vertex: usize,
        dim: usize,
        expected: usize,
    },
    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },
}

/// A simple undirected graph over vertices `0..num_vertices`.
///
/// Edges are stored once as `(lo, hi)` with `lo < hi`, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_vertices: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    features: Option<Vec<Vec<f64>>>,
}

impl Graph {
    /// Builds a graph, rejecting self-loops, duplicates (in either
    /// orientation) and out-of-range endpoints.
    pub fn new(num_vertices: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= num_vertices || b >= num_vertices {
                return Err(GraphError::EndpointOutOfRange(a, b, num_vertices));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(GraphError::DuplicateEdge(a, b));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); num_vertices];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            num_vertices,
            edges,
            adjacency,
            features: None,
        })
    }

    /// Attaches one feature vector per vertex.
    pub fn with_features(mut self, features: Vec<Vec<f64>>) -> Result<Self, GraphError> {
        if features.len() != self.num_vertices {
            return Err(GraphError::FeatureCount {
                expected: self.num_vertices,
                got: features.len(),
            });
        }
        let expected = features.first().map_or(1, Vec::len);
        for (vertex, f) in features.iter().enumerate() {
            if f.is_empty() || f.len() != expected {
                return Err(GraphError::FeatureDim {
                    vertex,
                    dim: f.len(),
                    expected,
                });
            }
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn features(&self) -> Option<&[Vec<f64>]> {
        self.features.as_deref()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.features.as_ref().and_then(|f| f.first()).map(Vec::len)
    }

    /// Hop distances from `source`; `None` for unreachable vertices.
    fn bfs(&self, source: usize) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.num_vertices];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &w in &self.adjacency[u] {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }
}

/// Dense symmetric matrix of shortest-path hop counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<u32>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.d[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    /// Builds a matrix from raw row-major entries without checking metric
    /// properties. Used by tests and callers that already hold distances.
    pub fn from_rows(n: usize, d: Vec<u32>) -> Self {
        assert_eq!(d.len(), n * n, "distance matrix must be n*n");
        Self { n, d }
    }

    /// Matrix with every off-diagonal entry equal to 1 (complete graph).
    pub fn complete(n: usize) -> Self {
        let d = (0..n * n)
            .map(|k| u32::from(k / n != k % n))
            .collect();
        Self { n, d }
    }
}

/// All-pairs hop counts via one breadth-first search per source.
///
/// Sources are processed in parallel; rows land in source order, so the
/// result does not depend on scheduling.
pub fn shortest_path_distances(g: &Graph) -> Result<DistanceMatrix, GraphError> {
    let n = g.num_vertices();
    let rows: Vec<Vec<Option<u32>>> = (0..n).into_par_iter().map(|s| g.bfs(s)).collect();
    let mut d = Vec::with_capacity(n * n);
    for row in rows {
        for entry in row {
            match entry {
                Some(h) => d.push(h),
                None => {
                    return Err(GraphError::Disconnected {
                        components: connected_components(g).len(),
                    })
                }
            }
        }
    }
    Ok(DistanceMatrix { n, d })
}

/// A connected component with the map from its local vertex indices back to
/// the parent graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub graph: Graph,
    /// `vertices[local] = original`, ascending.
    pub vertices: Vec<usize>,
}

/// Splits `g` into maximal connected subgraphs, ordered by smallest vertex.
/// Features are carried over to each component.
pub fn connected_components(g: &Graph) -> Vec<Component> {
    let n = g.num_vertices();
    let mut label = vec![usize::MAX; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let id = members.len();
        let mut stack = vec![start];
        let mut verts = Vec::new();
        label[start] = id;
        while let Some(u) = stack.pop() {
            verts.push(u);
            for &w in g.neighbors(u) {
                if label[w] == usize::MAX {
                    label[w] = id;
                    stack.push(w);
                }
            }
        }
        verts.sort_unstable();
        members.push(verts);
    }

    let mut local = vec![0usize; n];
    for verts in &members {
        for (i, &v) in verts.iter().enumerate() {
            local[v] = i;
        }
    }
    let mut edges_per: Vec<Vec<(usize, usize)>> = vec![Vec::new(); members.len()];
    for &(a, b) in g.edges() {
        edges_per[label[a]].push((local[a], local[b]));
    }

    members
        .into_iter()
        .zip(edges_per)
        .map(|(vertices, edges)| {
            let mut graph =
                Graph::new(vertices.len(), &edges).expect("component edges come from a valid graph");
            if let Some(f) = g.features() {
                graph = graph
                    .with_features(vertices.iter().map(|&v| f[v].clone()).collect())
                    .expect("component features come from a valid graph");
            }
            Component { graph, vertices }
        })
        .collect()
}
