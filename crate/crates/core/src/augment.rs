//! Several grid layouts per graph from differently shuffled circular starts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::layout::{layout_graph, GridLayout, LayoutDiagnostics, LayoutParams};

/// Added to a failed run's seed for its single retry.
pub const RETRY_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedLayout {
    pub seed: u64,
    pub grid: GridLayout,
    pub diagnostics: LayoutDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    /// Scheduled seed of the run (the retry used `seed + RETRY_SEED_OFFSET`).
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSet {
    pub graph_id: usize,
    pub k: usize,
    pub params: LayoutParams,
    /// Successful runs in seed order.
    pub layouts: Vec<AugmentedLayout>,
    pub failures: Vec<FailedRun>,
}

/// Runs the layout `k` times with seeds `p.seed, p.seed + 1, ...`.
///
/// Runs are independent and may execute in parallel; results are ordered by
/// seed. A failing run is retried once with its seed offset by
/// [`RETRY_SEED_OFFSET`] and recorded as failed if the retry fails too.
pub fn augment(g: &Graph, graph_id: usize, p: &LayoutParams, k: usize) -> AugmentedSet {
    assert!(k >= 1, "augmentation count must be >= 1");
    let runs: Vec<Result<AugmentedLayout, FailedRun>> = (0..k as u64)
        .into_par_iter()
        .map(|r| {
            let seed = p.seed.wrapping_add(r);
            let attempt = |seed: u64| {
                layout_graph(g, &LayoutParams { seed, ..*p }).map(|(grid, diagnostics)| AugmentedLayout {
                    seed,
                    grid,
                    diagnostics,
                })
            };
            attempt(seed)
                .or_else(|_| attempt(seed.wrapping_add(RETRY_SEED_OFFSET)))
                .map_err(|e| FailedRun {
                    seed,
                    error: e.to_string(),
                })
        })
        .collect();

    let mut layouts = Vec::with_capacity(k);
    let mut failures = Vec::new();
    for run in runs {
        match run {
            Ok(l) => layouts.push(l),
            Err(f) => failures.push(f),
        }
    }
    AugmentedSet {
        graph_id,
        k,
        params: *p,
        layouts,
        failures,
    }
}

impl AugmentedSet {
    /// Number of pairwise distinct grid layouts in the set.
    pub fn distinct_layouts(&self) -> usize {
        let mut grids: Vec<&GridLayout> = self.layouts.iter().map(|l| &l.grid).collect();
        grids.sort_by(|a, b| a.cells().cmp(b.cells()));
        grids.dedup();
        grids.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::gpgl_layout;

    fn wheel() -> Graph {
        let mut edges: Vec<_> = (1..8).map(|i| (0, i)).collect();
        edges.extend((1..8).map(|i| (i, i % 7 + 1)));
        Graph::new(8, &edges).unwrap()
    }

    #[test]
    fn single_run_matches_direct_layout() {
        let g = wheel();
        let p = LayoutParams { seed: 11, ..Default::default() };
        let set = augment(&g, 0, &p, 1);
        let (grid, diag) = gpgl_layout(&g, &p).unwrap();
        assert_eq!(set.layouts.len(), 1);
        assert_eq!(set.layouts[0].seed, 11);
        assert_eq!(set.layouts[0].grid, grid);
        assert_eq!(set.layouts[0].diagnostics, diag);
    }

    #[test]
    fn seeds_are_sequential_and_distinct() {
        let set = augment(&wheel(), 3, &LayoutParams { seed: 40, ..Default::default() }, 6);
        let seeds: Vec<u64> = set.layouts.iter().map(|l| l.seed).collect();
        assert_eq!(seeds, (40..46).collect::<Vec<_>>());
        assert!(set.failures.is_empty());
        assert!(set.layouts.iter().all(|l| l.diagnostics.kk_loss.is_finite()));
    }

    #[test]
    fn deterministic() {
        let p = LayoutParams { seed: 5, ..Default::default() };
        assert_eq!(augment(&wheel(), 0, &p, 4), augment(&wheel(), 0, &p, 4));
    }

    #[test]
    fn failed_runs_are_reported() {
        // Validation fails for every seed, so the retry fails as well.
        let p = LayoutParams { max_iters: 0, ..Default::default() };
        let set = augment(&wheel(), 0, &p, 2);
        assert!(set.layouts.is_empty());
        assert_eq!(set.failures.iter().map(|f| f.seed).collect::<Vec<_>>(), vec![0, 1]);
    }
}
