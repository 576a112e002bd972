use gpgl_core::{
    gpgl_loss_and_grad, kk_loss, layout_graph, minimize, rescale_layout, separation_penalty, shortest_path_distances,
    DistanceMatrix, Graph, Layout, LayoutParams,
};
use proptest::prelude::*;

fn naive_kk(x: &[[f64; 2]], s: &DistanceMatrix) -> f64 {
    let mut total = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            if i != j {
                let d = ((x[i][0] - x[j][0]).powi(2) + (x[i][1] - x[j][1]).powi(2)).sqrt();
                total += 0.5 * (d / f64::from(s.get(i, j)) - 1.0).powi(2);
            }
        }
    }
    total
}

fn naive_sep(x: &[[f64; 2]], alpha: f64, lambda: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            if i != j {
                let d = ((x[i][0] - x[j][0]).powi(2) + (x[i][1] - x[j][1]).powi(2)).sqrt();
                total += f64::max(0.0, alpha / d - 1.0);
            }
        }
    }
    lambda * total
}

fn path_tree(parents: &[prop::sample::Index]) -> Graph {
    let edges: Vec<_> = parents.iter().enumerate().map(|(i, p)| (p.index(i + 1), i + 1)).collect();
    Graph::new(parents.len() + 1, &edges).unwrap()
}

fn min_dist(x: &[[f64; 2]]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            m = m.min(((x[i][0] - x[j][0]).powi(2) + (x[i][1] - x[j][1]).powi(2)).sqrt());
        }
    }
    m
}

/// Random tree on `n` vertices with random coordinates.
fn instance(nmin: usize, nmax: usize, span: f64) -> impl Strategy<Value = (Graph, Vec<[f64; 2]>)> {
    (nmin..=nmax).prop_flat_map(move |n| {
        (
            prop::collection::vec(any::<prop::sample::Index>(), n - 1).prop_map(|p| path_tree(&p)),
            prop::collection::vec([-span..span, -span..span], n),
        )
    })
}

fn complete(n: usize) -> Graph {
    let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    Graph::new(n, &edges).unwrap()
}

fn centroid_radius(cells: &[[i64; 2]]) -> f64 {
    let n = cells.len() as f64;
    let cx = cells.iter().map(|c| c[0] as f64).sum::<f64>() / n;
    let cy = cells.iter().map(|c| c[1] as f64).sum::<f64>() / n;
    cells
        .iter()
        .map(|c| ((c[0] as f64 - cx).powi(2) + (c[1] as f64 - cy).powi(2)).sqrt())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_match_double_loop_oracles((g, x) in instance(2, 12, 4.0), alpha in 0.5f64..2.0) {
        prop_assume!(min_dist(&x) > 1e-3);
        let s = shortest_path_distances(&g).unwrap();
        let l = Layout::new(x.clone()).unwrap();
        let kk = kk_loss(&l, &s);
        let oracle = naive_kk(&x, &s);
        prop_assert!((kk - oracle).abs() <= 1e-12 * oracle.max(1.0));
        let sep = separation_penalty(&l, alpha, 1000.0).unwrap();
        let oracle = naive_sep(&x, alpha, 1000.0);
        prop_assert!((sep - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }

    #[test]
    fn gradient_matches_central_differences((g, x) in instance(3, 12, 3.0)) {
        let p = LayoutParams::default();
        // keep every pair clear of the hinge kink and of coincidence
        let n = x.len();
        for i in 0..n {
            for j in i + 1..n {
                let d = ((x[i][0] - x[j][0]).powi(2) + (x[i][1] - x[j][1]).powi(2)).sqrt();
                prop_assume!(d > 0.05 && (d - p.alpha).abs() > 1e-3);
            }
        }
        let s = shortest_path_distances(&g).unwrap();
        let (_, grad) = gpgl_loss_and_grad(&Layout::new(x.clone()).unwrap(), &s, &p).unwrap();
        let h = 1e-6;
        let value = |x: Vec<[f64; 2]>| naive_kk(&x, &s) + naive_sep(&x, p.alpha, p.lambda);
        for v in 0..n {
            for c in 0..2 {
                let (mut plus, mut minus) = (x.clone(), x.clone());
                plus[v][c] += h;
                minus[v][c] -= h;
                let fd = (value(plus) - value(minus)) / (2.0 * h);
                let a = grad[v][c];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
                prop_assert!(rel < 1e-5, "vertex {v} axis {c}: analytic {a} fd {fd}");
            }
        }
    }

    #[test]
    fn rigid_motions_preserve_losses(
        (g, x) in instance(2, 10, 4.0),
        theta in 0.0f64..std::f64::consts::TAU,
        tx in -50.0f64..50.0,
        ty in -50.0f64..50.0,
    ) {
        prop_assume!(min_dist(&x) > 1e-3);
        let s = shortest_path_distances(&g).unwrap();
        let (c, sn) = (theta.cos(), theta.sin());
        let moved: Vec<[f64; 2]> = x.iter().map(|&[a, b]| [c * a - sn * b + tx, sn * a + c * b + ty]).collect();
        let (l0, l1) = (Layout::new(x).unwrap(), Layout::new(moved).unwrap());
        prop_assert!((kk_loss(&l0, &s) - kk_loss(&l1, &s)).abs() < 1e-9);
        let (p0, p1) = (
            separation_penalty(&l0, 1.25, 1000.0).unwrap(),
            separation_penalty(&l1, 1.25, 1000.0).unwrap(),
        );
        prop_assert!((p0 - p1).abs() < 1e-9 * p0.max(1.0));
    }

    #[test]
    fn hinge_is_exact(x in prop::collection::vec([-3.0f64..3.0, -3.0f64..3.0], 2..10), alpha in 0.1f64..2.0) {
        prop_assume!(min_dist(&x) > 1e-6);
        let m = min_dist(&x);
        let sep = separation_penalty(&Layout::new(x).unwrap(), alpha, 1000.0).unwrap();
        prop_assert!(sep >= 0.0);
        prop_assert_eq!(sep == 0.0, m >= alpha);
    }

    #[test]
    fn rescale_is_uniform_and_never_shrinks(
        x in prop::collection::vec([-3.0f64..3.0, -3.0f64..3.0], 2..10),
        gamma in 0.0f64..0.5,
    ) {
        prop_assume!(min_dist(&x) > 1e-6);
        let p = LayoutParams { gamma, ..Default::default() };
        let l = Layout::new(x.clone()).unwrap();
        let r = rescale_layout(&l, &p);
        let before = l.min_pairwise_distance();
        let after = r.min_pairwise_distance();
        prop_assert!(after >= before - 1e-12);
        prop_assert!(after >= before.min(p.alpha) - 1e-12);
        let factor = r.distance(0, 1) / l.distance(0, 1);
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                prop_assert!((r.distance(i, j) - factor * l.distance(i, j)).abs() < 1e-9 * factor.max(1.0));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn minimize_never_increases_loss((g, x) in instance(3, 10, 3.0), seed in 0u64..4) {
        prop_assume!(min_dist(&x) > 1e-2);
        let s = shortest_path_distances(&g).unwrap();
        let p = LayoutParams { seed, max_iters: 400, ..Default::default() };
        let out = minimize(&Layout::new(x).unwrap(), &s, &p).unwrap();
        prop_assert!(out.loss <= out.initial_loss);
        prop_assert!(out.iterations <= p.max_iters);
    }
}

#[test]
fn complete_graphs_form_discs() {
    for n in [10usize, 20, 32] {
        let bound = (n as f64 / std::f64::consts::PI).sqrt().ceil();
        let g = complete(n);
        let mut radii = Vec::new();
        for seed in 0..5 {
            let (grid, _) = layout_graph(&g, &LayoutParams { seed, ..Default::default() }).unwrap();
            assert_eq!(grid.distinct_cells(), n, "K{n} seed {seed}");
            let r = centroid_radius(grid.cells());
            assert!(r <= bound + 1.0, "K{n} seed {seed}: radius {r} > {}", bound + 1.0);
            radii.push(r);
        }
        radii.sort_by(f64::total_cmp);
        if n == 32 {
            assert!(radii[2] <= bound, "K32 median radius {} > {bound}", radii[2]);
        }
    }
}

/// Two 4-cliques bridged by a hub vertex, the ego-network shape common in
/// social corpora.
pub fn nine_vertex_example() -> Graph {
    let mut edges = Vec::new();
    for block in [[0usize, 1, 2, 3], [5, 6, 7, 8]] {
        for a in 0..4 {
            for b in a + 1..4 {
                edges.push((block[a], block[b]));
            }
        }
    }
    edges.extend([(0, 4), (1, 4), (4, 5), (4, 6)]);
    Graph::new(9, &edges).unwrap()
}

#[test]
fn bounding_box_grows_with_alpha() {
    let g = nine_vertex_example();
    let medians: Vec<usize> = [1.0, 1.25, 1.5]
        .iter()
        .map(|&alpha| {
            let mut areas: Vec<usize> = (0..20)
                .map(|seed| {
                    let p = LayoutParams { alpha, seed, ..Default::default() };
                    layout_graph(&g, &p).unwrap().0.bounding_box_area()
                })
                .collect();
            areas.sort_unstable();
            areas[10]
        })
        .collect();
    assert!(medians[0] <= medians[1] && medians[1] <= medians[2], "{medians:?}");
}
