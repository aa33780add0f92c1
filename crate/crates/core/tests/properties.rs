mod common;

use std::path::Path;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgdspar::cluster::{kmeans, KMeansParams};
use sgdspar::eig::eigenvalue_variation_ratio;
use sgdspar::eval::clustering_accuracy;
use sgdspar::scale::{clamped_update, ClampRule};
use sgdspar::tree::{build_spanning_tree, total_stretch, TreeMethod};
use sgdspar::{dataio, WeightedGraph};

fn graph_strategy() -> impl Strategy<Value = WeightedGraph> {
    (3usize..30, 0usize..40, any::<u64>()).prop_map(|(n, extra, seed)| {
        random_connected(n, extra, &mut ChaCha8Rng::seed_from_u64(seed))
    })
}

fn labels_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(0usize..5, n),
            prop::collection::vec(0usize..5, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn degrees_sum_to_twice_total_weight(g in graph_strategy()) {
        let total: f64 = g.edges().iter().map(|e| e.w).sum();
        let deg: f64 = g.degree().iter().sum();
        prop_assert!((deg - 2.0 * total).abs() <= 1e-12 * deg);
        prop_assert!((g.laplacian_trace() - deg).abs() <= 1e-12 * deg);
    }

    #[test]
    fn laplacian_kills_constants_and_is_psd(g in graph_strategy(), seed in any::<u64>()) {
        let ones = vec![1.0; g.n()];
        let l1 = g.laplacian_apply(&ones).unwrap();
        prop_assert!(l1.iter().all(|x| x.abs() < 1e-12));
        let x = sgdspar::linalg::standard_normal_vec(g.n(), &mut sgdspar::linalg::seeded_rng(seed));
        let q = g.laplacian_quadratic(&x).unwrap();
        prop_assert!(q >= 0.0);
        let lx = g.laplacian_apply(&x).unwrap();
        let xlx: f64 = x.iter().zip(&lx).map(|(a, b)| a * b).sum();
        prop_assert!((q - xlx).abs() <= 1e-10 * q.max(1.0));
    }

    #[test]
    fn spanning_tree_shape_and_stretch(g in graph_strategy(), akpw in any::<bool>()) {
        let method = if akpw { TreeMethod::Akpw } else { TreeMethod::MaxWeight };
        let t = build_spanning_tree(&g, method).unwrap();
        prop_assert_eq!(t.edge_indices().len(), g.n() - 1);
        prop_assert!(t.to_graph().is_connected());
        let n = g.n();
        for (p, q) in [(0, n - 1), (n / 2, n - 1), (1, n / 3)].into_iter().filter(|(p, q)| p != q) {
            let fast = t.path_resistance(p, q).unwrap();
            let slow = t.naive_path_resistance(p, q);
            prop_assert!((fast - slow).abs() <= 1e-12 * slow.max(1.0));
        }
        let stretch = total_stretch(&g, &t).unwrap();
        prop_assert!(stretch >= (n - 1) as f64 * (1.0 - 1e-12));
    }

    #[test]
    fn accuracy_is_invariant_to_relabeling((pred, truth) in labels_strategy(), shift in 1usize..5) {
        let a = clustering_accuracy(&pred, &truth).unwrap();
        let perm: Vec<usize> = pred.iter().map(|&c| (c + shift) % 5).collect();
        let b = clustering_accuracy(&perm, &truth).unwrap();
        prop_assert_eq!(a.matched, b.matched);
        prop_assert!((0.0..=1.0).contains(&a.acc));
        let agree = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
        prop_assert!(a.matched >= agree);
    }

    #[test]
    fn single_cluster_accuracy_is_largest_class((_, truth) in labels_strategy()) {
        let pred = vec![0; truth.len()];
        let r = clustering_accuracy(&pred, &truth).unwrap();
        let largest = (0..5).map(|c| truth.iter().filter(|&&t| t == c).count()).max().unwrap();
        prop_assert_eq!(r.matched, largest);
    }

    #[test]
    fn kmeans_assigns_nearest_centroid(
        pts in prop::collection::vec(-10.0f64..10.0, 2..80).prop_filter("even", |v| v.len() % 2 == 0),
        k in 1usize..4,
        seed in any::<u64>(),
    ) {
        let n = pts.len() / 2;
        prop_assume!(k <= n);
        let r = kmeans(&pts, 2, k, &KMeansParams { restarts: 2, max_iter: 100, seed }).unwrap();
        let d = |i: usize, c: usize| {
            (0..2).map(|j| (pts[i * 2 + j] - r.centroids[c * 2 + j]).powi(2)).sum::<f64>()
        };
        let mut inertia = 0.0;
        for i in 0..n {
            let own = d(i, r.assignments[i]);
            inertia += own;
            for c in 0..k {
                prop_assert!(own <= d(i, c) + 1e-9);
            }
        }
        prop_assert!((inertia - r.inertia).abs() <= 1e-9 * inertia.max(1.0));
        prop_assert!(r.inertia_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-12));
    }

    #[test]
    fn graph_text_round_trips(g in graph_strategy()) {
        let mut buf = Vec::new();
        dataio::write_graph(&g, &mut buf).unwrap();
        let back = dataio::read_graph(buf.as_slice(), Path::new("mem")).unwrap();
        prop_assert_eq!(back.n(), g.n());
        prop_assert_eq!(back.edges(), g.edges());
    }

    #[test]
    fn identical_vectors_have_zero_variation(v in prop::collection::vec(0.0f64..5.0, 1..20)) {
        prop_assert_eq!(eigenvalue_variation_ratio(&v, &v).unwrap(), 0.0);
    }

    #[test]
    fn clamp_lands_on_the_floor(
        dw in -5.0f64..5.0,
        dg in (0.1f64..10.0, 0.1f64..10.0),
        ds in (0.1f64..10.0, 0.1f64..10.0),
        lambda_n in 0.01f64..2.0,
        delta in 0.1f64..1.0,
    ) {
        let floor = lambda_n * delta;
        prop_assume!(dg.0 / ds.0 > floor && dg.1 / ds.1 > floor);
        let (out, fired) = clamped_update(dw, dg, ds, lambda_n, delta, ClampRule::LambdaAware);
        if fired {
            let phi_p = dg.0 / (ds.0 + out);
            let phi_q = dg.1 / (ds.1 + out);
            prop_assert!(phi_p >= floor * (1.0 - 1e-9) && phi_q >= floor * (1.0 - 1e-9));
            prop_assert!(phi_p.min(phi_q) <= floor * (1.0 + 1e-9));
        } else {
            prop_assert_eq!(out, dw);
            prop_assert!(dg.0 / (ds.0 + dw) > floor && dg.1 / (ds.1 + dw) > floor);
        }
    }
}
