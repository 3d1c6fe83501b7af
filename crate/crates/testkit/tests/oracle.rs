use hettree_core::aggregate::{aggregate_features, aggregate_labels, aggregate_labels_visible};
use hettree_core::hetgraph::{GraphParts, Labels, Splits};
use hettree_core::metapath::{enumerate_metapaths, label_metapaths};
use hettree_core::tensor::Matrix;
use hettree_core::{AggregateOptions, HetGraph, Metapath, Orientation};
use hettree_testkit::schemas::{cite_schema, email_schema, two_type_schema};
use hettree_testkit::{generate, generate_forest, oracle_aggregate, SyntheticSpec, TestkitError};
use proptest::prelude::*;

const BUDGET: usize = 100_000;

fn check_against_oracle(g: &HetGraph, hops: usize) {
    let paths = enumerate_metapaths(g.schema(), hops);
    let label_paths = label_metapaths(&paths, &g.schema().target_type);
    let opts = AggregateOptions::exact();
    let xs = aggregate_features(g, &paths, &opts).unwrap();
    let ys = aggregate_labels(g, &label_paths, &opts).unwrap();
    for v in 0..g.num_targets() {
        for (p, x) in paths.iter().zip(&xs) {
            let o = oracle_aggregate(g, p, v, None, BUDGET).unwrap();
            for (a, b) in x.row(v).iter().zip(&o.features) {
                assert!((*a as f64 - b).abs() <= 1e-6, "{} node {v}", p.display_name);
            }
            let li = label_paths.iter().position(|q| q == p);
            assert_eq!(li.is_some(), o.labels.is_some(), "{}", p.display_name);
            if let (Some(li), Some(ol)) = (li, o.labels) {
                for (a, b) in ys[li].row(v).iter().zip(&ol) {
                    assert!((*a as f64 - b).abs() <= 1e-6, "labels {} node {v}", p.display_name);
                }
            }
        }
    }
}

#[test]
fn diamond_endpoint_counted_once() {
    // v=0 -> b0, b1 -> u=1: two paths to u, one endpoint
    let schema = two_type_schema(1, 2);
    let g = HetGraph::from_parts(GraphParts {
        schema,
        node_counts: vec![2, 2],
        edges: vec![vec![(0, 0), (0, 1), (1, 0), (1, 1)]],
        features: vec![
            Matrix::from_rows(&[vec![1.0], vec![4.0]]).unwrap(),
            Matrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap(),
        ],
        labels: Labels {
            num_classes: 2,
            multi_label: false,
            classes: vec![vec![0], vec![1]],
        },
        splits: Splits {
            train: vec![0, 1],
            val: vec![],
            test: vec![],
        },
    })
    .unwrap();
    let r = g.schema().relation_index("links").unwrap();
    let p = Metapath::init(g.schema())
        .extend(g.schema(), r, Orientation::Forward)
        .unwrap()
        .extend(g.schema(), r, Orientation::Reverse)
        .unwrap();
    assert_eq!(p.display_name, "rr");
    let o = oracle_aggregate(&g, &p, 0, None, BUDGET).unwrap();
    assert_eq!(o.features, vec![2.5]);
    assert_eq!(o.labels, Some(vec![0.0, 1.0]));
    let init = oracle_aggregate(&g, &Metapath::init(g.schema()), 1, None, BUDGET).unwrap();
    assert_eq!(init.features, vec![4.0]);
    assert_eq!(init.labels, None);
    // product mode weights u twice; exact mode agrees with the oracle
    let x = &aggregate_features(&g, &[p.clone()], &AggregateOptions::exact()).unwrap()[0];
    assert_eq!(x.row(0), &[2.5]);
}

#[test]
fn budget_is_enforced() {
    let spec = SyntheticSpec::uniform(cite_schema(2, 2), 20, 200, 0.5, 1);
    let g = generate(&spec).unwrap();
    let p = enumerate_metapaths(g.schema(), 3).pop().unwrap();
    let err = oracle_aggregate(&g, &p, 0, None, 5).unwrap_err();
    assert!(matches!(err, TestkitError::Budget { budget: 5, .. }));
}

#[test]
fn fifty_node_instance_matches_exact_mode() {
    let spec = SyntheticSpec::uniform(cite_schema(3, 3), 50, 120, 0.3, 7);
    check_against_oracle(&generate(&spec).unwrap(), 3);
}

#[test]
fn visible_set_controls_labels() {
    let spec = SyntheticSpec::uniform(email_schema(2, 2), 30, 70, 0.5, 2);
    let g = generate(&spec).unwrap();
    let paths = label_metapaths(&enumerate_metapaths(g.schema(), 2), "Sender");
    let visible: Vec<usize> = g.splits().train.iter().copied().step_by(2).collect();
    let ys = aggregate_labels_visible(&g, &paths, &AggregateOptions::exact(), &visible).unwrap();
    for (p, y) in paths.iter().zip(&ys) {
        for v in 0..g.num_targets() {
            let o = oracle_aggregate(&g, p, v, Some(&visible), BUDGET).unwrap().labels.unwrap();
            for (a, b) in y.row(v).iter().zip(&o) {
                assert!((*a as f64 - b).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn product_matches_exact_on_forests() {
    for seed in 0..5 {
        let g = generate_forest(&email_schema(3, 2), &[30, 10, 40, 20, 10], 2, seed).unwrap();
        assert!(g.num_edges() > 80);
        let paths = enumerate_metapaths(g.schema(), 2);
        let labels = label_metapaths(&paths, "Sender");
        let e = aggregate_features(&g, &paths, &AggregateOptions::exact()).unwrap();
        let p = aggregate_features(&g, &paths, &AggregateOptions::product()).unwrap();
        for ((a, b), path) in e.iter().zip(&p).zip(&paths) {
            assert!(a.max_abs_diff(b) <= 1e-6, "seed {seed} {}", path.display_name);
        }
        let e = aggregate_labels(&g, &labels, &AggregateOptions::exact()).unwrap();
        let p = aggregate_labels(&g, &labels, &AggregateOptions::product()).unwrap();
        assert_eq!(e, p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn exact_mode_matches_oracle(seed in 0u64..10_000, n in 5usize..25, m in 5usize..60) {
        let spec = SyntheticSpec::uniform(cite_schema(2, 2), n, m.min(n * n), 0.4, seed);
        check_against_oracle(&generate(&spec).unwrap(), 2);
    }

    #[test]
    fn flipping_a_train_label_leaves_own_rows(seed in 0u64..10_000, pick in 0usize..1000) {
        let spec = SyntheticSpec::uniform(email_schema(2, 3), 25, 60, 0.5, seed);
        let g = generate(&spec).unwrap();
        let train = &g.splits().train;
        let v = train[pick % train.len()];
        let mut labels = g.labels().clone();
        labels.classes[v] = vec![(labels.classes[v][0] + 1) % 3];
        let flipped = g.with_labels(labels).unwrap();
        let paths = label_metapaths(&enumerate_metapaths(g.schema(), 2), "Sender");
        for opts in [AggregateOptions::exact(), AggregateOptions::product()] {
            let a = aggregate_labels(&g, &paths, &opts).unwrap();
            let b = aggregate_labels(&flipped, &paths, &opts).unwrap();
            for (ya, yb) in a.iter().zip(&b) {
                prop_assert_eq!(ya.row(v), yb.row(v));
            }
        }
    }
}
