use std::fs;
use std::path::Path;

use hettree_core::hetgraph::{load_graph, write_dataset, FeaturelessPolicy, LoadOptions, Orientation};
use hettree_core::htft::write_matrix;
use hettree_core::tensor::Matrix;
use hettree_core::Error;
use proptest::prelude::*;

const SCHEMA: &str = r#"{
  "node_types": [
    {"name": "Paper", "feature_dim": 2},
    {"name": "Author", "feature_dim": 3, "num_nodes": 3}
  ],
  "relations": [
    {"name": "written_by", "abbrev": "w", "src": "Paper", "dst": "Author"},
    {"name": "cites", "abbrev": "c", "src": "Paper", "dst": "Paper"}
  ],
  "target_type": "Paper",
  "num_classes": 2
}"#;

fn write_small(dir: &Path, cites: &[(u32, u32)]) {
    fs::write(dir.join("schema.json"), SCHEMA).unwrap();
    let x = Matrix::from_fn(4, 2, |i, j| (i * 2 + j) as f32);
    write_matrix(&dir.join("features_Paper.bin"), &x).unwrap();
    fs::write(dir.join("edges_written_by.csv"), "src,dst\n0,0\n0,2\n1,2\n3,1\n").unwrap();
    let mut c = String::from("src,dst\n");
    for (s, d) in cites {
        c.push_str(&format!("{s},{d}\n"));
    }
    fs::write(dir.join("edges_cites.csv"), c).unwrap();
    fs::write(dir.join("labels.csv"), "node,classes\n0,0\n1,1\n2,0\n3,1\n").unwrap();
    fs::write(dir.join("split_train.txt"), "0\n1\n").unwrap();
    fs::write(dir.join("split_val.txt"), "2\n").unwrap();
    fs::write(dir.join("split_test.txt"), "3\n").unwrap();
}

#[test]
fn loads_small_dataset() {
    let dir = tempfile::tempdir().unwrap();
    write_small(dir.path(), &[(0, 1), (2, 1)]);
    let g = load_graph(dir.path(), &LoadOptions::default()).unwrap();
    assert_eq!(g.node_counts(), &[4, 3]);
    assert_eq!(g.neighbors(0, "written_by", Orientation::Forward).unwrap(), &[0, 2]);
    assert_eq!(g.neighbors(2, "written_by", Orientation::Reverse).unwrap(), &[0, 1]);
    assert_eq!(g.neighbors(1, "cites", Orientation::Reverse).unwrap(), &[0, 2]);
    assert!(g.neighbors(3, "cites", Orientation::Forward).unwrap().is_empty());
    // featureless type gets constant rows
    assert!(g.features(1).as_slice().iter().all(|&x| x == 1.0));
    assert_eq!(g.splits().train, vec![0, 1]);
}

#[test]
fn featureless_random_policy_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    write_small(dir.path(), &[]);
    let opts = |seed| LoadOptions {
        featureless: FeaturelessPolicy::Random { seed },
    };
    let a = load_graph(dir.path(), &opts(1)).unwrap();
    let b = load_graph(dir.path(), &opts(1)).unwrap();
    let c = load_graph(dir.path(), &opts(2)).unwrap();
    assert_eq!(a.features(1), b.features(1));
    assert_ne!(a.features(1), c.features(1));
    assert_eq!(a.summary(), b.summary());
}

#[test]
fn missing_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    write_small(dir.path(), &[]);
    fs::remove_file(dir.path().join("edges_cites.csv")).unwrap();
    let err = load_graph(dir.path(), &LoadOptions::default()).unwrap_err();
    assert!(matches!(err, Error::MissingFile(_)));
    assert!(err.to_string().contains("edges_cites.csv"), "{err}");
}

#[test]
fn feature_width_must_match_schema() {
    let dir = tempfile::tempdir().unwrap();
    write_small(dir.path(), &[]);
    write_matrix(&dir.path().join("features_Paper.bin"), &Matrix::zeros(4, 5)).unwrap();
    let err = load_graph(dir.path(), &LoadOptions::default()).unwrap_err();
    assert!(matches!(err, Error::FeatureDim { expected: 2, found: 5, .. }), "{err}");
}

#[test]
fn bad_edges_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_small(dir.path(), &[(0, 9)]);
    let err = load_graph(dir.path(), &LoadOptions::default()).unwrap_err();
    assert!(matches!(err, Error::IndexOutOfRange(_)), "{err}");

    write_small(dir.path(), &[(0, 1), (0, 1)]);
    let err = load_graph(dir.path(), &LoadOptions::default()).unwrap_err();
    assert!(matches!(err, Error::DuplicateEdge { .. }), "{err}");

    write_small(dir.path(), &[]);
    fs::write(dir.path().join("edges_cites.csv"), "src,dst\n0;1\n").unwrap();
    let err = load_graph(dir.path(), &LoadOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");
}

#[test]
fn splits_must_be_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    write_small(dir.path(), &[]);
    fs::write(dir.path().join("split_val.txt"), "1\n").unwrap();
    assert!(matches!(
        load_graph(dir.path(), &LoadOptions::default()),
        Err(Error::Split(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reverse_adjacency_is_transpose(edges in proptest::collection::btree_set((0u32..4, 0u32..4), 0..16)) {
        let dir = tempfile::tempdir().unwrap();
        let cites: Vec<_> = edges.into_iter().collect();
        write_small(dir.path(), &cites);
        let g = load_graph(dir.path(), &LoadOptions::default()).unwrap();
        for u in 0..4usize {
            for &v in g.neighbors(u, "cites", Orientation::Forward).unwrap() {
                prop_assert!(g.neighbors(v as usize, "cites", Orientation::Reverse).unwrap().contains(&(u as u32)));
            }
            for &v in g.neighbors(u, "cites", Orientation::Reverse).unwrap() {
                prop_assert!(g.neighbors(v as usize, "cites", Orientation::Forward).unwrap().contains(&(u as u32)));
            }
        }
        let total: usize = (0..4).map(|u| g.degree(u, "cites", Orientation::Reverse).unwrap()).sum();
        prop_assert_eq!(total, cites.len());

        let out = tempfile::tempdir().unwrap();
        write_dataset(out.path(), &g).unwrap();
        let back = load_graph(out.path(), &LoadOptions::default()).unwrap();
        prop_assert_eq!(back.summary(), g.summary());
    }
}
