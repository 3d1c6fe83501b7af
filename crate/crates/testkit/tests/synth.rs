use hettree_core::hetgraph::{load_graph, LoadOptions};
use hettree_core::metapath::enumerate_metapaths;
use hettree_core::{AggregateOptions, Orientation};
use hettree_core::aggregate::aggregate_features;
use hettree_testkit::schemas::{email_schema, two_type_schema};
use hettree_testkit::{gen_synthetic, generate, SyntheticSpec, TestkitError};

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn same_seed_same_bytes() {
    let spec = SyntheticSpec::uniform(email_schema(4, 3), 40, 100, 0.6, 9);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen_synthetic(&spec, a.path()).unwrap();
    gen_synthetic(&spec, b.path()).unwrap();
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
    let other = tempfile::tempdir().unwrap();
    gen_synthetic(&SyntheticSpec { seed: 10, ..spec }, other.path()).unwrap();
    assert_ne!(dir_bytes(a.path()), dir_bytes(other.path()));
}

#[test]
fn generated_datasets_load() {
    for seed in 0..5 {
        let spec = SyntheticSpec::uniform(email_schema(3, 2), 30, 80, seed as f64 / 4.0, seed);
        let dir = tempfile::tempdir().unwrap();
        let g = gen_synthetic(&spec, dir.path()).unwrap();
        let back = load_graph(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(back.summary(), g.summary());
        assert_eq!(g.num_edges(), 6 * 80);
        let counts = g.labels().classes.iter().filter(|c| c[0] == 0).count();
        assert_eq!(counts, 15);
    }
}

#[test]
fn full_signal_separates_classes_at_one_hop() {
    // at beta = 1 every target row is its class mean and every B neighbor
    // shares the class, so the one-hop table is the B class mean
    let mut spec = SyntheticSpec::uniform(two_type_schema(3, 2), 200, 600, 1.0, 4);
    spec.train_frac = 1.0;
    spec.val_frac = 0.0;
    let g = generate(&spec).unwrap();
    let paths = enumerate_metapaths(g.schema(), 1);
    let xs = aggregate_features(&g, &paths, &AggregateOptions::exact()).unwrap();
    let classes = &g.labels().classes;
    for x in &xs {
        let mut proto: [Option<Vec<f32>>; 2] = [None, None];
        for v in 0..g.num_targets() {
            if g.degree(v, "links", Orientation::Forward).unwrap() == 0 && x.cols() > 0 && x.row(v).iter().all(|&f| f == 0.0) {
                continue;
            }
            let c = classes[v][0];
            match &proto[c] {
                None => proto[c] = Some(x.row(v).to_vec()),
                Some(p) => {
                    for (a, b) in p.iter().zip(x.row(v)) {
                        assert!((a - b).abs() < 1e-5);
                    }
                }
            }
        }
        // a linear probe along the prototype difference separates perfectly
        let (p0, p1) = (proto[0].clone().unwrap(), proto[1].clone().unwrap());
        assert!(p0.iter().zip(&p1).any(|(a, b)| (a - b).abs() > 1e-3));
    }
}

#[test]
fn impossible_specs_are_rejected() {
    let spec = SyntheticSpec::uniform(two_type_schema(2, 2), 3, 10, 0.5, 1);
    assert!(matches!(generate(&spec), Err(TestkitError::Spec(_))));
    let spec = SyntheticSpec::uniform(two_type_schema(2, 2), 3, 9, 1.0, 1);
    // only same-class pairs are ever drawn at beta = 1
    assert!(matches!(generate(&spec), Err(TestkitError::Exhausted { .. })));
    let spec = SyntheticSpec::uniform(two_type_schema(2, 2), 3, 4, 1.5, 1);
    assert!(generate(&spec).is_err());
    let mut spec = SyntheticSpec::uniform(two_type_schema(2, 2), 3, 4, 0.5, 1);
    spec.nodes[1] = 0;
    assert!(generate(&spec).is_err());
}
