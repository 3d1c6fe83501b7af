//! `hettree` command-line pipeline.
//!
//! Exit codes: 0 success, 1 load/aggregation/IO error, 2 shape or
//! configuration mismatch, 3 training divergence.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hettree_core::aggregate::{preprocess, read_preprocessed, write_preprocessed};
use hettree_core::hetgraph::{load_graph, LoadOptions};
use hettree_core::metapath::{build_semantic_tree, enumerate_metapaths, label_metapaths};
use hettree_core::model::{load_model, save_model};
use hettree_core::train::{evaluate, roc_points, train, TrainData};
use hettree_core::{AggregateOptions, AggregatedTable, Error, HetGraph, HetTreeModel, Schema};
use hettree_testkit::schemas::{cite_schema, email_schema, two_type_schema};
use hettree_testkit::{gen_synthetic, SyntheticSpec};

use crate::config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "hettree", version, about = "Semantic-tree node classification on heterogeneous graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// `key = value` or JSON config file (a `run.json` works); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Threads for aggregation and dense kernels (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Extra `key=value` overrides, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate features and labels along every metapath.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        hops: Option<usize>,
        /// `product` or `exact`.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        max_expansions: Option<usize>,
    },
    /// Train a model on preprocessed tables.
    Train {
        #[command(flatten)]
        common: Common,
        /// Preprocessed directory.
        #[arg(long)]
        pre: Option<PathBuf>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Score a trained model on one split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pre: Option<PathBuf>,
        /// Directory holding `model.bin` and `model.json`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// `train`, `val` or `test`.
        #[arg(long)]
        split: Option<String>,
    },
    /// Print the semantic tree of a schema.
    InspectTree {
        #[command(flatten)]
        common: Common,
        /// Schema file (defaults to `<data>/schema.json`).
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        hops: Option<usize>,
    },
    /// Write a planted-class synthetic dataset.
    GenSynthetic {
        #[command(flatten)]
        common: Common,
        /// `email`, `two-type`, `cite`, or a schema file.
        #[arg(long, default_value = "email")]
        schema: String,
        #[arg(long, default_value_t = 8)]
        feature_dim: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        /// Nodes per type.
        #[arg(long, default_value_t = 1000)]
        nodes: usize,
        /// Edges per relation.
        #[arg(long, default_value_t = 3000)]
        edges: usize,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0.5)]
        train_frac: f64,
        #[arg(long, default_value_t = 0.25)]
        val_frac: f64,
    },
}

fn resolve(common: &Common, flags: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("--set expects KEY=VALUE, got {kv}")))?;
        cfg.set(k, v)?;
    }
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let mut all: Vec<(&str, Option<String>)> = vec![
        ("data", path(&common.data)),
        ("out", path(&common.out)),
        ("seed", common.seed.map(|s| s.to_string())),
        ("workers", common.workers.map(|w| w.to_string())),
    ];
    all.extend_from_slice(flags);
    for (k, v) in all {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    if let Some(n) = cfg.workers {
        // a second initialisation in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    Ok(cfg)
}

fn some<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn peak_memory() -> String {
    std::fs::read_to_string("/proc/self/status")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("VmHWM:"))
                .map(|l| l.trim_start_matches("VmHWM:").trim().to_string())
        })
        .unwrap_or_else(|| "unavailable".into())
}

fn write_run_json(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg)?).with_context(|| format!("writing {}", path.display()))
}

fn load(cfg: &RunConfig) -> Result<HetGraph> {
    let data = cfg.require(&cfg.data, "data")?;
    let opts = LoadOptions {
        featureless: cfg.featureless_policy()?,
    };
    Ok(load_graph(data, &opts)?)
}

fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require(&cfg.out, "out")?;
    let start = Instant::now();
    let g = load(cfg)?;
    let opts = AggregateOptions {
        mode: cfg.mode,
        max_expansions: cfg.max_expansions,
    };
    let (table, tree) = preprocess(&g, cfg.hops, &opts)?;
    write_preprocessed(&table, &tree, out)?;
    write_run_json(out, cfg)?;
    println!("metapaths: {}", table.paths.len());
    println!("label metapaths: {}", table.label_paths.len());
    for (p, x) in table.paths.iter().zip(&table.features) {
        println!("X_{}: {}x{}", p.display_name, x.rows(), x.cols());
    }
    for (p, y) in table.label_paths.iter().zip(&table.labels) {
        println!("Y_{}: {}x{}", p.display_name, y.rows(), y.cols());
    }
    println!("mode: {}", cfg.mode);
    println!("wall time: {:.2?}", start.elapsed());
    println!("peak memory: {}", peak_memory());
    Ok(())
}

fn check_tables(g: &HetGraph, table: &AggregatedTable) -> Result<()> {
    if table.num_targets() != g.num_targets() || table.num_classes != g.labels().num_classes {
        bail!(Error::Shape(format!(
            "preprocessed tables have {} targets and {} classes, dataset has {} and {}",
            table.num_targets(),
            table.num_classes,
            g.num_targets(),
            g.labels().num_classes
        )));
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let pre = cfg.require(&cfg.pre, "pre")?;
    let out = cfg.require(&cfg.out, "out")?.to_path_buf();
    let train_cfg = cfg.train_config()?;
    let (table, tree) = read_preprocessed(pre)?;
    let g = load(cfg)?;
    check_tables(&g, &table)?;
    let mut model = HetTreeModel::<f32>::new(cfg.model_config(), &tree, &table)?;
    write_run_json(&out, cfg)?;
    println!("config: {}", serde_json::to_string(cfg)?);
    println!("variant: {}", cfg.variant);
    if model.has_label_residual() {
        println!("label residual: enabled ({} label metapaths)", table.label_paths.len());
    } else {
        println!("label residual: disabled");
    }
    println!("parameters: {}", model.params().num_scalars());

    let s = g.splits();
    let data = TrainData {
        table: &table,
        labels: g.labels(),
        train: &s.train,
        val: &s.val,
        graph: Some(&g),
    };
    let start = Instant::now();
    let log = train(&mut model, &data, &train_cfg)?;
    let path = out.join("metrics.csv");
    std::fs::write(&path, log.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    save_model(&model, &out)?;
    println!("epochs run: {}, best epoch: {}, wall time {:.2?}", log.epochs.len(), log.best_epoch, start.elapsed());
    for (name, split) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
        if !split.is_empty() {
            println!("{name}: {}", evaluate(&model, &table, g.labels(), split)?);
        }
    }
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let pre = cfg.require(&cfg.pre, "pre")?;
    let model_dir = cfg.require(&cfg.model, "model")?;
    let (table, tree) = read_preprocessed(pre)?;
    let g = load(cfg)?;
    check_tables(&g, &table)?;
    let model = load_model::<f32>(model_dir, &tree, &table)?;
    let split = g.splits().get(&cfg.split)?;
    let m = evaluate(&model, &table, g.labels(), split)?;
    println!("{}: {m}", cfg.split);
    if !g.labels().multi_label && g.labels().num_classes == 2 {
        let out = cfg.out.as_deref().unwrap_or(model_dir);
        std::fs::create_dir_all(out)?;
        let mut csv = String::from("fpr,tpr,threshold\n");
        for p in roc_points(&model, &table, g.labels(), split)? {
            csv.push_str(&format!("{},{},{}\n", p.fpr, p.tpr, p.threshold));
        }
        let path = out.join("roc.csv");
        std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
        println!("roc: {}", path.display());
    }
    Ok(())
}

fn cmd_inspect_tree(schema: &Schema, hops: usize) -> Result<()> {
    let paths = enumerate_metapaths(schema, hops);
    let tree = build_semantic_tree(&paths)?;
    let mut stack = vec![(tree.root(), 0usize)];
    while let Some((i, level)) = stack.pop() {
        println!("{}{}", "  ".repeat(level), tree.node(i).display_name);
        for &c in tree.children(i).iter().rev() {
            stack.push((c, level + 1));
        }
    }
    let labels: Vec<String> = label_metapaths(&paths, &schema.target_type)
        .into_iter()
        .map(|p| p.display_name)
        .collect();
    eprintln!(
        "label metapaths: {}",
        if labels.is_empty() { "none".to_string() } else { labels.join(" ") }
    );
    Ok(())
}

fn named_schema(name: &str, dim: usize, classes: usize) -> Result<Schema> {
    Ok(match name {
        "email" => email_schema(dim, classes),
        "two-type" => two_type_schema(dim, classes),
        "cite" => cite_schema(dim, classes),
        path => Schema::from_file(Path::new(path))?,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess {
            common,
            hops,
            mode,
            max_expansions,
        } => {
            let cfg = resolve(
                &common,
                &[
                    ("hops", some(&hops)),
                    ("mode", mode),
                    ("max_expansions", some(&max_expansions)),
                ],
            )?;
            cmd_preprocess(&cfg)
        }
        Command::Train {
            common,
            pre,
            variant,
            hidden,
            epochs,
            lr,
            dropout,
            patience,
        } => {
            let cfg = resolve(
                &common,
                &[
                    ("pre", pre.map(|p| p.display().to_string())),
                    ("variant", variant),
                    ("hidden", some(&hidden)),
                    ("epochs", some(&epochs)),
                    ("lr", some(&lr)),
                    ("dropout", some(&dropout)),
                    ("patience", some(&patience)),
                ],
            )?;
            cmd_train(&cfg)
        }
        Command::Evaluate {
            common,
            pre,
            model,
            split,
        } => {
            let cfg = resolve(
                &common,
                &[
                    ("pre", pre.map(|p| p.display().to_string())),
                    ("model", model.map(|p| p.display().to_string())),
                    ("split", split),
                ],
            )?;
            cmd_evaluate(&cfg)
        }
        Command::InspectTree { common, schema, hops } => {
            let cfg = resolve(&common, &[("hops", some(&hops))])?;
            let path = match (schema, &cfg.data) {
                (Some(s), _) => s,
                (None, Some(d)) => d.join("schema.json"),
                (None, None) => bail!(ConfigError("inspect-tree needs --schema or --data".into())),
            };
            cmd_inspect_tree(&Schema::from_file(&path)?, cfg.hops)
        }
        Command::GenSynthetic {
            common,
            schema,
            feature_dim,
            classes,
            nodes,
            edges,
            beta,
            noise,
            train_frac,
            val_frac,
        } => {
            let cfg = resolve(&common, &[])?;
            let out = cfg.require(&cfg.out, "out")?;
            let schema = named_schema(&schema, feature_dim, classes)?;
            let mut spec = SyntheticSpec::uniform(schema, nodes, edges, beta, cfg.seed);
            spec.num_classes = classes;
            spec.noise = noise;
            spec.train_frac = train_frac;
            spec.val_frac = val_frac;
            let g = gen_synthetic(&spec, out)?;
            print!("{}", g.summary());
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    let core = err
        .chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .or_else(|| {
            err.chain()
                .find_map(|e| e.downcast_ref::<hettree_testkit::TestkitError>())
                .and_then(|t| match t {
                    hettree_testkit::TestkitError::Core(c) => Some(c),
                    _ => None,
                })
        });
    match core {
        Some(Error::Diverged { .. }) | Some(Error::NonFinite(_)) => 3,
        Some(Error::Shape(_)) | Some(Error::Config(_)) | Some(Error::FeatureDim { .. }) | Some(Error::MissingTable(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
