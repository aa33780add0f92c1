use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use sgdspar::cluster::{self, FilterParams, KMeansParams, SpectralOptions};
use sgdspar::dataio;
use sgdspar::eig::{EigParams, LaplacianKind};
use sgdspar::eval;
use sgdspar::graph::{self, Kernel, KnnOptions, Symmetrization};
use sgdspar::pipeline::{self, Ablation, PipelineConfig};
use sgdspar::scale::{self, ClampRule, SgdParams};
use sgdspar::sparsify::{self, MetricsMode, RankingMode, RecoveryParams, DEFAULT_ORACLE_CAP};
use sgdspar::tree::{self, TreeMethod};
use sgdspar::Error;

/// Spectrum-preserving graph sparsification for spectral clustering.
#[derive(Parser)]
#[command(name = "sgdspar", version)]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write all artifacts.
    Pipeline(ConfigArgs),
    /// Run the full pipeline and an ablation with shared seeds.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        /// original, tree-only, no-scaling or no-filter.
        #[arg(long)]
        against: Ablation,
    },
    /// Condition number, stretch and budget of a sparsifier.
    Metrics {
        graph: PathBuf,
        sparsifier: PathBuf,
        /// exact, approximate or auto.
        #[arg(long, default_value = "auto")]
        mode: String,
        #[arg(long, default_value_t = DEFAULT_ORACLE_CAP)]
        cap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a kNN similarity graph from a point cloud.
    KnnGraph {
        data: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// self-tuning, gaussian or reciprocal.
        #[arg(long, default_value = "self-tuning")]
        kernel: String,
        #[arg(long, default_value_t = 7)]
        rank: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value = "union")]
        symmetrization: Symmetrization,
        /// last, none or a column index (CSV only).
        #[arg(long, default_value = "last")]
        label_column: String,
        #[arg(long)]
        standardize: bool,
    },
    /// Spanning tree plus critical off-tree edges.
    Sparsify {
        graph: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value = "max-weight")]
        tree: TreeMethod,
        #[arg(long, default_value_t = 0.15)]
        budget: f64,
        #[arg(long, default_value_t = 0.01)]
        batch_fraction: f64,
        #[arg(long, default_value_t = 10)]
        k_eigs: usize,
        #[arg(long, default_value_t = 0.01)]
        stability_tol: f64,
        #[arg(long, default_value_t = 2)]
        t: usize,
        #[arg(long, default_value = "every-round")]
        ranking: RankingMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stability history as JSON.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Rescale sparsifier edge weights with constrained SGD.
    Scale {
        graph: PathBuf,
        sparsifier: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        delta_bar_lambda_n: f64,
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        #[arg(long, default_value_t = 0.2)]
        eta_max: f64,
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        #[arg(long, default_value_t = 100)]
        n_max: usize,
        #[arg(long, default_value_t = 2)]
        t: usize,
        #[arg(long, default_value = "lambda-aware")]
        clamp: ClampRule,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Iteration history as JSON.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Spectral clustering of a graph.
    Cluster {
        graph: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, short)]
        out: PathBuf,
        /// Filter the eigenvectors against this graph.
        #[arg(long)]
        original: Option<PathBuf>,
        #[arg(long, default_value_t = 0.7)]
        gamma: f64,
        #[arg(long, default_value_t = 10)]
        n_filter: usize,
        #[arg(long)]
        unnormalized: bool,
        #[arg(long)]
        no_row_normalize: bool,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Embedding CSV (a JSON sidecar is written next to it).
        #[arg(long)]
        embedding: Option<PathBuf>,
    },
    /// Clustering accuracy of predicted labels against ground truth.
    Eval { predicted: PathBuf, truth: PathBuf },
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file with `key = value` lines.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got '{kv}'"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_points(path: &Path, label_column: &str, standardize: bool) -> Result<dataio::Dataset> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let mut data = if is_csv {
        let column = match label_column {
            "none" => None,
            "last" => Some(dataio::LAST_COLUMN),
            c => Some(c.parse().context("label column")?),
        };
        dataio::load_dense_csv(path, column)?
    } else {
        dataio::load_libsvm(path)?
    };
    if standardize {
        data.standardize();
    }
    Ok(data)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Pipeline(args) => {
            let cfg = args.resolve()?;
            let report = pipeline::cmd_pipeline(&cfg)?;
            print_json(&report)
        }
        Command::Compare { config, against } => {
            let cfg = config.resolve()?;
            let report = pipeline::cmd_compare(&cfg, against)?;
            std::fs::create_dir_all(&cfg.output)?;
            dataio::write_json(&report, cfg.output.join(format!("compare_{against}.json")))?;
            print_json(&report)
        }
        Command::Metrics {
            graph,
            sparsifier,
            mode,
            cap,
            seed,
        } => {
            let mode = match mode.as_str() {
                "exact" => MetricsMode::Exact { cap },
                "approximate" => MetricsMode::Approximate,
                "auto" => MetricsMode::Auto { cap },
                m => return Err(anyhow!("unknown metrics mode '{m}'")),
            };
            let a = dataio::load_graph(&graph)?;
            let b = dataio::load_graph(&sparsifier)?;
            print_json(&pipeline::cmd_metrics(&a, &b, mode, seed)?)
        }
        Command::KnnGraph {
            data,
            out,
            k,
            kernel,
            rank,
            sigma,
            symmetrization,
            label_column,
            standardize,
        } => {
            let ds = load_points(&data, &label_column, standardize)?;
            let kernel = match kernel.as_str() {
                "self-tuning" => Kernel::SelfTuning { rank },
                "gaussian" => Kernel::Gaussian { sigma },
                "reciprocal" => Kernel::DistanceReciprocal,
                other => return Err(anyhow!("unknown kernel '{other}'")),
            };
            let g = graph::build_knn_graph_with(
                &ds,
                &KnnOptions {
                    k,
                    kernel,
                    symmetrization,
                    repair: true,
                },
            )?;
            dataio::save_graph(&g, &out)?;
            if let Some(labels) = ds.labels() {
                dataio::save_labels(labels, out.with_extension("labels.csv"))?;
            }
            eprintln!(
                "{} vertices, {} edges -> {}",
                g.n(),
                g.num_edges(),
                out.display()
            );
            Ok(())
        }
        Command::Sparsify {
            graph,
            out,
            tree: method,
            budget,
            batch_fraction,
            k_eigs,
            stability_tol,
            t,
            ranking,
            seed,
            history,
        } => {
            let g = dataio::load_graph(&graph)?;
            let st = tree::build_spanning_tree(&g, method)?;
            let params = RecoveryParams {
                budget,
                batch_fraction,
                k_eigs,
                stability_tol,
                t,
                seed,
                ranking,
                eig: EigParams {
                    seed,
                    ..EigParams::default()
                },
            };
            let sp = sparsify::recover_off_tree_edges(&g, &st, &params)?;
            dataio::save_graph(&sp.subgraph, &out)?;
            if let Some(h) = history {
                dataio::write_json(
                    &serde_json::json!({
                        "rounds": sp.history,
                        "seed": seed,
                        "stop": sp.stop,
                        "budget": sp.budget,
                        "params": params,
                    }),
                    h,
                )?;
            }
            eprintln!(
                "{} edges (budget {:.4}, {} rounds, stop {:?}) -> {}",
                sp.subgraph.num_edges(),
                sp.budget,
                sp.history.len() - 1,
                sp.stop,
                out.display()
            );
            Ok(())
        }
        Command::Scale {
            graph,
            sparsifier,
            out,
            delta_bar_lambda_n,
            beta,
            eta_max,
            epsilon,
            n_max,
            t,
            clamp,
            seed,
            history,
        } => {
            let g = dataio::load_graph(&graph)?;
            let s = dataio::load_graph(&sparsifier)?;
            let params = SgdParams {
                delta_bar_lambda_n,
                beta,
                eta_max,
                epsilon,
                n_max,
                t,
                seed,
                clamp,
            };
            let (scaled, state) = scale::sgd_scale(&g, &s, &params)?;
            dataio::save_graph(&scaled, &out)?;
            if let Some(h) = history {
                dataio::write_json(
                    &serde_json::json!({
                        "iterations": state.history,
                        "params": params,
                        "seed": seed,
                    }),
                    h,
                )?;
            }
            eprintln!(
                "lambda_1 {:.4e} -> {:.4e} in {} iterations -> {}",
                state.lambda_1_0,
                state.lambda_1_k,
                state.k,
                out.display()
            );
            Ok(())
        }
        Command::Cluster {
            graph,
            k,
            out,
            original,
            gamma,
            n_filter,
            unnormalized,
            no_row_normalize,
            restarts,
            seed,
            embedding,
        } => {
            let g = dataio::load_graph(&graph)?;
            let orig = original.map(|p| dataio::load_graph(&p)).transpose()?;
            let opts = SpectralOptions {
                kind: LaplacianKind::from_normalized(!unnormalized),
                row_normalize: !no_row_normalize,
                filter: orig.as_ref().map(|_| FilterParams {
                    gamma,
                    sweeps: n_filter,
                }),
                eig: EigParams {
                    seed,
                    ..EigParams::default()
                },
                kmeans: KMeansParams {
                    restarts,
                    seed,
                    ..KMeansParams::default()
                },
            };
            let res = cluster::spectral_cluster(&g, k, orig.as_ref(), &opts)?;
            dataio::save_labels(&res.labels, &out)?;
            if let Some(p) = embedding {
                let mut emb = res.embedding.clone();
                emb.source = graph.display().to_string();
                dataio::save_embedding(&emb, &p, p.with_extension("json"))?;
            }
            print_json(&res.timings)
        }
        Command::Eval { predicted, truth } => {
            let p = dataio::load_labels(&predicted)?;
            let t = dataio::load_labels(&truth)?;
            let r = eval::clustering_accuracy(&p, &t)?;
            print_json(&serde_json::json!({
                "acc": eval::round_to(100.0 * r.acc, 2),
                "matched": r.matched,
                "n": r.n,
                "mapping": r.mapping,
            }))
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Pipeline(_) => "pipeline",
        Command::Compare { .. } => "compare",
        Command::Metrics { .. } => "metrics",
        Command::KnnGraph { .. } => "knn-graph",
        Command::Sparsify { .. } => "sparsify",
        Command::Scale { .. } => "scale",
        Command::Cluster { .. } => "cluster",
        Command::Eval { .. } => "eval",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot size thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    let name = command_name(&cli.command);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already carry their causes in the message
            match e.downcast_ref::<Error>() {
                Some(Error::Stage { stage, source }) => eprintln!("error [{stage}]: {source}"),
                Some(inner) => eprintln!("error [{name}]: {inner}"),
                None => eprintln!("error [{name}]: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}
