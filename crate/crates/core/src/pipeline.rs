//! End-to-end pipeline: configuration, stage orchestration and artifacts.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::cluster::{self, FilterParams, KMeansParams, SpectralClustering, SpectralOptions};
use crate::dataio::{self, CsvOptions, Dataset};
use crate::eig::{EigParams, LaplacianKind};
use crate::error::{Error, Result};
use crate::eval::{self, AccuracyReport, Aggregate, RunOutcome, Timings};
use crate::graph::{self, off_tree_budget, Kernel, KnnOptions, Symmetrization, WeightedGraph};
use crate::scale::{self, ClampRule, ScalingIteration, ScalingState, SgdParams};
use crate::sparsify::{
    self, MetricsMode, RankingMode, RecoveryParams, Sparsifier, StabilityRound, StopReason,
};
use crate::tree::{self, SpanningTree, TreeMethod};

/// Stage names in execution order, as recorded in the MANIFEST.
pub const STAGES: [&str; 7] = [
    "graph",
    "sparsify",
    "scale",
    "eigensolve",
    "filter",
    "kmeans",
    "report",
];

// keeps the SGD random stream apart from the recovery stream
const SGD_SEED_OFFSET: u64 = 0x5851_f42d_4c95_7f2d;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DataFormat {
    /// `.csv` files are CSV, everything else LibSVM.
    #[default]
    Auto,
    Csv,
    Libsvm,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LabelColumn {
    #[default]
    Last,
    None,
    Index(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KernelName {
    #[default]
    SelfTuning,
    Gaussian,
    Reciprocal,
}

macro_rules! text_enum {
    ($ty:ty { $($var:path => $name:literal),* $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($var),)*
                    _ => Err(Error::param(format!("unknown value '{s}'"))),
                }
            }
        }
        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $($var => $name,)* })
            }
        }
    };
}

text_enum!(DataFormat { DataFormat::Auto => "auto", DataFormat::Csv => "csv", DataFormat::Libsvm => "libsvm" });
text_enum!(KernelName {
    KernelName::SelfTuning => "self-tuning",
    KernelName::Gaussian => "gaussian",
    KernelName::Reciprocal => "reciprocal",
});

impl FromStr for LabelColumn {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Self::Last),
            "none" => Ok(Self::None),
            _ => s.parse().map(Self::Index).map_err(|_| {
                Error::param(format!("label_column '{s}' is not last, none or an index"))
            }),
        }
    }
}

impl std::fmt::Display for LabelColumn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Last => f.write_str("last"),
            Self::None => f.write_str("none"),
            Self::Index(i) => write!(f, "{i}"),
        }
    }
}

/// Every tunable of the pipeline. Stored on disk as flat `key = value` lines;
/// `#` starts a comment line. Zero for `k_eigs`, `clusters` or `max_rows`
/// means "derive from the data".
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    pub format: DataFormat,
    pub label_column: LabelColumn,
    pub has_header: bool,
    pub standardize: bool,
    pub max_rows: usize,
    pub knn_k: usize,
    pub kernel: KernelName,
    pub self_tuning_rank: usize,
    pub gaussian_sigma: f64,
    pub symmetrization: Symmetrization,
    pub tree: TreeMethod,
    pub budget: f64,
    pub batch_fraction: f64,
    pub stability_tol: f64,
    pub k_eigs: usize,
    pub t: usize,
    pub ranking: RankingMode,
    pub scaling: bool,
    pub delta_bar_lambda_n: f64,
    pub beta: f64,
    pub eta_max: f64,
    pub epsilon: f64,
    pub n_max: usize,
    pub clamp: ClampRule,
    pub filter: bool,
    pub gamma: f64,
    pub n_filter: usize,
    pub clusters: usize,
    pub normalized: bool,
    pub row_normalize: bool,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub eig_tol: f64,
    pub eig_max_iter: usize,
    pub seed: u64,
    pub runs: usize,
    pub acc_budgets: Vec<f64>,
    pub output: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            format: DataFormat::Auto,
            label_column: LabelColumn::Last,
            has_header: false,
            standardize: false,
            max_rows: 0,
            knn_k: 10,
            kernel: KernelName::SelfTuning,
            self_tuning_rank: 7,
            gaussian_sigma: 1.0,
            symmetrization: Symmetrization::Union,
            tree: TreeMethod::MaxWeight,
            budget: 0.15,
            batch_fraction: 0.01,
            stability_tol: 0.01,
            k_eigs: 0,
            t: 2,
            ranking: RankingMode::EveryRound,
            scaling: true,
            delta_bar_lambda_n: 0.5,
            beta: 0.5,
            eta_max: 0.2,
            epsilon: 0.01,
            n_max: 100,
            clamp: ClampRule::LambdaAware,
            filter: true,
            gamma: 0.7,
            n_filter: 10,
            clusters: 0,
            normalized: true,
            row_normalize: true,
            kmeans_restarts: 10,
            kmeans_max_iter: 300,
            eig_tol: 1e-8,
            eig_max_iter: 1000,
            seed: 0,
            runs: 1,
            acc_budgets: vec![0.02, 0.05, 0.1],
            output: PathBuf::from("out"),
        }
    }
}

trait ConfigValue: Sized {
    fn render(&self) -> String;
    fn parse_value(s: &str) -> Result<Self>;
}

macro_rules! via_str {
    ($($ty:ty),*) => {$(
        impl ConfigValue for $ty {
            fn render(&self) -> String {
                self.to_string()
            }
            fn parse_value(s: &str) -> Result<Self> {
                s.parse::<$ty>().map_err(|e| Error::param(e.to_string()))
            }
        }
    )*};
}

via_str!(
    f64,
    usize,
    u64,
    bool,
    DataFormat,
    LabelColumn,
    KernelName,
    Symmetrization,
    TreeMethod,
    RankingMode,
    ClampRule
);

impl ConfigValue for PathBuf {
    fn render(&self) -> String {
        self.display().to_string()
    }
    fn parse_value(s: &str) -> Result<Self> {
        Ok(PathBuf::from(s))
    }
}

impl ConfigValue for Vec<f64> {
    fn render(&self) -> String {
        self.iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }
    fn parse_value(s: &str) -> Result<Self> {
        s.split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(|x| x.parse::<f64>().map_err(|e| Error::param(e.to_string())))
            .collect()
    }
}

macro_rules! config_keys {
    ($($key:ident),* $(,)?) => {
        impl PipelineConfig {
            /// Names of all keys in on-disk order.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            /// The `key = value` form; parsing it yields an equal config.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(writeln!(out, "{} = {}", stringify!($key), self.$key.render()).unwrap();)*
                out
            }

            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => {
                        self.$key = ConfigValue::parse_value(value).map_err(|e| match e {
                            Error::Parameter(m) => Error::param(format!("{key}: {m}")),
                            other => other,
                        })?;
                    })*
                    _ => return Err(Error::param(format!("unknown config key '{key}'"))),
                }
                Ok(())
            }
        }
    };
}

config_keys!(
    dataset,
    format,
    label_column,
    has_header,
    standardize,
    max_rows,
    knn_k,
    kernel,
    self_tuning_rank,
    gaussian_sigma,
    symmetrization,
    tree,
    budget,
    batch_fraction,
    stability_tol,
    k_eigs,
    t,
    ranking,
    scaling,
    delta_bar_lambda_n,
    beta,
    eta_max,
    epsilon,
    n_max,
    clamp,
    filter,
    gamma,
    n_filter,
    clusters,
    normalized,
    row_normalize,
    kmeans_restarts,
    kmeans_max_iter,
    eig_tol,
    eig_max_iter,
    seed,
    runs,
    acc_budgets,
    output,
);

impl PipelineConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: PathBuf::from("<config>"),
                line: i + 1,
                msg: format!("expected 'key = value', got '{line}'"),
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Parse {
                    path: PathBuf::from("<config>"),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Open {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            },
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::param(msg)) };
        check(self.knn_k >= 1, "knn_k must be >= 1")?;
        check(self.self_tuning_rank >= 1, "self_tuning_rank must be >= 1")?;
        check(self.gaussian_sigma > 0.0, "gaussian_sigma must be positive")?;
        check(
            self.budget >= 0.0 && self.budget.is_finite(),
            "budget must be >= 0",
        )?;
        check(self.batch_fraction > 0.0, "batch_fraction must be positive")?;
        check(self.stability_tol >= 0.0, "stability_tol must be >= 0")?;
        check(self.t >= 1, "t must be >= 1")?;
        check(
            self.delta_bar_lambda_n > 0.0 && self.delta_bar_lambda_n <= 1.0,
            "delta_bar_lambda_n must be in (0, 1]",
        )?;
        check((0.0..1.0).contains(&self.beta), "beta must be in [0, 1)")?;
        check(
            self.eta_max > 0.0 && self.epsilon > 0.0,
            "eta_max and epsilon must be positive",
        )?;
        check(self.n_max >= 1, "n_max must be >= 1")?;
        check(
            self.gamma > 0.0 && self.gamma <= 1.0,
            "gamma must be in (0, 1]",
        )?;
        check(
            self.kmeans_restarts >= 1 && self.kmeans_max_iter >= 1,
            "k-means limits must be >= 1",
        )?;
        check(
            self.eig_tol > 0.0 && self.eig_max_iter >= 1,
            "eigensolver limits must be positive",
        )?;
        check(self.runs >= 1, "runs must be >= 1")?;
        check(
            self.acc_budgets.iter().all(|b| *b >= 0.0 && b.is_finite()),
            "acc_budgets must be non-negative",
        )?;
        Ok(())
    }

    pub fn knn_options(&self) -> KnnOptions {
        let kernel = match self.kernel {
            KernelName::SelfTuning => Kernel::SelfTuning {
                rank: self.self_tuning_rank,
            },
            KernelName::Gaussian => Kernel::Gaussian {
                sigma: self.gaussian_sigma,
            },
            KernelName::Reciprocal => Kernel::DistanceReciprocal,
        };
        KnnOptions {
            k: self.knn_k,
            kernel,
            symmetrization: self.symmetrization,
            repair: true,
        }
    }

    pub fn eig_params(&self, seed: u64) -> EigParams {
        EigParams {
            tol: self.eig_tol,
            max_iter: self.eig_max_iter,
            seed,
        }
    }

    pub fn recovery_params(&self, clusters: usize, seed: u64) -> RecoveryParams {
        RecoveryParams {
            budget: self.budget,
            batch_fraction: self.batch_fraction,
            k_eigs: if self.k_eigs == 0 {
                clusters
            } else {
                self.k_eigs
            },
            stability_tol: self.stability_tol,
            t: self.t,
            seed,
            ranking: self.ranking,
            eig: self.eig_params(seed),
        }
    }

    pub fn sgd_params(&self, seed: u64) -> SgdParams {
        SgdParams {
            delta_bar_lambda_n: self.delta_bar_lambda_n,
            beta: self.beta,
            eta_max: self.eta_max,
            epsilon: self.epsilon,
            n_max: self.n_max,
            t: self.t,
            seed: seed.wrapping_add(SGD_SEED_OFFSET),
            clamp: self.clamp,
        }
    }

    pub fn spectral_options(&self, filter: bool, seed: u64) -> SpectralOptions {
        SpectralOptions {
            kind: LaplacianKind::from_normalized(self.normalized),
            row_normalize: self.row_normalize,
            filter: filter.then_some(FilterParams {
                gamma: self.gamma,
                sweeps: self.n_filter,
            }),
            eig: self.eig_params(seed),
            kmeans: KMeansParams {
                restarts: self.kmeans_restarts,
                max_iter: self.kmeans_max_iter,
                seed,
            },
        }
    }

    /// Key/value map for report echoes.
    pub fn as_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for line in self.to_text().lines() {
            if let Some((k, v)) = line.split_once(" = ") {
                map.insert(k.to_string(), json_value(v));
            }
        }
        map.insert("acc_budgets".into(), serde_json::json!(self.acc_budgets));
        serde_json::Value::Object(map)
    }
}

/// Numbers and booleans keep their type; anything else is a string.
fn json_value(text: &str) -> serde_json::Value {
    match serde_json::from_str::<serde_json::Value>(text) {
        Ok(v @ (serde_json::Value::Number(_) | serde_json::Value::Bool(_))) => v,
        _ => serde_json::Value::String(text.to_string()),
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: name,
            source: Box::new(e),
        },
    })
}

/// Loads the configured dataset.
pub fn load_dataset(config: &PipelineConfig) -> Result<Dataset> {
    let path = &config.dataset;
    let format = match config.format {
        DataFormat::Auto => {
            let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
            if ext.eq_ignore_ascii_case("csv") {
                DataFormat::Csv
            } else {
                DataFormat::Libsvm
            }
        }
        f => f,
    };
    let mut data = match format {
        DataFormat::Libsvm => dataio::load_libsvm(path)?,
        _ => {
            let label_column = match config.label_column {
                LabelColumn::None => None,
                LabelColumn::Index(i) => Some(i),
                LabelColumn::Last => Some(dataio::LAST_COLUMN),
            };
            dataio::load_dense_csv_with(
                path,
                &CsvOptions {
                    label_column,
                    has_header: config.has_header,
                },
            )?
        }
    };
    if config.max_rows > 0 && config.max_rows < data.n() {
        data = data.truncate(config.max_rows)?;
    }
    if config.standardize {
        data.standardize();
    }
    Ok(data)
}

/// Dataset plus its kNN graph; shared by every run of an experiment.
pub struct Prepared {
    pub dataset: Dataset,
    pub graph: WeightedGraph,
    pub clusters: usize,
    pub graph_seconds: f64,
}

pub fn prepare(config: &PipelineConfig) -> Result<Prepared> {
    stage("graph", config.validate())?;
    let dataset = stage("graph", load_dataset(config))?;
    prepare_with(config, dataset)
}

pub fn prepare_with(config: &PipelineConfig, dataset: Dataset) -> Result<Prepared> {
    let clusters = if config.clusters > 0 {
        config.clusters
    } else {
        stage(
            "graph",
            dataset
                .num_classes()
                .ok_or_else(|| Error::param("clusters = 0 needs a labeled dataset")),
        )?
    };
    let start = Instant::now();
    let graph = stage(
        "graph",
        graph::build_knn_graph_with(&dataset, &config.knn_options()),
    )?;
    Ok(Prepared {
        dataset,
        graph,
        clusters,
        graph_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Prepared input from an already-built graph (no point cloud).
pub fn prepare_graph(
    graph: WeightedGraph,
    labels: Option<Vec<usize>>,
    clusters: usize,
) -> Result<Prepared> {
    // a placeholder one-dimensional dataset carries the labels
    let n = graph.n();
    let dataset = Dataset::new("graph", 1, (0..n).map(|i| i as f64).collect(), labels)?;
    Ok(Prepared {
        dataset,
        graph,
        clusters,
        graph_seconds: 0.0,
    })
}

/// Which pipeline stages run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Variant {
    /// Cluster a sparsifier instead of the original graph.
    pub sparsify: bool,
    /// Recover off-tree edges (otherwise the bare tree).
    pub recover: bool,
    pub scale: bool,
    pub filter: bool,
}

impl Variant {
    pub fn full(config: &PipelineConfig) -> Self {
        Self {
            sparsify: true,
            recover: true,
            scale: config.scaling,
            filter: config.filter,
        }
    }
}

/// Pipeline variants compared against the full method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Original,
    TreeOnly,
    NoScaling,
    NoFilter,
}

text_enum!(Ablation {
    Ablation::Original => "original",
    Ablation::TreeOnly => "tree-only",
    Ablation::NoScaling => "no-scaling",
    Ablation::NoFilter => "no-filter",
});

impl Ablation {
    pub fn variant(self, config: &PipelineConfig) -> Variant {
        let full = Variant::full(config);
        match self {
            Self::Original => Variant {
                sparsify: false,
                recover: false,
                scale: false,
                filter: false,
            },
            Self::TreeOnly => Variant {
                recover: false,
                ..full
            },
            Self::NoScaling => Variant {
                scale: false,
                ..full
            },
            Self::NoFilter => Variant {
                filter: false,
                ..full
            },
        }
    }
}

/// Writes artifacts and the stage MANIFEST into an output directory.
pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    /// Creates the directory and starts a fresh MANIFEST.
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("MANIFEST"), "")?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        dataio::artifact(&self.dir, name)
    }

    /// Appends a completed stage to the MANIFEST.
    pub fn mark(&self, stage: &str) -> Result<()> {
        let mut f = OpenOptions::new()
            .append(true)
            .open(self.dir.join("MANIFEST"))?;
        writeln!(f, "{stage}")?;
        Ok(())
    }

    pub fn graph(&self, name: &str, g: &WeightedGraph) -> Result<()> {
        dataio::save_graph(g, self.path(name))
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        dataio::write_json(value, self.path(name))
    }
}

#[derive(Serialize)]
struct StabilityFile<'a> {
    rounds: &'a [StabilityRound],
    seed: u64,
    stop: StopReason,
    budget: f64,
    params: &'a RecoveryParams,
}

#[derive(Serialize)]
struct ScalingFile<'a> {
    iterations: &'a [ScalingIteration],
    params: &'a SgdParams,
    seed: u64,
    initial_factor: f64,
    lambda1_input: f64,
    lambdan_input: f64,
    lambda1_initial: f64,
    lambdan_initial: f64,
    lambda1_final: f64,
    lambdan_final: f64,
    exit: scale::ScalingExit,
}

/// Everything one seeded run produced.
pub struct RunResult {
    pub seed: u64,
    pub variant: Variant,
    pub tree: Option<SpanningTree>,
    pub sparsifier: Option<Sparsifier>,
    pub scaling: Option<ScalingState>,
    /// The graph that was clustered.
    pub clustered: WeightedGraph,
    pub clustering: SpectralClustering,
    pub accuracy: Option<AccuracyReport>,
    pub timings: Timings,
}

impl RunResult {
    pub fn outcome(&self) -> Result<RunOutcome> {
        let acc = self
            .accuracy
            .as_ref()
            .ok_or_else(|| Error::param("accuracy needs ground-truth labels"))?;
        Ok(RunOutcome {
            acc: acc.acc,
            timings: self.timings,
        })
    }
}

/// Runs one seeded variant on prepared input, writing stage artifacts when
/// `artifacts` is given.
pub fn run_variant(
    prep: &Prepared,
    config: &PipelineConfig,
    variant: Variant,
    seed: u64,
    artifacts: Option<&Artifacts>,
) -> Result<RunResult> {
    let g = &prep.graph;
    let mut timings = Timings {
        graph: prep.graph_seconds,
        ..Timings::default()
    };

    let (tree, sparsifier, sparse) = if variant.sparsify {
        let start = Instant::now();
        let t = stage("sparsify", tree::build_spanning_tree(g, config.tree))?;
        let mut params = config.recovery_params(prep.clusters, seed);
        if !variant.recover {
            params.budget = 0.0;
        }
        let sp = stage("sparsify", sparsify::recover_off_tree_edges(g, &t, &params))?;
        timings.sparsify = start.elapsed().as_secs_f64();
        if let Some(a) = artifacts {
            stage("sparsify", write_sparsify(a, &t, &sp, seed))?;
        }
        let s = sp.subgraph.clone();
        (Some(t), Some(sp), Some(s))
    } else {
        if let Some(a) = artifacts {
            stage("sparsify", a.mark("sparsify"))?;
        }
        (None, None, None)
    };

    let (clustered, scaling) = match sparse {
        Some(s) if variant.scale => {
            let start = Instant::now();
            let (scaled, st) = stage("scale", scale::sgd_scale(g, &s, &config.sgd_params(seed)))?;
            timings.scale = start.elapsed().as_secs_f64();
            if let Some(a) = artifacts {
                stage(
                    "scale",
                    write_scaling(a, &scaled, &st, &config.sgd_params(seed)),
                )?;
            }
            (scaled, Some(st))
        }
        Some(s) => {
            if let Some(a) = artifacts {
                stage("scale", a.mark("scale"))?;
            }
            (s, None)
        }
        None => {
            if let Some(a) = artifacts {
                stage("scale", a.mark("scale"))?;
            }
            (g.clone(), None)
        }
    };

    let opts = config.spectral_options(variant.filter && variant.sparsify, seed);
    let original = variant.sparsify.then_some(g);
    let clustering = stage(
        "eigensolve",
        cluster::spectral_cluster(&clustered, prep.clusters, original, &opts),
    )?;
    timings.eigensolve = clustering.timings.eigensolve_seconds;
    timings.filter = clustering.timings.filter_seconds;
    timings.kmeans = clustering.timings.kmeans_seconds;
    if let Some(a) = artifacts {
        stage("eigensolve", a.mark("eigensolve"))?;
        let mut emb = clustering.embedding.clone();
        emb.source = if variant.sparsify {
            "scaled.graph"
        } else {
            "original.graph"
        }
        .into();
        stage(
            "filter",
            dataio::save_embedding(&emb, a.path("embedding.csv"), a.path("embedding.json")),
        )?;
        stage("filter", a.mark("filter"))?;
        stage(
            "kmeans",
            dataio::save_labels(&clustering.labels, a.path("labels.csv")),
        )?;
        stage("kmeans", a.mark("kmeans"))?;
    }

    let accuracy = match prep.dataset.labels() {
        Some(truth) => Some(stage(
            "report",
            eval::clustering_accuracy(&clustering.labels, truth),
        )?),
        None => None,
    };
    Ok(RunResult {
        seed,
        variant,
        tree,
        sparsifier,
        scaling,
        clustered,
        clustering,
        accuracy,
        timings,
    })
}

fn write_sparsify(a: &Artifacts, t: &SpanningTree, sp: &Sparsifier, seed: u64) -> Result<()> {
    a.graph("tree.graph", &t.to_graph())?;
    a.graph("sparsified.graph", &sp.subgraph)?;
    a.json(
        "stability.json",
        &StabilityFile {
            rounds: &sp.history,
            seed,
            stop: sp.stop,
            budget: sp.budget,
            params: &sp.params,
        },
    )?;
    let mut csv = String::from("round,budget,off_tree_edges,ratio_var\n");
    for r in &sp.history {
        if let Some(v) = r.ratio_var {
            writeln!(csv, "{},{},{},{}", r.round, r.budget, r.off_tree_edges, v).unwrap();
        }
    }
    fs::write(a.path("ratio_var_vs_budget.csv"), csv)?;
    a.mark("sparsify")
}

fn write_scaling(
    a: &Artifacts,
    scaled: &WeightedGraph,
    st: &ScalingState,
    params: &SgdParams,
) -> Result<()> {
    a.graph("scaled.graph", scaled)?;
    a.json(
        "scaling.json",
        &ScalingFile {
            iterations: &st.history,
            params,
            seed: params.seed,
            initial_factor: st.initial_factor,
            lambda1_input: st.lambda_1_input,
            lambdan_input: st.lambda_n_input,
            lambda1_initial: st.lambda_1_0,
            lambdan_initial: st.lambda_n_0,
            lambda1_final: st.lambda_1_k,
            lambdan_final: st.lambda_n_k,
            exit: st.exit,
        },
    )?;
    a.mark("scale")
}

/// ACC of the full method when the sparsifier is cut back to each budget.
pub fn acc_vs_budget(
    prep: &Prepared,
    config: &PipelineConfig,
    run: &RunResult,
) -> Result<Vec<(f64, f64)>> {
    let (Some(sp), Some(truth)) = (&run.sparsifier, prep.dataset.labels()) else {
        return Ok(Vec::new());
    };
    let g = &prep.graph;
    let n = g.n();
    let mut points = Vec::new();
    let mut grid: Vec<f64> = config
        .acc_budgets
        .iter()
        .copied()
        .filter(|&b| b < sp.budget)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    for b in grid {
        let extra = ((b * n as f64) + 1e-9).floor() as usize;
        let s = sp.snapshot(g, extra.min(sp.recovered.len()));
        let s = if run.variant.scale {
            scale::sgd_scale(g, &s, &config.sgd_params(run.seed))?.0
        } else {
            s
        };
        let opts = config.spectral_options(run.variant.filter, run.seed);
        let c = cluster::spectral_cluster(&s, prep.clusters, Some(g), &opts)?;
        let acc = eval::clustering_accuracy(&c.labels, truth)?;
        points.push((off_tree_budget(n, s.num_edges()), acc.acc));
    }
    if let Some(acc) = &run.accuracy {
        points.push((sp.budget, acc.acc));
    }
    Ok(points)
}

#[derive(Clone, Debug, Serialize)]
pub struct EdgeCounts {
    pub original: usize,
    pub tree: Option<usize>,
    pub sparsified: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub dataset: String,
    pub n: usize,
    pub d: usize,
    pub clusters: usize,
    pub seed: u64,
    pub runs: usize,
    pub edges: EdgeCounts,
    pub budget: Option<f64>,
    pub stop_reason: Option<StopReason>,
    pub recovery_rounds: Option<usize>,
    pub sgd_iterations: Option<usize>,
    pub lambda1_before_sgd: Option<f64>,
    pub lambda1_after_sgd: Option<f64>,
    pub lambdan_before_sgd: Option<f64>,
    pub lambdan_after_sgd: Option<f64>,
    /// Percent, two decimals.
    pub acc: Option<f64>,
    pub acc_mean: Option<f64>,
    pub acc_std: Option<f64>,
    pub timings: Timings,
    pub params: serde_json::Value,
}

/// Runs the full pipeline and writes every artifact into `config.output`.
pub fn cmd_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    let artifacts = stage("graph", Artifacts::create(&config.output))?;
    let prep = prepare(config)?;
    stage("graph", artifacts.graph("original.graph", &prep.graph))?;
    stage("graph", artifacts.mark("graph"))?;
    let variant = Variant::full(config);
    let run = run_variant(&prep, config, variant, config.seed, Some(&artifacts))?;

    let curve = stage("report", acc_vs_budget(&prep, config, &run))?;
    let mut csv = String::from("budget,acc\n");
    for (b, a) in &curve {
        writeln!(csv, "{b},{:.2}", 100.0 * a).unwrap();
    }
    stage(
        "report",
        fs::write(artifacts.path("acc_vs_budget.csv"), csv).map_err(Error::from),
    )?;

    let aggregate = if config.runs > 1 && prep.dataset.labels().is_some() {
        let mut first = Some(run.outcome()?);
        Some(stage(
            "report",
            eval::averaged_run(config.seed, config.runs, |s| {
                if s == config.seed {
                    if let Some(o) = first.take() {
                        return Ok(o);
                    }
                }
                run_variant(&prep, config, variant, s, None)?.outcome()
            }),
        )?)
    } else {
        None
    };
    let report = build_report(&prep, config, &run, aggregate.as_ref());
    stage("report", artifacts.json("metrics.json", &report))?;
    stage("report", artifacts.mark("report"))?;
    Ok(report)
}

fn build_report(
    prep: &Prepared,
    config: &PipelineConfig,
    run: &RunResult,
    aggregate: Option<&Aggregate>,
) -> PipelineReport {
    let sp = run.sparsifier.as_ref();
    let st = run.scaling.as_ref();
    PipelineReport {
        dataset: prep.dataset.name.clone(),
        n: prep.dataset.n(),
        d: prep.dataset.dim(),
        clusters: prep.clusters,
        seed: run.seed,
        runs: aggregate.map_or(1, |a| a.runs),
        edges: EdgeCounts {
            original: prep.graph.num_edges(),
            tree: run.tree.as_ref().map(|t| t.edge_indices().len()),
            sparsified: sp.map(|s| s.subgraph.num_edges()),
        },
        budget: sp.map(|s| s.budget),
        stop_reason: sp.map(|s| s.stop),
        recovery_rounds: sp.map(|s| s.history.len() - 1),
        sgd_iterations: st.map(|s| s.k),
        lambda1_before_sgd: st.map(|s| s.lambda_1_0),
        lambda1_after_sgd: st.map(|s| s.lambda_1_k),
        lambdan_before_sgd: st.map(|s| s.lambda_n_0),
        lambdan_after_sgd: st.map(|s| s.lambda_n_k),
        acc: run
            .accuracy
            .as_ref()
            .map(|a| eval::round_to(100.0 * a.acc, 2)),
        acc_mean: aggregate.map(|a| a.acc_mean),
        acc_std: aggregate.map(|a| a.acc_std),
        timings: aggregate.map_or(run.timings.rounded(), |a| a.timings),
        params: config.as_json(),
    }
}

/// Mean/std ACC of one variant over `config.runs` seeds.
pub fn averaged(prep: &Prepared, config: &PipelineConfig, variant: Variant) -> Result<Aggregate> {
    eval::averaged_run(config.seed, config.runs, |s| {
        run_variant(prep, config, variant, s, None)?.outcome()
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareReport {
    pub dataset: String,
    pub against: Ablation,
    pub runs: usize,
    pub full: Aggregate,
    pub ablation: Aggregate,
    pub params: serde_json::Value,
}

/// Runs the full pipeline and one ablation with shared seeds.
pub fn cmd_compare(config: &PipelineConfig, against: Ablation) -> Result<CompareReport> {
    let prep = prepare(config)?;
    compare_prepared(&prep, config, against)
}

pub fn compare_prepared(
    prep: &Prepared,
    config: &PipelineConfig,
    against: Ablation,
) -> Result<CompareReport> {
    let full = averaged(prep, config, Variant::full(config))?;
    let ablation = averaged(prep, config, against.variant(config))?;
    Ok(CompareReport {
        dataset: prep.dataset.name.clone(),
        against,
        runs: config.runs,
        full,
        ablation,
        params: config.as_json(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GraphMetrics {
    pub lambda1: f64,
    pub lambdan: f64,
    pub kappa: f64,
    pub approximate: bool,
    /// Present when the second graph is a spanning tree.
    pub total_stretch: Option<f64>,
    pub edge_counts: [usize; 2],
    pub budget_b: f64,
}

/// Quality of `b` as a sparsifier of `a`.
pub fn cmd_metrics(
    a: &WeightedGraph,
    b: &WeightedGraph,
    mode: MetricsMode,
    seed: u64,
) -> Result<GraphMetrics> {
    if a.n() != b.n() {
        return Err(Error::Dimension {
            expected: a.n(),
            got: b.n(),
        });
    }
    let m = sparsify::condition_metrics(a, b, mode, seed)?;
    let n = a.n();
    let total_stretch = if b.num_edges() + 1 == n && b.is_connected() {
        let all: Vec<usize> = (0..b.num_edges()).collect();
        let t = SpanningTree::from_edge_indices(b, &all)?;
        Some(tree::total_stretch(a, &t)?)
    } else {
        None
    };
    Ok(GraphMetrics {
        lambda1: m.lambda_1,
        lambdan: m.lambda_n,
        kappa: m.kappa,
        approximate: m.approximate,
        total_stretch,
        edge_counts: [a.num_edges(), b.num_edges()],
        budget_b: off_tree_budget(n, b.num_edges()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let c = PipelineConfig {
            dataset: "data/x.csv".into(),
            budget: 0.123456789012345,
            label_column: LabelColumn::Index(3),
            acc_budgets: vec![0.01, 0.1],
            seed: 42,
            ..PipelineConfig::default()
        };
        let back = PipelineConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(PipelineConfig::KEYS.len(), c.to_text().lines().count());
    }

    #[test]
    fn config_rejects_unknown_and_bad_values() {
        assert!(PipelineConfig::from_text("nope = 1").is_err());
        let err = PipelineConfig::from_text("# c\nbeta = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("beta"));
        assert!(matches!(
            PipelineConfig::from_text("\n\nknn_k = x"),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn default_parameters() {
        let c = PipelineConfig::default();
        assert_eq!((c.knn_k, c.t, c.n_max, c.n_filter), (10, 2, 100, 10));
        assert_eq!(
            (c.delta_bar_lambda_n, c.beta, c.eta_max, c.epsilon, c.gamma),
            (0.5, 0.5, 0.2, 0.01, 0.7)
        );
    }

    #[test]
    fn ablation_variants() {
        let c = PipelineConfig::default();
        assert!(!Ablation::Original.variant(&c).sparsify);
        assert!(!Ablation::NoScaling.variant(&c).scale);
        assert!(!Ablation::TreeOnly.variant(&c).recover);
        assert!(!Ablation::NoFilter.variant(&c).filter);
        assert_eq!(
            "no-scaling".parse::<Ablation>().unwrap(),
            Ablation::NoScaling
        );
    }
}
