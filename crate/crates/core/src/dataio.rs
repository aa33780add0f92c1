//! Dataset loaders and on-disk formats for graphs, embeddings and labels.
//!
//! Graph files are plain text: a `<n> <m>` header followed by `m` lines of
//! `<u> <v> <w>` with 0-based ids and `u < v`. Lines starting with `#` are
//! comments. Weights are written in shortest round-trip decimal form so a
//! save/load cycle reproduces every weight bit for bit.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::eig::SpectralEmbedding;
use crate::error::{Error, Result};
use crate::graph::WeightedGraph;

/// Labeled point cloud, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    n: usize,
    d: usize,
    points: Vec<f64>,
    labels: Option<Vec<usize>>,
    label_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        d: usize,
        points: Vec<f64>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("dataset needs at least one feature column"));
        }
        if !points.len().is_multiple_of(d) {
            return Err(Error::Dimension {
                expected: d * (points.len() / d + 1),
                got: points.len(),
            });
        }
        let n = points.len() / d;
        if n < 2 {
            return Err(Error::EmptyDataset { n });
        }
        if let Some(i) = points.iter().position(|x| !x.is_finite()) {
            return Err(Error::param(format!("non-finite feature in row {}", i / d)));
        }
        let mut label_names = Vec::new();
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: l.len(),
                });
            }
            let c = l.iter().max().map_or(0, |&m| m + 1);
            if c < 2 {
                return Err(Error::param("labeled dataset needs at least two classes"));
            }
            label_names = (0..c).map(|i| i.to_string()).collect();
        }
        Ok(Self {
            name: name.into(),
            n,
            d,
            points,
            labels,
            label_names,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Raw label string for each contiguous class id.
    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|_| self.label_names.len())
    }

    /// Keeps the first `n` rows.
    pub fn truncate(&self, n: usize) -> Result<Self> {
        let n = n.min(self.n);
        let labels = self.labels.as_ref().map(|l| l[..n].to_vec());
        let mut out = Self::new(
            self.name.clone(),
            self.d,
            self.points[..n * self.d].to_vec(),
            labels,
        )?;
        if out.labels.is_some() && out.label_names.len() == self.label_names.len() {
            out.label_names = self.label_names.clone();
        }
        Ok(out)
    }

    /// Per-feature zero mean / unit variance. Constant columns are only centered.
    pub fn standardize(&mut self) {
        let (n, d) = (self.n, self.d);
        for j in 0..d {
            let mean = (0..n).map(|i| self.points[i * d + j]).sum::<f64>() / n as f64;
            let var = (0..n)
                .map(|i| (self.points[i * d + j] - mean).powi(2))
                .sum::<f64>()
                / n as f64;
            let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
            for i in 0..n {
                let x = &mut self.points[i * d + j];
                *x = (*x - mean) * scale;
            }
        }
    }
}

/// Maps raw label strings to contiguous ids. Labels that all parse as numbers
/// are ordered numerically, anything else lexicographically.
fn intern_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let numeric: Option<Vec<f64>> = raw.iter().map(|s| s.parse::<f64>().ok()).collect();
    let mut distinct: Vec<&String> = raw.iter().collect::<HashSet<_>>().into_iter().collect();
    match numeric {
        Some(_) => distinct.sort_by(|a, b| {
            let (x, y) = (a.parse::<f64>().unwrap(), b.parse::<f64>().unwrap());
            x.total_cmp(&y).then_with(|| a.cmp(b))
        }),
        None => distinct.sort(),
    }
    let ids: BTreeMap<&String, usize> = distinct.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let labels = raw.iter().map(|s| ids[s]).collect();
    (labels, distinct.into_iter().cloned().collect())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn finish_dataset(
    path: &Path,
    d: usize,
    points: Vec<f64>,
    raw_labels: Option<Vec<String>>,
) -> Result<Dataset> {
    let n = points.len().checked_div(d).unwrap_or(0);
    if n < 2 {
        return Err(Error::EmptyDataset { n });
    }
    let (labels, names) = match raw_labels {
        Some(raw) => {
            let (l, names) = intern_labels(&raw);
            (Some(l), names)
        }
        None => (None, Vec::new()),
    };
    let mut ds = Dataset::new(dataset_name(path), d, points, labels)?;
    if ds.labels.is_some() {
        ds.label_names = names;
    }
    Ok(ds)
}

/// `label_column` value selecting the last column of each row.
pub const LAST_COLUMN: usize = usize::MAX;

#[derive(Clone, Debug, Default)]
pub struct CsvOptions {
    pub label_column: Option<usize>,
    pub has_header: bool,
}

/// Dense numeric CSV, optionally with one (possibly non-numeric) label column.
pub fn load_dense_csv(path: impl AsRef<Path>, label_column: Option<usize>) -> Result<Dataset> {
    load_dense_csv_with(
        path,
        &CsvOptions {
            label_column,
            has_header: false,
        },
    )
}

pub fn load_dense_csv_with(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = BufReader::new(open(path)?);
    let mut arity = None;
    let mut points = Vec::new();
    let mut label_column = opts.label_column;
    let mut raw_labels = label_column.map(|_| Vec::new());
    let mut row = 0usize;
    let mut skipped_header = !opts.has_header;
    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if !skipped_header {
            skipped_header = true;
            continue;
        }
        row += 1;
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        match arity {
            None => {
                if label_column == Some(LAST_COLUMN) {
                    label_column = Some(fields.len() - 1);
                }
                if let Some(c) = label_column {
                    if c >= fields.len() {
                        return Err(parse_err(
                            path,
                            row,
                            format!("label column {c} out of range for {} fields", fields.len()),
                        ));
                    }
                }
                arity = Some(fields.len());
            }
            Some(a) if a != fields.len() => {
                return Err(parse_err(
                    path,
                    row,
                    format!("row has {} fields, expected {a}", fields.len()),
                ));
            }
            _ => {}
        }
        for (j, f) in fields.iter().enumerate() {
            if Some(j) == label_column {
                if let Some(l) = raw_labels.as_mut() {
                    l.push(f.to_string());
                }
                continue;
            }
            let x: f64 = f
                .parse()
                .map_err(|_| parse_err(path, row, format!("field {j} is not a number: {f:?}")))?;
            if !x.is_finite() {
                return Err(parse_err(
                    path,
                    row,
                    format!("field {j} is not finite: {f}"),
                ));
            }
            points.push(x);
        }
    }
    let d = arity.unwrap_or(0) - usize::from(label_column.is_some() && arity.is_some());
    if d == 0 {
        return Err(Error::EmptyDataset { n: row });
    }
    finish_dataset(path, d, points, raw_labels)
}

/// Sparse LibSVM text (`<label> <index>:<value> ...`, 1-based increasing
/// indices), densified with absent entries set to zero.
pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = BufReader::new(open(path)?);
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut raw_labels = Vec::new();
    let mut d = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let label = tokens.next().unwrap_or_default();
        raw_labels.push(label.to_string());
        let mut entries = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| {
                parse_err(path, lineno, format!("expected index:value, got {tok:?}"))
            })?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad index {idx:?}")))?;
            if idx == 0 || idx <= last {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("indices must be 1-based and strictly increasing ({idx} after {last})"),
                ));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad value {val:?}")))?;
            if !val.is_finite() {
                return Err(parse_err(path, lineno, format!("non-finite value {val}")));
            }
            last = idx;
            entries.push((idx - 1, val));
        }
        d = d.max(last);
        rows.push(entries);
    }
    if rows.len() < 2 || d == 0 {
        return Err(Error::EmptyDataset { n: rows.len() });
    }
    let mut points = vec![0.0; rows.len() * d];
    for (i, r) in rows.iter().enumerate() {
        for &(j, x) in r {
            points[i * d + j] = x;
        }
    }
    finish_dataset(path, d, points, Some(raw_labels))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Open {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_graph<W: Write>(graph: &WeightedGraph, mut out: W) -> Result<()> {
    writeln!(out, "{} {}", graph.n(), graph.num_edges())?;
    for e in graph.edges() {
        writeln!(out, "{} {} {:?}", e.u, e.v, e.w)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_graph(graph: &WeightedGraph, path: impl AsRef<Path>) -> Result<()> {
    write_graph(graph, BufWriter::new(File::create(path)?))
}

pub fn read_graph<R: BufRead>(reader: R, source: &Path) -> Result<WeightedGraph> {
    let mut header: Option<(usize, usize)> = None;
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let Some((n, _)) = header else {
            let parsed = match fields.as_slice() {
                [n, m] => n.parse::<usize>().ok().zip(m.parse::<usize>().ok()),
                _ => None,
            };
            header = Some(parsed.ok_or_else(|| {
                parse_err(
                    source,
                    lineno,
                    format!("malformed header {trimmed:?}, expected \"<n> <m>\""),
                )
            })?);
            continue;
        };
        let [u, v, w] = fields.as_slice() else {
            return Err(parse_err(source, lineno, "expected \"<u> <v> <w>\""));
        };
        let u: usize = u
            .parse()
            .map_err(|_| parse_err(source, lineno, "bad vertex id"))?;
        let v: usize = v
            .parse()
            .map_err(|_| parse_err(source, lineno, "bad vertex id"))?;
        let w: f64 = w
            .parse()
            .map_err(|_| parse_err(source, lineno, "bad weight"))?;
        if u >= n || v >= n || u == v {
            return Err(parse_err(
                source,
                lineno,
                format!("invalid edge ({u},{v}) for n = {n}"),
            ));
        }
        if !(w.is_finite() && w > 0.0) {
            return Err(parse_err(
                source,
                lineno,
                format!("weight must be positive, got {w}"),
            ));
        }
        let key = (u.min(v), u.max(v));
        if !seen.insert(key) {
            return Err(parse_err(
                source,
                lineno,
                format!("duplicate edge ({},{})", key.0, key.1),
            ));
        }
        edges.push((u, v, w));
    }
    let (n, m) = header.ok_or_else(|| parse_err(source, 0, "missing header"))?;
    if edges.len() != m {
        return Err(parse_err(
            source,
            0,
            format!("header declares {m} edges, found {}", edges.len()),
        ));
    }
    WeightedGraph::new(n, edges)
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<WeightedGraph> {
    let path = path.as_ref();
    read_graph(BufReader::new(open(path)?), path)
}

#[derive(Serialize)]
struct EmbeddingSidecar<'a> {
    eigenvalues: &'a [f64],
    residuals: &'a [f64],
    normalized: bool,
    source: &'a str,
}

/// Embedding as CSV (one row per vertex, 15 significant digits) plus a JSON
/// sidecar with the eigenvalues and residuals.
pub fn save_embedding(
    emb: &SpectralEmbedding,
    csv_path: impl AsRef<Path>,
    json_path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(csv_path)?);
    let n = emb.n();
    for i in 0..n {
        let row: Vec<String> = emb
            .vectors
            .iter()
            .map(|col| format!("{:.14e}", col[i]))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    let sidecar = EmbeddingSidecar {
        eigenvalues: &emb.eigenvalues,
        residuals: &emb.residuals,
        normalized: emb.kind.is_normalized(),
        source: &emb.source,
    };
    write_json(&sidecar, json_path)
}

pub fn save_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "vertex,cluster")?;
    for (i, l) in labels.iter().enumerate() {
        writeln!(out, "{i},{l}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads labels written by [`save_labels`], or a bare one-label-per-line file.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let reader = BufReader::new(open(path)?);
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed == "vertex,cluster" {
            continue;
        }
        let field = trimmed.rsplit(',').next().unwrap_or(trimmed).trim();
        labels.push(
            field
                .parse()
                .map_err(|_| parse_err(path, lineno + 1, format!("bad label {field:?}")))?,
        );
    }
    Ok(labels)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Resolves a path relative to an output directory.
pub fn artifact(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
