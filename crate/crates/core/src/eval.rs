//! Clustering accuracy under the best cluster-to-class matching, and run aggregation.

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyReport {
    /// Fraction of points whose matched class equals the truth, in `[0, 1]`.
    pub acc: f64,
    pub matched: usize,
    pub n: usize,
    /// `mapping[cluster]` is the class matched to that cluster, if any.
    pub mapping: Vec<Option<usize>>,
    /// `confusion[class][cluster]` counts.
    pub confusion: Vec<Vec<usize>>,
}

/// ACC with the Hungarian matching between predicted clusters and true classes.
pub fn clustering_accuracy(predicted: &[usize], truth: &[usize]) -> Result<AccuracyReport> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    let n = truth.len();
    if n == 0 {
        return Err(Error::param("accuracy of an empty labeling"));
    }
    let classes = truth.iter().max().unwrap() + 1;
    let clusters = predicted.iter().max().unwrap() + 1;
    let mut confusion = vec![vec![0usize; clusters]; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let size = classes.max(clusters);
    // zero padding makes the matrix square; padded pairs score nothing
    let weights = Matrix::from_fn(size, size, |(c, l)| {
        if c < clusters && l < classes {
            confusion[l][c] as i64
        } else {
            0
        }
    });
    let (total, assignment) = kuhn_munkres(&weights);
    let mapping = (0..clusters)
        .map(|c| {
            let l = assignment[c];
            (l < classes && confusion[l][c] > 0).then_some(l)
        })
        .collect();
    let matched = total as usize;
    Ok(AccuracyReport {
        acc: matched as f64 / n as f64,
        matched,
        n,
        mapping,
        confusion,
    })
}

/// Wall-clock seconds per pipeline stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub graph: f64,
    pub sparsify: f64,
    pub scale: f64,
    pub eigensolve: f64,
    pub filter: f64,
    pub kmeans: f64,
}

impl Timings {
    fn add(&mut self, o: &Timings) {
        self.graph += o.graph;
        self.sparsify += o.sparsify;
        self.scale += o.scale;
        self.eigensolve += o.eigensolve;
        self.filter += o.filter;
        self.kmeans += o.kmeans;
    }

    fn scaled(mut self, f: f64) -> Self {
        for x in [
            &mut self.graph,
            &mut self.sparsify,
            &mut self.scale,
            &mut self.eigensolve,
            &mut self.filter,
            &mut self.kmeans,
        ] {
            *x *= f;
        }
        self
    }

    /// Copy rounded to milliseconds.
    pub fn rounded(self) -> Self {
        Self {
            graph: round_to(self.graph, 3),
            sparsify: round_to(self.sparsify, 3),
            scale: round_to(self.scale, 3),
            eigensolve: round_to(self.eigensolve, 3),
            filter: round_to(self.filter, 3),
            kmeans: round_to(self.kmeans, 3),
        }
    }
}

pub fn round_to(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (x * f).round() / f
}

/// One run's accuracy (fraction) and timings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOutcome {
    pub acc: f64,
    pub timings: Timings,
}

/// Mean and sample standard deviation of ACC over seeded runs, in percent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub runs: usize,
    pub master_seed: u64,
    pub acc_mean: f64,
    pub acc_std: f64,
    /// Per-run ACC in percent.
    pub accs: Vec<f64>,
    pub timings: Timings,
}

/// Runs `run(seed)` for seeds `master + 0 .. master + runs - 1` and aggregates.
pub fn averaged_run(
    master_seed: u64,
    runs: usize,
    mut run: impl FnMut(u64) -> Result<RunOutcome>,
) -> Result<Aggregate> {
    if runs == 0 {
        return Err(Error::param("averaged_run needs runs >= 1"));
    }
    let mut accs = Vec::with_capacity(runs);
    let mut timings = Timings::default();
    for i in 0..runs {
        let seed = master_seed.wrapping_add(i as u64);
        let out = run(seed).map_err(|e| Error::Run {
            seed,
            source: Box::new(e),
        })?;
        accs.push(100.0 * out.acc);
        timings.add(&out.timings);
    }
    let mean = accs.iter().sum::<f64>() / runs as f64;
    let std = if runs > 1 {
        (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (runs - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Aggregate {
        runs,
        master_seed,
        acc_mean: round_to(mean, 2),
        acc_std: round_to(std, 2),
        accs: accs.into_iter().map(|a| round_to(a, 2)).collect(),
        timings: timings.scaled(1.0 / runs as f64).rounded(),
    })
}

/// Report shape written for averaged experiments.
#[derive(Clone, Debug, Serialize)]
pub struct AggregateReport {
    pub dataset: String,
    pub method: String,
    pub params: serde_json::Value,
    pub runs: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub timings: Timings,
}

impl AggregateReport {
    pub fn new(dataset: &str, method: &str, params: serde_json::Value, agg: &Aggregate) -> Self {
        Self {
            dataset: dataset.to_string(),
            method: method.to_string(),
            params,
            runs: agg.runs,
            acc_mean: agg.acc_mean,
            acc_std: agg.acc_std,
            timings: agg.timings,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_shift() {
        let t = [0, 0, 1, 2, 2, 1];
        assert_eq!(clustering_accuracy(&t, &t).unwrap().acc, 1.0);
        let shifted: Vec<usize> = t.iter().map(|x| (x + 1) % 3).collect();
        assert_eq!(clustering_accuracy(&shifted, &t).unwrap().acc, 1.0);
    }

    #[test]
    fn half_matched() {
        let r = clustering_accuracy(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap();
        assert_eq!(r.acc, 0.5);
        assert_eq!(r.confusion, vec![vec![1, 1], vec![1, 1]]);
    }

    #[test]
    fn unequal_cluster_count() {
        let r = clustering_accuracy(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(r.acc, 0.5);
        let r = clustering_accuracy(&[0, 1, 2, 3], &[0, 0, 1, 1]).unwrap();
        assert_eq!(r.acc, 0.5);
        assert_eq!(r.mapping.iter().filter(|m| m.is_some()).count(), 2);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            clustering_accuracy(&[0], &[0, 1]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn single_run_has_zero_std() {
        let agg = averaged_run(5, 1, |_| {
            Ok(RunOutcome {
                acc: 0.8,
                timings: Timings::default(),
            })
        })
        .unwrap();
        assert_eq!(agg.acc_mean, 80.0);
        assert_eq!(agg.acc_std, 0.0);
    }

    #[test]
    fn failing_seed_is_named() {
        let err = averaged_run(10, 3, |s| {
            if s == 11 {
                Err(Error::Numerical("boom".into()))
            } else {
                Ok(RunOutcome {
                    acc: 1.0,
                    timings: Timings::default(),
                })
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::Run { seed: 11, .. }));
    }
}
