//! Tolerance matching, precision-recall curves, AUC and latency measurement.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::ImageVector;
use crate::scalar::Scalar;
use crate::voting::Ensemble;

/// Query-to-reference mapping plus the inclusive frame tolerance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    /// `None` is the identity mapping of aligned traversals.
    mapping: Option<Vec<usize>>,
    tolerance: usize,
}

impl GroundTruth {
    pub fn identity(tolerance: usize) -> Self {
        Self {
            mapping: None,
            tolerance,
        }
    }

    pub fn with_mapping(mapping: Vec<usize>, tolerance: usize) -> Self {
        Self {
            mapping: Some(mapping),
            tolerance,
        }
    }

    /// Parses `query,reference` rows. A non-numeric first line is taken as a
    /// header; lines starting with `#` are skipped. Every query index in
    /// `0..n` must appear exactly once.
    pub fn from_csv(path: &Path, tolerance: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let parsed = match (cols.next(), cols.next()) {
                (Some(q), Some(r)) => q.parse::<usize>().ok().zip(r.parse::<usize>().ok()),
                _ => None,
            };
            match parsed {
                Some(pair) => pairs.push(pair),
                None if pairs.is_empty() && lineno == 0 => {}
                None => {
                    return Err(Error::invalid(format!(
                        "{}:{}: expected `query,reference`",
                        path.display(),
                        lineno + 1
                    )))
                }
            }
        }
        let mut mapping = vec![None; pairs.len()];
        for &(q, r) in &pairs {
            match mapping.get_mut(q) {
                Some(slot @ None) => *slot = Some(r),
                _ => {
                    return Err(Error::invalid(format!(
                        "{}: query {q} duplicated or out of range",
                        path.display()
                    )))
                }
            }
        }
        let mapping = mapping.into_iter().map(|r| r.expect("each slot filled once")).collect();
        Ok(Self::with_mapping(mapping, tolerance))
    }

    pub fn tolerance(&self) -> usize {
        self.tolerance
    }

    pub fn truth(&self, query: usize) -> Option<usize> {
        match &self.mapping {
            None => Some(query),
            Some(m) => m.get(query).copied(),
        }
    }

    /// Number of queries the mapping covers, `None` for identity.
    pub fn mapped_queries(&self) -> Option<usize> {
        self.mapping.as_ref().map(Vec::len)
    }
}

pub fn match_correct(predicted: usize, truth: usize, tolerance: usize) -> bool {
    predicted.abs_diff(truth) <= tolerance
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub query: usize,
    pub predicted: usize,
    pub truth: usize,
    pub confidence: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PRCurve {
    /// `(recall, precision)`, recall non-decreasing.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Sweeps the acceptance threshold down through every distinct confidence.
///
/// AUC is the trapezoid area over the points, starting from recall 0 at the
/// first point's precision.
pub fn pr_curve(results: &[MatchResult]) -> Result<PRCurve> {
    if results.is_empty() {
        return Err(Error::Empty("match results"));
    }
    if let Some(r) = results.iter().find(|r| !r.confidence.is_finite()) {
        return Err(Error::invalid(format!(
            "query {} has non-finite confidence",
            r.query
        )));
    }
    let mut order: Vec<&MatchResult> = results.iter().collect();
    order.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .expect("finite")
            .then(a.query.cmp(&b.query))
    });

    let total = results.len();
    let mut counts = Vec::new(); // (correct_retrieved, retrieved)
    let mut correct = 0usize;
    for (i, r) in order.iter().enumerate() {
        correct += r.correct as usize;
        let last_of_group = order.get(i + 1).is_none_or(|n| n.confidence != r.confidence);
        if last_of_group {
            counts.push((correct, i + 1));
        }
    }

    let precision = |(c, n): (usize, usize)| c as f64 / n as f64;
    let points = counts
        .iter()
        .map(|&cn| (cn.0 as f64 / total as f64, precision(cn)))
        .collect();

    // Twice the area, in units of 1/total recall, so a perfect curve sums exactly.
    let mut twice_area = 0.0;
    let mut prev = (0usize, precision(counts[0]));
    for &cn in &counts {
        let p = precision(cn);
        twice_area += (cn.0 - prev.0) as f64 * (p + prev.1);
        prev = (cn.0, p);
    }
    let auc = (twice_area / (2 * total) as f64).clamp(0.0, 1.0);
    Ok(PRCurve { points, auc })
}

/// Votes every query (in parallel), then builds the PR curve. Results are
/// ordered by query index.
pub fn evaluate<T: Scalar>(
    ensemble: &Ensemble<T>,
    queries: &[ImageVector<T>],
    gt: &GroundTruth,
) -> Result<(PRCurve, Vec<MatchResult>)> {
    if queries.is_empty() {
        return Err(Error::Empty("queries"));
    }
    let results = queries
        .par_iter()
        .enumerate()
        .map(|(query, img)| {
            let truth = gt.truth(query).ok_or_else(|| {
                Error::invalid(format!("ground truth has no entry for query {query}"))
            })?;
            let (predicted, fused) = ensemble.vote(img)?;
            let confidence = fused[predicted].to_f64().expect("finite score");
            Ok(MatchResult {
                query,
                predicted,
                truth,
                confidence,
                correct: match_correct(predicted, truth, gt.tolerance()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((pr_curve(&results)?, results))
}

/// Fraction of results marked correct.
pub fn correct_rate(results: &[MatchResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| r.correct).count() as f64 / results.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub iterations: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub fps: f64,
}

pub const MIN_BENCH_ITERATIONS: usize = 10;
const WARMUP_CALLS: usize = 3;

/// Wall-clock statistics of repeated single-threaded `vote` calls.
pub fn benchmark<T: Scalar>(
    ensemble: &Ensemble<T>,
    img: &ImageVector<T>,
    iterations: usize,
) -> Result<LatencyStats> {
    if iterations < MIN_BENCH_ITERATIONS {
        return Err(Error::invalid(format!(
            "benchmark needs at least {MIN_BENCH_ITERATIONS} iterations, got {iterations}"
        )));
    }
    for _ in 0..WARMUP_CALLS {
        std::hint::black_box(ensemble.vote(img)?);
    }
    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let start = Instant::now();
        std::hint::black_box(ensemble.vote(std::hint::black_box(img))?);
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = samples.iter().sum::<f64>() / iterations as f64;
    samples.sort_by(|a, b| a.total_cmp(b));
    // Nearest-rank percentile.
    let rank = ((0.95 * iterations as f64).ceil() as usize).clamp(1, iterations);
    let p95_ms = samples[rank - 1];
    Ok(LatencyStats {
        iterations,
        mean_ms,
        p95_ms,
        fps: 1000.0 / mean_ms,
    })
}

fn comment_lines(out: &mut String, comment: Option<&str>) {
    if let Some(c) = comment {
        for line in c.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
}

/// `recall,precision` rows with six decimals, optionally preceded by `#` comment lines.
pub fn pr_csv(curve: &PRCurve, comment: Option<&str>) -> String {
    let mut out = String::new();
    comment_lines(&mut out, comment);
    out.push_str("recall,precision\n");
    for (r, p) in &curve.points {
        let _ = writeln!(out, "{r:.6},{p:.6}");
    }
    out
}

/// `query,predicted,truth,confidence,correct` rows.
pub fn match_log_csv(results: &[MatchResult], comment: Option<&str>) -> String {
    let mut out = String::new();
    comment_lines(&mut out, comment);
    out.push_str("query,predicted,truth,confidence,correct\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{}",
            r.query, r.predicted, r.truth, r.confidence, r.correct as u8
        );
    }
    out
}
