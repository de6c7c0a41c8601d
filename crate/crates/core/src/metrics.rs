//! Cluster validity and per-cluster descriptive statistics.

use std::collections::BTreeMap;

use crate::cpf::{ClusterLabeling, OUTLIER};
use crate::ingest::{Element, SampleTable, ELEMENTS};
use crate::matrix::{squared_euclidean, FeatureMatrix};
use crate::stats::quantile_sorted;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("parameter error: {0}")]
    Parameter(String),
}

/// Calinski–Harabasz index `[B / (K - 1)] / [W / (n - K)]`.
///
/// Outliers are dropped unless `include_outliers`, in which case they count
/// as one extra cluster. Returns `+∞` when the within-cluster dispersion is
/// zero.
pub fn calinski_harabasz(
    features: &FeatureMatrix,
    labeling: &ClusterLabeling,
    include_outliers: bool,
) -> Result<f64, MetricsError> {
    if features.n() != labeling.n() {
        return Err(MetricsError::Parameter(format!(
            "{} feature rows but {} labels",
            features.n(),
            labeling.n()
        )));
    }
    let d = features.d();
    let mut groups: BTreeMap<i32, (usize, Vec<f64>)> = BTreeMap::new();
    let mut total = vec![0.0; d];
    let mut n_eff = 0usize;
    for (i, &l) in labeling.labels.iter().enumerate() {
        if l == OUTLIER && !include_outliers {
            continue;
        }
        let e = groups.entry(l).or_insert_with(|| (0, vec![0.0; d]));
        e.0 += 1;
        for (s, x) in e.1.iter_mut().zip(features.row(i)) {
            *s += x;
        }
        for (s, x) in total.iter_mut().zip(features.row(i)) {
            *s += x;
        }
        n_eff += 1;
    }
    let k = groups.len();
    if k < 2 {
        return Err(MetricsError::Parameter(format!(
            "need at least 2 clusters, got {k}"
        )));
    }
    if n_eff <= k {
        return Err(MetricsError::Parameter(format!(
            "need more samples ({n_eff}) than clusters ({k})"
        )));
    }
    let mu: Vec<f64> = total.iter().map(|s| s / n_eff as f64).collect();
    let centroids: BTreeMap<i32, Vec<f64>> = groups
        .iter()
        .map(|(&l, (c, s))| (l, s.iter().map(|v| v / *c as f64).collect()))
        .collect();
    let between: f64 = groups
        .iter()
        .map(|(l, (c, _))| *c as f64 * squared_euclidean(&centroids[l], &mu))
        .sum();
    let within: f64 = labeling
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| include_outliers || l != OUTLIER)
        .map(|(i, l)| squared_euclidean(features.row(i), &centroids[l]))
        .sum();
    if within == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((between / (k - 1) as f64) / (within / (n_eff - k) as f64))
}

/// Box-plot statistics for one element within one cluster, in mg/kg.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub iqr: f64,
    /// Most extreme values inside the `1.5 · IQR` fences.
    pub whisker_low: f64,
    pub whisker_high: f64,
    /// Values outside the fences, ascending.
    pub beyond: Vec<f64>,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&v, 0.25)?;
        let median = quantile_sorted(&v, 0.5)?;
        let q3 = quantile_sorted(&v, 0.75)?;
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside = || {
            v.iter()
                .copied()
                .filter(|&x| x >= lo_fence && x <= hi_fence)
        };
        let whisker_low = inside().next().unwrap_or(median);
        let whisker_high = inside().next_back().unwrap_or(median);
        let beyond = v
            .iter()
            .copied()
            .filter(|&x| x < lo_fence || x > hi_fence)
            .collect();
        Some(Self {
            count: v.len(),
            min: v[0],
            q1,
            median,
            q3,
            max: v[v.len() - 1],
            iqr,
            whisker_low,
            whisker_high,
            beyond,
        })
    }
}

/// Per-cluster, per-element box statistics. Cluster `-1` is the outlier set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub sizes: BTreeMap<i32, usize>,
    pub stats: BTreeMap<(i32, Element), BoxStats>,
    /// Same statistics on `log10(value)`, when requested.
    pub log10_stats: Option<BTreeMap<(i32, Element), BoxStats>>,
    pub warnings: Vec<String>,
}

impl ClusterSummary {
    pub fn clusters(&self) -> impl Iterator<Item = i32> + '_ {
        self.sizes.keys().copied()
    }
}

pub fn cluster_summary(
    table: &SampleTable,
    labeling: &ClusterLabeling,
    log10_export: bool,
) -> Result<ClusterSummary, MetricsError> {
    if table.len() != labeling.n() {
        return Err(MetricsError::Parameter(format!(
            "{} records but {} labels",
            table.len(),
            labeling.n()
        )));
    }
    let mut warnings = Vec::new();
    let mut members: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labeling.labels.iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    for id in 0..labeling.n_clusters() as i32 {
        if !members.contains_key(&id) {
            warnings.push(format!("cluster {id} has no members; excluded"));
        }
    }
    // floor for log10 of non-positive values: smallest positive value per element
    let floors: BTreeMap<Element, f64> = ELEMENTS
        .iter()
        .map(|&e| {
            let m = table
                .records()
                .iter()
                .filter_map(|r| r.concentrations.get(&e).copied())
                .filter(|&v| v > 0.0)
                .fold(f64::INFINITY, f64::min);
            (e, if m.is_finite() { m } else { 1.0 })
        })
        .collect();

    let mut sizes = BTreeMap::new();
    let mut stats = BTreeMap::new();
    let mut log_stats = BTreeMap::new();
    for (&cluster, idx) in &members {
        sizes.insert(cluster, idx.len());
        for e in ELEMENTS {
            let vals: Vec<f64> = idx
                .iter()
                .filter_map(|&i| table.records()[i].concentrations.get(&e).copied())
                .collect();
            if let Some(s) = BoxStats::from_values(&vals) {
                stats.insert((cluster, e), s);
            }
            if log10_export {
                let logs: Vec<f64> = vals
                    .iter()
                    .map(|&v| if v > 0.0 { v } else { floors[&e] }.log10())
                    .collect();
                if let Some(s) = BoxStats::from_values(&logs) {
                    log_stats.insert((cluster, e), s);
                }
            }
        }
    }
    Ok(ClusterSummary {
        sizes,
        stats,
        log10_stats: log10_export.then_some(log_stats),
        warnings,
    })
}
