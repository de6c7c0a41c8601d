//! Component-wise peak finding over the geography ∩ chemistry neighbor graph.
//!
//! Phases, in order: k-NN density, big-brother linkage inside each connected
//! component, center selection, assignment along big-brother chains, and
//! merging of near, similarly dense centers. Components smaller than
//! `min_component_size` are outliers (label [`OUTLIER`]).
//!
//! Every tie (equal density, equidistant candidates, equal cluster sizes) is
//! resolved toward the lower sample index.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{
    self, connected_components, hadamard_intersect, mutual_knn_from_table, ComponentLabels,
    GraphError, KnnTable, Metric, SparseAdjacency, UnionFind,
};
use crate::matrix::{euclidean, squared_euclidean, FeatureMatrix};
use crate::stats::quantile_sorted;

pub const OUTLIER: i32 = -1;

#[derive(Debug, thiserror::Error)]
pub enum CpfError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("internal consistency error: {0}")]
    Internal(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Clustering hyperparameters. Defaults are the values tuned for the Irish
/// G5 topsoil survey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpfParams {
    /// k for both neighbor graphs and the density radius.
    pub min_samples: usize,
    /// Density quantile a center must reach within its component, in `[0, 1)`.
    pub rho: f64,
    /// Fraction of largest big-brother distances that mark a center, in `(0, 1)`.
    pub alpha: f64,
    /// Maximum center-to-center distance for merging, in the units of the
    /// feature space the clustering runs on (z-scores by default).
    pub merge_threshold: f64,
    /// Minimum density ratio (lower / higher) between merged centers, in `(0, 1]`.
    pub density_ratio_threshold: f64,
    /// Components smaller than this are outliers. `None` means `min_samples`.
    pub min_component_size: Option<usize>,
}

impl Default for CpfParams {
    fn default() -> Self {
        Self {
            min_samples: 75,
            rho: 0.01,
            alpha: 0.015,
            merge_threshold: 7.5,
            density_ratio_threshold: 0.7,
            min_component_size: None,
        }
    }
}

impl CpfParams {
    pub fn component_size_gate(&self) -> usize {
        self.min_component_size.unwrap_or(self.min_samples)
    }

    pub fn validate(&self) -> Result<(), CpfError> {
        let bad = |m: String| Err(CpfError::Parameter(m));
        if self.min_samples == 0 {
            return bad("min_samples must be positive".into());
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho = {} not in [0, 1)", self.rho));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} not in (0, 1)", self.alpha));
        }
        if self.merge_threshold.is_nan() || self.merge_threshold < 0.0 {
            return bad(format!(
                "merge_threshold = {} must be >= 0",
                self.merge_threshold
            ));
        }
        if !(self.density_ratio_threshold > 0.0 && self.density_ratio_threshold <= 1.0) {
            return bad(format!(
                "density_ratio_threshold = {} not in (0, 1]",
                self.density_ratio_threshold
            ));
        }
        if self.min_component_size == Some(0) {
            return bad("min_component_size must be positive".into());
        }
        Ok(())
    }
}

/// k-NN density estimate `k / (n V_d r_k^d)`, kept in log form.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub r_k: Vec<f64>,
    pub log_density: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Natural log of the volume of the unit ball in `d` dimensions.
pub fn log_unit_ball_volume(d: usize) -> f64 {
    // ln Γ(d/2 + 1) for integer and half-integer arguments
    let ln_gamma = if d.is_multiple_of(2) {
        (1..=d / 2).map(|j| (j as f64).ln()).sum::<f64>()
    } else {
        let m = d.div_ceil(2);
        0.5 * std::f64::consts::PI.ln() + (0..m).map(|j| (j as f64 + 0.5).ln()).sum::<f64>()
    };
    0.5 * d as f64 * std::f64::consts::PI.ln() - ln_gamma
}

/// Density from precomputed k-th neighbor radii.
pub fn density_from_radii(mut r_k: Vec<f64>, k: usize, d: usize) -> DensityEstimate {
    let n = r_k.len();
    let mut warnings = Vec::new();
    let zeros = r_k.iter().filter(|&&r| r == 0.0).count();
    if zeros > 0 {
        let min_pos = r_k
            .iter()
            .copied()
            .filter(|&r| r > 0.0)
            .fold(f64::INFINITY, f64::min);
        let sub = if min_pos.is_finite() {
            min_pos * 1e-3
        } else {
            1.0
        };
        warnings.push(format!(
            "{zeros} sample(s) have a zero k-NN radius (duplicate points); substituted r_k = {sub}"
        ));
        for r in r_k.iter_mut().filter(|r| **r == 0.0) {
            *r = sub;
        }
    }
    let base = (k as f64).ln() - (n as f64).ln() - log_unit_ball_volume(d);
    let log_density = r_k.iter().map(|&r| base - d as f64 * r.ln()).collect();
    DensityEstimate {
        r_k,
        log_density,
        warnings,
    }
}

/// k-NN density over all samples (not restricted to any graph).
pub fn knn_density(
    features: &FeatureMatrix,
    params: &CpfParams,
) -> Result<DensityEstimate, CpfError> {
    check_size(features.n(), params)?;
    let knn = graph::knn_table(features, params.min_samples, Metric::Euclidean)?;
    Ok(density_from_table(&knn, features.d()))
}

fn density_from_table(knn: &KnnTable, d: usize) -> DensityEstimate {
    let r_k = (0..knn.n()).map(|i| knn.radius(i)).collect();
    density_from_radii(r_k, knn.k(), d)
}

fn check_size(n: usize, params: &CpfParams) -> Result<(), CpfError> {
    if n <= params.min_samples {
        return Err(CpfError::Parameter(format!(
            "min_samples = {} must be smaller than the number of samples n = {n}",
            params.min_samples
        )));
    }
    Ok(())
}

/// Nearest same-component sample of higher density, and the distance to it.
#[derive(Debug, Clone, PartialEq)]
pub struct BigBrother {
    pub parent: Vec<Option<usize>>,
    /// `+∞` where `parent` is `None`.
    pub omega: Vec<f64>,
}

/// `j` outranks `i` when it is denser, or equally dense with a lower index.
fn density_order(log_density: &[f64], members: &mut [usize]) {
    members.sort_by(|&a, &b| log_density[b].total_cmp(&log_density[a]).then(a.cmp(&b)));
}

pub fn big_brother(
    features: &FeatureMatrix,
    density: &DensityEstimate,
    components: &ComponentLabels,
) -> BigBrother {
    let n = features.n();
    let ld = &density.log_density;
    let mut ranked = components.members();
    for m in &mut ranked {
        density_order(ld, m);
    }
    let tasks: Vec<(usize, usize)> = ranked
        .iter()
        .enumerate()
        .flat_map(|(c, m)| (0..m.len()).map(move |r| (c, r)))
        .collect();
    let links: Vec<(usize, Option<usize>, f64)> = tasks
        .par_iter()
        .map(|&(c, r)| {
            let members = &ranked[c];
            let i = members[r];
            let xi = features.row(i);
            let mut best: Option<(f64, usize)> = None;
            for &j in &members[..r] {
                let d2 = squared_euclidean(xi, features.row(j));
                let better = match best {
                    None => true,
                    Some((bd, bj)) => d2 < bd || (d2 == bd && j < bj),
                };
                if better {
                    best = Some((d2, j));
                }
            }
            match best {
                Some((d2, j)) => (i, Some(j), d2.sqrt()),
                None => (i, None, f64::INFINITY),
            }
        })
        .collect();
    let mut parent = vec![None; n];
    let mut omega = vec![f64::INFINITY; n];
    for (i, p, w) in links {
        parent[i] = p;
        omega[i] = w;
    }
    BigBrother { parent, omega }
}

/// Center rule, per component of at least `min_component_size` members:
/// `omega` above the component's `(1 - alpha)`-quantile of finite omegas (or
/// infinite), and log-density at or above its `rho`-quantile.
pub fn select_centers(
    density: &DensityEstimate,
    bb: &BigBrother,
    components: &ComponentLabels,
    params: &CpfParams,
) -> BTreeSet<usize> {
    let gate = params.component_size_gate();
    let mut centers = BTreeSet::new();
    for members in components.members() {
        if members.len() < gate {
            continue;
        }
        let mut finite: Vec<f64> = members
            .iter()
            .map(|&i| bb.omega[i])
            .filter(|w| w.is_finite())
            .collect();
        finite.sort_by(f64::total_cmp);
        let omega_cut = quantile_sorted(&finite, 1.0 - params.alpha).unwrap_or(f64::INFINITY);
        let mut dens: Vec<f64> = members.iter().map(|&i| density.log_density[i]).collect();
        dens.sort_by(f64::total_cmp);
        let dens_cut = quantile_sorted(&dens, params.rho).expect("non-empty component");
        for &i in &members {
            let w = bb.omega[i];
            if (w.is_infinite() || w > omega_cut) && density.log_density[i] >= dens_cut {
                centers.insert(i);
            }
        }
    }
    centers
}

/// Per-sample cluster labels; [`OUTLIER`] for outliers. Cluster ids are
/// contiguous from 0 in order of descending size (ties: smallest member first).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    pub labels: Vec<i32>,
}

impl ClusterLabeling {
    /// Canonicalizes arbitrary labels: negatives become [`OUTLIER`], the
    /// rest are renumbered by descending size.
    pub fn from_raw(raw: &[i64]) -> Self {
        use std::collections::HashMap;
        let mut groups: HashMap<i64, (usize, usize)> = HashMap::new();
        for (i, &l) in raw.iter().enumerate() {
            if l >= 0 {
                let e = groups.entry(l).or_insert((0, i));
                e.0 += 1;
            }
        }
        let mut order: Vec<(i64, usize, usize)> = groups
            .into_iter()
            .map(|(l, (size, first))| (l, size, first))
            .collect();
        order.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let remap: HashMap<i64, i32> = order
            .iter()
            .enumerate()
            .map(|(new, &(old, _, _))| (old, new as i32))
            .collect();
        Self {
            labels: raw
                .iter()
                .map(|l| if *l >= 0 { remap[l] } else { OUTLIER })
                .collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.labels
            .iter()
            .copied()
            .max()
            .map_or(0, |m| (m + 1).max(0) as usize)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_clusters()];
        for &l in &self.labels {
            if l >= 0 {
                s[l as usize] += 1;
            }
        }
        s
    }

    pub fn outlier_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == OUTLIER).count()
    }

    pub fn outlier_indices(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.labels[i] == OUTLIER)
            .collect()
    }
}

/// Labels every member of a qualifying component by the center its
/// big-brother chain reaches first.
pub fn assign_clusters(
    bb: &BigBrother,
    centers: &BTreeSet<usize>,
    components: &ComponentLabels,
    min_component_size: usize,
) -> Result<ClusterLabeling, CpfError> {
    let n = components.n();
    let mut raw = vec![i64::MIN; n];
    for (k, &c) in centers.iter().enumerate() {
        raw[c] = k as i64;
    }
    let mut chain = Vec::new();
    for i in 0..n {
        if components.sizes[components.labels[i]] < min_component_size {
            raw[i] = -1;
            continue;
        }
        let mut cur = i;
        chain.clear();
        while raw[cur] == i64::MIN {
            chain.push(cur);
            if chain.len() > n {
                return Err(CpfError::Internal(format!(
                    "cycle in big-brother chain from {i}"
                )));
            }
            cur = match bb.parent[cur] {
                Some(p) if components.labels[p] == components.labels[cur] => p,
                Some(p) => {
                    return Err(CpfError::Internal(format!(
                        "big brother {p} of {cur} lies in another component"
                    )))
                }
                None => {
                    return Err(CpfError::Internal(format!(
                        "chain from {i} ends at {cur} without reaching a center"
                    )))
                }
            };
        }
        let label = raw[cur];
        if label < 0 {
            return Err(CpfError::Internal(format!(
                "chain from {i} reached an outlier at {cur}"
            )));
        }
        for &v in &chain {
            raw[v] = label;
        }
    }
    Ok(ClusterLabeling::from_raw(&raw))
}

/// Joins clusters whose centers are within `merge_threshold` of each other
/// and whose center densities have ratio at least `density_ratio_threshold`.
/// Merging is closed transitively.
pub fn merge_clusters(
    labeling: &ClusterLabeling,
    centers: &BTreeSet<usize>,
    density: &DensityEstimate,
    features: &FeatureMatrix,
    params: &CpfParams,
) -> ClusterLabeling {
    let k = labeling.n_clusters();
    let mut uf = UnionFind::new(k);
    let cs: Vec<usize> = centers
        .iter()
        .copied()
        .filter(|&c| labeling.labels[c] >= 0)
        .collect();
    let ld = &density.log_density;
    for (a, &ca) in cs.iter().enumerate() {
        for &cb in &cs[a + 1..] {
            let (la, lb) = (labeling.labels[ca] as usize, labeling.labels[cb] as usize);
            if la == lb {
                continue;
            }
            // min(e^a, e^b) / max(e^a, e^b) without leaving log space
            let ratio = (-(ld[ca] - ld[cb]).abs()).exp();
            if ratio >= params.density_ratio_threshold
                && euclidean(features.row(ca), features.row(cb)) <= params.merge_threshold
            {
                uf.union(la, lb);
            }
        }
    }
    let raw: Vec<i64> = labeling
        .labels
        .iter()
        .map(|&l| {
            if l >= 0 {
                uf.find(l as usize) as i64
            } else {
                -1
            }
        })
        .collect();
    ClusterLabeling::from_raw(&raw)
}

/// Everything `fit` computes, for inspection and export.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub labeling: ClusterLabeling,
    pub density: DensityEstimate,
    pub big_brother: BigBrother,
    pub components: ComponentLabels,
    /// Intersection of the feature and geographic mutual k-NN graphs.
    pub graph: SparseAdjacency,
    /// Centers before merging.
    pub centers: BTreeSet<usize>,
}

/// Full clustering chain on `features` constrained by the geographic graph.
pub fn fit(
    features: &FeatureMatrix,
    geo_adj: &SparseAdjacency,
    params: &CpfParams,
) -> Result<FitResult, CpfError> {
    params.validate()?;
    let n = features.n();
    check_size(n, params)?;
    if geo_adj.n() != n {
        return Err(CpfError::Parameter(format!(
            "geographic graph has {} vertices but there are {n} samples",
            geo_adj.n()
        )));
    }
    let knn = graph::knn_table(features, params.min_samples, Metric::Euclidean)?;
    let feature_graph = mutual_knn_from_table(&knn);
    let graph = hadamard_intersect(&feature_graph, geo_adj)?;
    let components = connected_components(&graph);
    let density = density_from_table(&knn, features.d());
    let bb = big_brother(features, &density, &components);
    let centers = select_centers(&density, &bb, &components, params);
    let assigned = assign_clusters(&bb, &centers, &components, params.component_size_gate())?;
    let labeling = merge_clusters(&assigned, &centers, &density, features, params);
    Ok(FitResult {
        labeling,
        density,
        big_brother: bb,
        components,
        graph,
        centers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SparseAdjacency;

    fn line(xs: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(xs.len(), 1, xs.to_vec()).unwrap()
    }

    fn one_component(n: usize) -> ComponentLabels {
        ComponentLabels {
            labels: vec![0; n],
            sizes: vec![n],
        }
    }

    fn dens(ld: &[f64]) -> DensityEstimate {
        DensityEstimate {
            r_k: vec![1.0; ld.len()],
            log_density: ld.to_vec(),
            warnings: vec![],
        }
    }

    #[test]
    fn unit_ball_volumes() {
        assert!((log_unit_ball_volume(1) - 2f64.ln()).abs() < 1e-14);
        assert!((log_unit_ball_volume(2) - std::f64::consts::PI.ln()).abs() < 1e-14);
        let v3 = 4.0 / 3.0 * std::f64::consts::PI;
        assert!((log_unit_ball_volume(3) - v3.ln()).abs() < 1e-14);
        // V_15 = 2 (2π)^7 / 15!!
        let dfact: f64 = (1..=15).step_by(2).map(|x| x as f64).product();
        let v15 = 2.0 * (2.0 * std::f64::consts::PI).powi(7) / dfact;
        assert!((log_unit_ball_volume(15) - v15.ln()).abs() < 1e-12);
    }

    #[test]
    fn density_is_reverse_of_radius() {
        let d = density_from_radii(vec![0.5, 2.0, 1.0], 3, 15);
        assert!(d.log_density[0] > d.log_density[2]);
        assert!(d.log_density[2] > d.log_density[1]);
        assert!(d.warnings.is_empty());
    }

    #[test]
    fn grid_center_denser_than_corner() {
        let pts: Vec<[f64; 2]> = (0..3)
            .flat_map(|i| (0..3).map(move |j| [i as f64, j as f64]))
            .collect();
        let m = FeatureMatrix::from_rows(&pts).unwrap();
        let p = CpfParams {
            min_samples: 3,
            ..Default::default()
        };
        let d = knn_density(&m, &p).unwrap();
        assert_eq!(d.r_k[4], 1.0);
        assert_eq!(d.r_k[0], 2f64.sqrt());
        for corner in [0, 2, 6, 8] {
            assert!(d.log_density[4] > d.log_density[corner]);
        }
    }

    #[test]
    fn duplicate_points_warn_and_stay_finite() {
        let xs: Vec<f64> = vec![0.0, 0.0, 3.0, 7.0, 12.0, 18.0, 25.0, 33.0, 42.0, 52.0];
        let p = CpfParams {
            min_samples: 1,
            ..Default::default()
        };
        let d = knn_density(&line(&xs), &p).unwrap();
        assert_eq!(d.warnings.len(), 1);
        assert_eq!(d.log_density[0], d.log_density[1]);
        assert!(d.log_density[0].is_finite());
        assert_eq!(d.r_k[0], 3.0 * 1e-3);
    }

    #[test]
    fn density_requires_more_samples_than_k() {
        let p = CpfParams {
            min_samples: 3,
            ..Default::default()
        };
        assert!(matches!(
            knn_density(&line(&[0.0, 1.0, 2.0]), &p),
            Err(CpfError::Parameter(_))
        ));
    }

    #[test]
    fn big_brother_singleton() {
        let m = line(&[0.0, 10.0]);
        let comps = ComponentLabels {
            labels: vec![0, 1],
            sizes: vec![1, 1],
        };
        let bb = big_brother(&m, &dens(&[1.0, 2.0]), &comps);
        assert_eq!(bb.parent, vec![None, None]);
        assert!(bb.omega.iter().all(|w| w.is_infinite()));
    }

    #[test]
    fn big_brother_collinear() {
        let bb = big_brother(
            &line(&[0.0, 1.0, 3.0]),
            &dens(&[3.0, 2.0, 1.0]),
            &one_component(3),
        );
        assert_eq!(bb.parent, vec![None, Some(0), Some(1)]);
        assert_eq!(bb.omega[1], 1.0);
        assert_eq!(bb.omega[2], 2.0);
        assert!(bb.omega[0].is_infinite());
    }

    #[test]
    fn big_brother_equal_density_follows_index() {
        let bb = big_brother(
            &line(&[5.0, 1.0, 9.0, 2.0]),
            &dens(&[0.0; 4]),
            &one_component(4),
        );
        assert_eq!(bb.parent[0], None);
        assert_eq!(bb.parent[1], Some(0));
        // 2 may choose among 0 and 1: 0 is nearer (4 vs 8)
        assert_eq!(bb.parent[2], Some(0));
        // 3 may choose among 0, 1, 2: 1 is nearest
        assert_eq!(bb.parent[3], Some(1));
    }

    #[test]
    fn equal_omegas_give_only_the_maximum() {
        let bb = BigBrother {
            parent: vec![None, Some(0), Some(1), Some(2)],
            omega: vec![f64::INFINITY, 1.0, 1.0, 1.0],
        };
        let p = CpfParams {
            min_samples: 1,
            ..Default::default()
        };
        let c = select_centers(&dens(&[4.0, 3.0, 2.0, 1.0]), &bb, &one_component(4), &p);
        assert_eq!(c.into_iter().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn small_component_contributes_no_centers() {
        let bb = BigBrother {
            parent: vec![None, Some(0)],
            omega: vec![f64::INFINITY, 1.0],
        };
        let p = CpfParams {
            min_samples: 3,
            ..Default::default()
        };
        assert!(select_centers(&dens(&[2.0, 1.0]), &bb, &one_component(2), &p).is_empty());
    }

    #[test]
    fn assignment_single_center() {
        let bb = BigBrother {
            parent: vec![None, Some(0), Some(1), Some(1)],
            omega: vec![f64::INFINITY, 1.0, 1.0, 1.0],
        };
        let l = assign_clusters(&bb, &BTreeSet::from([0]), &one_component(4), 1).unwrap();
        assert_eq!(l.labels, vec![0; 4]);
    }

    #[test]
    fn assignment_size_gate() {
        let comps = ComponentLabels {
            labels: (0..10).collect(),
            sizes: vec![1; 10],
        };
        let bb = BigBrother {
            parent: vec![None; 10],
            omega: vec![f64::INFINITY; 10],
        };
        let l = assign_clusters(&bb, &BTreeSet::new(), &comps, 2).unwrap();
        assert_eq!(l.labels, vec![OUTLIER; 10]);
    }

    #[test]
    fn assignment_detects_broken_chain() {
        let bb = BigBrother {
            parent: vec![None, None],
            omega: vec![f64::INFINITY; 2],
        };
        let err = assign_clusters(&bb, &BTreeSet::from([0]), &one_component(2), 1).unwrap_err();
        assert!(matches!(err, CpfError::Internal(_)));
    }

    #[test]
    fn labels_canonical_by_size() {
        let l = ClusterLabeling::from_raw(&[7, 3, 3, -5, 7, 3, 9]);
        assert_eq!(l.labels, vec![1, 0, 0, -1, 1, 0, 2]);
        assert_eq!(l.sizes(), vec![3, 2, 1]);
        assert_eq!(l.outlier_count(), 1);
        // equal sizes: the cluster holding the lower index comes first
        let l = ClusterLabeling::from_raw(&[4, 2, 4, 2]);
        assert_eq!(l.labels, vec![0, 1, 0, 1]);
    }

    fn two_centers(
        dist: f64,
        ld_gap: f64,
    ) -> (
        ClusterLabeling,
        BTreeSet<usize>,
        DensityEstimate,
        FeatureMatrix,
    ) {
        let labeling = ClusterLabeling {
            labels: vec![0, 0, 1, 1],
        };
        let centers = BTreeSet::from([0, 2]);
        let d = dens(&[0.0, -1.0, -ld_gap, -ld_gap - 1.0]);
        let f = line(&[0.0, 0.1, dist, dist + 0.1]);
        (labeling, centers, d, f)
    }

    #[test]
    fn merge_two_near_similar_centers() {
        let (l, c, d, f) = two_centers(1.0, -(0.9f64.ln()));
        let p = CpfParams {
            merge_threshold: 2.0,
            density_ratio_threshold: 0.7,
            ..Default::default()
        };
        let merged = merge_clusters(&l, &c, &d, &f, &p);
        assert_eq!(merged.labels, vec![0; 4]);
    }

    #[test]
    fn merge_degenerate_thresholds_leave_labeling() {
        let (l, c, d, f) = two_centers(1.0, 0.1);
        let p0 = CpfParams {
            merge_threshold: 0.0,
            ..Default::default()
        };
        assert_eq!(merge_clusters(&l, &c, &d, &f, &p0), l);
        let p1 = CpfParams {
            merge_threshold: 100.0,
            density_ratio_threshold: 1.0,
            ..Default::default()
        };
        assert_eq!(merge_clusters(&l, &c, &d, &f, &p1), l);
    }

    #[test]
    fn params_validation() {
        assert!(CpfParams::default().validate().is_ok());
        for p in [
            CpfParams {
                rho: 1.0,
                ..Default::default()
            },
            CpfParams {
                alpha: 0.0,
                ..Default::default()
            },
            CpfParams {
                merge_threshold: -1.0,
                ..Default::default()
            },
            CpfParams {
                density_ratio_threshold: 0.0,
                ..Default::default()
            },
            CpfParams {
                min_samples: 0,
                ..Default::default()
            },
            CpfParams {
                min_component_size: Some(0),
                ..Default::default()
            },
        ] {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn fit_rejects_small_n_and_mismatched_graph() {
        let m = line(&[0.0, 1.0, 2.0]);
        let p = CpfParams {
            min_samples: 3,
            ..Default::default()
        };
        let err = fit(&m, &SparseAdjacency::complete(3), &p).unwrap_err();
        assert!(err.to_string().contains("min_samples"));
        let p = CpfParams {
            min_samples: 1,
            ..Default::default()
        };
        assert!(fit(&m, &SparseAdjacency::complete(4), &p).is_err());
    }

    #[test]
    fn identical_points_form_one_cluster() {
        // n = k + 1: the mutual k-NN graph is complete
        let k = 4;
        let m = FeatureMatrix::new(k + 1, 2, vec![1.0; 2 * (k + 1)]).unwrap();
        let p = CpfParams {
            min_samples: k,
            ..Default::default()
        };
        let r = fit(&m, &SparseAdjacency::complete(k + 1), &p).unwrap();
        assert_eq!(r.labeling.n_clusters(), 1);
        assert_eq!(r.labeling.outlier_count(), 0);
        assert!(!r.density.warnings.is_empty());

        // larger n: lower-index tie-breaking leaves a (k+1)-clique plus isolated points
        let n = 12;
        let m = FeatureMatrix::new(n, 2, vec![1.0; 2 * n]).unwrap();
        let r = fit(&m, &SparseAdjacency::complete(n), &p).unwrap();
        assert_eq!(r.labeling.n_clusters(), 1);
        assert_eq!(r.labeling.sizes(), vec![k + 1]);
        assert_eq!(r.labeling.outlier_count(), n - k - 1);
    }
}
