//! Synthetic data generators and brute-force oracles shared by the
//! integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spatial_cpf::geodesy::{wgs84_to_itm, GeoCoord, TmProjection};
use spatial_cpf::graph::{haversine_m, SparseAdjacency};
use spatial_cpf::ingest::{RawRecord, SampleTable, ELEMENTS};
use spatial_cpf::FeatureMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_points(n: usize, d: usize, seed: u64) -> FeatureMatrix {
    let mut r = rng(seed);
    let data = (0..n * d).map(|_| r.gen::<f64>()).collect();
    FeatureMatrix::new(n, d, data).unwrap()
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

/// Isotropic unit-variance blobs, `sizes[b]` points around `centers[b]`.
/// Returns the points and the blob index of each.
pub fn blobs(centers: &[Vec<f64>], sizes: &[usize], seed: u64) -> (FeatureMatrix, Vec<usize>) {
    let mut r = rng(seed);
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (b, (c, &s)) in centers.iter().zip(sizes).enumerate() {
        for _ in 0..s {
            rows.push(c.iter().map(|&m| m + normal(&mut r)).collect::<Vec<f64>>());
            truth.push(b);
        }
    }
    (FeatureMatrix::from_rows(&rows).unwrap(), truth)
}

/// Euclidean or haversine distance, for the oracles.
pub fn oracle_distance(a: &[f64], b: &[f64], haversine: bool) -> f64 {
    if haversine {
        haversine_m(a, b)
    } else {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// Quadratic mutual k-NN: sort every other point by (distance, index).
pub fn brute_mutual_knn(
    points: &FeatureMatrix,
    k: usize,
    haversine: bool,
) -> BTreeSet<(usize, usize)> {
    let n = points.n();
    let knn: Vec<BTreeSet<usize>> = (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (oracle_distance(points.row(i), points.row(j), haversine), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.iter().take(k).map(|&(_, j)| j).collect()
        })
        .collect();
    let mut edges = BTreeSet::new();
    for i in 0..n {
        for &j in &knn[i] {
            if i < j && knn[j].contains(&i) {
                edges.insert((i, j));
            }
        }
    }
    edges
}

pub fn edge_set(adj: &SparseAdjacency) -> BTreeSet<(usize, usize)> {
    adj.edges().collect()
}

pub fn random_graph(n: usize, p: f64, seed: u64) -> SparseAdjacency {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    SparseAdjacency::from_edges(n, edges).unwrap()
}

/// Components by breadth-first search, as sorted member lists.
pub fn bfs_components(adj: &SparseAdjacency) -> BTreeSet<Vec<usize>> {
    let n = adj.n();
    let mut seen = vec![false; n];
    let mut out = BTreeSet::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut q = VecDeque::from([s]);
        let mut comp = Vec::new();
        while let Some(u) = q.pop_front() {
            comp.push(u);
            for &v in adj.neighbors(u) {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    q.push_back(v as usize);
                }
            }
        }
        comp.sort_unstable();
        out.insert(comp);
    }
    out
}

/// Partition of indices induced by labels, ignoring label values.
pub fn partition(labels: &[i32]) -> BTreeSet<Vec<usize>> {
    let mut groups: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    groups.into_values().collect()
}

/// G5-like survey: `n` sites scattered over Ireland in a few geochemical
/// provinces, log-normal concentrations per element. Sites within a
/// province share a geographic region and a concentration signature.
pub fn synthetic_survey(n: usize, seed: u64) -> SampleTable {
    let mut r = rng(seed);
    let proj = TmProjection::itm();
    // (lat, lon) centres of provinces and their log10 shifts
    let provinces: [(f64, f64, f64); 4] = [
        (54.3, -8.0, 0.0),
        (53.2, -7.2, 0.35),
        (52.5, -8.6, -0.3),
        (53.8, -9.3, 0.6),
    ];
    let base: Vec<f64> = (0..ELEMENTS.len()).map(|j| 0.3 + 0.2 * j as f64).collect();
    let records = (0..n)
        .map(|i| {
            let p = if r.gen::<f64>() < 0.6 {
                0
            } else {
                r.gen_range(0..provinces.len())
            };
            let (lat0, lon0, shift) = provinces[p];
            let lat = (lat0 + 0.35 * normal(&mut r)).clamp(51.5, 55.3);
            let lon = (lon0 + 0.5 * normal(&mut r)).clamp(-10.3, -6.0);
            let itm = wgs84_to_itm(GeoCoord::new(lat, lon), &proj).unwrap();
            let concentrations = ELEMENTS
                .iter()
                .zip(&base)
                .map(|(&e, &b)| {
                    let tail = if r.gen::<f64>() < 0.03 { 1.0 } else { 0.0 };
                    let l10 = b + shift + 0.15 * normal(&mut r) + tail;
                    (e, (10f64.powf(l10) * 1000.0).round() / 1000.0)
                })
                .collect();
            RawRecord {
                site_id: format!("G5-{i:05}"),
                easting: (itm.easting * 100.0).round() / 100.0,
                northing: (itm.northing * 100.0).round() / 100.0,
                concentrations,
            }
        })
        .collect();
    SampleTable::new(records).unwrap()
}
