//! Mutual k-nearest-neighbor graphs, their intersection, and connected components.
//!
//! Neighbor lists are exact. Equidistant candidates are ordered by ascending
//! vertex index, which makes every graph a pure function of its input.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::matrix::{squared_euclidean, FeatureMatrix};

/// Mean Earth radius (IUGG), meters. Used to report great-circle distances.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

const LEAF_SIZE: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("malformed adjacency file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    /// Great-circle distance on `(latitude, longitude)` rows in degrees.
    Haversine,
}

/// Great-circle distance in meters between two `(lat, lon)` points in degrees.
pub fn haversine_m(a: &[f64], b: &[f64]) -> f64 {
    let (p1, p2) = (a[0].to_radians(), b[0].to_radians());
    let dp = p2 - p1;
    let dl = (b[1] - a[1]).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

fn unit_sphere(lat_lon: &[f64]) -> [f64; 3] {
    let (lat, lon) = (lat_lon[0].to_radians(), lat_lon[1].to_radians());
    [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
}

/// Undirected simple graph stored as sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseAdjacency {
    adj: Vec<Vec<u32>>,
}

impl SparseAdjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            adj: vec![Vec::new(); n],
        }
    }

    pub fn complete(n: usize) -> Self {
        Self {
            adj: (0..n)
                .map(|i| (0..n as u32).filter(|&j| j as usize != i).collect())
                .collect(),
        }
    }

    /// Builds from an edge list. Duplicates and either orientation are accepted.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if n > u32::MAX as usize {
            return Err(GraphError::Parameter(format!(
                "{n} vertices exceed u32 indexing"
            )));
        }
        let mut adj = vec![Vec::new(); n];
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::Parameter(format!(
                    "edge ({u}, {v}) out of range for n = {n}"
                )));
            }
            if u == v {
                return Err(GraphError::Parameter(format!("self-loop at {u}")));
            }
            adj[u].push(v as u32);
            adj[v].push(u as u32);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { adj })
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search(&(v as u32)).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj.iter().enumerate().flat_map(|(u, list)| {
            list.iter()
                .map(|&v| v as usize)
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    /// Induced subgraph on `vertices`, relabeled `0..vertices.len()` in the given order.
    pub fn induced(&self, vertices: &[usize]) -> Self {
        let mut pos = vec![u32::MAX; self.n()];
        for (k, &v) in vertices.iter().enumerate() {
            pos[v] = k as u32;
        }
        let adj = vertices
            .iter()
            .map(|&v| {
                let mut l: Vec<u32> = self.adj[v]
                    .iter()
                    .map(|&w| pos[w as usize])
                    .filter(|&p| p != u32::MAX)
                    .collect();
                l.sort_unstable();
                l
            })
            .collect();
        Self { adj }
    }

    /// Binary dump: `u64 n`, `u64 m`, then `m` pairs of `u32 u, u32 v`
    /// (`u < v`, lexicographic), all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), GraphError> {
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.edge_count() as u64).to_le_bytes())?;
        for (u, v) in self.edges() {
            w.write_all(&(u as u32).to_le_bytes())?;
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, GraphError> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let m = u64::from_le_bytes(b8) as usize;
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() != m * 8 {
            return Err(GraphError::Format(format!(
                "expected {} bytes of edges, found {}",
                m * 8,
                buf.len()
            )));
        }
        let mut prev: Option<(usize, usize)> = None;
        let mut edges = Vec::with_capacity(m);
        for chunk in buf.chunks_exact(8) {
            let u = u32::from_le_bytes(chunk[0..4].try_into().unwrap()) as usize;
            let v = u32::from_le_bytes(chunk[4..8].try_into().unwrap()) as usize;
            if u >= v || v >= n {
                return Err(GraphError::Format(format!("invalid edge ({u}, {v})")));
            }
            if prev.is_some_and(|p| p >= (u, v)) {
                return Err(GraphError::Format("edges not strictly sorted".into()));
            }
            prev = Some((u, v));
            edges.push((u, v));
        }
        Self::from_edges(n, edges)
    }
}

/// `k` nearest neighbors of every point, self excluded, sorted by
/// (distance, index).
#[derive(Debug, Clone, PartialEq)]
pub struct KnnTable {
    k: usize,
    indices: Vec<u32>,
    distances: Vec<f64>,
}

impl KnnTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }

    /// Distance to the k-th nearest neighbor.
    pub fn radius(&self, i: usize) -> f64 {
        self.distances[(i + 1) * self.k - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

enum KdNode {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Exact kd-tree over row-major points.
struct KdTree<'a> {
    pts: &'a [f64],
    dim: usize,
    order: Vec<u32>,
    nodes: Vec<KdNode>,
}

impl<'a> KdTree<'a> {
    fn build(pts: &'a [f64], dim: usize) -> Self {
        let n = pts.len() / dim;
        let mut tree = Self {
            pts,
            dim,
            order: (0..n as u32).collect(),
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
        };
        tree.build_node(0, n);
        tree
    }

    fn coord(&self, i: u32, d: usize) -> f64 {
        self.pts[i as usize * self.dim + d]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let mut best = (0, -1.0);
        for d in 0..self.dim {
            let (lo, hi) = self.order[start..end].iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), &i| {
                    let c = self.pts[i as usize * self.dim + d];
                    (lo.min(c), hi.max(c))
                },
            );
            if hi - lo > best.1 {
                best = (d, hi - lo);
            }
        }
        let (dim, spread) = best;
        if spread <= 0.0 {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let (pts, stride) = (self.pts, self.dim);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a as usize * stride + dim].total_cmp(&pts[b as usize * stride + dim])
        });
        let value = self.coord(self.order[mid], dim);
        self.nodes.push(KdNode::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = KdNode::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    fn knn(&self, query: u32, k: usize) -> Vec<Candidate> {
        let q = &self.pts[query as usize * self.dim..(query as usize + 1) * self.dim];
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, q, query, k, &mut heap);
        heap.into_sorted_vec()
    }

    fn search(
        &self,
        node: usize,
        q: &[f64],
        query: u32,
        k: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if i == query {
                        continue;
                    }
                    let p = &self.pts[i as usize * self.dim..(i as usize + 1) * self.dim];
                    let c = Candidate {
                        dist2: squared_euclidean(q, p),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            KdNode::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, query, k, heap);
                // `<=` keeps equidistant lower-index points reachable
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
                    self.search(far, q, query, k, heap);
                }
            }
        }
    }
}

fn check_inputs(points: &FeatureMatrix, k: usize, metric: Metric) -> Result<(), GraphError> {
    let n = points.n();
    if n < 2 {
        return Err(GraphError::Parameter(format!(
            "need at least 2 points, got {n}"
        )));
    }
    if k == 0 {
        return Err(GraphError::Parameter("k must be at least 1".into()));
    }
    if k >= n {
        return Err(GraphError::Parameter(format!(
            "k = {k} must be smaller than the number of points n = {n}"
        )));
    }
    if n > u32::MAX as usize {
        return Err(GraphError::Parameter(format!(
            "{n} points exceed u32 indexing"
        )));
    }
    if metric == Metric::Haversine {
        if points.d() != 2 {
            return Err(GraphError::Parameter(format!(
                "haversine needs (lat, lon) rows, got {} columns",
                points.d()
            )));
        }
        for (i, r) in points.rows().enumerate() {
            if r[0].abs() > 90.0 || r[1].abs() > 180.0 {
                return Err(GraphError::Data(format!(
                    "row {i}: ({}, {}) is not a valid latitude/longitude",
                    r[0], r[1]
                )));
            }
        }
    }
    if points.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(GraphError::Data("non-finite coordinate".into()));
    }
    Ok(())
}

/// Exact k-nearest-neighbor lists for every row of `points`.
///
/// For [`Metric::Haversine`] rows are `(lat, lon)` degrees; neighbors are
/// ranked by chord length on the unit sphere (monotone in great-circle
/// distance) and reported distances are great-circle meters.
pub fn knn_table(points: &FeatureMatrix, k: usize, metric: Metric) -> Result<KnnTable, GraphError> {
    check_inputs(points, k, metric)?;
    let n = points.n();
    let embedded: Vec<f64>;
    let (pts, dim) = match metric {
        Metric::Euclidean => (points.as_slice(), points.d()),
        Metric::Haversine => {
            embedded = points.rows().flat_map(unit_sphere).collect();
            (embedded.as_slice(), 3)
        }
    };
    let tree = KdTree::build(pts, dim);
    let rows: Vec<Vec<Candidate>> = (0..n as u32)
        .into_par_iter()
        .map(|i| tree.knn(i, k))
        .collect();
    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for (i, row) in rows.into_iter().enumerate() {
        for c in row {
            indices.push(c.index);
            distances.push(match metric {
                Metric::Euclidean => c.dist2.sqrt(),
                Metric::Haversine => haversine_m(points.row(i), points.row(c.index as usize)),
            });
        }
    }
    Ok(KnnTable {
        k,
        indices,
        distances,
    })
}

/// Keeps edge `(i, j)` iff each endpoint lists the other among its neighbors.
pub fn mutual_knn_from_table(knn: &KnnTable) -> SparseAdjacency {
    let n = knn.n();
    let sorted: Vec<Vec<u32>> = (0..n)
        .map(|i| {
            let mut r = knn.neighbors(i).to_vec();
            r.sort_unstable();
            r
        })
        .collect();
    let adj = (0..n)
        .map(|i| {
            sorted[i]
                .iter()
                .copied()
                .filter(|&j| sorted[j as usize].binary_search(&(i as u32)).is_ok())
                .collect()
        })
        .collect();
    SparseAdjacency { adj }
}

/// Mutual k-nearest-neighbor graph over the rows of `points`.
pub fn mutual_knn_graph(
    points: &FeatureMatrix,
    k: usize,
    metric: Metric,
) -> Result<SparseAdjacency, GraphError> {
    Ok(mutual_knn_from_table(&knn_table(points, k, metric)?))
}

/// Element-wise product of two adjacency matrices: edges present in both.
pub fn hadamard_intersect(
    a: &SparseAdjacency,
    b: &SparseAdjacency,
) -> Result<SparseAdjacency, GraphError> {
    if a.n() != b.n() {
        return Err(GraphError::Parameter(format!(
            "graph sizes differ: {} vs {}",
            a.n(),
            b.n()
        )));
    }
    let adj = a
        .adj
        .iter()
        .zip(&b.adj)
        .map(|(x, y)| {
            let (mut i, mut j) = (0, 0);
            let mut out = Vec::new();
            while i < x.len() && j < y.len() {
                match x[i].cmp(&y[j]) {
                    Ordering::Less => i += 1,
                    Ordering::Greater => j += 1,
                    Ordering::Equal => {
                        out.push(x[i]);
                        i += 1;
                        j += 1;
                    }
                }
            }
            out
        })
        .collect();
    Ok(SparseAdjacency { adj })
}

/// Disjoint-set forest with union by size and path halving.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns `false` when already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Connected-component partition. Ids are contiguous from 0 and ordered by
/// each component's smallest vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabels {
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl ComponentLabels {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Members of each component, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (i, &c) in self.labels.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

pub fn connected_components(adj: &SparseAdjacency) -> ComponentLabels {
    let n = adj.n();
    let mut uf = UnionFind::new(n);
    for (u, v) in adj.edges() {
        uf.union(u, v);
    }
    let mut root_label = vec![usize::MAX; n];
    let mut labels = Vec::with_capacity(n);
    let mut sizes = Vec::new();
    for i in 0..n {
        let r = uf.find(i);
        if root_label[r] == usize::MAX {
            root_label[r] = sizes.len();
            sizes.push(0);
        }
        labels.push(root_label[r]);
        sizes[root_label[r]] += 1;
    }
    ComponentLabels { labels, sizes }
}
