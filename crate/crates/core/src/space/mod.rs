//! Discrete metric measure spaces.
//!
//! Three backends share one query surface:
//!
//! * regular lattices in `R^n`, stored implicitly (coordinates, weights and
//!   neighbours are computed from the index),
//! * point clouds with Euclidean distances and an explicit neighbour graph,
//! * weighted graphs with the shortest-path metric.
//!
//! Balls are open, `B(x, r) = {y : d(x, y) < r}`.

mod distortion;
mod io;
mod measure;

use std::collections::{BinaryHeap, VecDeque};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{unit_ball_volume, Error, Result};

pub use distortion::{distortion_coefficients, sigma, Distortion};
pub use io::{read_coordinates, write_coordinates, SpaceDoc, SCHEMA};
pub use measure::{
    DoublingReport, FhProfile, IdentityReport, StepProfile, VolumeProfile, STITCH_FRACTION,
    STITCH_TOLERANCE,
};

/// Default cap on the number of sample points of a space.
pub const DEFAULT_POINT_BUDGET: u64 = 50_000_000;

/// Default core fraction: core points keep a distance to the boundary larger
/// than this fraction of the half-width.
pub const DEFAULT_CORE_FRACTION: f64 = 0.25;

/// Relative slack in the open-ball test, so that points at a lattice distance
/// equal to `r` up to rounding are consistently excluded.
const BALL_SLACK: f64 = 1e-12;

/// `d < r` with a relative rounding guard.
#[inline]
pub fn in_open_ball(d: f64, r: f64) -> bool {
    d < r * (1.0 - BALL_SLACK)
}

/// Analytic volume growth `V(s) = coefficient * s^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailModel {
    pub coefficient: f64,
    pub exponent: f64,
}

impl TailModel {
    /// Lebesgue measure of balls in `R^n`, scaled.
    pub fn euclidean(n: usize, scale: f64) -> Self {
        Self {
            coefficient: scale * unit_ball_volume(n),
            exponent: n as f64,
        }
    }

    pub fn volume(&self, s: f64) -> f64 {
        self.coefficient * s.powf(self.exponent)
    }

    /// `dV/ds`.
    pub fn derivative(&self, s: f64) -> f64 {
        self.coefficient * self.exponent * s.powf(self.exponent - 1.0)
    }
}

/// Measure law of a lattice: Lebesgue cell mass `h^n` times a constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MeasureLaw {
    Lebesgue,
    Scaled(f64),
}

impl MeasureLaw {
    pub fn scale(&self) -> f64 {
        match *self {
            MeasureLaw::Lebesgue => 1.0,
            MeasureLaw::Scaled(s) => s,
        }
    }
}

/// Declares the space as a product `Y x R^k` with `Y` doubling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EuclideanFactor {
    pub k: usize,
    /// Doubling constant of the non-Euclidean factor.
    pub base_doubling: f64,
}

/// Regular lattice `{-W, ..., W}^n` with spacing `h`, centred at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub dim: usize,
    pub side: usize,
    pub spacing: f64,
}

impl Lattice {
    pub fn len(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Half-width `W` of the box.
    pub fn half_width(&self) -> f64 {
        (self.side - 1) as f64 * self.spacing / 2.0
    }

    fn centre(&self) -> f64 {
        (self.side - 1) as f64 / 2.0
    }

    pub fn multi_index(&self, mut i: usize, out: &mut [usize]) {
        for o in out.iter_mut().take(self.dim) {
            *o = i % self.side;
            i /= self.side;
        }
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter().rev().fold(0, |acc, &k| acc * self.side + k)
    }

    /// Index from signed per-axis positions, `None` when outside the box.
    pub fn index_signed(&self, idx: &[i64]) -> Option<usize> {
        let mut acc = 0usize;
        for &k in idx.iter().rev() {
            if k < 0 || k >= self.side as i64 {
                return None;
            }
            acc = acc * self.side + k as usize;
        }
        Some(acc)
    }

    pub fn coords_into(&self, i: usize, out: &mut [f64]) {
        let mut rest = i;
        let c = self.centre();
        for o in out.iter_mut().take(self.dim) {
            *o = ((rest % self.side) as f64 - c) * self.spacing;
            rest /= self.side;
        }
    }

    /// Position in lattice units of an ambient coordinate on one axis.
    pub fn axis_position(&self, x: f64) -> f64 {
        x / self.spacing + self.centre()
    }

    /// Distance to the boundary layer in lattice units.
    pub fn clearance_units(&self, i: usize) -> usize {
        let mut rest = i;
        let mut best = usize::MAX;
        for _ in 0..self.dim {
            let k = rest % self.side;
            rest /= self.side;
            best = best.min(k.min(self.side - 1 - k));
        }
        best
    }

    pub fn centre_index(&self) -> usize {
        let mid = vec![self.side / 2; self.dim];
        self.index(&mid)
    }
}

/// Cumulative counts of lattice vectors by squared norm:
/// `cum[s] = #{v in Z^n : |v|^2 <= s}`.
#[derive(Debug, Clone)]
pub(crate) struct ShellTable {
    cum: Vec<u64>,
}

impl ShellTable {
    fn new(dim: usize, max_sq: usize) -> Self {
        let mut one = vec![0u64; max_sq + 1];
        let mut k = 0usize;
        while k * k <= max_sq {
            one[k * k] += if k == 0 { 1 } else { 2 };
            k += 1;
        }
        let mut acc = one.clone();
        for _ in 1..dim {
            let mut next = vec![0u64; max_sq + 1];
            for (s, &a) in acc.iter().enumerate() {
                if a == 0 {
                    continue;
                }
                let mut k = 0usize;
                while s + k * k <= max_sq {
                    next[s + k * k] += a * one[k * k];
                    k += 1;
                }
            }
            acc = next;
        }
        let mut total = 0u64;
        let cum = acc
            .into_iter()
            .map(|c| {
                total += c;
                total
            })
            .collect();
        Self { cum }
    }

    pub(crate) fn max_sq(&self) -> usize {
        self.cum.len() - 1
    }

    /// Number of lattice vectors with `|v| < rho` (lattice units).
    pub(crate) fn count_open(&self, rho: f64) -> u64 {
        let lim = rho * rho * (1.0 - BALL_SLACK);
        if lim <= 0.0 {
            return 0;
        }
        let s = (lim.ceil() as usize).saturating_sub(1);
        self.cum[s.min(self.max_sq())]
    }

    /// Squared norms `s` present in the table together with `#{|v|^2 <= s}`.
    pub(crate) fn shells(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.cum
            .iter()
            .enumerate()
            .filter(|&(s, &c)| s == 0 || c != self.cum[s - 1])
            .map(|(s, &c)| (s, c))
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Backend {
    Grid {
        lattice: Lattice,
        shells: ShellTable,
    },
    Cloud {
        dim: usize,
        coords: Vec<f64>,
        adjacency: Vec<Vec<(usize, f64)>>,
    },
    Graph {
        dist: Vec<f64>,
        adjacency: Vec<Vec<(usize, f64)>>,
    },
}

/// A discrete metric measure space. Immutable after construction.
#[derive(Debug)]
pub struct MmSpace {
    pub(crate) backend: Backend,
    /// Per-point masses for explicit backends; lattice spaces use `cell_mass`.
    weights: Vec<f64>,
    cell_mass: f64,
    interior: Vec<bool>,
    tail: Option<TailModel>,
    factor: Option<EuclideanFactor>,
    core_fraction: f64,
    clearance_cache: OnceLock<Vec<f64>>,
}

impl Clone for MmSpace {
    fn clone(&self) -> Self {
        Self {
            backend: self.backend.clone(),
            weights: self.weights.clone(),
            cell_mass: self.cell_mass,
            interior: self.interior.clone(),
            tail: self.tail,
            factor: self.factor,
            core_fraction: self.core_fraction,
            clearance_cache: OnceLock::new(),
        }
    }
}

/// Regular lattice in `R^n` with the outer layer flagged as boundary and
/// tail model `scale * omega_n s^n`.
pub fn build_grid_space(n: usize, side: usize, h: f64, law: MeasureLaw) -> Result<MmSpace> {
    build_grid_space_with_budget(n, side, h, law, DEFAULT_POINT_BUDGET)
}

pub fn build_grid_space_with_budget(
    n: usize,
    side: usize,
    h: f64,
    law: MeasureLaw,
    budget: u64,
) -> Result<MmSpace> {
    if !(1..=6).contains(&n) {
        return Err(Error::InvalidParameter(format!(
            "grid dimension {n} outside 1..=6"
        )));
    }
    if side < 5 {
        return Err(Error::InvalidParameter(format!(
            "side count {side} below 5"
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "grid spacing {h} must be positive"
        )));
    }
    let scale = law.scale();
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "measure scale {scale} must be positive"
        )));
    }
    let points = (side as u128).pow(n as u32);
    if points > budget as u128 {
        return Err(Error::MemoryBudget { points, budget });
    }
    let lattice = Lattice {
        dim: n,
        side,
        spacing: h,
    };
    let half = side.div_ceil(2) + 1;
    let shells = ShellTable::new(n, half * half);
    let interior = (0..lattice.len())
        .map(|i| lattice.clearance_units(i) > 0)
        .collect();
    Ok(MmSpace {
        backend: Backend::Grid { lattice, shells },
        weights: Vec::new(),
        cell_mass: scale * h.powi(n as i32),
        interior,
        tail: Some(TailModel::euclidean(n, scale)),
        factor: None,
        core_fraction: DEFAULT_CORE_FRACTION,
        clearance_cache: OnceLock::new(),
    })
}

/// Weighted graph with the shortest-path metric. All points are interior and
/// no tail model is attached.
pub fn build_graph_space(
    n: usize,
    edges: &[(usize, usize, f64)],
    weights: &[f64],
) -> Result<MmSpace> {
    let adjacency = adjacency_from_edges(n, edges)?;
    check_weights(n, weights)?;
    let components = count_components(&adjacency, &vec![true; n]);
    if components != 1 {
        return Err(Error::Disconnected { components });
    }
    let mut dist = vec![f64::INFINITY; n * n];
    for s in 0..n {
        dijkstra(&adjacency, s, &mut dist[s * n..(s + 1) * n]);
    }
    // Symmetrise exact ties produced by different summation orders.
    for i in 0..n {
        for j in 0..i {
            let v = dist[i * n + j].min(dist[j * n + i]);
            dist[i * n + j] = v;
            dist[j * n + i] = v;
        }
    }
    Ok(MmSpace {
        backend: Backend::Graph { dist, adjacency },
        weights: weights.to_vec(),
        cell_mass: 0.0,
        interior: vec![true; n],
        tail: None,
        factor: None,
        core_fraction: DEFAULT_CORE_FRACTION,
        clearance_cache: OnceLock::new(),
    })
}

/// Point cloud in `R^dim` with Euclidean distances and the given neighbour
/// edges (edge lengths are the Euclidean lengths).
pub fn build_cloud_space(
    dim: usize,
    coords: Vec<f64>,
    weights: &[f64],
    edges: &[(usize, usize)],
    interior: Vec<bool>,
) -> Result<MmSpace> {
    if dim == 0 || coords.len() % dim != 0 {
        return Err(Error::InvalidParameter(
            "coordinate block not a multiple of dim".into(),
        ));
    }
    let n = coords.len() / dim;
    check_weights(n, weights)?;
    if interior.len() != n {
        return Err(Error::InvalidParameter(
            "interior mask length mismatch".into(),
        ));
    }
    let euclid = |i: usize, j: usize| -> f64 {
        (0..dim)
            .map(|k| (coords[i * dim + k] - coords[j * dim + k]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let weighted: Vec<(usize, usize, f64)> = edges
        .iter()
        .map(|&(i, j)| (i, j, if i < n && j < n { euclid(i, j) } else { 0.0 }))
        .collect();
    let adjacency = adjacency_from_edges(n, &weighted)?;
    let components = count_components(&adjacency, &interior);
    if components != 1 {
        return Err(Error::Disconnected { components });
    }
    Ok(MmSpace {
        backend: Backend::Cloud {
            dim,
            coords,
            adjacency,
        },
        weights: weights.to_vec(),
        cell_mass: 0.0,
        interior,
        tail: None,
        factor: None,
        core_fraction: DEFAULT_CORE_FRACTION,
        clearance_cache: OnceLock::new(),
    })
}

fn check_weights(n: usize, weights: &[f64]) -> Result<()> {
    if weights.len() != n {
        return Err(Error::InvalidParameter(format!(
            "{} weights for {n} points",
            weights.len()
        )));
    }
    if let Some(i) = weights.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "weight of point {i} is not positive"
        )));
    }
    Ok(())
}

fn adjacency_from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Vec<Vec<(usize, f64)>>> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j, len) in edges {
        if i >= n || j >= n {
            return Err(Error::InvalidParameter(format!(
                "edge ({i},{j}) out of range"
            )));
        }
        if i == j {
            return Err(Error::InvalidParameter(format!("self loop at {i}")));
        }
        if !(len > 0.0 && len.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "edge ({i},{j}) has nonpositive length {len}"
            )));
        }
        adj[i].push((j, len));
        adj[j].push((i, len));
    }
    for row in &mut adj {
        row.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        row.dedup_by_key(|e| e.0);
    }
    Ok(adj)
}

fn count_components(adj: &[Vec<(usize, f64)>], mask: &[bool]) -> usize {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut comps = 0;
    for s in 0..n {
        if seen[s] || !mask[s] {
            continue;
        }
        comps += 1;
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &adj[u] {
                if mask[v] && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    comps
}

#[derive(PartialEq)]
struct Visit(f64, usize);
impl Eq for Visit {}
impl PartialOrd for Visit {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Visit {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize, dist: &mut [f64]) {
    dist.fill(f64::INFINITY);
    dist[source] = 0.0;
    let mut heap = BinaryHeap::from([Visit(0.0, source)]);
    while let Some(Visit(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, len) in &adj[u] {
            let nd = d + len;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Visit(nd, v));
            }
        }
    }
}

impl MmSpace {
    pub fn with_tail(mut self, tail: Option<TailModel>) -> Self {
        self.tail = tail;
        self
    }

    pub fn with_factor(mut self, factor: EuclideanFactor) -> Self {
        self.factor = Some(factor);
        self
    }

    pub fn with_core_fraction(mut self, fraction: f64) -> Self {
        self.core_fraction = fraction;
        self.clearance_cache = OnceLock::new();
        self
    }

    pub fn len(&self) -> usize {
        match &self.backend {
            Backend::Grid { lattice, .. } => lattice.len(),
            _ => self.weights.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lattice(&self) -> Option<&Lattice> {
        match &self.backend {
            Backend::Grid { lattice, .. } => Some(lattice),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.backend {
            Backend::Grid { .. } => "grid",
            Backend::Cloud { .. } => "cloud",
            Backend::Graph { .. } => "graph",
        }
    }

    /// Ambient dimension, when the space carries coordinates.
    pub fn ambient_dim(&self) -> Option<usize> {
        match &self.backend {
            Backend::Grid { lattice, .. } => Some(lattice.dim),
            Backend::Cloud { dim, .. } => Some(*dim),
            Backend::Graph { .. } => None,
        }
    }

    pub fn tail(&self) -> Option<TailModel> {
        self.tail
    }

    pub fn factor(&self) -> Option<EuclideanFactor> {
        self.factor
    }

    pub fn core_fraction(&self) -> f64 {
        self.core_fraction
    }

    pub fn weight(&self, i: usize) -> f64 {
        match self.backend {
            Backend::Grid { .. } => self.cell_mass,
            _ => self.weights[i],
        }
    }

    /// Uniform weight of lattice spaces.
    pub fn cell_mass(&self) -> Option<f64> {
        self.lattice().map(|_| self.cell_mass)
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    pub fn total_mass(&self) -> f64 {
        crate::linalg::compensated_sum((0..self.len()).map(|i| self.weight(i)))
    }

    pub fn is_interior(&self, i: usize) -> bool {
        self.interior[i]
    }

    pub fn interior_mask(&self) -> &[bool] {
        &self.interior
    }

    /// Uniformly rescale the measure.
    pub fn scale_weights(&self, alpha: f64) -> MmSpace {
        let mut out = self.clone();
        out.cell_mass *= alpha;
        for w in &mut out.weights {
            *w *= alpha;
        }
        out.tail = self.tail.map(|t| TailModel {
            coefficient: t.coefficient * alpha,
            ..t
        });
        out
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        match &self.backend {
            Backend::Grid { lattice, .. } => {
                let (mut a, mut b) = (i, j);
                let mut s = 0i64;
                for _ in 0..lattice.dim {
                    let d = (a % lattice.side) as i64 - (b % lattice.side) as i64;
                    s += d * d;
                    a /= lattice.side;
                    b /= lattice.side;
                }
                lattice.spacing * (s as f64).sqrt()
            }
            Backend::Cloud { dim, coords, .. } => (0..*dim)
                .map(|k| (coords[i * dim + k] - coords[j * dim + k]).powi(2))
                .sum::<f64>()
                .sqrt(),
            Backend::Graph { dist, .. } => dist[i * self.len() + j],
        }
    }

    /// Ambient coordinates of point `i`.
    pub fn coords(&self, i: usize) -> Option<Vec<f64>> {
        match &self.backend {
            Backend::Grid { lattice, .. } => {
                let mut out = vec![0.0; lattice.dim];
                lattice.coords_into(i, &mut out);
                Some(out)
            }
            Backend::Cloud { dim, coords, .. } => Some(coords[i * dim..(i + 1) * dim].to_vec()),
            Backend::Graph { .. } => None,
        }
    }

    /// Neighbours of `i` with edge lengths.
    pub fn neighbors(&self, i: usize) -> Vec<(usize, f64)> {
        match &self.backend {
            Backend::Grid { lattice, .. } => {
                let mut out = Vec::with_capacity(2 * lattice.dim);
                let mut stride = 1usize;
                let mut rest = i;
                for _ in 0..lattice.dim {
                    let k = rest % lattice.side;
                    rest /= lattice.side;
                    if k > 0 {
                        out.push((i - stride, lattice.spacing));
                    }
                    if k + 1 < lattice.side {
                        out.push((i + stride, lattice.spacing));
                    }
                    stride *= lattice.side;
                }
                out
            }
            Backend::Cloud { adjacency, .. } | Backend::Graph { adjacency, .. } => {
                adjacency[i].clone()
            }
        }
    }

    /// Undirected edge list `(i, j, length)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.len() {
            for (j, len) in self.neighbors(i) {
                if i < j {
                    out.push((i, j, len));
                }
            }
        }
        out
    }

    fn clearances(&self) -> &[f64] {
        self.clearance_cache.get_or_init(|| {
            let n = self.len();
            match &self.backend {
                Backend::Grid { lattice, .. } => (0..n)
                    .map(|i| lattice.clearance_units(i) as f64 * lattice.spacing)
                    .collect(),
                _ => {
                    let boundary: Vec<usize> = (0..n).filter(|&i| !self.interior[i]).collect();
                    (0..n)
                        .into_par_iter()
                        .map(|i| {
                            boundary
                                .iter()
                                .map(|&b| self.dist(i, b))
                                .fold(f64::INFINITY, f64::min)
                        })
                        .collect()
                }
            }
        })
    }

    /// Distance from `i` to the boundary layer (`+inf` without boundary).
    pub fn clearance(&self, i: usize) -> f64 {
        match &self.backend {
            Backend::Grid { lattice, .. } => lattice.clearance_units(i) as f64 * lattice.spacing,
            _ => self.clearances()[i],
        }
    }

    /// Reference half-width for the core criterion: the box half-width on
    /// lattices, the largest finite clearance otherwise.
    pub fn half_width(&self) -> f64 {
        match &self.backend {
            Backend::Grid { lattice, .. } => lattice.half_width(),
            _ => self
                .clearances()
                .iter()
                .copied()
                .filter(|c| c.is_finite())
                .fold(0.0, f64::max),
        }
    }

    /// Radius of the core region measured from the box centre.
    pub fn core_radius(&self) -> f64 {
        (1.0 - self.core_fraction) * self.half_width()
    }

    pub fn is_core(&self, i: usize) -> bool {
        if !self.interior[i] {
            return false;
        }
        let c = self.clearance(i);
        !c.is_finite() || c > self.core_fraction * self.half_width() * (1.0 + BALL_SLACK)
    }

    pub fn core_points(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_core(i)).collect()
    }

    /// Point nearest to the given ambient coordinates.
    pub fn nearest_point(&self, x: &[f64]) -> Option<usize> {
        match &self.backend {
            Backend::Grid { lattice, .. } => {
                let idx: Vec<i64> = x
                    .iter()
                    .map(|&c| {
                        (lattice.axis_position(c).round() as i64).clamp(0, lattice.side as i64 - 1)
                    })
                    .collect();
                lattice.index_signed(&idx)
            }
            Backend::Cloud { dim, coords, .. } => (0..self.len()).min_by(|&a, &b| {
                let da: f64 = (0..*dim)
                    .map(|k| (coords[a * dim + k] - x[k]).powi(2))
                    .sum();
                let db: f64 = (0..*dim)
                    .map(|k| (coords[b * dim + k] - x[k]).powi(2))
                    .sum();
                da.total_cmp(&db)
            }),
            Backend::Graph { .. } => None,
        }
    }

    /// Index of the lattice centre point, or the point of largest clearance.
    pub fn centre(&self) -> usize {
        match &self.backend {
            Backend::Grid { lattice, .. } => lattice.centre_index(),
            _ => (0..self.len())
                .max_by(|&a, &b| {
                    self.clearance(a)
                        .total_cmp(&self.clearance(b))
                        .then(b.cmp(&a))
                })
                .unwrap_or(0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_grid() {
        let s = build_grid_space(1, 5, 1.0, MeasureLaw::Lebesgue).unwrap();
        assert_eq!(s.len(), 5);
        assert!((0..5).all(|i| s.weight(i) == 1.0));
        assert_eq!(s.dist(0, 4), 4.0);
        assert_eq!(s.interior_mask(), &[false, true, true, true, false]);
    }

    #[test]
    fn three_dimensional_boundary_shell() {
        let s = build_grid_space(3, 21, 0.1, MeasureLaw::Lebesgue).unwrap();
        assert_eq!(s.len(), 9261);
        let boundary = s.interior_mask().iter().filter(|&&b| !b).count();
        assert_eq!(boundary, 21usize.pow(3) - 19usize.pow(3));
    }

    #[test]
    fn invalid_grids() {
        assert!(build_grid_space(3, 21, 0.0, MeasureLaw::Lebesgue).is_err());
        assert!(build_grid_space(3, 21, -1.0, MeasureLaw::Lebesgue).is_err());
        assert!(matches!(
            build_grid_space_with_budget(3, 101, 0.1, MeasureLaw::Lebesgue, 1000),
            Err(Error::MemoryBudget { .. })
        ));
    }

    #[test]
    fn graph_metrics() {
        let path = build_graph_space(3, &[(0, 1, 1.0), (1, 2, 1.0)], &[1.0; 3]).unwrap();
        assert_eq!(path.dist(0, 2), 2.0);
        let tri =
            build_graph_space(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)], &[1.0; 3]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(tri.dist(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }
        let cycle = build_graph_space(
            4,
            &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)],
            &[1.0; 4],
        )
        .unwrap();
        assert_eq!(cycle.dist(0, 2), 2.0);
        assert_eq!(cycle.dist(1, 3), 2.0);
        assert!(cycle.tail().is_none());
    }

    #[test]
    fn graph_errors() {
        assert!(matches!(
            build_graph_space(3, &[(0, 1, 1.0)], &[1.0; 3]),
            Err(Error::Disconnected { components: 2 })
        ));
        assert!(build_graph_space(2, &[(0, 1, 0.0)], &[1.0; 2]).is_err());
        assert!(build_graph_space(2, &[(0, 1, 1.0)], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn shell_table_counts() {
        let t = ShellTable::new(3, 16);
        assert_eq!(t.count_open(1.0), 1);
        assert_eq!(t.count_open(1.5), 19); // |v|^2 in {0,1,2}
        assert_eq!(t.count_open(2.0), 27);
        // brute force
        let mut c = 0;
        for a in -4i32..=4 {
            for b in -4i32..=4 {
                for d in -4i32..=4 {
                    if a * a + b * b + d * d < 14 {
                        c += 1;
                    }
                }
            }
        }
        assert_eq!(t.count_open(14f64.sqrt()), c);
    }

    #[test]
    fn lattice_neighbors_and_core() {
        let s = build_grid_space(2, 9, 0.5, MeasureLaw::Lebesgue).unwrap();
        let c = s.centre();
        assert_eq!(s.coords(c).unwrap(), vec![0.0, 0.0]);
        assert_eq!(s.neighbors(c).len(), 4);
        assert_eq!(s.neighbors(0).len(), 2);
        assert_eq!(s.clearance(c), 2.0);
        // half-width 2, core keeps clearance > 0.5
        assert!(s.is_core(c));
        let edge_near = s.nearest_point(&[1.5, 0.0]).unwrap();
        assert!(!s.is_core(edge_near));
    }
}
