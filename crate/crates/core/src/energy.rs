//! Affine separable energies `E(P) = Σ D(R) + λ Σ C(R)` and scales of
//! appearance of merged regions.
//!
//! The regularizer `C(R)` is always the region perimeter. The fit-to-data
//! term is either the squared error (piecewise-constant model) or the squared
//! error weighted by an internal/external contrast sigmoid.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regions::{EdgeWeight, Rag, RegionGraph, RegionStats};

/// Largest neighborhood enumerated exhaustively when the subset cardinality
/// is unbounded (2^30 subsets).
pub const MAX_UNBOUNDED_NEIGHBORS: usize = 30;

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("regions do not share a boundary (zero regularizer gain)")]
    NonAdjacent,
    #[error("region {0} is not adjacent to {1}")]
    NotCentered(u32, u32),
    #[error("subset must contain the center region and at least one neighbor")]
    SubsetTooSmall,
    #[error("region {0} has no neighbors")]
    Isolated(u32),
    #[error(
        "region {region} has {neighbors} neighbors; unbounded enumeration is limited to {MAX_UNBOUNDED_NEIGHBORS}"
    )]
    EnumerationLimit { region: u32, neighbors: usize },
    #[error("maximal subset cardinality must be at least 2, got {0}")]
    InvalidCardinality(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnergyModel {
    /// `D(R) = SE(R)`.
    #[default]
    PiecewiseConstant,
    /// `D(R) = SE(R) (1 + f(Int(R) / Ext(R)))` with the logistic
    /// `f(x) = 1 / (1 + exp(-steepness (x - center)))`.
    Contrast { center: f64, steepness: f64 },
}

impl EnergyModel {
    pub const DEFAULT_SIGMOID_CENTER: f64 = 0.5;
    pub const DEFAULT_SIGMOID_STEEPNESS: f64 = 8.0;

    pub fn contrast() -> Self {
        EnergyModel::Contrast {
            center: Self::DEFAULT_SIGMOID_CENTER,
            steepness: Self::DEFAULT_SIGMOID_STEEPNESS,
        }
    }

    pub fn uses_contrast(&self) -> bool {
        matches!(self, EnergyModel::Contrast { .. })
    }

    /// Fit-to-data term of a region.
    pub fn data_term(&self, stats: &RegionStats, contrast: ContrastPair) -> f64 {
        let se = stats.squared_error();
        match *self {
            EnergyModel::PiecewiseConstant => se,
            EnergyModel::Contrast { center, steepness } => se * (1.0 + sigmoid(contrast.ratio(), center, steepness)),
        }
    }
}

pub fn sigmoid(x: f64, center: f64, steepness: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    1.0 / (1.0 + (-steepness * (x - center)).exp())
}

/// Internal and external contrast of one region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastPair {
    /// Max mean gradient over the edges contracted to form the region.
    pub internal: f64,
    /// Min mean gradient over the region's incident edges (`+inf` if none).
    pub external: f64,
}

impl ContrastPair {
    pub const LEAF_ISOLATED: ContrastPair = ContrastPair {
        internal: 0.0,
        external: f64::INFINITY,
    };

    /// `Int/Ext`; no internal contrast gives 0, a zero external contrast
    /// with positive internal contrast gives `+inf`.
    pub fn ratio(&self) -> f64 {
        if self.internal == 0.0 {
            0.0
        } else if self.external == 0.0 {
            f64::INFINITY
        } else {
            self.internal / self.external
        }
    }
}

/// Scale at which the merged region's line crosses the sum of its parts'
/// lines, clamped at zero.
///
/// `boundary_gain` is `C(parts) - C(union)`, twice the removed boundary.
pub fn appearance_scale(d_union: f64, d_parts: f64, boundary_gain: f64) -> Result<f64, EnergyError> {
    if boundary_gain <= 0.0 {
        return Err(EnergyError::NonAdjacent);
    }
    Ok(((d_union - d_parts) / boundary_gain).max(0.0))
}

/// Scale of appearance of the union of two adjacent regions given their data
/// terms.
pub fn lambda_plus_stats(
    model: &EnergyModel,
    a: (&RegionStats, f64),
    b: (&RegionStats, f64),
    shared_len: u64,
    union_contrast: ContrastPair,
) -> Result<f64, EnergyError> {
    let merged = a.0.merged(b.0, shared_len).map_err(|_| EnergyError::NonAdjacent)?;
    let d_union = model.data_term(&merged, union_contrast);
    appearance_scale(d_union, a.1 + b.1, 2.0 * shared_len as f64)
}

/// A region graph whose vertices carry the data term and internal contrast
/// fixed when each region was formed.
pub trait ScoredGraph: RegionGraph {
    fn model(&self) -> &EnergyModel;
    fn data_term(&self, v: u32) -> f64;
    fn internal_contrast(&self, v: u32) -> f64;
}

/// Min mean gradient over the incident edges of `v`.
pub fn external_contrast<G: RegionGraph + ?Sized>(graph: &G, v: u32) -> f64 {
    graph
        .neighbors(v)
        .iter()
        .map(|(_, w)| w.mean_gradient())
        .fold(f64::INFINITY, f64::min)
}

/// A [`Rag`] scored as an initial partition: every vertex is a leaf with no
/// internal contrast.
#[derive(Clone, Debug)]
pub struct ScoredRag {
    pub rag: Rag,
    model: EnergyModel,
    data: Vec<f64>,
    internal: Vec<f64>,
}

impl ScoredRag {
    pub fn new(rag: Rag, model: EnergyModel) -> Self {
        let n = rag.vertex_count() as u32;
        let internal = vec![0.0; n as usize];
        let data = (0..n)
            .map(|v| {
                let contrast = ContrastPair {
                    internal: 0.0,
                    external: external_contrast(&rag, v),
                };
                model.data_term(rag.region_stats(v), contrast)
            })
            .collect();
        Self {
            rag,
            model,
            data,
            internal,
        }
    }

    pub fn data_terms(&self) -> &[f64] {
        &self.data
    }
}

impl RegionGraph for ScoredRag {
    fn region_stats(&self, v: u32) -> &RegionStats {
        self.rag.region_stats(v)
    }
    fn neighbors(&self, v: u32) -> Vec<(u32, EdgeWeight)> {
        self.rag.neighbors(v)
    }
    fn edge_weight(&self, a: u32, b: u32) -> Option<EdgeWeight> {
        self.rag.edge_weight(a, b)
    }
}

impl ScoredGraph for ScoredRag {
    fn model(&self) -> &EnergyModel {
        &self.model
    }
    fn data_term(&self, v: u32) -> f64 {
        self.data[v as usize]
    }
    fn internal_contrast(&self, v: u32) -> f64 {
        self.internal[v as usize]
    }
}

/// Everything known about the region formed by merging a star-shaped subset.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsetMerge {
    pub lambda: f64,
    /// Sorted member ids, center included.
    pub members: Vec<u32>,
    /// Statistics of the union (perimeter already reduced).
    pub stats: RegionStats,
    pub data_term: f64,
    pub internal_contrast: f64,
}

/// Data term of a union whose members are `members`. Members are visited in
/// the given order so that floating-point sums are reproducible.
fn union_data_term<G: ScoredGraph + ?Sized>(graph: &G, stats: &RegionStats, internal: f64, members: &[u32]) -> f64 {
    let model = graph.model();
    if !model.uses_contrast() {
        return model.data_term(stats, ContrastPair::LEAF_ISOLATED);
    }
    let mut outside: BTreeMap<u32, EdgeWeight> = BTreeMap::new();
    for &m in members {
        for (n, w) in graph.neighbors(m) {
            if members.contains(&n) {
                continue;
            }
            outside.entry(n).and_modify(|acc| acc.fuse(&w)).or_insert(w);
        }
    }
    let external = outside
        .values()
        .map(EdgeWeight::mean_gradient)
        .fold(f64::INFINITY, f64::min);
    model.data_term(stats, ContrastPair { internal, external })
}

/// Scale of appearance of the union of `center` with `others`, all of which
/// must be adjacent to `center`.
///
/// Statistics and data terms are accumulated from the center then the others
/// in ascending id order; [`best_subset`] uses the same order, so both give
/// bit-identical values for the same subset.
pub fn lambda_plus_subset<G: ScoredGraph + ?Sized>(
    graph: &G,
    center: u32,
    members: &[u32],
) -> Result<SubsetMerge, EnergyError> {
    let mut others: Vec<u32> = members.iter().copied().filter(|&m| m != center).collect();
    others.sort_unstable();
    others.dedup();
    if others.is_empty() || !members.contains(&center) {
        return Err(EnergyError::SubsetTooSmall);
    }
    let mut stats = graph.region_stats(center).clone();
    let mut d_parts = graph.data_term(center);
    let mut internal_len = 0u64;
    let mut internal = graph.internal_contrast(center);
    for (i, &o) in others.iter().enumerate() {
        let w = graph
            .edge_weight(center, o)
            .ok_or(EnergyError::NotCentered(o, center))?;
        stats.absorb(graph.region_stats(o));
        d_parts += graph.data_term(o);
        internal_len += w.shared_len;
        for &prev in &others[..i] {
            if let Some(pw) = graph.edge_weight(prev, o) {
                internal_len += pw.shared_len;
            }
        }
        internal = internal.max(graph.internal_contrast(o)).max(w.mean_gradient());
    }
    stats.perimeter -= 2 * internal_len;
    let mut ordered = Vec::with_capacity(others.len() + 1);
    ordered.push(center);
    ordered.extend_from_slice(&others);
    let d_union = union_data_term(graph, &stats, internal, &ordered);
    let lambda = appearance_scale(d_union, d_parts, 2.0 * internal_len as f64)?;
    ordered.sort_unstable();
    Ok(SubsetMerge {
        lambda,
        members: ordered,
        stats,
        data_term: d_union,
        internal_contrast: internal,
    })
}

/// Scale of appearance of the union of two adjacent vertices.
pub fn lambda_plus_pair<G: ScoredGraph + ?Sized>(graph: &G, a: u32, b: u32) -> Result<f64, EnergyError> {
    if a == b {
        return Err(EnergyError::SubsetTooSmall);
    }
    lambda_plus_subset(graph, a, &[a, b]).map(|m| m.lambda)
}

/// Total order used to rank candidate merges: scale, then cardinality, then
/// lexicographic member ids.
pub fn compare_candidates(a_lambda: f64, a_members: &[u32], b_lambda: f64, b_members: &[u32]) -> Ordering {
    a_lambda
        .total_cmp(&b_lambda)
        .then(a_members.len().cmp(&b_members.len()))
        .then_with(|| a_members.cmp(b_members))
}

struct SubsetSearch<'g, G: ScoredGraph + ?Sized> {
    graph: &'g G,
    center: u32,
    neighbors: Vec<(u32, EdgeWeight)>,
    /// shared boundary between neighbor i and neighbor j < i
    mutual: Vec<Vec<(usize, u64)>>,
    max_others: usize,
    best: Option<(f64, Vec<u32>)>,
    chosen: Vec<usize>,
}

impl<G: ScoredGraph + ?Sized> SubsetSearch<'_, G> {
    fn offer(&mut self, lambda: f64) {
        let better = match &self.best {
            None => true,
            Some((bl, bm)) => match lambda.total_cmp(bl) {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => {
                    let len = self.chosen.len() + 1;
                    if len != bm.len() {
                        len < bm.len()
                    } else {
                        self.members_sorted().as_slice() < bm.as_slice()
                    }
                }
            },
        };
        if better {
            self.best = Some((lambda, self.members_sorted()));
        }
    }

    fn members_sorted(&self) -> Vec<u32> {
        let mut m: Vec<u32> = self.chosen.iter().map(|&i| self.neighbors[i].0).collect();
        m.push(self.center);
        m.sort_unstable();
        m
    }

    fn members_in_order(&self) -> Vec<u32> {
        let mut m = vec![self.center];
        m.extend(self.chosen.iter().map(|&i| self.neighbors[i].0));
        m
    }

    fn explore(&mut self, start: usize, stats: &RegionStats, d_parts: f64, internal_len: u64, internal: f64) {
        if self.chosen.len() >= self.max_others {
            return;
        }
        for i in start..self.neighbors.len() {
            let (id, w) = self.neighbors[i];
            let mut s = stats.clone();
            s.absorb(self.graph.region_stats(id));
            let d = d_parts + self.graph.data_term(id);
            let mut len = internal_len + w.shared_len;
            for &(j, shared) in &self.mutual[i] {
                if self.chosen.contains(&j) {
                    len += shared;
                }
            }
            let int = internal.max(self.graph.internal_contrast(id)).max(w.mean_gradient());
            self.chosen.push(i);
            let mut union = s.clone();
            union.perimeter -= 2 * len;
            let d_union = union_data_term(self.graph, &union, int, &self.members_in_order());
            let lambda = appearance_scale(d_union, d, 2.0 * len as f64).expect("neighbors share a boundary");
            self.offer(lambda);
            self.explore(i + 1, &s, d, len, int);
            self.chosen.pop();
        }
    }
}

/// Minimal scale of appearance over all subsets `W` of `center`'s closed
/// neighborhood containing `center`, with `2 <= |W| <= max_card`
/// (`None` for unbounded). Ties are broken by [`compare_candidates`].
pub fn best_subset<G: ScoredGraph + ?Sized>(
    graph: &G,
    center: u32,
    max_card: Option<usize>,
) -> Result<(f64, Vec<u32>), EnergyError> {
    if let Some(k) = max_card {
        if k < 2 {
            return Err(EnergyError::InvalidCardinality(k));
        }
    }
    let neighbors = graph.neighbors(center);
    if neighbors.is_empty() {
        return Err(EnergyError::Isolated(center));
    }
    let max_others = match max_card {
        Some(k) => k - 1,
        None => {
            if neighbors.len() > MAX_UNBOUNDED_NEIGHBORS {
                return Err(EnergyError::EnumerationLimit {
                    region: center,
                    neighbors: neighbors.len(),
                });
            }
            neighbors.len()
        }
    };
    let mutual = (0..neighbors.len())
        .map(|i| {
            (0..i)
                .filter_map(|j| {
                    graph
                        .edge_weight(neighbors[j].0, neighbors[i].0)
                        .map(|w| (j, w.shared_len))
                })
                .collect()
        })
        .collect();
    let mut search = SubsetSearch {
        graph,
        center,
        neighbors,
        mutual,
        max_others,
        best: None,
        chosen: Vec::new(),
    };
    let stats = graph.region_stats(center).clone();
    search.explore(0, &stats, graph.data_term(center), 0, graph.internal_contrast(center));
    Ok(search.best.expect("at least one neighbor was offered"))
}
