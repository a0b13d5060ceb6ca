//! Hierarchy construction heuristics.
//!
//! * Sequential merging (`SM²`, `SMᵏ`, `SM`): repeatedly merge the star-shaped
//!   subset of some region's neighborhood with the globally smallest scale of
//!   appearance, the subset cardinality bounded by 2, `k`, or not at all.
//! * Parallel merging (`MM`, `MM¹`): per level, score every edge by the scale
//!   of appearance of its two endpoints, select a matching of locally minimal
//!   edges by iterated boolean rules, and contract it.
//!
//! Ties are broken everywhere by the total order (scale, cardinality,
//! lexicographic node ids), so every build is deterministic.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::energy::{
    best_subset, compare_candidates, lambda_plus_subset, EnergyError, EnergyModel, ScoredGraph, ScoredRag, SubsetMerge,
};
use crate::hierarchy::{Hierarchy, HierarchyError};
use crate::raster::{LabelMap, RasterImage};
use crate::regions::{build_rag, EdgeWeight, Rag, RegionError, RegionGraph, RegionStats};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("region adjacency graph is disconnected ({0} components left)")]
    Disconnected(usize),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Heuristic {
    /// Pairwise scale climbing.
    Sm2,
    /// Sequential merging with subsets of at most `k` regions.
    Smk(usize),
    /// Sequential merging over all subsets of the neighborhood.
    Sm,
    /// Maximal matching contracted at its fixpoint.
    Mm,
    /// Only the edges selected at the first matching iteration.
    Mm1,
}

impl Heuristic {
    /// Parses `sm2`, `smk`, `sm`, `mm` or `mm1`; `smk` takes `k >= 2`.
    pub fn parse(name: &str, k: Option<usize>) -> Result<Self, BuildError> {
        match name.to_ascii_lowercase().as_str() {
            "sm2" => Ok(Heuristic::Sm2),
            "sm" => Ok(Heuristic::Sm),
            "mm" => Ok(Heuristic::Mm),
            "mm1" => Ok(Heuristic::Mm1),
            "smk" => match k {
                Some(k) if k >= 2 => Ok(Heuristic::Smk(k)),
                Some(k) => Err(BuildError::Config(format!("smk needs k >= 2, got {k}"))),
                None => Err(BuildError::Config("smk needs a value for k".into())),
            },
            other => Err(BuildError::Config(format!("unknown heuristic {other:?}"))),
        }
    }

    /// Subset cardinality bound of the sequential heuristics.
    pub fn max_card(&self) -> Option<Option<usize>> {
        match *self {
            Heuristic::Sm2 => Some(Some(2)),
            Heuristic::Smk(k) => Some(Some(k)),
            Heuristic::Sm => Some(None),
            Heuristic::Mm | Heuristic::Mm1 => None,
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Heuristic::Sm2 => write!(f, "sm2"),
            Heuristic::Smk(k) => write!(f, "sm{k}"),
            Heuristic::Sm => write!(f, "sm"),
            Heuristic::Mm => write!(f, "mm"),
            Heuristic::Mm1 => write!(f, "mm1"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuilderConfig {
    pub heuristic: Heuristic,
    pub model: EnergyModel,
}

impl BuilderConfig {
    pub fn new(heuristic: Heuristic, model: EnergyModel) -> Result<Self, BuildError> {
        if let Heuristic::Smk(k) = heuristic {
            if k < 2 {
                return Err(BuildError::Config(format!("smk needs k >= 2, got {k}")));
            }
        }
        if let EnergyModel::Contrast { center, steepness } = model {
            if !center.is_finite() || !steepness.is_finite() {
                return Err(BuildError::Config("sigmoid parameters must be finite".into()));
            }
        }
        Ok(Self { heuristic, model })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BuildMetrics {
    pub heuristic: String,
    pub initial_regions: usize,
    pub levels: usize,
    pub vertex_ratio_per_level: Vec<f64>,
    /// `None` when a level leaves no edge.
    pub edge_ratio_per_level: Vec<Option<f64>>,
    pub merges: usize,
    /// Smallest merge scale of the first level.
    pub first_merge_lambda: Option<f64>,
    pub wall_ms: f64,
}

impl BuildMetrics {
    fn record_level(&mut self, v_before: usize, v_after: usize, e_before: usize, e_after: usize) {
        self.levels += 1;
        self.vertex_ratio_per_level.push(v_before as f64 / v_after as f64);
        self.edge_ratio_per_level
            .push((e_after > 0).then(|| e_before as f64 / e_after as f64));
    }
}

fn leaves_of(scored: &ScoredRag) -> Vec<(RegionStats, f64)> {
    scored
        .rag
        .stats()
        .iter()
        .cloned()
        .zip(scored.data_terms().iter().copied())
        .collect()
}

// --- sequential merging ----------------------------------------------------

/// Mutable partition graph keyed by hierarchy node id.
struct WorkGraph {
    model: EnergyModel,
    stats: Vec<Option<RegionStats>>,
    data: Vec<f64>,
    internal: Vec<f64>,
    adjacency: Vec<BTreeMap<u32, EdgeWeight>>,
}

impl WorkGraph {
    fn from_scored(scored: &ScoredRag) -> Self {
        let rag = &scored.rag;
        let n = rag.vertex_count();
        let mut adjacency = vec![BTreeMap::new(); n];
        for e in rag.edges() {
            adjacency[e.a as usize].insert(e.b, e.weight);
            adjacency[e.b as usize].insert(e.a, e.weight);
        }
        Self {
            model: *scored.model(),
            stats: rag.stats().iter().cloned().map(Some).collect(),
            data: scored.data_terms().to_vec(),
            internal: (0..n as u32).map(|v| scored.internal_contrast(v)).collect(),
            adjacency,
        }
    }

    /// Replaces the members of `merge` with a new vertex `id`. Outside edges
    /// are fused in member order: center first, then ascending ids.
    fn merge(&mut self, id: u32, center: u32, merge: &SubsetMerge) {
        let mut order = vec![center];
        order.extend(merge.members.iter().copied().filter(|&m| m != center));
        let mut fused: BTreeMap<u32, EdgeWeight> = BTreeMap::new();
        for &m in &order {
            let adj = std::mem::take(&mut self.adjacency[m as usize]);
            for (n, w) in adj {
                if merge.members.contains(&n) {
                    continue;
                }
                fused.entry(n).and_modify(|acc| acc.fuse(&w)).or_insert(w);
            }
            self.stats[m as usize] = None;
        }
        for (&n, &w) in &fused {
            let adj = &mut self.adjacency[n as usize];
            for m in &merge.members {
                adj.remove(m);
            }
            adj.insert(id, w);
        }
        debug_assert_eq!(id as usize, self.stats.len());
        self.stats.push(Some(merge.stats.clone()));
        self.data.push(merge.data_term);
        self.internal.push(merge.internal_contrast);
        self.adjacency.push(fused);
    }

    fn is_alive(&self, v: u32) -> bool {
        self.stats[v as usize].is_some()
    }
}

impl RegionGraph for WorkGraph {
    fn region_stats(&self, v: u32) -> &RegionStats {
        self.stats[v as usize].as_ref().expect("vertex is alive")
    }
    fn neighbors(&self, v: u32) -> Vec<(u32, EdgeWeight)> {
        self.adjacency[v as usize].iter().map(|(&n, &w)| (n, w)).collect()
    }
    fn edge_weight(&self, a: u32, b: u32) -> Option<EdgeWeight> {
        self.adjacency[a as usize].get(&b).copied()
    }
}

impl ScoredGraph for WorkGraph {
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

#[derive(Debug, PartialEq)]
struct Candidate {
    lambda: f64,
    members: Vec<u32>,
    center: u32,
    version: u64,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        compare_candidates(self.lambda, &self.members, other.lambda, &other.members)
            .then(self.center.cmp(&other.center))
            .then(self.version.cmp(&other.version))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sequential merging with subsets of at most `max_card` regions (`None`:
/// unbounded). Returns the raw merge tree; each internal node's `scale` is
/// the scale at which it was merged.
pub fn build_sequential(
    scored: &ScoredRag,
    base: LabelMap,
    channels: usize,
    max_card: Option<usize>,
    metrics: &mut BuildMetrics,
) -> Result<Hierarchy, BuildError> {
    if let Some(k) = max_card {
        if k < 2 {
            return Err(EnergyError::InvalidCardinality(k).into());
        }
    }
    let mut tree = Hierarchy::from_leaves(channels, *scored.model(), base, leaves_of(scored))?;
    let mut graph = WorkGraph::from_scored(scored);
    let mut version: Vec<u64> = vec![0; graph.stats.len()];
    let mut heap: BinaryHeap<Reverse<Candidate>> = BinaryHeap::new();
    let mut alive = graph.stats.len();
    let mut edges = scored.rag.edge_count();

    let push = |graph: &WorkGraph,
                heap: &mut BinaryHeap<Reverse<Candidate>>,
                v: u32,
                version: u64|
     -> Result<(), BuildError> {
        if graph.adjacency[v as usize].is_empty() {
            return Ok(());
        }
        let (lambda, members) = best_subset(graph, v, max_card)?;
        heap.push(Reverse(Candidate {
            lambda,
            members,
            center: v,
            version,
        }));
        Ok(())
    };
    for v in 0..alive as u32 {
        push(&graph, &mut heap, v, 0)?;
    }
    while alive > 1 {
        let Some(Reverse(cand)) = heap.pop() else {
            return Err(BuildError::Disconnected(alive));
        };
        if !graph.is_alive(cand.center) || version[cand.center as usize] != cand.version {
            continue;
        }
        let merge = lambda_plus_subset(&graph, cand.center, &cand.members)?;
        debug_assert_eq!(merge.lambda.to_bits(), cand.lambda.to_bits());
        let id = tree.add_node(
            merge.members.clone(),
            merge.stats.clone(),
            merge.data_term,
            merge.lambda,
        )?;
        graph.merge(id, cand.center, &merge);
        version.push(0);
        if metrics.first_merge_lambda.is_none() {
            metrics.first_merge_lambda = Some(merge.lambda);
        }
        metrics.merges += 1;

        let before = alive;
        alive -= merge.members.len() - 1;
        let edges_before = edges;
        edges = graph.adjacency.iter().map(BTreeMap::len).sum::<usize>() / 2;
        metrics.record_level(before, alive, edges_before, edges);

        // scales of subsets around a vertex depend on its closed neighborhood;
        // with the contrast term also on the edges leaving it
        let mut affected: Vec<u32> = vec![id];
        affected.extend(graph.adjacency[id as usize].keys().copied());
        if graph.model.uses_contrast() {
            let ring: Vec<u32> = affected[1..]
                .iter()
                .flat_map(|&n| graph.adjacency[n as usize].keys().copied().collect::<Vec<_>>())
                .collect();
            affected.extend(ring);
        }
        affected.sort_unstable();
        affected.dedup();
        for v in affected {
            version[v as usize] += 1;
            push(&graph, &mut heap, v, version[v as usize])?;
        }
    }
    Ok(tree)
}

// --- parallel merging ------------------------------------------------------

/// Boolean state of the iterated local-minimum selection over edges.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchState {
    /// Selected edges at the fixpoint.
    pub p: Vec<bool>,
    /// Edges still eligible at the fixpoint (all false once maximal).
    pub q: Vec<bool>,
    /// Edges selected at the first iteration.
    pub first_p: Vec<bool>,
    /// Index of the final iteration (state unchanged afterwards).
    pub iterations: usize,
}

impl MatchState {
    pub fn selected(&self) -> Vec<usize> {
        self.p.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i).collect()
    }

    pub fn first_selected(&self) -> Vec<usize> {
        self.first_p
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Edge neighborhoods: each edge together with every edge sharing an endpoint.
pub fn edge_neighborhoods(vertex_count: usize, endpoints: &[(u32, u32)]) -> Vec<Vec<usize>> {
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); vertex_count];
    for (e, &(a, b)) in endpoints.iter().enumerate() {
        incident[a as usize].push(e);
        if b != a {
            incident[b as usize].push(e);
        }
    }
    endpoints
        .iter()
        .map(|&(a, b)| {
            let mut g: Vec<usize> = incident[a as usize]
                .iter()
                .chain(incident[b as usize].iter())
                .copied()
                .collect();
            g.sort_unstable();
            g.dedup();
            g
        })
        .collect()
}

/// Iterates the local-minimum selection to its fixpoint.
///
/// An edge is selected at the first iteration when its key is minimal over
/// its neighborhood; an edge stays eligible while no neighbor is selected;
/// later iterations select eligible edges whose key is minimal among the
/// eligible edges of their neighborhood. Keys must be a strict total order
/// for the selection to be a matching.
pub fn mm_round<K: Ord + Sync>(keys: &[K], neighborhoods: &[Vec<usize>]) -> MatchState {
    let m = keys.len();
    let eligible_of = |p: &[bool]| -> Vec<bool> {
        (0..m)
            .into_par_iter()
            .map(|e| neighborhoods[e].iter().all(|&f| !p[f]))
            .collect()
    };
    let mut p: Vec<bool> = (0..m)
        .into_par_iter()
        .map(|e| neighborhoods[e].iter().all(|&f| keys[e] <= keys[f]))
        .collect();
    let mut q = eligible_of(&p);
    let first_p = p.clone();
    let mut iterations = 1;
    loop {
        let next_p: Vec<bool> = (0..m)
            .into_par_iter()
            .map(|e| p[e] || (q[e] && neighborhoods[e].iter().all(|&f| !q[f] || keys[e] <= keys[f])))
            .collect();
        let next_q = eligible_of(&next_p);
        if next_p == p && next_q == q {
            break;
        }
        p = next_p;
        q = next_q;
        iterations += 1;
    }
    MatchState {
        p,
        q,
        first_p,
        iterations,
    }
}

/// Edge ranking key: scale, then smaller endpoint node id, then larger.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeKey {
    pub lambda: f64,
    pub lo: u32,
    pub hi: u32,
}

impl Eq for EdgeKey {}

impl Ord for EdgeKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.lambda
            .total_cmp(&other.lambda)
            .then(self.lo.cmp(&other.lo))
            .then(self.hi.cmp(&other.hi))
    }
}

impl PartialOrd for EdgeKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A level of the parallel builder: the current graph with the data term and
/// internal contrast of each vertex.
struct LevelGraph<'a> {
    rag: &'a Rag,
    model: EnergyModel,
    data: &'a [f64],
    internal: &'a [f64],
}

impl RegionGraph for LevelGraph<'_> {
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

impl ScoredGraph for LevelGraph<'_> {
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

/// Parallel merging by maximal matchings (`first_iteration_only`: only the
/// edges selected at the first iteration are contracted).
pub fn build_parallel(
    scored: &ScoredRag,
    base: LabelMap,
    channels: usize,
    first_iteration_only: bool,
    metrics: &mut BuildMetrics,
) -> Result<Hierarchy, BuildError> {
    let model = *scored.model();
    let mut tree = Hierarchy::from_leaves(channels, model, base, leaves_of(scored))?;
    let mut rag = scored.rag.clone();
    let mut data = scored.data_terms().to_vec();
    let mut internal = vec![0.0; rag.vertex_count()];
    let mut node_of: Vec<u32> = (0..rag.vertex_count() as u32).collect();

    while rag.vertex_count() > 1 {
        if rag.edge_count() == 0 {
            return Err(BuildError::Disconnected(rag.vertex_count()));
        }
        let level = LevelGraph {
            rag: &rag,
            model,
            data: &data,
            internal: &internal,
        };
        let merges: Vec<SubsetMerge> = rag
            .edges()
            .par_iter()
            .map(|e| lambda_plus_subset(&level, e.a, &[e.a, e.b]))
            .collect::<Result<_, _>>()?;
        let keys: Vec<EdgeKey> = rag
            .edges()
            .iter()
            .zip(&merges)
            .map(|(e, m)| {
                let (x, y) = (node_of[e.a as usize], node_of[e.b as usize]);
                EdgeKey {
                    lambda: m.lambda,
                    lo: x.min(y),
                    hi: x.max(y),
                }
            })
            .collect();
        let endpoints: Vec<(u32, u32)> = rag.edges().iter().map(|e| (e.a, e.b)).collect();
        let state = mm_round(&keys, &edge_neighborhoods(rag.vertex_count(), &endpoints));
        let chosen = if first_iteration_only {
            state.first_selected()
        } else {
            state.selected()
        };
        if metrics.first_merge_lambda.is_none() {
            metrics.first_merge_lambda = chosen.iter().map(|&e| keys[e].lambda).min_by(f64::total_cmp);
        }
        let groups: Vec<Vec<u32>> = chosen.iter().map(|&e| vec![endpoints[e].0, endpoints[e].1]).collect();
        let (next, mapping) = rag.contract(&groups)?;

        // merge records per new vertex, then nodes in new-vertex order
        let mut merged_into: Vec<Option<usize>> = vec![None; next.vertex_count()];
        for &e in &chosen {
            merged_into[mapping[endpoints[e].0 as usize] as usize] = Some(e);
        }
        let mut next_node = vec![0u32; next.vertex_count()];
        let mut next_data = vec![0.0; next.vertex_count()];
        let mut next_internal = vec![0.0; next.vertex_count()];
        for (old, &new) in mapping.iter().enumerate() {
            if merged_into[new as usize].is_none() {
                next_node[new as usize] = node_of[old];
                next_data[new as usize] = data[old];
                next_internal[new as usize] = internal[old];
            }
        }
        for (new, rec) in merged_into.iter().enumerate() {
            if let Some(e) = *rec {
                let m = &merges[e];
                let (a, b) = endpoints[e];
                let children = vec![node_of[a as usize], node_of[b as usize]];
                let id = tree.add_node(children, m.stats.clone(), m.data_term, m.lambda)?;
                next_node[new] = id;
                next_data[new] = m.data_term;
                next_internal[new] = m.internal_contrast;
                metrics.merges += 1;
            }
        }
        metrics.record_level(
            rag.vertex_count(),
            next.vertex_count(),
            rag.edge_count(),
            next.edge_count(),
        );
        rag = next;
        node_of = next_node;
        data = next_data;
        internal = next_internal;
    }
    Ok(tree)
}

// --- pipeline --------------------------------------------------------------

/// Builds the raw merge tree for `config`, before scoring and cleaning.
pub fn build_raw(
    img: &RasterImage,
    partition: &LabelMap,
    config: &BuilderConfig,
) -> Result<(Hierarchy, BuildMetrics), BuildError> {
    let start = Instant::now();
    let rag = build_rag(partition, img)?;
    let scored = ScoredRag::new(rag, config.model);
    let mut metrics = BuildMetrics {
        heuristic: config.heuristic.to_string(),
        initial_regions: partition.region_count,
        ..Default::default()
    };
    let tree = match config.heuristic.max_card() {
        Some(card) => build_sequential(&scored, partition.clone(), img.channels, card, &mut metrics)?,
        None => build_parallel(
            &scored,
            partition.clone(),
            img.channels,
            config.heuristic == Heuristic::Mm1,
            &mut metrics,
        )?,
    };
    metrics.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((tree, metrics))
}

/// Full pipeline: build the merge tree, assign scales of appearance and clean
/// it into a persistent hierarchy.
pub fn build(
    img: &RasterImage,
    partition: &LabelMap,
    config: &BuilderConfig,
) -> Result<(Hierarchy, BuildMetrics), BuildError> {
    let start = Instant::now();
    let (mut tree, mut metrics) = build_raw(img, partition, config)?;
    tree.assign_scales()?;
    let clean = tree.clean();
    metrics.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((clean, metrics))
}
