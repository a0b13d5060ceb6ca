//! Region statistics and the region adjacency graph.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::raster::{LabelMap, RasterImage};

#[derive(Debug, Error, PartialEq)]
pub enum RegionError {
    #[error("regions {0} and {1} are not adjacent")]
    NonAdjacent(u32, u32),
    #[error("region {0} cannot be merged with itself")]
    SelfMerge(u32),
    #[error("vertex {0} does not exist")]
    UnknownVertex(u32),
    #[error("vertex {0} appears in more than one group")]
    OverlappingGroups(u32),
    #[error("group {0:?} does not induce a connected subgraph")]
    DisconnectedGroup(Vec<u32>),
    #[error("label map and image dimensions differ")]
    DimensionMismatch,
    #[error("merging requires a shared boundary of length at least 1")]
    NoSharedBoundary,
}

/// Exact accumulated statistics of a region. Channels beyond the image's
/// channel count stay zero.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionStats {
    pub area: u64,
    pub sum: [f64; 3],
    /// Sum over pixels of the squared norm of the pixel color.
    pub sumsq: f64,
    /// Unit boundary length, image border included.
    pub perimeter: u64,
}

impl RegionStats {
    /// Statistics of a single pixel (perimeter 4).
    pub fn pixel(color: &[f64]) -> Self {
        let mut sum = [0.0; 3];
        sum[..color.len()].copy_from_slice(color);
        Self {
            area: 1,
            sum,
            sumsq: color.iter().map(|v| v * v).sum(),
            perimeter: 4,
        }
    }

    pub fn mean(&self) -> [f64; 3] {
        let n = self.area as f64;
        [self.sum[0] / n, self.sum[1] / n, self.sum[2] / n]
    }

    /// Squared error around the mean color.
    pub fn squared_error(&self) -> f64 {
        let norm2: f64 = self.sum.iter().map(|s| s * s).sum();
        (self.sumsq - norm2 / self.area as f64).max(0.0)
    }

    /// Adds `other`'s moments and perimeter without removing the shared boundary.
    pub fn absorb(&mut self, other: &RegionStats) {
        self.area += other.area;
        for (s, o) in self.sum.iter_mut().zip(other.sum.iter()) {
            *s += o;
        }
        self.sumsq += other.sumsq;
        self.perimeter += other.perimeter;
    }

    /// Statistics of the union of two adjacent regions sharing `shared_len`
    /// unit boundary segments.
    pub fn merged(&self, other: &RegionStats, shared_len: u64) -> Result<RegionStats, RegionError> {
        if shared_len == 0 {
            return Err(RegionError::NoSharedBoundary);
        }
        let mut m = self.clone();
        m.absorb(other);
        m.perimeter -= 2 * shared_len;
        Ok(m)
    }
}

/// Accumulated boundary between two adjacent regions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeWeight {
    /// Number of 4-adjacent pixel pairs straddling the boundary.
    pub shared_len: u64,
    /// Sum over those pairs of the Euclidean color difference.
    pub grad_sum: f64,
}

impl EdgeWeight {
    pub fn mean_gradient(&self) -> f64 {
        self.grad_sum / self.shared_len as f64
    }

    pub fn fuse(&mut self, other: &EdgeWeight) {
        self.shared_len += other.shared_len;
        self.grad_sum += other.grad_sum;
    }
}

/// Read access to a partition's adjacency structure, shared by the immutable
/// [`Rag`] and the builders' working graphs.
pub trait RegionGraph {
    fn region_stats(&self, v: u32) -> &RegionStats;
    /// Neighbors of `v` in ascending id order.
    fn neighbors(&self, v: u32) -> Vec<(u32, EdgeWeight)>;
    fn edge_weight(&self, a: u32, b: u32) -> Option<EdgeWeight>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct RagEdge {
    pub a: u32,
    pub b: u32,
    pub weight: EdgeWeight,
}

/// Region adjacency graph. Edges are stored once with `a < b`, sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct Rag {
    pub width: usize,
    pub height: usize,
    stats: Vec<RegionStats>,
    edges: Vec<RagEdge>,
    /// Per vertex: (neighbor, edge index), ascending by neighbor.
    adjacency: Vec<Vec<(u32, usize)>>,
}

/// Per-region statistics of a partition.
pub fn compute_stats(map: &LabelMap, img: &RasterImage) -> Result<Vec<RegionStats>, RegionError> {
    if map.width != img.width || map.height != img.height {
        return Err(RegionError::DimensionMismatch);
    }
    let (w, h) = (map.width, map.height);
    let mut stats: Vec<Option<RegionStats>> = vec![None; map.region_count];
    for (p, &l) in map.labels.iter().enumerate() {
        let (x, y) = (p % w, p / w);
        let l = l as usize;
        let mut px = RegionStats::pixel(img.pixel(p));
        // count only sides facing the border or another region
        let mut sides = 0;
        let same = |q: usize| map.labels[q] as usize == l;
        if x == 0 || !same(p - 1) {
            sides += 1;
        }
        if x + 1 == w || !same(p + 1) {
            sides += 1;
        }
        if y == 0 || !same(p - w) {
            sides += 1;
        }
        if y + 1 == h || !same(p + w) {
            sides += 1;
        }
        px.perimeter = sides;
        match &mut stats[l] {
            Some(s) => s.absorb(&px),
            slot @ None => *slot = Some(px),
        }
    }
    Ok(stats
        .into_iter()
        .map(|s| s.expect("label map ids are contiguous"))
        .collect())
}

fn color_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Builds the adjacency graph of a valid label map.
pub fn build_rag(map: &LabelMap, img: &RasterImage) -> Result<Rag, RegionError> {
    let stats = compute_stats(map, img)?;
    let (w, h) = (map.width, map.height);
    let mut acc: HashMap<(u32, u32), EdgeWeight> = HashMap::new();
    let mut visit = |p: usize, q: usize| {
        let (a, b) = (map.labels[p], map.labels[q]);
        if a != b {
            let key = (a.min(b), a.max(b));
            let e = acc.entry(key).or_insert(EdgeWeight {
                shared_len: 0,
                grad_sum: 0.0,
            });
            e.shared_len += 1;
            e.grad_sum += color_distance(img.pixel(p), img.pixel(q));
        }
    };
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                visit(p, p + 1);
            }
            if y + 1 < h {
                visit(p, p + w);
            }
        }
    }
    let mut edges: Vec<RagEdge> = acc
        .into_iter()
        .map(|((a, b), weight)| RagEdge { a, b, weight })
        .collect();
    edges.sort_by_key(|e| (e.a, e.b));
    Ok(Rag::from_parts(w, h, stats, edges))
}

impl Rag {
    /// Assembles a graph from vertex statistics and sorted `a < b` edges.
    pub fn from_parts(width: usize, height: usize, stats: Vec<RegionStats>, edges: Vec<RagEdge>) -> Self {
        let mut adjacency = vec![Vec::new(); stats.len()];
        for (i, e) in edges.iter().enumerate() {
            adjacency[e.a as usize].push((e.b, i));
            adjacency[e.b as usize].push((e.a, i));
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        Self {
            width,
            height,
            stats,
            edges,
            adjacency,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.stats.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn stats(&self) -> &[RegionStats] {
        &self.stats
    }

    pub fn edges(&self) -> &[RagEdge] {
        &self.edges
    }

    pub fn degree(&self, v: u32) -> usize {
        self.adjacency[v as usize].len()
    }

    /// Edge indices incident to `v`, ascending by neighbor id.
    pub fn incident_edges(&self, v: u32) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[v as usize].iter().map(|&(_, e)| e)
    }

    pub fn edge_index(&self, a: u32, b: u32) -> Option<usize> {
        let adj = self.adjacency.get(a as usize)?;
        adj.binary_search_by_key(&b, |&(n, _)| n).ok().map(|i| adj[i].1)
    }

    /// Statistics of the union of two adjacent vertices.
    pub fn merged_stats(&self, a: u32, b: u32) -> Result<RegionStats, RegionError> {
        if a == b {
            return Err(RegionError::SelfMerge(a));
        }
        for v in [a, b] {
            if v as usize >= self.vertex_count() {
                return Err(RegionError::UnknownVertex(v));
            }
        }
        let e = self.edge_index(a, b).ok_or(RegionError::NonAdjacent(a, b))?;
        self.stats[a as usize]
            .merged(&self.stats[b as usize], self.edges[e].weight.shared_len)
            .map_err(|_| RegionError::NonAdjacent(a, b))
    }

    fn group_is_connected(&self, group: &[u32]) -> bool {
        let mut seen = vec![group[0]];
        let mut stack = vec![group[0]];
        while let Some(v) = stack.pop() {
            for &(n, _) in &self.adjacency[v as usize] {
                if group.contains(&n) && !seen.contains(&n) {
                    seen.push(n);
                    stack.push(n);
                }
            }
        }
        seen.len() == group.len()
    }

    /// Contracts each group of vertices into one vertex. Vertices in no group
    /// stay on their own. New ids follow the smallest old id of each group.
    ///
    /// Returns the contracted graph and the old-to-new id map.
    pub fn contract(&self, groups: &[Vec<u32>]) -> Result<(Rag, Vec<u32>), RegionError> {
        let n = self.vertex_count();
        let mut owner: Vec<Option<usize>> = vec![None; n];
        let mut all_groups: Vec<Vec<u32>> = Vec::with_capacity(n);
        for g in groups.iter().filter(|g| !g.is_empty()) {
            let mut g = g.clone();
            g.sort_unstable();
            g.dedup();
            for &v in &g {
                if v as usize >= n {
                    return Err(RegionError::UnknownVertex(v));
                }
                if owner[v as usize].is_some() {
                    return Err(RegionError::OverlappingGroups(v));
                }
                owner[v as usize] = Some(all_groups.len());
            }
            if !self.group_is_connected(&g) {
                return Err(RegionError::DisconnectedGroup(g));
            }
            all_groups.push(g);
        }
        for (v, o) in owner.iter_mut().enumerate() {
            if o.is_none() {
                *o = Some(all_groups.len());
                all_groups.push(vec![v as u32]);
            }
        }
        let mut order: Vec<usize> = (0..all_groups.len()).collect();
        order.sort_by_key(|&g| all_groups[g][0]);
        let mut new_id_of_group = vec![0u32; all_groups.len()];
        for (new_id, &g) in order.iter().enumerate() {
            new_id_of_group[g] = new_id as u32;
        }
        let mapping: Vec<u32> = (0..n).map(|v| new_id_of_group[owner[v].unwrap()]).collect();

        let mut stats: Vec<RegionStats> = order
            .iter()
            .map(|&g| {
                let members = &all_groups[g];
                let mut s = self.stats[members[0] as usize].clone();
                for &m in &members[1..] {
                    s.absorb(&self.stats[m as usize]);
                }
                s
            })
            .collect();
        let mut fused: BTreeMap<(u32, u32), EdgeWeight> = BTreeMap::new();
        for e in &self.edges {
            let (na, nb) = (mapping[e.a as usize], mapping[e.b as usize]);
            if na == nb {
                stats[na as usize].perimeter -= 2 * e.weight.shared_len;
                continue;
            }
            fused
                .entry((na.min(nb), na.max(nb)))
                .and_modify(|w| w.fuse(&e.weight))
                .or_insert(e.weight);
        }
        let edges = fused
            .into_iter()
            .map(|((a, b), weight)| RagEdge { a, b, weight })
            .collect();
        Ok((Rag::from_parts(self.width, self.height, stats, edges), mapping))
    }
}

impl RegionGraph for Rag {
    fn region_stats(&self, v: u32) -> &RegionStats {
        &self.stats[v as usize]
    }

    fn neighbors(&self, v: u32) -> Vec<(u32, EdgeWeight)> {
        self.adjacency[v as usize]
            .iter()
            .map(|&(n, e)| (n, self.edges[e].weight))
            .collect()
    }

    fn edge_weight(&self, a: u32, b: u32) -> Option<EdgeWeight> {
        self.edge_index(a, b).map(|e| self.edges[e].weight)
    }
}
