//! Merge trees scored by an affine separable energy.
//!
//! Node ids are topologically ordered: children always have smaller ids than
//! their parent and the root is the last node. The bottom-up pass stores each
//! node's scale of appearance `λ⁺`; cleaning removes the nodes that never
//! enter an optimal cut; optimal cuts are then read top-down.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::energy::EnergyModel;
use crate::plf::{Line, PlConcave, PlfError};
use crate::raster::LabelMap;
use crate::regions::RegionStats;

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("node {node}: regularizer {parent} is not below the children's total {children}")]
    NotSubadditive { node: u32, parent: f64, children: f64 },
    #[error("invalid hierarchy: {0}")]
    Invalid(String),
    #[error("unsupported hierarchy file version {0:?}")]
    VersionMismatch(String),
    #[error("corrupt hierarchy file: {0}")]
    Corrupt(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl From<PlfError> for HierarchyError {
    fn from(e: PlfError) -> Self {
        HierarchyError::Invalid(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub parent: Option<u32>,
    pub children: Vec<u32>,
    pub stats: RegionStats,
    /// Fit-to-data term `D(R)`.
    pub data_term: f64,
    /// Regularizer `C(R)` (the perimeter).
    pub regularizer: f64,
    /// Scale of appearance `λ⁺(R)`. Before scoring, builders store the
    /// scale at which they performed the merge.
    pub scale: f64,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn energy_line(&self) -> Line {
        Line::new(self.data_term, self.regularizer)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hierarchy {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub model: EnergyModel,
    base: LabelMap,
    /// Initial region id → node containing it (a leaf unless cleaned away).
    leaf_of: Vec<u32>,
    nodes: Vec<Node>,
}

/// An antichain of nodes covering the image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cut {
    /// Sorted node ids.
    pub nodes: Vec<u32>,
}

impl Hierarchy {
    /// Starts a hierarchy whose leaves are the regions of `base`.
    pub fn from_leaves(
        channels: usize,
        model: EnergyModel,
        base: LabelMap,
        leaves: Vec<(RegionStats, f64)>,
    ) -> Result<Self, HierarchyError> {
        if leaves.len() != base.region_count || leaves.is_empty() {
            return Err(HierarchyError::Invalid(format!(
                "{} leaves for {} initial regions",
                leaves.len(),
                base.region_count
            )));
        }
        let nodes = leaves
            .into_iter()
            .map(|(stats, data_term)| Node {
                parent: None,
                children: Vec::new(),
                regularizer: stats.perimeter as f64,
                stats,
                data_term,
                scale: 0.0,
            })
            .collect();
        Ok(Self {
            width: base.width,
            height: base.height,
            channels,
            model,
            leaf_of: (0..base.region_count as u32).collect(),
            base,
            nodes,
        })
    }

    /// Appends a node over current roots `children`; returns its id.
    pub fn add_node(
        &mut self,
        children: Vec<u32>,
        stats: RegionStats,
        data_term: f64,
        scale: f64,
    ) -> Result<u32, HierarchyError> {
        let id = self.nodes.len() as u32;
        if children.is_empty() {
            return Err(HierarchyError::Invalid("internal node without children".into()));
        }
        for &c in &children {
            match self.nodes.get(c as usize) {
                None => return Err(HierarchyError::Invalid(format!("unknown child {c}"))),
                Some(n) if n.parent.is_some() => {
                    return Err(HierarchyError::Invalid(format!("node {c} already has a parent")))
                }
                _ => {}
            }
        }
        for &c in &children {
            self.nodes[c as usize].parent = Some(id);
        }
        self.nodes.push(Node {
            parent: None,
            children,
            regularizer: stats.perimeter as f64,
            stats,
            data_term,
            scale,
        });
        Ok(id)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: u32) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> u32 {
        self.nodes.len() as u32 - 1
    }

    pub fn base(&self) -> &LabelMap {
        &self.base
    }

    pub fn leaf_of(&self) -> &[u32] {
        &self.leaf_of
    }

    pub fn leaves(&self) -> impl Iterator<Item = u32> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_leaf())
            .map(|(i, _)| i as u32)
    }

    /// Structural checks: single root in last position, children before
    /// parents, consistent parent/child links.
    pub fn validate(&self) -> Result<(), HierarchyError> {
        let bad = |m: String| Err(HierarchyError::Invalid(m));
        let root = self.root();
        for (i, n) in self.nodes.iter().enumerate() {
            let i = i as u32;
            match n.parent {
                None if i != root => return bad(format!("node {i} has no parent but is not the root")),
                Some(_) if i == root => return bad("root has a parent".into()),
                Some(p) if p <= i || p > root => return bad(format!("node {i} has parent {p}")),
                Some(p) if !self.nodes[p as usize].children.contains(&i) => {
                    return bad(format!("node {p} does not list child {i}"))
                }
                _ => {}
            }
            for &c in &n.children {
                if self.nodes.get(c as usize).and_then(|cn| cn.parent) != Some(i) {
                    return bad(format!("child {c} of {i} does not point back"));
                }
            }
        }
        if self.leaf_of.len() != self.base.region_count {
            return bad("initial region map has the wrong length".into());
        }
        if let Some(&n) = self.leaf_of.iter().find(|&&n| n > root) {
            return bad(format!("initial region mapped to unknown node {n}"));
        }
        Ok(())
    }

    /// Bottom-up pass: envelope `E*_λ` and scale of appearance of every
    /// subtree. Leaves get their own line and scale zero.
    fn fold_envelopes(&self) -> Result<(Vec<PlConcave>, Vec<f64>), HierarchyError> {
        let mut env: Vec<PlConcave> = Vec::with_capacity(self.nodes.len());
        let mut scales = Vec::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.iter().enumerate() {
            if n.is_leaf() {
                env.push(PlConcave::from_line(n.data_term, n.regularizer));
                scales.push(0.0);
                continue;
            }
            let mut parts = env[n.children[0] as usize].clone();
            let mut children_c = self.nodes[n.children[0] as usize].regularizer;
            for &c in &n.children[1..] {
                parts = parts.sum(&env[c as usize]);
                children_c += self.nodes[c as usize].regularizer;
            }
            if n.regularizer.partial_cmp(&children_c) != Some(std::cmp::Ordering::Less) {
                return Err(HierarchyError::NotSubadditive {
                    node: i as u32,
                    parent: n.regularizer,
                    children: children_c,
                });
            }
            let (e, scale) = parts.min_with_line(n.data_term, n.regularizer)?;
            env.push(e);
            scales.push(scale);
        }
        Ok((env, scales))
    }

    /// Envelopes `E*_λ` of every subtree, recomputed from the stored terms.
    pub fn envelopes(&self) -> Result<Vec<PlConcave>, HierarchyError> {
        self.fold_envelopes().map(|(env, _)| env)
    }

    /// Sets `λ⁺` on every node: zero on leaves, and for an internal node the
    /// scale where its own energy line meets the sum of its children's
    /// envelopes.
    pub fn assign_scales(&mut self) -> Result<(), HierarchyError> {
        let (_, scales) = self.fold_envelopes()?;
        for (n, s) in self.nodes.iter_mut().zip(scales) {
            n.scale = s;
        }
        Ok(())
    }

    /// Removes every non-root node whose scale of appearance is not below its
    /// (surviving) parent's, reattaching its children to that parent. The
    /// result is a fixpoint: scales strictly increase toward the root.
    pub fn clean(&self) -> Hierarchy {
        let n = self.nodes.len();
        let root = n - 1;
        let mut keep = vec![true; n];
        // nearest surviving ancestor, filled top-down
        let mut anchor: Vec<usize> = vec![root; n];
        for i in (0..root).rev() {
            let p = self.nodes[i].parent.expect("non-root node has a parent") as usize;
            let up = if keep[p] { p } else { anchor[p] };
            anchor[i] = up;
            if self.nodes[i].scale >= self.nodes[up].scale {
                keep[i] = false;
            }
        }
        let mut new_id = vec![u32::MAX; n];
        let mut next = 0u32;
        for i in 0..n {
            if keep[i] {
                new_id[i] = next;
                next += 1;
            }
        }
        let surviving = |i: usize| if keep[i] { i } else { anchor[i] };
        let mut nodes: Vec<Node> = Vec::with_capacity(next as usize);
        for i in 0..n {
            if !keep[i] {
                continue;
            }
            let old = &self.nodes[i];
            nodes.push(Node {
                parent: old.parent.map(|_| new_id[anchor[i]]),
                children: Vec::new(),
                ..old.clone()
            });
        }
        for i in 0..n {
            if keep[i] && i != root {
                let p = new_id[anchor[i]] as usize;
                let id = new_id[i];
                nodes[p].children.push(id);
            }
        }
        let leaf_of = self.leaf_of.iter().map(|&l| new_id[surviving(l as usize)]).collect();
        Hierarchy {
            width: self.width,
            height: self.height,
            channels: self.channels,
            model: self.model,
            base: self.base.clone(),
            leaf_of,
            nodes,
        }
    }

    /// Whether scales strictly increase from every node to its parent.
    pub fn is_persistent(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| n.parent.is_none_or(|p| n.scale < self.nodes[p as usize].scale))
    }

    /// Top-down selection of the first node on each branch whose scale of
    /// appearance is at most `lambda`; leaves are taken when reached.
    pub fn optimal_cut(&self, lambda: f64) -> Cut {
        let mut selected = Vec::new();
        let mut stack = vec![self.root()];
        while let Some(v) = stack.pop() {
            let node = &self.nodes[v as usize];
            if node.scale <= lambda || node.is_leaf() {
                selected.push(v);
            } else {
                stack.extend(node.children.iter().copied());
            }
        }
        selected.sort_unstable();
        Cut { nodes: selected }
    }

    /// `Σ D(R) + λ Σ C(R)` over the cut.
    pub fn cut_energy(&self, cut: &Cut, lambda: f64) -> f64 {
        let (d, c) = cut.nodes.iter().fold((0.0, 0.0), |(d, c), &v| {
            let n = &self.nodes[v as usize];
            (d + n.data_term, c + n.regularizer)
        });
        d + lambda * c
    }

    /// Energy of the optimal cuts as a function of λ: the root envelope.
    pub fn energy_curve(&self) -> Result<PlConcave, HierarchyError> {
        Ok(self.envelopes()?.pop().expect("hierarchy has a root"))
    }

    /// Scale above which the optimal cut is the single root region.
    pub fn lambda_max(&self) -> f64 {
        self.nodes[self.root() as usize].scale
    }

    /// For every node, the selected cut node covering it, or `None` when the
    /// node lies strictly above the cut.
    fn cover(&self, cut: &Cut) -> Vec<Option<u32>> {
        let mut cover = vec![None; self.nodes.len()];
        for &v in &cut.nodes {
            cover[v as usize] = Some(v);
        }
        for i in (0..self.nodes.len()).rev() {
            if cover[i].is_none() {
                if let Some(p) = self.nodes[i].parent {
                    cover[i] = cover[p as usize];
                }
            }
        }
        cover
    }

    /// Per-pixel labeling induced by a cut.
    pub fn cut_label_map(&self, cut: &Cut) -> LabelMap {
        let cover = self.cover(cut);
        let raw: Vec<u32> = self
            .base
            .labels
            .iter()
            .map(|&r| cover[self.leaf_of[r as usize] as usize].expect("cut covers every leaf"))
            .collect();
        LabelMap::from_raw_labels(self.width, self.height, &raw).expect("non-empty grid")
    }

    /// Whether every node of `fine` lies inside some node of `coarse`.
    pub fn refines(&self, fine: &Cut, coarse: &Cut) -> bool {
        let cover = self.cover(coarse);
        fine.nodes.iter().all(|&v| cover[v as usize].is_some())
    }

    /// Mean-color rendering of a cut from the node statistics.
    pub fn render_cut(&self, cut: &Cut) -> crate::raster::RasterImage {
        let cover = self.cover(cut);
        let mut data = Vec::with_capacity(self.width * self.height * self.channels);
        for &r in &self.base.labels {
            let v = cover[self.leaf_of[r as usize] as usize].expect("cut covers every leaf");
            let mean = self.nodes[v as usize].stats.mean();
            data.extend_from_slice(&mean[..self.channels]);
        }
        crate::raster::RasterImage::new(self.width, self.height, self.channels, data).expect("consistent dimensions")
    }

    /// `node,parent,lambda_plus,area` rows; the root's parent is empty.
    pub fn write_nodes_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "node,parent,lambda_plus,area")?;
        for (i, n) in self.nodes.iter().enumerate() {
            let parent = n.parent.map(|p| p.to_string()).unwrap_or_default();
            writeln!(out, "{i},{parent},{},{}", n.scale, n.stats.area)?;
        }
        Ok(())
    }
}

// --- SSH1 container --------------------------------------------------------

const MAGIC_PREFIX: &[u8; 3] = b"SSH";
const VERSION: u8 = b'1';
const NO_PARENT: u32 = u32::MAX;

/// Encodes the `SSH1` container (all integers and floats little-endian):
/// magic, width, height, channels, node count, initial region count, energy
/// model, node table, initial-region-to-node map, per-pixel initial labels.
pub fn encode(h: &Hierarchy) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC_PREFIX);
    out.push(VERSION);
    for v in [h.width, h.height, h.channels, h.nodes.len(), h.base.region_count] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let (kind, center, steepness) = match h.model {
        EnergyModel::PiecewiseConstant => (0u32, 0.0, 0.0),
        EnergyModel::Contrast { center, steepness } => (1u32, center, steepness),
    };
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&center.to_le_bytes());
    out.extend_from_slice(&steepness.to_le_bytes());
    for n in &h.nodes {
        out.extend_from_slice(&n.parent.unwrap_or(NO_PARENT).to_le_bytes());
        out.extend_from_slice(&n.stats.area.to_le_bytes());
        for s in n.stats.sum {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&n.stats.sumsq.to_le_bytes());
        out.extend_from_slice(&n.stats.perimeter.to_le_bytes());
        out.extend_from_slice(&n.data_term.to_le_bytes());
        out.extend_from_slice(&n.regularizer.to_le_bytes());
        out.extend_from_slice(&n.scale.to_le_bytes());
    }
    for &l in &h.leaf_of {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for &l in &h.base.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], HierarchyError> {
        let end = self.pos + N;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| HierarchyError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(chunk.try_into().unwrap())
    }
    fn u32(&mut self) -> Result<u32, HierarchyError> {
        self.take::<4>().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Result<u64, HierarchyError> {
        self.take::<8>().map(u64::from_le_bytes)
    }
    fn f64(&mut self) -> Result<f64, HierarchyError> {
        self.take::<8>().map(f64::from_le_bytes)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Hierarchy, HierarchyError> {
    let corrupt = |m: &str| HierarchyError::Corrupt(m.to_string());
    if bytes.len() < 4 || &bytes[..3] != MAGIC_PREFIX {
        return Err(corrupt("missing SSH magic"));
    }
    if bytes[3] != VERSION {
        return Err(HierarchyError::VersionMismatch(
            String::from_utf8_lossy(&bytes[..4]).into_owned(),
        ));
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let width = cur.u32()? as usize;
    let height = cur.u32()? as usize;
    let channels = cur.u32()? as usize;
    let node_count = cur.u32()? as usize;
    let region_count = cur.u32()? as usize;
    if width == 0 || height == 0 || node_count == 0 || region_count == 0 || !(channels == 1 || channels == 3) {
        return Err(corrupt("bad header counts"));
    }
    // fixed-size payload must match exactly before allocating
    let expected = 4 + 20 + 20 + node_count * 76 + region_count * 4 + width * height * 4;
    if bytes.len() != expected {
        return Err(HierarchyError::Corrupt(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let model = match cur.u32()? {
        0 => {
            cur.f64()?;
            cur.f64()?;
            EnergyModel::PiecewiseConstant
        }
        1 => EnergyModel::Contrast {
            center: cur.f64()?,
            steepness: cur.f64()?,
        },
        k => return Err(HierarchyError::Corrupt(format!("unknown energy kind {k}"))),
    };
    let mut nodes = Vec::with_capacity(node_count);
    for _ in 0..node_count {
        let parent = match cur.u32()? {
            NO_PARENT => None,
            p => Some(p),
        };
        let area = cur.u64()?;
        let sum = [cur.f64()?, cur.f64()?, cur.f64()?];
        let sumsq = cur.f64()?;
        let perimeter = cur.u64()?;
        nodes.push(Node {
            parent,
            children: Vec::new(),
            stats: RegionStats {
                area,
                sum,
                sumsq,
                perimeter,
            },
            data_term: cur.f64()?,
            regularizer: cur.f64()?,
            scale: cur.f64()?,
        });
    }
    for i in 0..node_count {
        if let Some(p) = nodes[i].parent {
            let p = p as usize;
            if p <= i || p >= node_count {
                return Err(HierarchyError::Corrupt(format!("node {i} has invalid parent {p}")));
            }
            nodes[p].children.push(i as u32);
        }
    }
    let leaf_of = (0..region_count).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
    let labels = (0..width * height).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
    if labels.iter().any(|&l| l as usize >= region_count) {
        return Err(corrupt("pixel label out of range"));
    }
    let base = LabelMap {
        width,
        height,
        labels,
        region_count,
    };
    let h = Hierarchy {
        width,
        height,
        channels,
        model,
        base,
        leaf_of,
        nodes,
    };
    h.validate().map_err(|e| HierarchyError::Corrupt(e.to_string()))?;
    Ok(h)
}

pub fn save(h: &Hierarchy, path: impl AsRef<Path>) -> Result<(), HierarchyError> {
    let path = path.as_ref();
    fs::write(path, encode(h)).map_err(|source| HierarchyError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<Hierarchy, HierarchyError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| HierarchyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
