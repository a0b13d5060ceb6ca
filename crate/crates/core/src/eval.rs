//! Normalized energy curves, their analytic bounds, corpus means and the
//! area-based hierarchy quality.
//!
//! The coarsest partition `P_max` has energy `D_I + λ C_I`, with `D_I` the
//! data term of the whole image and `C_I = 2(W + H)` its border length. For
//! `x = λ / λ_max` and `E_I = λ_max C_I / D_I`, every optimal-cut curve obeys
//!
//! ```text
//! x ≤ 1 + (x - 1) / (1 + x E_I) ≤ E_λ(C*) / E_λ(P_max) ≤ 1
//! ```

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::builders::{build, BuildError, BuildMetrics, BuilderConfig, Heuristic};
use crate::energy::EnergyModel;
use crate::hierarchy::{Hierarchy, HierarchyError};
use crate::plf::{Line, PlConcave};
use crate::raster::{LabelMap, RasterImage};

pub const DEFAULT_GRID: usize = 256;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("normalization undefined: the image is constant (zero total data term)")]
    ConstantImage,
    #[error("normalization undefined: lambda_max is zero")]
    ZeroLambdaMax,
    #[error("grid needs at least 2 points, got {0}")]
    Grid(usize),
    #[error("no curves to average")]
    Empty,
    #[error("curves have different grids")]
    GridMismatch,
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Build(#[from] BuildError),
}

/// `1 + (x - 1) / (1 + x E_I)`.
pub fn lower_bound(x: f64, e_i: f64) -> f64 {
    1.0 + (x - 1.0) / (1.0 + x * e_i)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub x: f64,
    pub lambda: f64,
    pub value: f64,
    pub lower: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormalizedCurve {
    /// Sorted by `x`; the uniform grid plus every breakpoint below `λ_max`.
    pub samples: Vec<Sample>,
    /// Indices of the uniform grid points within `samples`.
    #[serde(skip)]
    pub grid: Vec<usize>,
    pub d_i: f64,
    pub c_i: f64,
    pub lambda_max: f64,
    pub e_i: f64,
}

/// Samples the normalized optimal-cut energy of `h` on `grid_len` uniform
/// points of `[0, 1]` plus the breakpoints of its energy curve.
pub fn normalize(h: &Hierarchy, grid_len: usize) -> Result<NormalizedCurve, EvalError> {
    if grid_len < 2 {
        return Err(EvalError::Grid(grid_len));
    }
    let root = h.node(h.root());
    let d_i = root.data_term;
    let c_i = 2.0 * (h.width + h.height) as f64;
    if d_i <= 0.0 {
        return Err(EvalError::ConstantImage);
    }
    let lambda_max = h.lambda_max();
    if lambda_max <= 0.0 {
        return Err(EvalError::ZeroLambdaMax);
    }
    let curve = h.energy_curve()?;
    let e_i = lambda_max * c_i / d_i;
    let sample = |x: f64, lambda: f64| Sample {
        x,
        lambda,
        value: curve.eval(lambda) / (d_i + lambda * c_i),
        lower: lower_bound(x, e_i),
    };

    let mut tagged: Vec<(Sample, bool)> = (0..grid_len)
        .map(|i| {
            let x = i as f64 / (grid_len - 1) as f64;
            (sample(x, x * lambda_max), true)
        })
        .collect();
    tagged.extend(
        curve
            .breakpoints()
            .iter()
            .filter(|&&b| b < lambda_max)
            .map(|&b| (sample(b / lambda_max, b), false)),
    );
    tagged.sort_by(|a, b| a.0.x.total_cmp(&b.0.x).then(b.1.cmp(&a.1)));
    tagged.dedup_by(|later, earlier| later.0.x == earlier.0.x);
    let grid = tagged.iter().enumerate().filter(|(_, t)| t.1).map(|(i, _)| i).collect();
    Ok(NormalizedCurve {
        samples: tagged.into_iter().map(|t| t.0).collect(),
        grid,
        d_i,
        c_i,
        lambda_max,
        e_i,
    })
}

impl NormalizedCurve {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x_lambda,normalized_energy,lower_bound")?;
        for s in &self.samples {
            writeln!(out, "{},{},{}", s.x, s.value, s.lower)?;
        }
        Ok(())
    }

    /// Value at the last sample (`x = 1`).
    pub fn value_at_one(&self) -> f64 {
        self.samples.last().map_or(f64::NAN, |s| s.value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundsReport {
    /// Largest amount by which a sample leaves `[lower, 1]`.
    pub max_violation: f64,
    /// Samples violating the bounds by more than `tolerance`.
    pub violations: usize,
    pub tolerance: f64,
}

impl BoundsReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

pub const BOUND_TOLERANCE: f64 = 1e-9;

pub fn check_bounds(nc: &NormalizedCurve) -> BoundsReport {
    let mut max_violation: f64 = 0.0;
    let mut violations = 0;
    for s in &nc.samples {
        let v = (s.lower - s.value).max(s.value - 1.0).max(0.0);
        if v > BOUND_TOLERANCE {
            violations += 1;
        }
        max_violation = max_violation.max(v);
    }
    BoundsReport {
        max_violation,
        violations,
        tolerance: BOUND_TOLERANCE,
    }
}

/// Pointwise mean over the uniform grid. Bounds are per image, so none are
/// attached.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanCurve {
    pub x: Vec<f64>,
    pub value: Vec<f64>,
}

impl MeanCurve {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x_lambda,normalized_energy")?;
        for (x, v) in self.x.iter().zip(&self.value) {
            writeln!(out, "{x},{v}")?;
        }
        Ok(())
    }
}

pub fn mean_curve(curves: &[NormalizedCurve]) -> Result<MeanCurve, EvalError> {
    let first = curves.first().ok_or(EvalError::Empty)?;
    let n = first.grid.len();
    if curves.iter().any(|c| c.grid.len() != n) {
        return Err(EvalError::GridMismatch);
    }
    let x: Vec<f64> = first.grid.iter().map(|&i| first.samples[i].x).collect();
    let value = (0..n)
        .map(|k| curves.iter().map(|c| c.samples[c.grid[k]].value).sum::<f64>() / curves.len() as f64)
        .collect();
    Ok(MeanCurve { x, value })
}

/// `∫_0^{λ_max} (E_λ(P_max) − E_λ(C*)) dλ`; larger is better. Zero for a
/// single-region hierarchy.
pub fn quality_area(h: &Hierarchy) -> Result<f64, EvalError> {
    let curve: PlConcave = h.energy_curve()?;
    let root = h.node(h.root());
    let coarsest = Line::new(root.data_term, 2.0 * (h.width + h.height) as f64);
    Ok(curve.area_above(coarsest, 0.0, h.lambda_max()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveSummary {
    pub lambda_max: f64,
    #[serde(rename = "E_I")]
    pub e_i: f64,
    pub quality_area: f64,
    pub bound_max_violation: f64,
}

pub fn summarize(h: &Hierarchy, nc: &NormalizedCurve) -> Result<CurveSummary, EvalError> {
    Ok(CurveSummary {
        lambda_max: nc.lambda_max,
        e_i: nc.e_i,
        quality_area: quality_area(h)?,
        bound_max_violation: check_bounds(nc).max_violation,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonEntry {
    pub heuristic: String,
    pub summary: CurveSummary,
    pub metrics: BuildMetrics,
    #[serde(skip)]
    pub curve: NormalizedCurve,
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    /// In the requested heuristic order.
    pub entries: Vec<ComparisonEntry>,
    /// Heuristic names by decreasing quality area (ties: request order).
    pub ranking: Vec<String>,
    /// `max λ_max − min λ_max` over the heuristics.
    pub lambda_max_spread: f64,
}

/// Builds every heuristic on one image and ranks them by quality area.
pub fn compare(
    img: &RasterImage,
    partition: &LabelMap,
    heuristics: &[Heuristic],
    model: EnergyModel,
) -> Result<Comparison, EvalError> {
    let entries: Vec<ComparisonEntry> = heuristics
        .par_iter()
        .map(|&heuristic| {
            let config = BuilderConfig::new(heuristic, model)?;
            let (h, metrics) = build(img, partition, &config)?;
            let curve = normalize(&h, DEFAULT_GRID)?;
            Ok(ComparisonEntry {
                heuristic: heuristic.to_string(),
                summary: summarize(&h, &curve)?,
                metrics,
                curve,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| {
        entries[b]
            .summary
            .quality_area
            .total_cmp(&entries[a].summary.quality_area)
            .then(a.cmp(&b))
    });
    let lambdas = entries.iter().map(|e| e.summary.lambda_max);
    let spread = lambdas.clone().fold(f64::NEG_INFINITY, f64::max) - lambdas.fold(f64::INFINITY, f64::min);
    Ok(Comparison {
        ranking: order.iter().map(|&i| entries[i].heuristic.clone()).collect(),
        lambda_max_spread: if entries.is_empty() { 0.0 } else { spread },
        entries,
    })
}

impl Comparison {
    /// `heuristic,x_lambda,normalized_energy,lower_bound` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "heuristic,x_lambda,normalized_energy,lower_bound")?;
        for e in &self.entries {
            for s in &e.curve.samples {
                writeln!(out, "{},{},{},{}", e.heuristic, s.x, s.value, s.lower)?;
            }
        }
        Ok(())
    }
}
