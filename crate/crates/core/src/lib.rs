//! Scale-set hierarchical image segmentation.
//!
//! Pipeline: an image and an initial partition ([`raster`]) give a region
//! adjacency graph ([`regions`]); a heuristic ([`builders`]) merges regions
//! under an affine separable energy ([`energy`]) into a [`hierarchy`] whose
//! nodes carry their scale of appearance, computed with concave
//! piecewise-linear envelopes ([`plf`]). Optimal cuts at any λ are then a
//! top-down walk, and [`eval`] measures the resulting energy curves.

pub mod builders;
pub mod energy;
pub mod eval;
pub mod hierarchy;
pub mod plf;
pub mod raster;
pub mod regions;

pub use builders::{build, BuildError, BuildMetrics, BuilderConfig, Heuristic};
pub use energy::EnergyModel;
pub use eval::{check_bounds, mean_curve, normalize, quality_area, EvalError, NormalizedCurve};
pub use hierarchy::{Cut, Hierarchy, HierarchyError};
pub use plf::PlConcave;
pub use raster::{LabelMap, RasterError, RasterImage};

use thiserror::Error;

/// Any error of the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Region(#[from] regions::RegionError),
    #[error(transparent)]
    Energy(#[from] energy::EnergyError),
    #[error(transparent)]
    Plf(#[from] plf::PlfError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
