//! Prioritized view-cluster selection and ranking for multi-view stereo.
//!
//! Given a posed camera network, a sparse point cloud, and a coarse surface
//! mesh, the library prepares the mesh to a working resolution, computes
//! per-triangle visibility, selects a partner set for every key view, and
//! greedily ranks the resulting view clusters so that reconstruction quality
//! per processed cluster is maximized.

pub mod bvh;
pub mod confidence;
pub mod error;
pub mod fulfillment;
pub mod io;
pub mod meshprep;
pub mod partner;
pub mod pipeline;
pub mod ranking;
pub mod scene;
pub mod simeval;
pub mod visibility;

pub use error::{Error, Result};
pub use scene::{Camera, QualityConfig, SparsePointCloud, SurfaceMesh};
