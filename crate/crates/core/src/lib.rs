//! Automatic coin-die analysis.
//!
//! Scans of coin faces are registered pairwise, scored with a same-die
//! probability computed from cloud-to-cloud distance histograms, and clustered
//! by thresholding the resulting similarity graph. The crate also carries the
//! evaluation metrics, a synthetic corpus generator and the orchestration used
//! by the `diematch` command-line tool and HTTP service.

pub mod geom3d;
pub mod pipeline;
pub mod diegraph;
pub mod evalmetrics;
pub mod register;
pub mod simscore;

pub use geom3d::{PointCloud, RigidTransform, SpatialIndex};
