//! Point cloud registration from quadric-enriched correspondences.
//!
//! The pipeline fits a local quadric surface around each 3D-3D match,
//! derives a repeatable local frame from it, estimates a rigid pose from a
//! single correspondence, and selects the best hypothesis by inlier scoring
//! with optional local optimization. Classic weighted Kabsch alignment and a
//! 3-point RANSAC are included as baselines, together with the usual
//! registration metrics, a synthetic scene generator, and file I/O.

pub mod estimator;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod quadric;
pub mod scalar;
pub mod solver;
pub mod spatial;
pub mod synth;

pub use estimator::{
    correspondence_normals, count_inliers, enrich_correspondences, local_optimize, pose_loss,
    pose_rmse, qreg_register, qreg_register_clouds, ransac_register, CandidateScore,
    EstimatorConfig, EstimatorError, RegistrationReport, DEFAULT_PATCH_NEIGHBORS,
};
pub use geometry::{kabsch_weighted, Correspondence, GeometryError, Point3, PointCloud, RigidTransform};
pub use io::{
    read_cloud, read_correspondences, read_transform, write_cloud, write_correspondences,
    write_report, write_transform, CloudFormat, IoError,
};
pub use metrics::{
    chamfer_modified, evaluate_pair, recall_3dmatch, recall_kitti, rmse_gt_correspondences, rre,
    rte, summarize, BenchmarkSummary, PairEvaluation,
};
pub use quadric::{
    build_patch, classify_degeneracy, extract_frame, fit_quadric, quadric_normal, Degeneracy,
    LocalFrame, QuadricCoefficients, QuadricError, QuadricPatch,
};
pub use scalar::Real;
pub use solver::{
    filter_solver_eligible, solve_from_correspondence, EnrichedCorrespondence, PoseCandidate,
    SolverError,
};
pub use spatial::{build_index, SpatialError, SpatialIndex};
pub use synth::{
    generate, perturb_transform, random_transform, GroundTruth, OutlierModel, SceneData,
    SceneSpec, Surface, SynthError,
};

/// Concrete double-precision aliases; the file formats and the CLI work in
/// `f64` end to end.
pub type Point3F64 = Point3<f64>;
pub type PointCloudF64 = PointCloud<f64>;
pub type RigidTransformF64 = RigidTransform<f64>;
pub type CorrespondenceF64 = Correspondence<f64>;
