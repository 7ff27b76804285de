//! Registration quality metrics: rotation/translation errors, correspondence
//! RMSE, recall under 3DMatch- and KITTI-style protocols, and a modified
//! chamfer distance evaluated against raw (untransformed) clouds.

use rayon::prelude::*;

use crate::estimator::pose_rmse;
use crate::geometry::{Correspondence, PointCloud, RigidTransform};
use crate::scalar::{real, Real};
use crate::spatial::build_index;

/// RMSE threshold (scene units) under which a pair counts as registered in
/// the 3DMatch-style protocol.
pub const RECALL_3DMATCH_RMSE_MAX: f64 = 0.2;
/// Rotation threshold (degrees) of the KITTI-style protocol.
pub const RECALL_KITTI_RRE_MAX_DEG: f64 = 5.0;
/// Translation threshold (scene units) of the KITTI-style protocol.
pub const RECALL_KITTI_RTE_MAX: f64 = 2.0;

/// Relative rotation error in degrees: the geodesic distance
/// `arccos((trace(R_estᵀ·R_gt) − 1) / 2)` between the two rotations. The
/// arccos argument is clamped to `[-1, 1]` to survive rounding at 0°/180°.
pub fn rre<T: Real>(est: &RigidTransform<T>, gt: &RigidTransform<T>) -> T {
    let rel = est.rotation().transpose() * gt.rotation();
    let two = real::<T>(2.0);
    let cos = nalgebra::clamp((rel.trace() - T::one()) / two, -T::one(), T::one());
    cos.acos() * real(180.0) / T::pi()
}

/// Relative translation error: the Euclidean distance between the estimated
/// and ground-truth translation vectors.
pub fn rte<T: Real>(est: &RigidTransform<T>, gt: &RigidTransform<T>) -> T {
    (est.translation() - gt.translation()).norm()
}

/// Root-mean-square error of the ground-truth correspondences under the
/// estimated pose. Shares its implementation with the estimator's
/// [`pose_rmse`].
pub fn rmse_gt_correspondences<T: Real>(
    est: &RigidTransform<T>,
    gt_corrs: &[Correspondence<T>],
    source: &PointCloud<T>,
    target: &PointCloud<T>,
) -> T {
    pose_rmse(est, gt_corrs, source, target)
}

/// Fraction of pairs whose RMSE is strictly below `threshold`.
pub fn recall_3dmatch<T: Real>(pair_rmse: &[T], threshold: T) -> T {
    if pair_rmse.is_empty() {
        return T::zero();
    }
    let hits = pair_rmse.iter().filter(|&&r| r < threshold).count();
    real::<T>(hits as f64) / real(pair_rmse.len() as f64)
}

/// Fraction of pairs satisfying both `rre < rre_max` and `rte < rte_max`.
///
/// # Panics
/// If the two lists have different lengths.
pub fn recall_kitti<T: Real>(rre_list: &[T], rte_list: &[T], rre_max: T, rte_max: T) -> T {
    assert_eq!(
        rre_list.len(),
        rte_list.len(),
        "rre/rte lists must be aligned"
    );
    if rre_list.is_empty() {
        return T::zero();
    }
    let hits = rre_list
        .iter()
        .zip(rte_list)
        .filter(|&(&r, &t)| r < rre_max && t < rte_max)
        .count();
    real::<T>(hits as f64) / real(rre_list.len() as f64)
}

/// Modified chamfer distance: mean squared nearest-neighbor distance from the
/// transformed source into the raw target, plus mean squared nearest-neighbor
/// distance from the target into the transformed raw source. Nearest
/// neighbors are always searched in the *raw* clouds, which may be denser
/// than the evaluated (e.g. downsampled) ones.
///
/// # Panics
/// If any cloud is empty.
pub fn chamfer_modified<T: Real>(
    p: &PointCloud<T>,
    p_raw: &PointCloud<T>,
    q: &PointCloud<T>,
    q_raw: &PointCloud<T>,
    t: &RigidTransform<T>,
) -> T {
    assert!(
        !p.is_empty() && !p_raw.is_empty() && !q.is_empty() && !q_raw.is_empty(),
        "chamfer_modified needs non-empty clouds"
    );
    let q_raw_index = build_index(q_raw).expect("non-empty raw target");
    let p_raw_moved = p_raw.transformed(t);
    let p_raw_index = build_index(&p_raw_moved).expect("non-empty raw source");

    let forward: T = p
        .points()
        .par_iter()
        .map(|point| {
            let moved = t.apply(point);
            let (_, d) = q_raw_index.nearest(&moved);
            d * d
        })
        .reduce(T::zero, |a, b| a + b);
    let backward: T = q
        .points()
        .par_iter()
        .map(|point| {
            let (_, d) = p_raw_index.nearest(point);
            d * d
        })
        .reduce(T::zero, |a, b| a + b);
    forward / real(p.len() as f64) + backward / real(q.len() as f64)
}

/// Per-pair evaluation under both protocols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEvaluation<T: Real> {
    pub rre_degrees: T,
    pub rte_units: T,
    pub rmse_units: T,
    pub registered_3dmatch: bool,
    pub registered_kitti: bool,
}

/// Evaluates one estimated pose against ground truth using the default
/// protocol thresholds.
pub fn evaluate_pair<T: Real>(
    est: &RigidTransform<T>,
    gt: &RigidTransform<T>,
    gt_corrs: &[Correspondence<T>],
    source: &PointCloud<T>,
    target: &PointCloud<T>,
) -> PairEvaluation<T> {
    let rre_degrees = rre(est, gt);
    let rte_units = rte(est, gt);
    let rmse_units = rmse_gt_correspondences(est, gt_corrs, source, target);
    PairEvaluation {
        rre_degrees,
        rte_units,
        rmse_units,
        registered_3dmatch: rmse_units < real(RECALL_3DMATCH_RMSE_MAX),
        registered_kitti: rre_degrees < real(RECALL_KITTI_RRE_MAX_DEG)
            && rte_units < real(RECALL_KITTI_RTE_MAX),
    }
}

/// Aggregate over a benchmark run: recall plus medians over registered pairs
/// and plain means over all valid pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkSummary<T: Real> {
    pub registration_recall: T,
    /// Median RRE over pairs registered under the 3DMatch protocol; `None`
    /// when no pair registered.
    pub median_rre: Option<T>,
    pub median_rte: Option<T>,
    pub mean_rre: T,
    pub mean_rte: T,
    pub mean_rmse: T,
}

fn median<T: Real>(values: &mut [T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / real(2.0)
    })
}

/// Aggregates per-pair evaluations: recall is the registered fraction under
/// the 3DMatch protocol, medians run over registered pairs only, and means
/// run over every pair.
///
/// # Panics
/// If `pairs` is empty.
pub fn summarize<T: Real>(pairs: &[PairEvaluation<T>]) -> BenchmarkSummary<T> {
    assert!(!pairs.is_empty(), "summarize needs at least one pair");
    let n = real::<T>(pairs.len() as f64);
    let registered: Vec<&PairEvaluation<T>> =
        pairs.iter().filter(|p| p.registered_3dmatch).collect();
    let mut reg_rre: Vec<T> = registered.iter().map(|p| p.rre_degrees).collect();
    let mut reg_rte: Vec<T> = registered.iter().map(|p| p.rte_units).collect();
    BenchmarkSummary {
        registration_recall: real::<T>(registered.len() as f64) / n,
        median_rre: median(&mut reg_rre),
        median_rte: median(&mut reg_rte),
        mean_rre: pairs.iter().map(|p| p.rre_degrees).fold(T::zero(), |a, b| a + b) / n,
        mean_rte: pairs.iter().map(|p| p.rte_units).fold(T::zero(), |a, b| a + b) / n,
        mean_rmse: pairs.iter().map(|p| p.rmse_units).fold(T::zero(), |a, b| a + b) / n,
    }
}
