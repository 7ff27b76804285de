//! Rigid pose candidates from a single correspondence.
//!
//! When both endpoints of a match carry a local frame with three distinct
//! axis lengths, aligning the two frames (longest axis to longest axis)
//! determines the rotation up to the four proper sign assignments of the
//! eigenvector columns; the anchor pair then fixes the translation. Scale
//! gates reject matches whose axis-length ratios imply a non-rigid scene.

use nalgebra::Matrix3;
use thiserror::Error;

use crate::geometry::{Correspondence, RigidTransform};
use crate::quadric::{Degeneracy, QuadricPatch};
use crate::scalar::{real, Real};

/// Default implied-scale acceptance band.
pub const DEFAULT_SCALE_BOUNDS: (f64, f64) = (0.9, 1.1);
/// Maximum relative deviation of any per-axis ratio from the geometric mean.
const AXIS_RATIO_TOL: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolverError {
    #[error("single-correspondence solving requires both patches to be Distinct")]
    NotDistinct,
}

/// A correspondence together with the quadric patches fitted at its two
/// endpoints (source patch in P, target patch in Q).
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedCorrespondence<T: Real> {
    pub correspondence: Correspondence<T>,
    pub patch_p: QuadricPatch<T>,
    pub patch_q: QuadricPatch<T>,
}

impl<T: Real> EnrichedCorrespondence<T> {
    /// Both patches have three distinct axis lengths.
    pub fn is_solver_eligible(&self) -> bool {
        self.patch_p.degeneracy == Degeneracy::Distinct
            && self.patch_q.degeneracy == Degeneracy::Distinct
    }
}

/// One rigid pose hypothesis produced from one correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseCandidate<T: Real> {
    pub transform: RigidTransform<T>,
    /// Geometric mean of the target/source axis-length ratios.
    pub scale_estimate: T,
    /// Index of the originating correspondence in the full list.
    pub source: usize,
    /// Which of the four proper sign assignments produced the rotation.
    pub sign_variant: usize,
}

/// The four diagonal sign matrices with determinant +1, in a fixed order so
/// candidate enumeration is deterministic.
const PROPER_SIGNS: [[f64; 3]; 4] = [
    [1.0, 1.0, 1.0],
    [1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
];

/// Solves for up to four pose candidates from one solver-eligible
/// correspondence. `corr_index` is the correspondence's position in the full
/// list, recorded on every candidate for downstream tie-breaking.
///
/// Returns an empty list when the scale gates reject the match: the implied
/// uniform scale must fall inside `scale_bounds` and every per-axis ratio
/// must stay within 10% of their geometric mean.
pub fn solve_from_correspondence<T: Real>(
    ec: &EnrichedCorrespondence<T>,
    scale_bounds: (T, T),
    corr_index: usize,
) -> Result<Vec<PoseCandidate<T>>, SolverError> {
    if !ec.is_solver_eligible() {
        return Err(SolverError::NotDistinct);
    }

    let lp = ec.patch_p.frame.lengths_array();
    let lq = ec.patch_q.frame.lengths_array();
    // axes are stored sorted by length, so the assignment is the identity
    let ratios = [lq[0] / lp[0], lq[1] / lp[1], lq[2] / lp[2]];
    let scale = (ratios[0] * ratios[1] * ratios[2]).cbrt();

    if scale < scale_bounds.0 || scale > scale_bounds.1 {
        return Ok(Vec::new());
    }
    let ratio_tol: T = real(AXIS_RATIO_TOL);
    for r in ratios {
        if (r / scale - T::one()).abs() > ratio_tol {
            return Ok(Vec::new());
        }
    }

    let vp = ec.patch_p.frame.axes;
    let vq = ec.patch_q.frame.axes;
    let p_anchor = ec.patch_p.anchor.coords();
    let q_anchor = ec.patch_q.anchor.coords();

    let mut candidates = Vec::with_capacity(4);
    for (variant, signs) in PROPER_SIGNS.iter().enumerate() {
        let mut signed = vq;
        for col in 0..3 {
            if signs[col] < 0.0 {
                signed.column_mut(col).neg_mut();
            }
        }
        let rotation: Matrix3<T> = signed * vp.transpose();
        let translation = q_anchor - rotation * p_anchor;
        let transform = RigidTransform::new(rotation, translation)
            .expect("product of right-handed orthonormal frames is a rotation");
        candidates.push(PoseCandidate {
            transform,
            scale_estimate: scale,
            source: corr_index,
            sign_variant: variant,
        });
    }
    Ok(candidates)
}

/// Keeps exactly the correspondences where both patches are Distinct.
pub fn filter_solver_eligible<T: Real>(
    ecs: Vec<EnrichedCorrespondence<T>>,
) -> Vec<EnrichedCorrespondence<T>> {
    ecs.into_iter().filter(|ec| ec.is_solver_eligible()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use crate::quadric::{
        build_patch, classify_degeneracy, extract_frame, fit_quadric, quadric_normal,
        QuadricCoefficients, DEGENERACY_TOL,
    };
    use crate::spatial::build_index;
    use crate::PointCloud;
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_bounds() -> (f64, f64) {
        DEFAULT_SCALE_BOUNDS
    }

    fn random_rigid(rng: &mut ChaCha8Rng) -> RigidTransform<f64> {
        let axis = nalgebra::Unit::new_normalize(Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        let angle = rng.random_range(-3.0..3.0);
        RigidTransform::new(
            *Rotation3::from_axis_angle(&axis, angle).matrix(),
            Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ),
        )
        .unwrap()
    }

    fn patch_from_coeffs(
        coeffs: QuadricCoefficients<f64>,
        anchor: Point3<f64>,
    ) -> QuadricPatch<f64> {
        let frame = extract_frame(&coeffs).unwrap();
        QuadricPatch {
            anchor,
            coefficients: coeffs,
            frame,
            normal: quadric_normal(&coeffs, &anchor).unwrap(),
            degeneracy: classify_degeneracy(&frame, DEGENERACY_TOL),
        }
    }

    /// Fits a patch to noiseless samples of an ellipsoid (optionally moved
    /// by `t` and scaled by `s`), anchored at the sample point for
    /// (theta0, phi0).
    fn fitted_patch(
        semi: [f64; 3],
        theta0: f64,
        phi0: f64,
        t: Option<&RigidTransform<f64>>,
        s: f64,
        rng: &mut ChaCha8Rng,
    ) -> QuadricPatch<f64> {
        let at = |theta: f64, phi: f64| {
            let p = Point3::new(
                s * semi[0] * phi.sin() * theta.cos(),
                s * semi[1] * phi.sin() * theta.sin(),
                s * semi[2] * phi.cos(),
            );
            match t {
                Some(t) => t.apply(&p),
                None => p,
            }
        };
        let anchor = at(theta0, phi0);
        let pts: Vec<_> = (0..90)
            .map(|_| {
                at(
                    theta0 + rng.random_range(-0.5..0.5),
                    phi0 + rng.random_range(-0.5..0.5),
                )
            })
            .collect();
        let coeffs = fit_quadric(&anchor, &pts).unwrap();
        patch_from_coeffs(coeffs, anchor)
    }

    fn angular_distance(a: &RigidTransform<f64>, b: &RigidTransform<f64>) -> f64 {
        let rel = a.rotation().transpose() * b.rotation();
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    #[test]
    fn self_match_yields_identity_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let patch = fitted_patch([2.0, 1.0, 0.5], 0.8, 1.0, None, 1.0, &mut rng);
        let ec = EnrichedCorrespondence {
            correspondence: Correspondence::new(0, 0),
            patch_p: patch.clone(),
            patch_q: patch,
        };
        let candidates = solve_from_correspondence(&ec, default_bounds(), 0).unwrap();
        assert_eq!(candidates.len(), 4);
        // variant 0 (all-positive signs) is the identity for a self-match
        let id = &candidates[0].transform;
        assert!(angular_distance(id, &RigidTransform::identity()) < 1e-9);
        assert!(id.translation().norm() < 1e-9);
        assert_relative_eq!(candidates[0].scale_estimate, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn recovers_known_transform_from_one_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let gt = random_rigid(&mut rng);
            let semi = [2.0, 1.0, 0.5];
            let (theta0, phi0) = (0.3 + 0.1 * trial as f64, 1.1);
            let patch_p = fitted_patch(semi, theta0, phi0, None, 1.0, &mut rng);
            let patch_q = fitted_patch(semi, theta0, phi0, Some(&gt), 1.0, &mut rng);
            let ec = EnrichedCorrespondence {
                correspondence: Correspondence::new(0, 0),
                patch_p,
                patch_q,
            };
            let candidates = solve_from_correspondence(&ec, default_bounds(), trial).unwrap();
            assert!(!candidates.is_empty());
            let best = candidates
                .iter()
                .map(|c| {
                    (
                        angular_distance(&c.transform, &gt),
                        (c.transform.translation() - gt.translation()).norm(),
                    )
                })
                .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
                .unwrap();
            assert!(best.0 < 1e-5, "trial {trial}: rotation error {}", best.0);
            assert!(best.1 < 1e-7, "trial {trial}: translation error {}", best.1);
            for c in &candidates {
                assert_eq!(c.source, trial);
            }
        }
    }

    #[test]
    fn scaled_target_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gt = random_rigid(&mut rng);
        let patch_p = fitted_patch([2.0, 1.0, 0.5], 0.7, 1.0, None, 1.0, &mut rng);
        let patch_q = fitted_patch([2.0, 1.0, 0.5], 0.7, 1.0, Some(&gt), 1.5, &mut rng);
        let ec = EnrichedCorrespondence {
            correspondence: Correspondence::new(0, 0),
            patch_p,
            patch_q,
        };
        let candidates = solve_from_correspondence(&ec, default_bounds(), 0).unwrap();
        assert!(candidates.is_empty(), "scale 1.5 must be gated out");
    }

    #[test]
    fn inconsistent_axis_ratios_are_rejected() {
        // two patches whose overall scale is fine but whose per-axis ratios
        // disagree: anisotropic deformation, not a rigid match
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let patch_p = fitted_patch([2.0, 1.0, 0.5], 0.8, 1.0, None, 1.0, &mut rng);
        let patch_q = fitted_patch([2.0 / 1.25, 1.0, 0.5 * 1.25], 0.8, 1.0, None, 1.0, &mut rng);
        let ec = EnrichedCorrespondence {
            correspondence: Correspondence::new(0, 0),
            patch_p,
            patch_q,
        };
        let candidates = solve_from_correspondence(&ec, default_bounds(), 0).unwrap();
        assert!(candidates.is_empty());
    }

    #[test]
    fn non_distinct_patch_is_a_caller_bug() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let sphere = {
            let cloud = PointCloud::new(
                (0..500)
                    .map(|_| {
                        let theta = rng.random_range(0.0..std::f64::consts::TAU);
                        let phi: f64 = rng.random_range(0.4..2.7);
                        Point3::new(
                            phi.sin() * theta.cos(),
                            phi.sin() * theta.sin(),
                            phi.cos(),
                        )
                    })
                    .collect(),
            );
            let index = build_index(&cloud).unwrap();
            build_patch(&cloud, &index, 0, 50).unwrap()
        };
        let distinct = fitted_patch([2.0, 1.0, 0.5], 0.8, 1.0, None, 1.0, &mut rng);
        let ec = EnrichedCorrespondence {
            correspondence: Correspondence::new(0, 0),
            patch_p: sphere,
            patch_q: distinct,
        };
        assert_eq!(
            solve_from_correspondence(&ec, default_bounds(), 0),
            Err(SolverError::NotDistinct)
        );
    }

    #[test]
    fn candidates_are_proper_and_mutually_distant() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let gt = random_rigid(&mut rng);
        let patch_p = fitted_patch([2.5, 1.2, 0.6], 0.5, 1.2, None, 1.0, &mut rng);
        let patch_q = fitted_patch([2.5, 1.2, 0.6], 0.5, 1.2, Some(&gt), 1.0, &mut rng);
        let ec = EnrichedCorrespondence {
            correspondence: Correspondence::new(0, 0),
            patch_p,
            patch_q,
        };
        let candidates = solve_from_correspondence(&ec, default_bounds(), 0).unwrap();
        assert_eq!(candidates.len(), 4);
        for c in &candidates {
            assert_relative_eq!(c.transform.rotation().determinant(), 1.0, epsilon = 1e-9);
        }
        for i in 0..4 {
            for j in (i + 1)..4 {
                let angle =
                    angular_distance(&candidates[i].transform, &candidates[j].transform);
                assert!(
                    angle > std::f64::consts::FRAC_PI_2,
                    "variants {i} and {j} only {angle} rad apart"
                );
            }
        }
    }

    #[test]
    fn rotations_are_invariant_to_joint_uniform_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let gt = random_rigid(&mut rng);
        let make_pair = |s: f64, rng: &mut ChaCha8Rng| {
            let patch_p = fitted_patch([2.0, 1.0, 0.5], 0.6, 1.1, None, s, rng);
            let patch_q = fitted_patch([2.0, 1.0, 0.5], 0.6, 1.1, Some(&gt), s, rng);
            EnrichedCorrespondence {
                correspondence: Correspondence::new(0, 0),
                patch_p,
                patch_q,
            }
        };
        // identical sample parameters in both scales
        let mut rng_a = ChaCha8Rng::seed_from_u64(29);
        let mut rng_b = ChaCha8Rng::seed_from_u64(29);
        let base = make_pair(1.0, &mut rng_a);
        let scaled = make_pair(2.0, &mut rng_b);
        let ca = solve_from_correspondence(&base, default_bounds(), 0).unwrap();
        let cb = solve_from_correspondence(&scaled, default_bounds(), 0).unwrap();
        assert_eq!(ca.len(), cb.len());
        for (a, b) in ca.iter().zip(cb.iter()) {
            assert!(angular_distance(&a.transform, &b.transform) < 1e-6);
        }
    }

    #[test]
    fn filter_keeps_only_distinct_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let distinct = fitted_patch([2.0, 1.0, 0.5], 0.8, 1.0, None, 1.0, &mut rng);
        let sphere_cloud = PointCloud::new(
            (0..500)
                .map(|_| {
                    let theta = rng.random_range(0.0..std::f64::consts::TAU);
                    let phi: f64 = rng.random_range(0.4..2.7);
                    Point3::new(phi.sin() * theta.cos(), phi.sin() * theta.sin(), phi.cos())
                })
                .collect(),
        );
        let sphere = {
            let index = build_index(&sphere_cloud).unwrap();
            build_patch(&sphere_cloud, &index, 0, 50).unwrap()
        };

        let make = |p: &QuadricPatch<f64>, q: &QuadricPatch<f64>| EnrichedCorrespondence {
            correspondence: Correspondence::new(0, 0),
            patch_p: p.clone(),
            patch_q: q.clone(),
        };

        // all-sphere input: nothing survives
        let all_sphere = vec![make(&sphere, &sphere); 5];
        assert!(filter_solver_eligible(all_sphere).is_empty());

        // mixed input: only the distinct-distinct pair survives
        let mixed = vec![
            make(&distinct, &sphere),
            make(&distinct, &distinct),
            make(&sphere, &distinct),
        ];
        let kept = filter_solver_eligible(mixed);
        assert_eq!(kept.len(), 1);
        assert!(kept[0].is_solver_eligible());
    }

    #[test]
    fn distinct_only_input_passes_through_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut ecs = Vec::new();
        for i in 0..1000 {
            // random distinct axis lengths with well separated ratios
            let l1 = rng.random_range(2.0..3.0);
            let l2 = rng.random_range(1.0..1.5);
            let l3 = rng.random_range(0.3..0.7);
            let coeffs = {
                // canonical ellipsoid with those semi-axes
                let q = [1.0 / (l1 * l1), 1.0 / (l2 * l2), 1.0 / (l3 * l3)];
                let alpha = -3.0 / (q[0] + q[1] + q[2]);
                QuadricCoefficients {
                    a: alpha * q[0],
                    b: alpha * q[1],
                    c: alpha * q[2],
                    d: 0.0,
                    e: 0.0,
                    f: 0.0,
                    g: 0.0,
                    h: 0.0,
                    i: 0.0,
                    j: -alpha,
                }
            };
            let anchor = Point3::new(0.0, 0.0, l3);
            let patch = patch_from_coeffs(coeffs, anchor);
            ecs.push(EnrichedCorrespondence {
                correspondence: Correspondence::new(i, i),
                patch_p: patch.clone(),
                patch_q: patch,
            });
        }
        let n = ecs.len();
        assert_eq!(filter_solver_eligible(ecs).len(), n);
    }
}
