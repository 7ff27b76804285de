//! Geometric primitives shared by every stage of the pipeline: points,
//! clouds, rigid transforms, correspondences, and the weighted
//! Kabsch-Umeyama alignment solver.

use nalgebra::{Matrix3, Vector3, SVD};
use thiserror::Error;

use crate::scalar::{real, Real};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("point coordinates must be finite")]
    NonFinite,
    #[error("matrix is not a rotation (not orthonormal or det != +1)")]
    NotARotation,
    #[error("alignment needs equally sized inputs with >= 3 points (src {src}, dst {dst}, weights {weights})")]
    BadAlignmentInput {
        src: usize,
        dst: usize,
        weights: usize,
    },
    #[error("weights must be non-negative and not all zero")]
    InvalidWeights,
    #[error("degenerate input: weighted cross-covariance has rank < 2")]
    DegenerateInput,
    #[error("normals must match point count and have unit length")]
    BadNormals,
}

/// Orthonormality tolerance: 1e-9 for `f64`, widened for scalar types whose
/// epsilon is coarser than that.
pub(crate) fn rotation_tol<T: Real>() -> T {
    let floor: T = real(1e-9);
    let eps_scaled = T::default_epsilon() * real(100.0);
    if eps_scaled > floor {
        eps_scaled
    } else {
        floor
    }
}

/// A 3D point with finite coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3<T: Real> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Point3<T> {
    /// Panics if any coordinate is non-finite; use [`Point3::try_new`] on
    /// untrusted input.
    pub fn new(x: T, y: T, z: T) -> Self {
        Self::try_new(x, y, z).expect("point coordinates must be finite")
    }

    pub fn try_new(x: T, y: T, z: T) -> Result<Self, GeometryError> {
        if x.is_finite() && y.is_finite() && z.is_finite() {
            Ok(Self { x, y, z })
        } else {
            Err(GeometryError::NonFinite)
        }
    }

    pub fn origin() -> Self {
        Self {
            x: T::zero(),
            y: T::zero(),
            z: T::zero(),
        }
    }

    #[inline]
    pub fn coords(&self) -> Vector3<T> {
        Vector3::new(self.x, self.y, self.z)
    }

    #[inline]
    pub fn from_coords(v: Vector3<T>) -> Self {
        Self {
            x: v.x,
            y: v.y,
            z: v.z,
        }
    }

    pub fn distance(&self, other: &Self) -> T {
        (self.coords() - other.coords()).norm()
    }

    pub fn distance_squared(&self, other: &Self) -> T {
        (self.coords() - other.coords()).norm_squared()
    }
}

/// Ordered, index-stable set of 3D points with optional unit normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T: Real> {
    points: Vec<Point3<T>>,
    normals: Option<Vec<Vector3<T>>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Point3<T>>) -> Self {
        Self {
            points,
            normals: None,
        }
    }

    /// Attaches per-point normals; each must be unit length within 1e-9.
    pub fn with_normals(
        points: Vec<Point3<T>>,
        normals: Vec<Vector3<T>>,
    ) -> Result<Self, GeometryError> {
        if normals.len() != points.len() {
            return Err(GeometryError::BadNormals);
        }
        let tol = rotation_tol::<T>();
        for n in &normals {
            if !n.norm().is_finite() || (n.norm() - T::one()).abs() > tol {
                return Err(GeometryError::BadNormals);
            }
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn point(&self, index: usize) -> &Point3<T> {
        &self.points[index]
    }

    #[inline]
    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3<T>]> {
        self.normals.as_deref()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3<T>> {
        self.points.iter()
    }

    /// Appends a point, preserving the order of existing indices.
    pub fn push(&mut self, p: Point3<T>) {
        assert!(
            self.normals.is_none(),
            "cannot push points into a cloud with normals"
        );
        self.points.push(p);
    }

    /// New cloud with every point (and normal) mapped through `t`.
    pub fn transformed(&self, t: &RigidTransform<T>) -> Self {
        Self {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| t.rotation() * n).collect()),
        }
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bounding_box(&self) -> Option<(Point3<T>, Point3<T>)> {
        let first = self.points.first()?;
        let mut lo = first.coords();
        let mut hi = lo;
        for p in &self.points[1..] {
            let c = p.coords();
            for i in 0..3 {
                if c[i] < lo[i] {
                    lo[i] = c[i];
                }
                if c[i] > hi[i] {
                    hi[i] = c[i];
                }
            }
        }
        Some((Point3::from_coords(lo), Point3::from_coords(hi)))
    }
}

/// Rigid motion `p -> R p + t` with `R` in SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T: Real> {
    rotation: Matrix3<T>,
    translation: Vector3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates that `rotation` is a proper rotation; small orthonormality
    /// drift (beyond the 1e-9 tolerance) is repaired by SVD projection.
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self, GeometryError> {
        if !rotation.iter().all(|v| v.is_finite()) || !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let rotation = project_to_rotation(&rotation)?;
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    #[inline]
    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    /// `R p + t`.
    #[inline]
    pub fn apply(&self, p: &Point3<T>) -> Point3<T> {
        Point3::from_coords(self.rotation * p.coords() + self.translation)
    }

    /// Rotates a direction without translating it.
    #[inline]
    pub fn apply_vector(&self, v: &Vector3<T>) -> Vector3<T> {
        self.rotation * v
    }

    /// `(self ∘ other)(p) = self(other(p))`.
    pub fn compose(&self, other: &Self) -> Self {
        let rotation = renormalize(self.rotation * other.rotation);
        Self {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// `{R^T, -R^T t}`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Row-major 4x4 homogeneous matrix (last row 0 0 0 1).
    pub fn to_homogeneous_rows(&self) -> [[T; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2]],
            [T::zero(), T::zero(), T::zero(), T::one()],
        ]
    }
}

fn orthonormality_drift<T: Real>(m: &Matrix3<T>) -> T {
    let gram = m.transpose() * m - Matrix3::identity();
    let mut worst = T::zero();
    for v in gram.iter() {
        if v.abs() > worst {
            worst = v.abs();
        }
    }
    let det_err = (m.determinant() - T::one()).abs();
    if det_err > worst {
        worst = det_err;
    }
    worst
}

fn project_to_rotation<T: Real>(m: &Matrix3<T>) -> Result<Matrix3<T>, GeometryError> {
    if m.determinant() <= T::zero() {
        return Err(GeometryError::NotARotation);
    }
    if orthonormality_drift(m) <= rotation_tol::<T>() {
        return Ok(*m);
    }
    let svd = SVD::new(*m, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::NotARotation),
    };
    let mut projected = u * v_t;
    if projected.determinant() < T::zero() {
        let mut u = u;
        u.column_mut(2).neg_mut();
        projected = u * v_t;
    }
    if orthonormality_drift(&projected) <= rotation_tol::<T>() {
        Ok(projected)
    } else {
        Err(GeometryError::NotARotation)
    }
}

/// Re-projects products of valid rotations when float drift exceeds the
/// tolerance. Inputs this close to SO(3) always project successfully.
fn renormalize<T: Real>(m: Matrix3<T>) -> Matrix3<T> {
    if orthonormality_drift(&m) <= rotation_tol::<T>() {
        m
    } else {
        project_to_rotation(&m).expect("product of rotations must stay near SO(3)")
    }
}

/// A putative match between `source_index` in P and `target_index` in Q,
/// with the matcher's confidence in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence<T: Real> {
    pub source_index: usize,
    pub target_index: usize,
    pub score: T,
}

impl<T: Real> Correspondence<T> {
    pub fn new(source_index: usize, target_index: usize) -> Self {
        Self {
            source_index,
            target_index,
            score: T::one(),
        }
    }

    pub fn with_score(source_index: usize, target_index: usize, score: T) -> Self {
        debug_assert!(score >= T::zero() && score <= T::one());
        Self {
            source_index,
            target_index,
            score,
        }
    }

    /// Bounds-checks every correspondence against the two cloud sizes.
    pub fn validate_indices(
        corrs: &[Correspondence<T>],
        source_len: usize,
        target_len: usize,
    ) -> Result<(), String> {
        for (i, c) in corrs.iter().enumerate() {
            if c.source_index >= source_len || c.target_index >= target_len {
                return Err(format!(
                    "correspondence {i} references ({}, {}) outside cloud sizes ({source_len}, {target_len})",
                    c.source_index, c.target_index
                ));
            }
        }
        Ok(())
    }
}

/// Weighted Kabsch-Umeyama: the rotation and translation minimizing
/// `sum_i w_i ||R src_i + t - dst_i||^2`, with the reflection corrected
/// through the sign of the smallest singular value.
pub fn kabsch_weighted<T: Real>(
    src: &[Point3<T>],
    dst: &[Point3<T>],
    weights: &[T],
) -> Result<RigidTransform<T>, GeometryError> {
    if src.len() != dst.len() || src.len() != weights.len() || src.len() < 3 {
        return Err(GeometryError::BadAlignmentInput {
            src: src.len(),
            dst: dst.len(),
            weights: weights.len(),
        });
    }
    let mut weight_sum = T::zero();
    for &w in weights {
        if w < T::zero() || !w.is_finite() {
            return Err(GeometryError::InvalidWeights);
        }
        weight_sum += w;
    }
    if weight_sum <= T::zero() {
        return Err(GeometryError::InvalidWeights);
    }

    let mut mu_src = Vector3::zeros();
    let mut mu_dst = Vector3::zeros();
    for i in 0..src.len() {
        mu_src += src[i].coords() * weights[i];
        mu_dst += dst[i].coords() * weights[i];
    }
    mu_src /= weight_sum;
    mu_dst /= weight_sum;

    let mut cross = Matrix3::zeros();
    for i in 0..src.len() {
        let s = src[i].coords() - mu_src;
        let d = dst[i].coords() - mu_dst;
        cross += (d * s.transpose()) * weights[i];
    }
    cross /= weight_sum;

    let svd = SVD::new(cross, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::DegenerateInput),
    };
    let sigma = svd.singular_values;
    // rank < 2: all the data sits on a line (or a point).
    if sigma[0] <= T::zero() || sigma[1] <= sigma[0] * real(1e-9) {
        return Err(GeometryError::DegenerateInput);
    }

    let det_sign = (u * v_t).determinant();
    let mut correction = Matrix3::identity();
    if det_sign < T::zero() {
        correction[(2, 2)] = -T::one();
    }
    let rotation = renormalize(u * correction * v_t);
    let translation = mu_dst - rotation * mu_src;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rot_z<T: Real>(deg: f64) -> Matrix3<T> {
        *Rotation3::from_axis_angle(&Vector3::z_axis(), real::<T>(deg.to_radians())).matrix()
    }

    fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform<f64> {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let axis = nalgebra::Unit::new_normalize(axis);
        let angle: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let rot = *Rotation3::from_axis_angle(&axis, angle).matrix();
        let t = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        RigidTransform::new(rot, t).unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng) -> Point3<f64> {
        Point3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        )
    }

    // Independent straight-line matrix-vector product used as the
    // duplicate-path oracle for `apply`.
    fn apply_oracle(t: &RigidTransform<f64>, p: &Point3<f64>) -> [f64; 3] {
        let r = t.rotation();
        let tr = t.translation();
        let v = [p.x, p.y, p.z];
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = r[(i, 0)] * v[0] + r[(i, 1)] * v[1] + r[(i, 2)] * v[2] + tr[i];
        }
        out
    }

    #[test]
    fn point_rejects_non_finite() {
        assert!(Point3::<f64>::try_new(f64::NAN, 0.0, 0.0).is_err());
        assert!(Point3::<f64>::try_new(0.0, f64::INFINITY, 0.0).is_err());
        assert!(Point3::<f64>::try_new(1.0, 2.0, 3.0).is_ok());
    }

    #[test]
    fn apply_identity_and_axis_rotation() {
        let id = RigidTransform::<f64>::identity();
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(id.apply(&p), p);

        let t = RigidTransform::new(rot_z::<f64>(90.0), Vector3::zeros()).unwrap();
        let q = t.apply(&Point3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(q.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(q.y, 1.0, epsilon = 1e-12);
        assert_relative_eq!(q.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn apply_matches_duplicate_path_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let t = random_transform(&mut rng);
            let p = random_point(&mut rng);
            let got = t.apply(&p);
            let want = apply_oracle(&t, &p);
            assert_relative_eq!(got.x, want[0], epsilon = 1e-14);
            assert_relative_eq!(got.y, want[1], epsilon = 1e-14);
            assert_relative_eq!(got.z, want[2], epsilon = 1e-14);
        }
    }

    #[test]
    fn compose_and_invert_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let t = random_transform(&mut rng);
            let round = t.compose(&t.inverse());
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_relative_eq!(round.rotation[(i, j)], expect, epsilon = 1e-9);
                }
                assert_relative_eq!(round.translation[i], 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn compose_identity_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let t = random_transform(&mut rng);
        let composed = RigidTransform::identity().compose(&t);
        assert_eq!(composed.rotation, t.rotation);
        assert_eq!(composed.translation, t.translation);
    }

    #[test]
    fn compose_matches_sequential_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let t1 = random_transform(&mut rng);
            let t2 = random_transform(&mut rng);
            let p = random_point(&mut rng);
            let composed = t1.compose(&t2).apply(&p);
            let sequential = t1.apply(&t2.apply(&p));
            assert!(composed.distance(&sequential) < 1e-12);
        }
    }

    #[test]
    fn invert_translation_only() {
        let t = RigidTransform::<f64>::from_translation(Vector3::new(1.0, -2.0, 0.5));
        let inv = t.inverse();
        assert_eq!(inv.rotation, Matrix3::identity());
        assert_eq!(inv.translation, Vector3::new(-1.0, 2.0, -0.5));
    }

    #[test]
    fn apply_preserves_pairwise_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..200 {
            let t = random_transform(&mut rng);
            let a = random_point(&mut rng);
            let b = random_point(&mut rng);
            let before = a.distance(&b);
            let after = t.apply(&a).distance(&t.apply(&b));
            assert!((before - after).abs() < 1e-9);
        }
    }

    #[test]
    fn kabsch_identity_on_equal_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let pts: Vec<_> = (0..12).map(|_| random_point(&mut rng)).collect();
        let weights: Vec<f64> = (0..12).map(|i| 0.25 + (i as f64) * 0.1).collect();
        let t = kabsch_weighted(&pts, &pts, &weights).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(t.rotation[(i, j)], expect, epsilon = 1e-10);
            }
            assert_relative_eq!(t.translation[i], 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn kabsch_recovers_synthetic_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..20 {
            let gt = random_transform(&mut rng);
            let src: Vec<_> = (0..15).map(|_| random_point(&mut rng)).collect();
            let dst: Vec<_> = src.iter().map(|p| gt.apply(p)).collect();
            let w = vec![1.0; src.len()];
            let est = kabsch_weighted(&src, &dst, &w).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert_relative_eq!(est.rotation[(i, j)], gt.rotation[(i, j)], epsilon = 1e-9);
                }
                assert_relative_eq!(est.translation[i], gt.translation[i], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn kabsch_ignores_zero_weight_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let gt = random_transform(&mut rng);
        let mut src: Vec<_> = (0..10).map(|_| random_point(&mut rng)).collect();
        let mut dst: Vec<_> = src.iter().map(|p| gt.apply(p)).collect();
        let mut w = vec![1.0; 10];
        // two wildly wrong pairs, masked out by zero weight
        src.push(Point3::new(50.0, 0.0, 0.0));
        dst.push(Point3::new(-90.0, 3.0, 8.0));
        src.push(Point3::new(0.0, -70.0, 2.0));
        dst.push(Point3::new(4.0, 44.0, -1.0));
        w.push(0.0);
        w.push(0.0);
        let est = kabsch_weighted(&src, &dst, &w).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(est.rotation[(i, j)], gt.rotation[(i, j)], epsilon = 1e-9);
            }
            assert_relative_eq!(est.translation[i], gt.translation[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn kabsch_invariant_to_weight_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let src: Vec<_> = (0..20).map(|_| random_point(&mut rng)).collect();
        let dst: Vec<_> = (0..20).map(|_| random_point(&mut rng)).collect();
        let w1: Vec<f64> = (0..20).map(|_| rng.random_range(0.1..2.0)).collect();
        let w2: Vec<f64> = w1.iter().map(|w| w * 2.0).collect();
        let t1 = kabsch_weighted(&src, &dst, &w1).unwrap();
        let t2 = kabsch_weighted(&src, &dst, &w2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((t1.rotation[(i, j)] - t2.rotation[(i, j)]).abs() < 1e-12);
            }
            assert!((t1.translation[i] - t2.translation[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn kabsch_rejects_degenerate_input() {
        // collinear points
        let src: Vec<_> = (0..6)
            .map(|i| Point3::new(i as f64, 2.0 * i as f64, -i as f64))
            .collect();
        let dst = src.clone();
        let w = vec![1.0; 6];
        assert_eq!(
            kabsch_weighted(&src, &dst, &w).unwrap_err(),
            GeometryError::DegenerateInput
        );
        // coincident points
        let same = vec![Point3::new(1.0, 1.0, 1.0); 5];
        assert_eq!(
            kabsch_weighted(&same, &same, &[1.0; 5]).unwrap_err(),
            GeometryError::DegenerateInput
        );
    }

    #[test]
    fn kabsch_residual_beats_random_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let src: Vec<_> = (0..25).map(|_| random_point(&mut rng)).collect();
        let dst: Vec<_> = (0..25).map(|_| random_point(&mut rng)).collect();
        let w: Vec<f64> = (0..25).map(|_| rng.random_range(0.2..1.0)).collect();
        let est = kabsch_weighted(&src, &dst, &w).unwrap();
        let residual = |t: &RigidTransform<f64>| -> f64 {
            src.iter()
                .zip(&dst)
                .zip(&w)
                .map(|((s, d), w)| w * t.apply(s).distance_squared(d))
                .sum()
        };
        let best = residual(&est);
        for _ in 0..100 {
            let t = random_transform(&mut rng);
            assert!(best <= residual(&t) + 1e-9);
        }
    }

    #[test]
    fn rigid_transform_rejects_reflection() {
        let mut m = Matrix3::<f64>::identity();
        m[(2, 2)] = -1.0;
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn rigid_transform_reprojects_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(111);
        let t = random_transform(&mut rng);
        let drifted = t.rotation * 1.000001;
        let repaired = RigidTransform::new(drifted, Vector3::zeros()).unwrap();
        assert!(orthonormality_drift(repaired.rotation()) <= rotation_tol::<f64>());
    }
}
