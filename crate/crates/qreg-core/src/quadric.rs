//! Constrained quadric fitting around a point and extraction of the local
//! frame the single-correspondence solver consumes.
//!
//! A quadric is the zero set of `p̂ᵀQp̂` for a symmetric 4×4 matrix `Q`. The
//! fit uses a trace-constrained parameterization (the quadratic diagonal is
//! pinned to `A + B + C = -3`), which removes the all-zero solution without
//! privileging any axis, and runs in an anchor-centered, scale-normalized
//! frame so that the "surface passes through the anchor" constraint reduces
//! to dropping one unknown.

use nalgebra::{Matrix3, SMatrix, SVector, SymmetricEigen, Vector3};
use thiserror::Error;

use crate::geometry::{Point3, PointCloud};
use crate::scalar::{real, to_f64, Real};
use crate::spatial::SpatialIndex;

/// Condition-number guard for the 8×8 normal matrix.
const MAX_CONDITION: f64 = 1e12;
/// Eigenvalue floor below which an axis length is unbounded.
const DEGENERATE_EIGENVALUE: f64 = 1e-12;
/// Default relative tolerance for the axis-length degeneracy test.
pub const DEGENERACY_TOL: f64 = 1e-3;
/// Default neighborhood size for patch fitting.
pub const DEFAULT_NEIGHBORS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadricError {
    #[error("quadric fit needs at least {need} neighborhood points, got {got}")]
    TooFewPoints { got: usize, need: usize },
    #[error("normal system is singular (condition {condition:.3e}); neighborhood is degenerate")]
    SingularSystem { condition: f64 },
    #[error("quadric has an unbounded or undefined axis; no usable local frame")]
    DegenerateQuadric,
    #[error("quadric gradient vanishes at the evaluation point")]
    ZeroGradient,
    #[error("patch construction failed at point {point_index}: {reason}")]
    PatchFailure {
        point_index: usize,
        reason: Box<QuadricError>,
    },
}

/// Coefficients of the symmetric 4×4 quadric matrix
///
/// ```text
///     | a d e g |
/// Q = | d b f h |
///     | e f c i |
///     | g h i j |
/// ```
///
/// normalized so the quadratic trace satisfies `a + b + c = -3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadricCoefficients<T: Real> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
    pub e: T,
    pub f: T,
    pub g: T,
    pub h: T,
    pub i: T,
    pub j: T,
}

impl<T: Real> QuadricCoefficients<T> {
    /// Upper-left 3×3 quadratic block.
    pub fn quadratic_block(&self) -> Matrix3<T> {
        Matrix3::new(
            self.a, self.d, self.e, //
            self.d, self.b, self.f, //
            self.e, self.f, self.c,
        )
    }

    /// Linear part `(g, h, i)`.
    pub fn linear(&self) -> Vector3<T> {
        Vector3::new(self.g, self.h, self.i)
    }

    /// Evaluates `p̂ᵀQp̂ = pᵀSp + 2 linᵀp + j` at a point.
    pub fn residual(&self, at: &Point3<T>) -> T {
        let p = at.coords();
        let s = self.quadratic_block();
        (p.transpose() * s * p)[0] + (self.linear().dot(&p)) * real(2.0) + self.j
    }

    /// 2-norm of the 10-entry coefficient vector.
    pub fn norm(&self) -> T {
        let v = [
            self.a, self.b, self.c, self.d, self.e, self.f, self.g, self.h, self.i, self.j,
        ];
        v.iter().map(|x| *x * *x).fold(T::zero(), |acc, x| acc + x).sqrt()
    }
}

/// Orthonormal principal-axis frame of a quadric, sorted by descending axis
/// length, together with the lengths and the eigenvalues they derive from
/// (`length = 1/sqrt(|eigenvalue|)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame<T: Real> {
    /// Columns are principal axes; right-handed (det = +1).
    pub axes: Matrix3<T>,
    /// `lengths.0 >= lengths.1 >= lengths.2 > 0`.
    pub lengths: (T, T, T),
    /// Eigenvalues of the center-referred quadratic form, in length order.
    pub eigenvalues: (T, T, T),
}

impl<T: Real> LocalFrame<T> {
    pub fn lengths_array(&self) -> [T; 3] {
        [self.lengths.0, self.lengths.1, self.lengths.2]
    }
}

/// Axis-length degeneracy classes of a local frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degeneracy {
    /// Three distinct lengths: full pose from a single correspondence.
    Distinct,
    /// Two equal lengths: oriented-point case, not solver-eligible here.
    TwoEqual,
    /// Sphere-like: no rotational constraint.
    AllEqual,
}

/// Everything the solver needs about one correspondence endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadricPatch<T: Real> {
    pub anchor: Point3<T>,
    pub coefficients: QuadricCoefficients<T>,
    pub frame: LocalFrame<T>,
    /// Unit surface normal at the anchor, oriented away from the quadric
    /// center when one exists.
    pub normal: Vector3<T>,
    pub degeneracy: Degeneracy,
}

/// Fits a trace-constrained quadric through `anchor` to the neighborhood.
///
/// All points are translated so the anchor is the origin (the pass-through
/// constraint then pins the constant term to zero) and scaled to unit RMS
/// radius before the 8-unknown normal equations are assembled; the returned
/// coefficients are re-expressed in the original frame.
pub fn fit_quadric<T: Real>(
    anchor: &Point3<T>,
    neighborhood: &[Point3<T>],
) -> Result<QuadricCoefficients<T>, QuadricError> {
    if neighborhood.len() < 8 {
        return Err(QuadricError::TooFewPoints {
            got: neighborhood.len(),
            need: 8,
        });
    }

    let a = anchor.coords();
    let centered: Vec<Vector3<T>> = neighborhood.iter().map(|p| p.coords() - a).collect();

    let mut ms = T::zero();
    for c in &centered {
        ms += c.norm_squared();
    }
    ms /= real(centered.len() as f64);
    if !(ms > T::zero()) {
        return Err(QuadricError::SingularSystem {
            condition: f64::INFINITY,
        });
    }
    let sigma = ms.sqrt();

    // normal equations over w = (A', B', D, E, F, G, H, I)
    let mut m = SMatrix::<T, 8, 8>::zeros();
    let mut rhs = SVector::<T, 8>::zeros();
    let two: T = real(2.0);
    for c in &centered {
        let x = c.x / sigma;
        let y = c.y / sigma;
        let z = c.z / sigma;
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let k = SVector::<T, 8>::from_row_slice(&[
            xx + yy - two * zz,
            xx + zz - two * yy,
            two * x * y,
            two * x * z,
            two * y * z,
            two * x,
            two * y,
            two * z,
        ]);
        let d = xx + yy + zz;
        m += k * k.transpose();
        rhs += k * d;
    }

    let eigen = SymmetricEigen::new(m);
    let mut lam_max = T::zero();
    let mut lam_min = T::max_value().unwrap();
    for lam in eigen.eigenvalues.iter() {
        let mag = lam.abs();
        if mag > lam_max {
            lam_max = mag;
        }
        if mag < lam_min {
            lam_min = mag;
        }
    }
    let condition = if lam_min > T::zero() {
        to_f64(lam_max / lam_min)
    } else {
        f64::INFINITY
    };
    if !(lam_max > T::zero()) || condition > MAX_CONDITION {
        return Err(QuadricError::SingularSystem { condition });
    }

    let mut w = SVector::<T, 8>::zeros();
    let projected = eigen.eigenvectors.transpose() * rhs;
    for idx in 0..8 {
        w += eigen.eigenvectors.column(idx) * (projected[idx] / eigen.eigenvalues[idx]);
    }

    // invert the parameterization (the diagonal sums to -3 by construction)
    let (ap, bp) = (w[0], w[1]);
    let ca = ap + bp - T::one();
    let cb = ap - two * bp - T::one();
    let cc = -real::<T>(3.0) - ca - cb;

    // undo the RMS scaling: the quadratic block is unchanged if the linear
    // part is multiplied by sigma (overall coefficient scale is free, and
    // this choice keeps the trace at -3)
    let s = Matrix3::new(ca, w[2], w[3], w[2], cb, w[4], w[3], w[4], cc);
    let lin = Vector3::new(w[5], w[6], w[7]) * sigma;

    // re-express in the original frame: x̃ = x - a
    let lin_world = lin - s * a;
    let j_world = (a.transpose() * s * a)[0] - lin.dot(&a) * two;

    Ok(QuadricCoefficients {
        a: s[(0, 0)],
        b: s[(1, 1)],
        c: s[(2, 2)],
        d: s[(0, 1)],
        e: s[(0, 2)],
        f: s[(1, 2)],
        g: lin_world.x,
        h: lin_world.y,
        i: lin_world.z,
        j: j_world,
    })
}

/// Eigen-decomposes the center-referred quadratic form into the local frame.
///
/// The quadric is translated to its own center `c = -S⁻¹ lin`, where it
/// reads `yᵀSy + j_c = 0`; dividing by `-j_c` yields the unit-free form
/// whose eigenvalues are reciprocal squared axis lengths. This makes the
/// lengths exact semi-axes for central quadrics, invariant under rigid
/// motion and linear in uniform scale — the properties the downstream scale
/// gate relies on. Quadrics without a well-defined center (paraboloids,
/// cylinders, planes, cones) are rejected as degenerate.
pub fn extract_frame<T: Real>(
    coeffs: &QuadricCoefficients<T>,
) -> Result<LocalFrame<T>, QuadricError> {
    let s = coeffs.quadratic_block();
    let lin = coeffs.linear();

    let eigen = SymmetricEigen::new(s);
    let mut max_mag = T::zero();
    for lam in eigen.eigenvalues.iter() {
        if lam.abs() > max_mag {
            max_mag = lam.abs();
        }
    }
    let center_floor = max_mag * real(1e-12);
    if !(max_mag > T::zero()) {
        return Err(QuadricError::DegenerateQuadric);
    }
    for lam in eigen.eigenvalues.iter() {
        if lam.abs() <= center_floor {
            // singular quadratic block: no center
            return Err(QuadricError::DegenerateQuadric);
        }
    }

    // center c = -S⁻¹ lin via the eigen basis
    let proj = eigen.eigenvectors.transpose() * lin;
    let mut center = Vector3::zeros();
    for idx in 0..3 {
        center -= eigen.eigenvectors.column(idx) * (proj[idx] / eigen.eigenvalues[idx]);
    }
    let j_center = coeffs.j + lin.dot(&center);
    if j_center == T::zero() {
        return Err(QuadricError::DegenerateQuadric);
    }

    // eigenvalues of S/(-j_c); eigenvectors are those of S
    let mut pairs: Vec<(T, Vector3<T>)> = (0..3)
        .map(|idx| {
            (
                eigen.eigenvalues[idx] / (-j_center),
                eigen.eigenvectors.column(idx).into_owned(),
            )
        })
        .collect();
    for (lam, _) in &pairs {
        if lam.abs() < real(DEGENERATE_EIGENVALUE) {
            return Err(QuadricError::DegenerateQuadric);
        }
    }

    // descending axis length == ascending |eigenvalue|
    pairs.sort_by(|x, y| {
        x.0.abs()
            .partial_cmp(&y.0.abs())
            .expect("finite eigenvalues")
    });
    let lengths = (
        T::one() / pairs[0].0.abs().sqrt(),
        T::one() / pairs[1].0.abs().sqrt(),
        T::one() / pairs[2].0.abs().sqrt(),
    );

    let mut axes = Matrix3::from_columns(&[pairs[0].1, pairs[1].1, pairs[2].1]);
    if axes.determinant() < T::zero() {
        axes.column_mut(2).neg_mut();
    }

    Ok(LocalFrame {
        axes,
        lengths,
        eigenvalues: (pairs[0].0, pairs[1].0, pairs[2].0),
    })
}

/// Classifies the axis lengths with pairwise relative gaps, normalized by
/// the longest axis.
pub fn classify_degeneracy<T: Real>(frame: &LocalFrame<T>, tol: T) -> Degeneracy {
    let (l1, l2, l3) = frame.lengths;
    let gap12 = (l1 - l2).abs() / l1;
    let gap13 = (l1 - l3).abs() / l1;
    let gap23 = (l2 - l3).abs() / l1;
    let distinct = gap12 > tol && gap13 > tol && gap23 > tol;
    let all_equal = gap12 <= tol && gap13 <= tol && gap23 <= tol;
    if distinct {
        Degeneracy::Distinct
    } else if all_equal {
        Degeneracy::AllEqual
    } else {
        Degeneracy::TwoEqual
    }
}

/// Unit surface normal of the quadric at a point: the normalized gradient
/// `∇(p̂ᵀQp̂) ∝ S·p + lin`, oriented away from the quadric center when the
/// center exists (otherwise a deterministic sign convention is applied).
pub fn quadric_normal<T: Real>(
    coeffs: &QuadricCoefficients<T>,
    at: &Point3<T>,
) -> Result<Vector3<T>, QuadricError> {
    let s = coeffs.quadratic_block();
    let lin = coeffs.linear();
    let p = at.coords();
    let grad = s * p + lin;
    let scale = if p.norm() > T::one() { p.norm() } else { T::one() };
    if grad.norm() < real::<T>(1e-12) * scale {
        return Err(QuadricError::ZeroGradient);
    }
    let mut n = grad.normalize();

    let eigen = SymmetricEigen::new(s);
    let mut max_mag = T::zero();
    let mut min_mag = T::max_value().unwrap();
    for lam in eigen.eigenvalues.iter() {
        if lam.abs() > max_mag {
            max_mag = lam.abs();
        }
        if lam.abs() < min_mag {
            min_mag = lam.abs();
        }
    }
    if max_mag > T::zero() && min_mag > max_mag * real(1e-12) {
        let proj = eigen.eigenvectors.transpose() * lin;
        let mut center = Vector3::zeros();
        for idx in 0..3 {
            center -= eigen.eigenvectors.column(idx) * (proj[idx] / eigen.eigenvalues[idx]);
        }
        let outward = p - center;
        if outward.dot(&n) < T::zero() {
            n = -n;
        }
    } else {
        // no center: pick the sign making the largest-magnitude component
        // positive, so repeated fits agree
        let mut dominant = 0;
        for idx in 1..3 {
            if n[idx].abs() > n[dominant].abs() {
                dominant = idx;
            }
        }
        if n[dominant] < T::zero() {
            n = -n;
        }
    }
    Ok(n)
}

/// Builds the full quadric patch for `cloud[point_index]`: k-NN gather, fit,
/// frame extraction, degeneracy classification, and anchor normal. Failures
/// carry the point index so batch callers can report which match they lost.
pub fn build_patch<T: Real>(
    cloud: &PointCloud<T>,
    index: &SpatialIndex<T>,
    point_index: usize,
    k: usize,
) -> Result<QuadricPatch<T>, QuadricError> {
    let anchor = *cloud.point(point_index);
    let neighborhood: Vec<Point3<T>> = index
        .knn(&anchor, k)
        .into_iter()
        .map(|(idx, _)| *cloud.point(idx))
        .collect();

    let wrap = |reason: QuadricError| QuadricError::PatchFailure {
        point_index,
        reason: Box::new(reason),
    };

    let coefficients = fit_quadric(&anchor, &neighborhood).map_err(wrap)?;
    let frame = extract_frame(&coefficients).map_err(wrap)?;
    let degeneracy = classify_degeneracy(&frame, real(DEGENERACY_TOL));
    let normal = quadric_normal(&coefficients, &anchor).map_err(wrap)?;

    Ok(QuadricPatch {
        anchor,
        coefficients,
        frame,
        normal,
        degeneracy,
    })
}
