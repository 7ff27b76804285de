//! Synthetic scenes with known ground truth: sampled quadric surfaces, a
//! rigid transform, planted inlier correspondences, and controlled outliers.
//! Every generator is fully deterministic given its seed.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::geometry::{Correspondence, Point3, PointCloud, RigidTransform};
use crate::scalar::{real, to_f64, Real};

/// Minimum residual (under the ground truth) that generated outliers must
/// exceed, so planted inlier sets stay unambiguous for the inlier thresholds
/// the desk-scale benchmarks use (all ≤ 0.1 scene units).
const OUTLIER_CLEARANCE: f64 = 0.12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
}

/// Analytic surfaces the generator can sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Surface<T: Real> {
    /// Axis-aligned ellipsoid; distinct semi-axes give solver-eligible
    /// patches.
    Ellipsoid {
        center: Point3<T>,
        semi_axes: [T; 3],
    },
    /// Hyperbolic paraboloid z = a·x² − b·y² over [-1,1]²; exercises
    /// center-free quadrics in the degeneracy filters.
    Saddle { center: Point3<T>, a: T, b: T },
    /// Square planar patch; the classic degenerate case.
    Plane {
        center: Point3<T>,
        normal: Vector3<T>,
        extent: T,
    },
}

/// How the ground-truth transform is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth<T: Real> {
    Fixed(RigidTransform<T>),
    /// Drawn from the scene seed: uniform random rotation, translation
    /// uniform in [-0.5, 0.5]³.
    Random,
}

/// What an outlier correspondence points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutlierModel {
    /// A fresh uniform point in the target bounding box, appended to the
    /// target cloud.
    UniformBox,
    /// An existing but wrong target point.
    WrongMatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec<T: Real> {
    pub surfaces: Vec<Surface<T>>,
    pub points_per_surface: usize,
    pub noise_sigma: T,
    pub ground_truth: GroundTruth<T>,
    pub n_correspondences: usize,
    pub inlier_ratio: T,
    pub outlier_model: OutlierModel,
    pub seed: u64,
}

impl<T: Real> SceneSpec<T> {
    /// Unit-scale benchmark scene: three separated ellipsoids with distinct
    /// semi-axes (length ratios ≥ 1.5), random ground truth.
    pub fn three_ellipsoids(
        seed: u64,
        points_per_surface: usize,
        n_correspondences: usize,
        inlier_ratio: T,
        noise_sigma: T,
    ) -> Self {
        let e = |c: [f64; 3], s: [f64; 3]| Surface::Ellipsoid {
            center: Point3::new(real(c[0]), real(c[1]), real(c[2])),
            semi_axes: [real(s[0]), real(s[1]), real(s[2])],
        };
        SceneSpec {
            surfaces: vec![
                e([-2.0, 0.0, 0.0], [1.10, 0.60, 0.30]),
                e([2.0, 1.0, 0.0], [0.90, 0.56, 0.24]),
                e([0.0, -1.0, 1.6], [1.20, 0.70, 0.40]),
            ],
            points_per_surface,
            noise_sigma,
            ground_truth: GroundTruth::Random,
            n_correspondences,
            inlier_ratio,
            outlier_model: OutlierModel::UniformBox,
            seed,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.surfaces.is_empty() {
            return Err(SynthError::InvalidSpec("no surfaces".into()));
        }
        if self.points_per_surface == 0 {
            return Err(SynthError::InvalidSpec("points_per_surface = 0".into()));
        }
        if self.n_correspondences == 0 {
            return Err(SynthError::InvalidSpec("n_correspondences = 0".into()));
        }
        if !(self.inlier_ratio > T::zero() && self.inlier_ratio <= T::one()) {
            return Err(SynthError::InvalidSpec(format!(
                "inlier_ratio {} outside (0, 1]",
                to_f64(self.inlier_ratio)
            )));
        }
        if self.noise_sigma < T::zero() {
            return Err(SynthError::InvalidSpec("negative noise_sigma".into()));
        }
        Ok(())
    }
}

/// A generated registration problem with its answer key.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneData<T: Real> {
    pub source: PointCloud<T>,
    pub target: PointCloud<T>,
    pub correspondences: Vec<Correspondence<T>>,
    pub ground_truth: RigidTransform<T>,
    /// Positions (into `correspondences`) of the planted true matches.
    pub planted_inliers: Vec<usize>,
}

/// Uniform random rotation (via normalized quaternion) plus translation
/// uniform in [-0.5, 0.5]³.
pub fn random_transform<T: Real>(rng: &mut ChaCha8Rng) -> RigidTransform<T> {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let quat = nalgebra::Quaternion::new(
        real::<T>(q[0]),
        real(q[1]),
        real(q[2]),
        real(q[3]),
    );
    let unit = nalgebra::UnitQuaternion::new_normalize(quat);
    let translation = Vector3::new(
        real(rng.random_range(-0.5..0.5)),
        real(rng.random_range(-0.5..0.5)),
        real(rng.random_range(-0.5..0.5)),
    );
    RigidTransform::new(unit.to_rotation_matrix().into_inner(), translation)
        .expect("unit quaternion yields a rotation")
}

fn sample_surface<T: Real>(surface: &Surface<T>, rng: &mut ChaCha8Rng) -> Point3<T> {
    match surface {
        Surface::Ellipsoid { center, semi_axes } => {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let phi = rng.random_range(0.05..std::f64::consts::PI - 0.05);
            Point3::new(
                center.x + semi_axes[0] * real(phi.sin() * theta.cos()),
                center.y + semi_axes[1] * real(phi.sin() * theta.sin()),
                center.z + semi_axes[2] * real(phi.cos()),
            )
        }
        Surface::Saddle { center, a, b } => {
            let x: T = real(rng.random_range(-1.0..1.0));
            let y: T = real(rng.random_range(-1.0..1.0));
            Point3::new(center.x + x, center.y + y, center.z + *a * x * x - *b * y * y)
        }
        Surface::Plane {
            center,
            normal,
            extent,
        } => {
            let n = normal.normalize();
            // any two unit vectors spanning the plane
            let helper = if n.x.abs() < real(0.9) {
                Vector3::x()
            } else {
                Vector3::y()
            };
            let u = n.cross(&helper).normalize();
            let v = n.cross(&u);
            let su: T = real(rng.random_range(-1.0..1.0));
            let sv: T = real(rng.random_range(-1.0..1.0));
            Point3::from_coords(center.coords() + u * (su * *extent) + v * (sv * *extent))
        }
    }
}

/// Generates the full scene: source cloud, transformed-and-noised target,
/// correspondences with exactly `round(inlier_ratio · n)` planted inliers,
/// and the ground-truth transform. Bit-identical for identical specs.
pub fn generate<T: Real>(spec: &SceneSpec<T>) -> Result<SceneData<T>, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut source_pts = Vec::with_capacity(spec.surfaces.len() * spec.points_per_surface);
    for surface in &spec.surfaces {
        for _ in 0..spec.points_per_surface {
            source_pts.push(sample_surface(surface, &mut rng));
        }
    }
    let n_source = source_pts.len();

    let ground_truth = match &spec.ground_truth {
        GroundTruth::Fixed(t) => *t,
        GroundTruth::Random => random_transform(&mut rng),
    };

    // audit bound for planted inliers; noise vectors beyond it are redrawn
    // so the planted set is unambiguous at desk-scale thresholds
    let noise_cap = spec.noise_sigma * real(4.0) * real::<T>(3.0).sqrt();
    let normal = if spec.noise_sigma > T::zero() {
        Some(Normal::new(0.0, to_f64(spec.noise_sigma)).expect("positive sigma"))
    } else {
        None
    };
    let noise_vec = |rng: &mut ChaCha8Rng| -> Vector3<T> {
        match normal {
            None => Vector3::zeros(),
            Some(dist) => loop {
                let v = Vector3::new(
                    real::<T>(dist.sample(rng)),
                    real(dist.sample(rng)),
                    real(dist.sample(rng)),
                );
                if v.norm() <= noise_cap {
                    break v;
                }
            },
        }
    };

    let mut target_pts: Vec<Point3<T>> = Vec::with_capacity(n_source);
    for p in &source_pts {
        let q = ground_truth.apply(p);
        target_pts.push(Point3::from_coords(q.coords() + noise_vec(&mut rng)));
    }

    let n = spec.n_correspondences;
    let n_inliers = (to_f64(spec.inlier_ratio) * n as f64).round() as usize;
    let n_inliers = n_inliers.clamp(1, n);
    if n_inliers > n_source {
        return Err(SynthError::InvalidSpec(format!(
            "{n_inliers} inliers requested but only {n_source} source points exist"
        )));
    }

    // planted inliers reference distinct source points
    let inlier_sources = rand::seq::index::sample(&mut rng, n_source, n_inliers).into_vec();
    let mut tagged: Vec<(Correspondence<T>, bool)> = inlier_sources
        .iter()
        .map(|&i| (Correspondence::new(i, i), true))
        .collect();

    let clearance: T = real(OUTLIER_CLEARANCE);
    let (lo, hi) = {
        let cloud = PointCloud::new(target_pts.clone());
        cloud.bounding_box().expect("non-empty cloud")
    };
    for _ in 0..(n - n_inliers) {
        let src = rng.random_range(0..n_source);
        let expected = ground_truth.apply(&source_pts[src]);
        match spec.outlier_model {
            OutlierModel::UniformBox => loop {
                let p = Point3::new(
                    real(rng.random_range(to_f64(lo.x)..=to_f64(hi.x))),
                    real(rng.random_range(to_f64(lo.y)..=to_f64(hi.y))),
                    real(rng.random_range(to_f64(lo.z)..=to_f64(hi.z))),
                );
                if p.distance(&expected) > clearance {
                    target_pts.push(p);
                    tagged.push((Correspondence::new(src, target_pts.len() - 1), false));
                    break;
                }
            },
            OutlierModel::WrongMatch => loop {
                let dst = rng.random_range(0..n_source);
                if target_pts[dst].distance(&expected) > clearance {
                    tagged.push((Correspondence::new(src, dst), false));
                    break;
                }
            },
        }
    }

    tagged.shuffle(&mut rng);
    let planted_inliers = tagged
        .iter()
        .enumerate()
        .filter(|(_, (_, inlier))| *inlier)
        .map(|(pos, _)| pos)
        .collect();
    let correspondences = tagged.into_iter().map(|(c, _)| c).collect();

    Ok(SceneData {
        source: PointCloud::new(source_pts),
        target: PointCloud::new(target_pts),
        correspondences,
        ground_truth,
        planted_inliers,
    })
}

/// Perturbs a transform by exactly `angle_deg` about a random axis and
/// exactly `trans_units` along a random direction, both drawn from `seed`.
pub fn perturb_transform<T: Real>(
    t: &RigidTransform<T>,
    angle_deg: T,
    trans_units: T,
    seed: u64,
) -> RigidTransform<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit_dir = |rng: &mut ChaCha8Rng| -> Vector3<T> {
        loop {
            let v = Vector3::new(
                real::<T>(StandardNormal.sample(rng)),
                real(StandardNormal.sample(rng)),
                real(StandardNormal.sample(rng)),
            );
            if v.norm() > real(1e-6) {
                break v.normalize();
            }
        }
    };
    let axis = nalgebra::Unit::new_unchecked(unit_dir(&mut rng));
    let angle = angle_deg * T::pi() / real(180.0);
    let delta_rot = nalgebra::Rotation3::from_axis_angle(&axis, angle);
    let dir = unit_dir(&mut rng);

    RigidTransform::new(
        delta_rot.into_inner() * t.rotation(),
        t.translation() + dir * trans_units,
    )
    .expect("perturbation of a rotation stays a rotation")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadric::{build_patch, Degeneracy, DEFAULT_NEIGHBORS};
    use crate::spatial::build_index;

    fn unit_spec(seed: u64) -> SceneSpec<f64> {
        SceneSpec::three_ellipsoids(seed, 700, 100, 1.0, 0.0)
    }

    #[test]
    fn exact_scene_has_zero_residuals() {
        let scene = generate(&unit_spec(5)).unwrap();
        for c in &scene.correspondences {
            let expected = scene.ground_truth.apply(scene.source.point(c.source_index));
            assert!(expected.distance(scene.target.point(c.target_index)) < 1e-15);
        }
        assert_eq!(scene.planted_inliers.len(), scene.correspondences.len());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SceneSpec::three_ellipsoids(42, 300, 150, 0.4, 0.005);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate(&SceneSpec::three_ellipsoids(1, 300, 150, 0.4, 0.005)).unwrap();
        let b = generate(&SceneSpec::three_ellipsoids(2, 300, 150, 0.4, 0.005)).unwrap();
        assert_ne!(a.ground_truth, b.ground_truth);
    }

    #[test]
    fn plants_exactly_the_requested_inlier_count() {
        let spec = SceneSpec::three_ellipsoids(7, 400, 200, 0.3, 0.005);
        let scene = generate(&spec).unwrap();
        assert_eq!(scene.planted_inliers.len(), 60);
        assert_eq!(scene.correspondences.len(), 200);

        let cap = 4.0 * 0.005 * 3.0_f64.sqrt();
        let planted: std::collections::BTreeSet<usize> =
            scene.planted_inliers.iter().copied().collect();
        for (i, c) in scene.correspondences.iter().enumerate() {
            let residual = scene
                .ground_truth
                .apply(scene.source.point(c.source_index))
                .distance(scene.target.point(c.target_index));
            if planted.contains(&i) {
                assert!(residual <= cap, "planted inlier {i} residual {residual}");
            } else {
                assert!(residual > 0.1, "outlier {i} too close: {residual}");
            }
        }
    }

    #[test]
    fn wrong_match_outliers_reference_existing_points() {
        let mut spec = SceneSpec::three_ellipsoids(11, 400, 200, 0.3, 0.005);
        spec.outlier_model = OutlierModel::WrongMatch;
        let scene = generate(&spec).unwrap();
        // no appended points under WrongMatch
        assert_eq!(scene.target.len(), scene.source.len());
        for c in &scene.correspondences {
            assert!(c.target_index < scene.target.len());
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = unit_spec(1);
        spec.inlier_ratio = 0.0;
        assert!(matches!(generate(&spec), Err(SynthError::InvalidSpec(_))));
        let mut spec = unit_spec(1);
        spec.surfaces.clear();
        assert!(matches!(generate(&spec), Err(SynthError::InvalidSpec(_))));
        let mut spec = unit_spec(1);
        spec.noise_sigma = -0.1;
        assert!(matches!(generate(&spec), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn perturb_zero_is_identity_on_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_transform::<f64>(&mut rng);
        let p = perturb_transform(&t, 0.0, 0.0, 99);
        assert_eq!(p.rotation(), t.rotation());
        assert_eq!(p.translation(), t.translation());
    }

    #[test]
    fn perturbation_magnitudes_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..20 {
            let t = random_transform::<f64>(&mut rng);
            let p = perturb_transform(&t, 2.0, 0.02, seed);
            // rotation offset: geodesic angle of R_p R_tᵀ
            let rel = p.rotation() * t.rotation().transpose();
            let angle = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            assert!((angle.to_degrees() - 2.0).abs() < 1e-9);
            // translation offset: exact Euclidean distance
            let dt = (p.translation() - t.translation()).norm();
            assert!((dt - 0.02).abs() < 1e-9);
        }
    }

    #[test]
    fn ellipsoid_scenes_are_mostly_solver_eligible() {
        let spec = SceneSpec::three_ellipsoids(13, 2000, 100, 1.0, 0.0);
        let scene = generate(&spec).unwrap();
        let index = build_index(&scene.source).unwrap();
        let mut distinct = 0;
        let mut total = 0;
        for i in (0..scene.source.len()).step_by(60) {
            total += 1;
            if let Ok(patch) = build_patch(&scene.source, &index, i, DEFAULT_NEIGHBORS) {
                if patch.degeneracy == Degeneracy::Distinct {
                    distinct += 1;
                }
            }
        }
        assert!(
            distinct as f64 >= 0.9 * total as f64,
            "only {distinct}/{total} patches were Distinct"
        );
    }

    #[test]
    fn saddle_and_plane_surfaces_sample_on_their_surfaces() {
        let saddle = Surface::<f64>::Saddle {
            center: Point3::origin(),
            a: 0.8,
            b: 0.5,
        };
        let plane = Surface::<f64>::Plane {
            center: Point3::new(0.0, 0.0, 1.0),
            normal: Vector3::new(0.0, 0.0, 1.0),
            extent: 2.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let p = sample_surface(&saddle, &mut rng);
            assert!((p.z - (0.8 * p.x * p.x - 0.5 * p.y * p.y)).abs() < 1e-12);
            let q = sample_surface(&plane, &mut rng);
            assert!((q.z - 1.0).abs() < 1e-12);
            assert!(q.x.abs() <= 2.0 && q.y.abs() <= 2.0);
        }
    }
}
