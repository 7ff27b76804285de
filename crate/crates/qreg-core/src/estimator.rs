//! Robust model selection over single-correspondence pose candidates, local
//! optimization, the 3-point RANSAC baseline, and the pose loss.
//!
//! The quadric path is deterministic by construction: candidates are scored
//! in parallel but collected in enumeration order and reduced under a total
//! order on (inlier count, mean inlier residual, correspondence index, sign
//! variant), so runs are bit-identical regardless of thread count. Only the
//! RANSAC baseline consumes the configured seed, through one independent
//! ChaCha stream per iteration.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{kabsch_weighted, Correspondence, Point3, PointCloud, RigidTransform};
use crate::quadric::{build_patch, QuadricPatch, DEFAULT_NEIGHBORS};
use crate::scalar::{real, to_f64, Real};
use crate::solver::{solve_from_correspondence, EnrichedCorrespondence, PoseCandidate};
use crate::spatial::build_index;

/// Fixed seed for the local-optimization subsampler. LO runs inside the
/// quadric path, which must be reproducible without any configuration, so
/// the schedule is pinned here rather than drawn from `rng_seed` (which
/// belongs to the RANSAC baseline alone).
const LO_SUBSAMPLE_SEED: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EstimatorError {
    #[error("no solver-eligible correspondences: every patch pair is degenerate")]
    NoEligibleCorrespondences,
    #[error("the scale gates rejected every pose candidate")]
    AllCandidatesRejected,
    #[error("need at least 3 correspondences for a RANSAC sample, got {got}")]
    TooFewCorrespondences { got: usize },
    #[error("no RANSAC sample produced a valid hypothesis in {attempts} draws")]
    RansacFailed { attempts: usize },
}

/// Tunables for both estimation paths. `rng_seed` only affects the RANSAC
/// baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig<T: Real> {
    /// Residual bound (scene units) for a correspondence to count as an
    /// inlier.
    pub inlier_threshold: T,
    /// Local-optimization rounds after the best candidate is selected.
    pub lo_iterations: usize,
    /// Fraction of gateed inliers refit per LO round, in (0, 1].
    pub lo_sample_fraction: T,
    /// Maximum angle (degrees) between rotated source and target patch
    /// normals for an inlier to survive the LO gate; >= 180 disables it.
    pub lo_normal_angle_max_deg: T,
    /// Implied-scale acceptance band for the single-correspondence solver.
    pub scale_bounds: (T, T),
    /// Seed for the RANSAC baseline (ignored by the quadric path).
    pub rng_seed: u64,
    /// Saturation threshold of the pose loss.
    pub gamma: T,
}

impl<T: Real> Default for EstimatorConfig<T> {
    fn default() -> Self {
        EstimatorConfig {
            inlier_threshold: real(0.1),
            lo_iterations: 10,
            lo_sample_fraction: real(0.5),
            lo_normal_angle_max_deg: real(30.0),
            scale_bounds: (real(0.9), real(1.1)),
            rng_seed: 0,
            gamma: real(0.2),
        }
    }
}

/// Inlier count of one scored candidate, kept for reproducibility audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CandidateScore {
    pub corr_index: usize,
    pub sign_variant: usize,
    pub inlier_count: usize,
}

/// Outcome of a registration run.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationReport<T: Real> {
    /// Final pose (after local optimization when enabled).
    pub best_transform: RigidTransform<T>,
    /// Winning candidate before local optimization.
    pub pre_lo_transform: RigidTransform<T>,
    /// Ascending indices of inlier correspondences under `best_transform`.
    pub inlier_indices: Vec<usize>,
    pub inlier_count: usize,
    pub candidates_evaluated: usize,
    /// Wall-clock seconds per pipeline stage.
    pub stage_timings: BTreeMap<String, f64>,
    /// Per-candidate inlier counts in enumeration order (quadric path only).
    pub per_candidate_scores: Option<Vec<CandidateScore>>,
}

/// Correspondence indices whose residual under `t` is within `threshold`,
/// in ascending order, plus the count.
pub fn count_inliers<T: Real>(
    t: &RigidTransform<T>,
    corrs: &[Correspondence<T>],
    source: &PointCloud<T>,
    target: &PointCloud<T>,
    threshold: T,
) -> (usize, Vec<usize>) {
    let mut indices = Vec::new();
    for (i, c) in corrs.iter().enumerate() {
        let moved = t.apply(source.point(c.source_index));
        if moved.distance(target.point(c.target_index)) <= threshold {
            indices.push(i);
        }
    }
    (indices.len(), indices)
}

/// Count and residual sum in one pass (the selection hot loop).
fn inlier_stats<T: Real>(
    t: &RigidTransform<T>,
    corrs: &[Correspondence<T>],
    source: &PointCloud<T>,
    target: &PointCloud<T>,
    threshold: T,
) -> (usize, T) {
    let mut count = 0usize;
    let mut residual_sum = T::zero();
    for c in corrs {
        let moved = t.apply(source.point(c.source_index));
        let r = moved.distance(target.point(c.target_index));
        if r <= threshold {
            count += 1;
            residual_sum += r;
        }
    }
    (count, residual_sum)
}

/// Total order on candidate quality: more inliers, then smaller mean inlier
/// residual, then smaller correspondence index, then smaller sign variant.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ScoreKey<T: Real> {
    count: usize,
    mean_residual: T,
    corr_index: usize,
    sign_variant: usize,
}

impl<T: Real> ScoreKey<T> {
    fn new(count: usize, residual_sum: T, corr_index: usize, sign_variant: usize) -> Self {
        let mean_residual = if count > 0 {
            residual_sum / real(count as f64)
        } else {
            T::max_value().expect("bounded scalar")
        };
        ScoreKey {
            count,
            mean_residual,
            corr_index,
            sign_variant,
        }
    }

    fn better_than(&self, other: &Self) -> bool {
        if self.count != other.count {
            return self.count > other.count;
        }
        if self.mean_residual != other.mean_residual {
            return self.mean_residual < other.mean_residual;
        }
        if self.corr_index != other.corr_index {
            return self.corr_index < other.corr_index;
        }
        self.sign_variant < other.sign_variant
    }
}

/// Per-correspondence patch normal pairs (source, target), aligned with the
/// correspondence list; `None` where no patch pair exists.
pub type CorrespondenceNormals<T> = Vec<Option<(Vector3<T>, Vector3<T>)>>;

/// Builds quadric patches at both endpoints of every correspondence.
///
/// Patches are fitted once per distinct endpoint and shared between
/// correspondences. Matches whose patch construction fails on either side
/// are dropped; the second return value counts them.
pub fn enrich_correspondences<T: Real>(
    source: &PointCloud<T>,
    target: &PointCloud<T>,
    corrs: &[Correspondence<T>],
    k: usize,
) -> (Vec<(usize, EnrichedCorrespondence<T>)>, usize) {
    if corrs.is_empty() {
        return (Vec::new(), 0);
    }
    let source_index = build_index(source).expect("non-empty source cloud");
    let target_index = build_index(target).expect("non-empty target cloud");

    let unique_sorted = |mut v: Vec<usize>| {
        v.sort_unstable();
        v.dedup();
        v
    };
    let src_ids = unique_sorted(corrs.iter().map(|c| c.source_index).collect());
    let dst_ids = unique_sorted(corrs.iter().map(|c| c.target_index).collect());

    let fit_all = |cloud: &PointCloud<T>,
                   index: &crate::spatial::SpatialIndex<T>,
                   ids: &[usize]|
     -> BTreeMap<usize, QuadricPatch<T>> {
        ids.par_iter()
            .map(|&i| (i, build_patch(cloud, index, i, k).ok()))
            .collect::<Vec<_>>()
            .into_iter()
            .filter_map(|(i, p)| p.map(|p| (i, p)))
            .collect()
    };
    let src_patches = fit_all(source, &source_index, &src_ids);
    let dst_patches = fit_all(target, &target_index, &dst_ids);

    let mut enriched = Vec::with_capacity(corrs.len());
    let mut skipped = 0usize;
    for (i, c) in corrs.iter().enumerate() {
        match (
            src_patches.get(&c.source_index),
            dst_patches.get(&c.target_index),
        ) {
            (Some(p), Some(q)) => enriched.push((
                i,
                EnrichedCorrespondence {
                    correspondence: *c,
                    patch_p: p.clone(),
                    patch_q: q.clone(),
                },
            )),
            _ => skipped += 1,
        }
    }
    (enriched, skipped)
}

/// Extracts the (source, target) patch-normal pairs for LO gating.
pub fn correspondence_normals<T: Real>(
    enriched: &[(usize, EnrichedCorrespondence<T>)],
    n_corrs: usize,
) -> CorrespondenceNormals<T> {
    let mut normals = vec![None; n_corrs];
    for (i, ec) in enriched {
        normals[*i] = Some((ec.patch_p.normal, ec.patch_q.normal));
    }
    normals
}

/// Registers by exhaustive scoring of every pose candidate from every
/// solver-eligible correspondence, followed by local optimization of the
/// winner. Deterministic: no randomness enters the selection.
pub fn qreg_register<T: Real>(
    enriched: &[(usize, EnrichedCorrespondence<T>)],
    corrs: &[Correspondence<T>],
    source: &PointCloud<T>,
    target: &PointCloud<T>,
    cfg: &EstimatorConfig<T>,
) -> Result<RegistrationReport<T>, EstimatorError> {
    let eligible: Vec<&(usize, EnrichedCorrespondence<T>)> = enriched
        .iter()
        .filter(|(_, ec)| ec.is_solver_eligible())
        .collect();
    if eligible.is_empty() {
        return Err(EstimatorError::NoEligibleCorrespondences);
    }

    let solve_start = Instant::now();
    let candidates: Vec<PoseCandidate<T>> = eligible
        .par_iter()
        .map(|(i, ec)| {
            solve_from_correspondence(ec, cfg.scale_bounds, *i)
                .expect("eligibility checked above")
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let solve_secs = solve_start.elapsed().as_secs_f64();
    if candidates.is_empty() {
        return Err(EstimatorError::AllCandidatesRejected);
    }

    let score_start = Instant::now();
    let scored: Vec<(usize, T)> = candidates
        .par_iter()
        .map(|c| inlier_stats(&c.transform, corrs, source, target, cfg.inlier_threshold))
        .collect();
    let mut best: Option<(ScoreKey<T>, usize)> = None;
    for (slot, (cand, (count, residual_sum))) in candidates.iter().zip(scored.iter()).enumerate() {
        let key = ScoreKey::new(*count, *residual_sum, cand.source, cand.sign_variant);
        match &best {
            Some((current, _)) if !key.better_than(current) => {}
            _ => best = Some((key, slot)),
        }
    }
    let (_, winner_slot) = best.expect("candidates non-empty");
    let pre_lo_transform = candidates[winner_slot].transform;
    let score_secs = score_start.elapsed().as_secs_f64();

    let lo_start = Instant::now();
    let normals = correspondence_normals(enriched, corrs.len());
    let best_transform = local_optimize(&pre_lo_transform, corrs, source, target, &normals, cfg);
    let lo_secs = lo_start.elapsed().as_secs_f64();

    let (inlier_count, inlier_indices) =
        count_inliers(&best_transform, corrs, source, target, cfg.inlier_threshold);

    let per_candidate_scores = Some(
        candidates
            .iter()
            .zip(scored.iter())
            .map(|(cand, (count, _))| CandidateScore {
                corr_index: cand.source,
                sign_variant: cand.sign_variant,
                inlier_count: *count,
            })
            .collect(),
    );

    let mut stage_timings = BTreeMap::new();
    stage_timings.insert("solve".to_string(), solve_secs);
    stage_timings.insert("score".to_string(), score_secs);
    stage_timings.insert("local_opt".to_string(), lo_secs);

    Ok(RegistrationReport {
        best_transform,
        pre_lo_transform,
        inlier_count,
        inlier_indices,
        candidates_evaluated: candidates.len(),
        stage_timings,
        per_candidate_scores,
    })
}

/// Local optimization: rounds of inlier gathering, normal-consistency
/// gating, seeded subsampling, and score-weighted re-alignment. A refit is
/// kept only when the inlier count does not decrease, so the output never
/// scores below the input.
pub fn local_optimize<T: Real>(
    t0: &RigidTransform<T>,
    corrs: &[Correspondence<T>],
    source: &PointCloud<T>,
    target: &PointCloud<T>,
    normals: &CorrespondenceNormals<T>,
    cfg: &EstimatorConfig<T>,
) -> RigidTransform<T> {
    let mut best_t = *t0;
    let (mut best_count, _) = count_inliers(&best_t, corrs, source, target, cfg.inlier_threshold);
    let mut rng = ChaCha8Rng::seed_from_u64(LO_SUBSAMPLE_SEED);
    let cos_max = (cfg.lo_normal_angle_max_deg * T::pi() / real(180.0)).cos();

    for _ in 0..cfg.lo_iterations {
        let (_, inliers) = count_inliers(&best_t, corrs, source, target, cfg.inlier_threshold);
        let survivors: Vec<usize> = inliers
            .into_iter()
            .filter(|&i| match &normals[i] {
                Some((np, nq)) => (best_t.rotation() * np).dot(nq) >= cos_max,
                None => false,
            })
            .collect();
        if survivors.len() < 3 {
            break;
        }

        let want = to_f64(cfg.lo_sample_fraction) * survivors.len() as f64;
        let take = (want.ceil() as usize).clamp(3, survivors.len());
        let mut chosen = rand::seq::index::sample(&mut rng, survivors.len(), take).into_vec();
        chosen.sort_unstable();

        let mut src = Vec::with_capacity(take);
        let mut dst = Vec::with_capacity(take);
        let mut weights = Vec::with_capacity(take);
        for &slot in &chosen {
            let c = &corrs[survivors[slot]];
            src.push(*source.point(c.source_index));
            dst.push(*target.point(c.target_index));
            weights.push(c.score);
        }

        if let Ok(refit) = kabsch_weighted(&src, &dst, &weights) {
            let (count, _) = count_inliers(&refit, corrs, source, target, cfg.inlier_threshold);
            if count >= best_count {
                best_count = count;
                best_t = refit;
            }
        }
    }
    best_t
}

/// Classic hypothesize-and-verify baseline: seeded 3-point samples aligned
/// with Kabsch, scored by inlier count. Pass `lo_normals` to append the same
/// local optimization the quadric path uses.
///
/// Each iteration draws from its own ChaCha stream of `cfg.rng_seed`, so the
/// result is bit-identical for a given seed regardless of thread count.
pub fn ransac_register<T: Real>(
    corrs: &[Correspondence<T>],
    source: &PointCloud<T>,
    target: &PointCloud<T>,
    iterations: usize,
    cfg: &EstimatorConfig<T>,
    lo_normals: Option<&CorrespondenceNormals<T>>,
) -> Result<RegistrationReport<T>, EstimatorError> {
    if corrs.len() < 3 {
        return Err(EstimatorError::TooFewCorrespondences { got: corrs.len() });
    }
    const DRAWS_PER_ITERATION: usize = 10;

    let hypo_start = Instant::now();
    let hypotheses: Vec<Option<(RigidTransform<T>, usize, T)>> = (0..iterations)
        .into_par_iter()
        .map(|iteration| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            rng.set_stream(iteration as u64 + 1);
            for _ in 0..DRAWS_PER_ITERATION {
                let picks = rand::seq::index::sample(&mut rng, corrs.len(), 3);
                let mut src = [Point3::origin(); 3];
                let mut dst = [Point3::origin(); 3];
                for (slot, pick) in picks.iter().enumerate() {
                    src[slot] = *source.point(corrs[pick].source_index);
                    dst[slot] = *target.point(corrs[pick].target_index);
                }
                if let Ok(t) = kabsch_weighted(&src, &dst, &[T::one(); 3]) {
                    let (count, residual_sum) =
                        inlier_stats(&t, corrs, source, target, cfg.inlier_threshold);
                    return Some((t, count, residual_sum));
                }
            }
            None
        })
        .collect();
    let hypo_secs = hypo_start.elapsed().as_secs_f64();

    let mut best: Option<(ScoreKey<T>, RigidTransform<T>)> = None;
    let mut evaluated = 0usize;
    for (iteration, hypo) in hypotheses.iter().enumerate() {
        if let Some((t, count, residual_sum)) = hypo {
            evaluated += 1;
            let key = ScoreKey::new(*count, *residual_sum, iteration, 0);
            match &best {
                Some((current, _)) if !key.better_than(current) => {}
                _ => best = Some((key, *t)),
            }
        }
    }
    let (_, pre_lo_transform) = best.ok_or(EstimatorError::RansacFailed {
        attempts: iterations * DRAWS_PER_ITERATION,
    })?;

    let lo_start = Instant::now();
    let best_transform = match lo_normals {
        Some(normals) => local_optimize(&pre_lo_transform, corrs, source, target, normals, cfg),
        None => pre_lo_transform,
    };
    let lo_secs = lo_start.elapsed().as_secs_f64();

    let (inlier_count, inlier_indices) =
        count_inliers(&best_transform, corrs, source, target, cfg.inlier_threshold);

    let mut stage_timings = BTreeMap::new();
    stage_timings.insert("hypothesize_score".to_string(), hypo_secs);
    stage_timings.insert("local_opt".to_string(), lo_secs);

    Ok(RegistrationReport {
        best_transform,
        pre_lo_transform,
        inlier_count,
        inlier_indices,
        candidates_evaluated: evaluated,
        stage_timings,
        per_candidate_scores: None,
    })
}

/// Root-mean-square residual of the correspondences under a pose.
pub fn pose_rmse<T: Real>(
    t: &RigidTransform<T>,
    corrs: &[Correspondence<T>],
    source: &PointCloud<T>,
    target: &PointCloud<T>,
) -> T {
    assert!(!corrs.is_empty(), "pose_rmse needs correspondences");
    let mut acc = T::zero();
    for c in corrs {
        let moved = t.apply(source.point(c.source_index));
        acc += moved.distance_squared(target.point(c.target_index));
    }
    (acc / real(corrs.len() as f64)).sqrt()
}

/// Forward pose loss over the eligible correspondences: each contributes
/// `1 - min(ε, γ)/γ - s`, where ε is the RMSE (over the whole
/// correspondence set) of that match's best pose candidate — the one with
/// the maximal inlier count, lowest sign variant on ties — and `s` is the
/// match confidence. Ineligible or fully gated matches contribute nothing
/// and are counted in the returned skip tally.
pub fn pose_loss<T: Real>(
    enriched: &[(usize, EnrichedCorrespondence<T>)],
    corrs: &[Correspondence<T>],
    source: &PointCloud<T>,
    target: &PointCloud<T>,
    cfg: &EstimatorConfig<T>,
) -> (T, usize) {
    let mut loss = T::zero();
    let mut skipped = 0usize;
    for (i, ec) in enriched {
        if !ec.is_solver_eligible() {
            skipped += 1;
            continue;
        }
        let candidates = solve_from_correspondence(ec, cfg.scale_bounds, *i)
            .expect("eligibility checked above");
        if candidates.is_empty() {
            skipped += 1;
            continue;
        }
        // maximal inlier count; strict comparison keeps the lowest variant
        let mut best_slot = 0usize;
        let mut best_count = 0usize;
        for (slot, cand) in candidates.iter().enumerate() {
            let (count, _) =
                inlier_stats(&cand.transform, corrs, source, target, cfg.inlier_threshold);
            if slot == 0 || count > best_count {
                best_slot = slot;
                best_count = count;
            }
        }
        let eps = pose_rmse(&candidates[best_slot].transform, corrs, source, target);
        let clamped = if eps < cfg.gamma { eps } else { cfg.gamma };
        loss += T::one() - clamped / cfg.gamma - ec.correspondence.score;
    }
    (loss, skipped)
}

/// Convenience pipeline: fit patches at every correspondence endpoint, then
/// run the quadric registration path. `k` is the neighborhood size.
pub fn qreg_register_clouds<T: Real>(
    source: &PointCloud<T>,
    target: &PointCloud<T>,
    corrs: &[Correspondence<T>],
    k: usize,
    cfg: &EstimatorConfig<T>,
) -> Result<RegistrationReport<T>, EstimatorError> {
    let patch_start = Instant::now();
    let (enriched, _) = enrich_correspondences(source, target, corrs, k);
    let patch_secs = patch_start.elapsed().as_secs_f64();
    let mut report = qreg_register(&enriched, corrs, source, target, cfg)?;
    report
        .stage_timings
        .insert("patches".to_string(), patch_secs);
    Ok(report)
}

/// Default neighborhood size re-exported where estimation is configured.
pub const DEFAULT_PATCH_NEIGHBORS: usize = DEFAULT_NEIGHBORS;
