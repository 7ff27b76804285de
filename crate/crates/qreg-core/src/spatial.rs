//! Exact k-nearest-neighbor queries over a point cloud, used to gather the
//! local neighborhood each quadric is fitted to.
//!
//! The index is a balanced kd-tree over axis-aligned median splits. Queries
//! are exact and fully deterministic: results are ordered by ascending
//! Euclidean distance with ties broken by ascending point index, and a
//! subtree is pruned only when its bounding box is strictly farther than the
//! current worst candidate.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{Point3, PointCloud};
use crate::scalar::Real;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpatialError {
    #[error("cannot build a spatial index over an empty cloud")]
    EmptyCloud,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: u32, end: u32 },
    Split { left: u32, right: u32 },
}

#[derive(Debug, Clone)]
struct Node<T: Real> {
    lo: Vector3<T>,
    hi: Vector3<T>,
    kind: NodeKind,
}

/// Immutable balanced kd-tree over one point cloud. Queries are read-only
/// and may run concurrently without synchronization.
#[derive(Debug, Clone)]
pub struct SpatialIndex<T: Real> {
    entries: Vec<(Vector3<T>, u32)>,
    nodes: Vec<Node<T>>,
    root: u32,
}

/// Builds an index over `cloud`; the cloud must be non-empty.
pub fn build_index<T: Real>(cloud: &PointCloud<T>) -> Result<SpatialIndex<T>, SpatialError> {
    if cloud.is_empty() {
        return Err(SpatialError::EmptyCloud);
    }
    let mut entries: Vec<(Vector3<T>, u32)> = cloud
        .iter()
        .enumerate()
        .map(|(i, p)| (p.coords(), i as u32))
        .collect();
    let mut nodes = Vec::new();
    let n = entries.len();
    let root = build_node(&mut entries, 0, n, &mut nodes);
    Ok(SpatialIndex {
        entries,
        nodes,
        root,
    })
}

fn range_bounds<T: Real>(entries: &[(Vector3<T>, u32)]) -> (Vector3<T>, Vector3<T>) {
    let mut lo = entries[0].0;
    let mut hi = lo;
    for (p, _) in &entries[1..] {
        for a in 0..3 {
            if p[a] < lo[a] {
                lo[a] = p[a];
            }
            if p[a] > hi[a] {
                hi[a] = p[a];
            }
        }
    }
    (lo, hi)
}

fn build_node<T: Real>(
    entries: &mut [(Vector3<T>, u32)],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node<T>>,
) -> u32 {
    let range = &entries[start..end];
    let (lo, hi) = range_bounds(range);
    if end - start <= LEAF_SIZE {
        nodes.push(Node {
            lo,
            hi,
            kind: NodeKind::Leaf {
                start: start as u32,
                end: end as u32,
            },
        });
        return (nodes.len() - 1) as u32;
    }

    // split the widest axis; ties go to the lowest axis index
    let extent = hi - lo;
    let mut axis = 0;
    for a in 1..3 {
        if extent[a] > extent[axis] {
            axis = a;
        }
    }
    let mid = (end - start) / 2;
    entries[start..end].select_nth_unstable_by(mid, |a, b| {
        a.0[axis]
            .partial_cmp(&b.0[axis])
            .expect("finite coordinates")
            .then(a.1.cmp(&b.1))
    });

    let left = build_node(entries, start, start + mid, nodes);
    let right = build_node(entries, start + mid, end, nodes);
    nodes.push(Node {
        lo,
        hi,
        kind: NodeKind::Split { left, right },
    });
    (nodes.len() - 1) as u32
}

/// Heap entry ordered by (squared distance, point index); the heap's top is
/// the current worst candidate.
struct HeapEntry<T> {
    dist2: T,
    index: u32,
}

impl<T: Real> PartialEq for HeapEntry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.dist2 == other.dist2 && self.index == other.index
    }
}
impl<T: Real> Eq for HeapEntry<T> {}
impl<T: Real> PartialOrd for HeapEntry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Real> Ord for HeapEntry<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .partial_cmp(&other.dist2)
            .expect("finite distances")
            .then(self.index.cmp(&other.index))
    }
}

impl<T: Real> SpatialIndex<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The `min(k, n)` nearest points to `query` as `(point_index, distance)`
    /// pairs, sorted by ascending distance with ties broken by ascending
    /// index. `k` is clamped to the cloud size.
    pub fn knn(&self, query: &Point3<T>, k: usize) -> Vec<(usize, T)> {
        assert!(k >= 1, "knn requires k >= 1");
        let k = k.min(self.entries.len());
        let q = query.coords();
        let mut heap: BinaryHeap<HeapEntry<T>> = BinaryHeap::with_capacity(k + 1);
        self.search(self.root, &q, k, &mut heap);
        heap.into_sorted_vec()
            .into_iter()
            .map(|e| (e.index as usize, e.dist2.sqrt()))
            .collect()
    }

    /// Single nearest neighbor.
    pub fn nearest(&self, query: &Point3<T>) -> (usize, T) {
        self.knn(query, 1)[0]
    }

    fn box_dist2(&self, node: u32, q: &Vector3<T>) -> T {
        let n = &self.nodes[node as usize];
        let mut acc = T::zero();
        for a in 0..3 {
            let d = if q[a] < n.lo[a] {
                n.lo[a] - q[a]
            } else if q[a] > n.hi[a] {
                q[a] - n.hi[a]
            } else {
                T::zero()
            };
            acc += d * d;
        }
        acc
    }

    fn search(&self, node: u32, q: &Vector3<T>, k: usize, heap: &mut BinaryHeap<HeapEntry<T>>) {
        match self.nodes[node as usize].kind {
            NodeKind::Leaf { start, end } => {
                for (p, index) in &self.entries[start as usize..end as usize] {
                    let dist2 = (p - q).norm_squared();
                    let entry = HeapEntry {
                        dist2,
                        index: *index,
                    };
                    if heap.len() < k {
                        heap.push(entry);
                    } else if entry < *heap.peek().expect("non-empty heap") {
                        heap.pop();
                        heap.push(entry);
                    }
                }
            }
            NodeKind::Split { left, right } => {
                let dl = self.box_dist2(left, q);
                let dr = self.box_dist2(right, q);
                let (first, first_d, second, second_d) = if dl <= dr {
                    (left, dl, right, dr)
                } else {
                    (right, dr, left, dl)
                };
                // prune only on strictly greater distance so equidistant
                // points in the far box still compete on index ties
                if heap.len() < k || first_d <= heap.peek().expect("non-empty heap").dist2 {
                    self.search(first, q, k, heap);
                }
                if heap.len() < k || second_d <= heap.peek().expect("non-empty heap").dist2 {
                    self.search(second, q, k, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Brute-force oracle: full scan sorted by (squared distance, index).
    fn brute_force_knn(cloud: &PointCloud<f64>, query: &Point3<f64>, k: usize) -> Vec<(usize, f64)> {
        let q = query.coords();
        let mut all: Vec<(f64, usize)> = cloud
            .iter()
            .enumerate()
            .map(|(i, p)| ((p.coords() - q).norm_squared(), i))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        all.truncate(k.min(cloud.len()));
        all.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud<f64> {
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn empty_cloud_is_rejected() {
        let cloud = PointCloud::<f64>::new(vec![]);
        assert_eq!(build_index(&cloud).unwrap_err(), SpatialError::EmptyCloud);
    }

    #[test]
    fn single_point_cloud() {
        let cloud = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0)]);
        let index = build_index(&cloud).unwrap();
        let hits = index.knn(&Point3::new(0.0, 0.0, 0.0), 5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, 0);
        assert!((hits[0].1 - 14.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn query_on_existing_point_returns_it_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cloud = random_cloud(&mut rng, 500);
        let index = build_index(&cloud).unwrap();
        for i in [0usize, 13, 250, 499] {
            let hits = index.knn(cloud.point(i), 1);
            assert_eq!(hits, vec![(i, 0.0)]);
        }
    }

    #[test]
    fn k_equal_to_cloud_size_returns_everything_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cloud = random_cloud(&mut rng, 64);
        let index = build_index(&cloud).unwrap();
        let q = Point3::new(0.3, -0.2, 0.9);
        let hits = index.knn(&q, 64);
        assert_eq!(hits, brute_force_knn(&cloud, &q, 64));
        for w in hits.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn matches_brute_force_on_large_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let cloud = random_cloud(&mut rng, 10_000);
        let index = build_index(&cloud).unwrap();
        for _ in 0..50 {
            let q = Point3::new(
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
            );
            assert_eq!(index.knn(&q, 50), brute_force_knn(&cloud, &q, 50));
        }
    }

    #[test]
    fn exactness_over_many_cloud_query_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for trial in 0..50 {
            let n = 20 + (trial * 37) % 900;
            let cloud = random_cloud(&mut rng, n);
            let index = build_index(&cloud).unwrap();
            for _ in 0..20 {
                let q = Point3::new(
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                );
                let k = 1 + (n % 60);
                assert_eq!(index.knn(&q, k), brute_force_knn(&cloud, &q, k));
            }
        }
    }

    #[test]
    fn grid_ties_break_by_ascending_index() {
        // 4x4x4 integer grid, queried from its center: many exactly
        // equidistant points.
        let mut pts = Vec::new();
        for x in 0..4 {
            for y in 0..4 {
                for z in 0..4 {
                    pts.push(Point3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let cloud = PointCloud::new(pts);
        let q = Point3::new(1.5, 1.5, 1.5);
        let index = build_index(&cloud).unwrap();
        let hits = index.knn(&q, 64);
        assert_eq!(hits, brute_force_knn(&cloud, &q, 64));
        // equal distances must appear in ascending index order
        for w in hits.windows(2) {
            if w[0].1 == w[1].1 {
                assert!(w[0].0 < w[1].0);
            }
        }
        // and rebuilding must reproduce the identical ordering
        let again = build_index(&cloud).unwrap().knn(&q, 64);
        assert_eq!(hits, again);
    }

    #[test]
    fn repeated_builds_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let cloud = random_cloud(&mut rng, 2000);
        let a = build_index(&cloud).unwrap();
        let b = build_index(&cloud).unwrap();
        let q = Point3::new(0.1, 0.1, 0.1);
        assert_eq!(a.knn(&q, 100), b.knn(&q, 100));
    }
}
