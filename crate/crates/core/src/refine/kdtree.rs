use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::projection::FovMask;
use crate::scalar::Scalar;

const LEAF_SIZE: usize = 8;
const NOT_INDEXED: usize = usize::MAX;

/// K nearest neighbors of one query point, ordered by ascending distance
/// with ties broken by ascending point index.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood<T> {
    pub query: usize,
    pub indices: Vec<usize>,
    pub distances: Vec<T>,
}

impl<T> Neighborhood<T> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate<T> {
    dist2: T,
    id: usize,
}

impl<T: Scalar> PartialEq for Candidate<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Candidate<T> {}

impl<T: Scalar> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Candidate<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .partial_cmp(&other.dist2)
            .expect("finite distances")
            .then(self.id.cmp(&other.id))
    }
}

#[inline]
fn dist2<T: Scalar>(a: &[T; 3], b: &[T; 3]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Immutable 3-D index over a subset of a cloud's points.
///
/// Built as an implicit median-split tree: the node of range `[lo, hi)`
/// sits at `mid = (lo + hi) / 2` and splits on the axis of largest extent.
#[derive(Debug, Clone)]
pub struct KdTree<T> {
    coords: Vec<[T; 3]>,
    ids: Vec<usize>,
    split_dims: Vec<u8>,
    slot_of: Vec<usize>,
}

impl<T: Scalar> KdTree<T> {
    /// Indexes the points selected by `mask`. Neighbor indices refer to
    /// positions in the original cloud.
    pub fn build(cloud: &PointCloud<T>, mask: &FovMask) -> Result<Self> {
        if mask.len() != cloud.len() {
            return Err(Error::SizeMismatch {
                expected: cloud.len(),
                found: mask.len(),
            });
        }
        if mask.count() == 0 {
            return Err(Error::EmptyInput("no points selected for the KD-tree".into()));
        }
        let pts = cloud.points();
        let mut perm: Vec<usize> = mask.index_map().to_vec();
        let mut split_dims = vec![0u8; perm.len()];
        build_range(&mut perm, &mut split_dims, |i| pts[i].xyz());
        let coords: Vec<[T; 3]> = perm.iter().map(|&i| pts[i].xyz()).collect();
        let mut slot_of = vec![NOT_INDEXED; cloud.len()];
        for (slot, &id) in perm.iter().enumerate() {
            slot_of[id] = slot;
        }
        Ok(Self {
            coords,
            ids: perm,
            split_dims,
            slot_of,
        })
    }

    /// Indexes every point of the cloud.
    pub fn build_all(cloud: &PointCloud<T>) -> Result<Self> {
        Self::build(cloud, &FovMask::all(cloud.len(), true))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Original indices of the indexed points, ascending.
    pub fn indexed(&self) -> Vec<usize> {
        let mut v = self.ids.clone();
        v.sort_unstable();
        v
    }

    pub fn contains(&self, index: usize) -> bool {
        self.slot_of.get(index).is_some_and(|&s| s != NOT_INDEXED)
    }

    fn check_k(&self, k: usize, available: usize) -> Result<()> {
        if k == 0 || k > available {
            return Err(Error::BadK {
                k,
                reason: format!("must be between 1 and {available}"),
            });
        }
        Ok(())
    }

    /// The `k` indexed points closest to an arbitrary location.
    pub fn nearest(&self, query: [T; 3], k: usize) -> Result<Neighborhood<T>> {
        self.check_k(k, self.len())?;
        Ok(self.finish(usize::MAX, None, self.search(&query, k, None)))
    }

    /// Neighborhood of an indexed point with the point itself first
    /// (distance 0), followed by its `k − 1` nearest other points.
    pub fn neighbors_of(&self, index: usize, k: usize) -> Result<Neighborhood<T>> {
        let slot = self.slot(index)?;
        self.check_k(k, self.len())?;
        let found = self.search(&self.coords[slot], k - 1, Some(index));
        Ok(self.finish(index, Some(index), found))
    }

    /// The `k` nearest points other than the query itself.
    pub fn neighbors_excluding(&self, index: usize, k: usize) -> Result<Neighborhood<T>> {
        let slot = self.slot(index)?;
        self.check_k(k, self.len().saturating_sub(1))?;
        let found = self.search(&self.coords[slot], k, Some(index));
        Ok(self.finish(index, None, found))
    }

    /// Neighborhoods of every indexed point, in ascending index order.
    pub fn all_neighborhoods(&self, k: usize, include_self: bool) -> Result<Vec<Neighborhood<T>>> {
        let indexed = self.indexed();
        indexed
            .par_iter()
            .map(|&i| {
                if include_self {
                    self.neighbors_of(i, k)
                } else {
                    self.neighbors_excluding(i, k)
                }
            })
            .collect()
    }

    fn slot(&self, index: usize) -> Result<usize> {
        match self.slot_of.get(index) {
            Some(&s) if s != NOT_INDEXED => Ok(s),
            _ => Err(Error::EmptyInput(format!("point {index} is not indexed"))),
        }
    }

    fn finish(&self, query: usize, head: Option<usize>, found: Vec<Candidate<T>>) -> Neighborhood<T> {
        let mut indices = Vec::with_capacity(found.len() + 1);
        let mut distances = Vec::with_capacity(found.len() + 1);
        if let Some(h) = head {
            indices.push(h);
            distances.push(T::zero());
        }
        for c in found {
            indices.push(c.id);
            distances.push(c.dist2.sqrt());
        }
        Neighborhood {
            query,
            indices,
            distances,
        }
    }

    fn search(&self, q: &[T; 3], k: usize, exclude: Option<usize>) -> Vec<Candidate<T>> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search_range(0, self.len(), q, k, exclude, &mut heap);
        heap.into_sorted_vec()
    }

    fn offer(&self, slot: usize, q: &[T; 3], k: usize, exclude: Option<usize>, heap: &mut BinaryHeap<Candidate<T>>) {
        let id = self.ids[slot];
        if Some(id) == exclude {
            return;
        }
        let cand = Candidate {
            dist2: dist2(q, &self.coords[slot]),
            id,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().unwrap() {
            heap.pop();
            heap.push(cand);
        }
    }

    fn search_range(
        &self,
        lo: usize,
        hi: usize,
        q: &[T; 3],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate<T>>,
    ) {
        if hi - lo <= LEAF_SIZE {
            for slot in lo..hi {
                self.offer(slot, q, k, exclude, heap);
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let dim = self.split_dims[mid] as usize;
        self.offer(mid, q, k, exclude, heap);
        let diff = q[dim] - self.coords[mid][dim];
        let (near, far) = if diff <= T::zero() {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search_range(near.0, near.1, q, k, exclude, heap);
        // `<=`: a point at exactly the current worst distance may still win
        // on the index tie-break
        if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
            self.search_range(far.0, far.1, q, k, exclude, heap);
        }
    }
}

fn build_range<T: Scalar>(perm: &mut [usize], split_dims: &mut [u8], coord: impl Fn(usize) -> [T; 3] + Copy) {
    if perm.len() <= LEAF_SIZE {
        return;
    }
    let mut lo = [T::infinity(); 3];
    let mut hi = [T::neg_infinity(); 3];
    for &i in perm.iter() {
        let c = coord(i);
        for d in 0..3 {
            lo[d] = lo[d].min(c[d]);
            hi[d] = hi[d].max(c[d]);
        }
    }
    let mut dim = 0;
    for d in 1..3 {
        if hi[d] - lo[d] > hi[dim] - lo[dim] {
            dim = d;
        }
    }
    let mid = perm.len() / 2;
    perm.select_nth_unstable_by(mid, |&a, &b| {
        coord(a)[dim]
            .partial_cmp(&coord(b)[dim])
            .expect("finite coordinates")
            .then(a.cmp(&b))
    });
    split_dims[mid] = dim as u8;
    let (left, rest) = perm.split_at_mut(mid);
    let (left_dims, rest_dims) = split_dims.split_at_mut(mid);
    build_range(left, left_dims, coord);
    build_range(&mut rest[1..], &mut rest_dims[1..], coord);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-1.0..1.0), 0.0))
            .collect()
    }

    fn brute(cloud: &PointCloud<f64>, q: usize, k: usize) -> Vec<usize> {
        let p = cloud.points()[q].xyz();
        let mut others: Vec<(f64, usize)> = cloud
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != q)
            .map(|(i, o)| {
                let d = [p[0] - o.x, p[1] - o.y, p[2] - o.z];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2], i)
            })
            .collect();
        others.sort_by(|a, b| a.partial_cmp(b).unwrap());
        std::iter::once(q).chain(others.into_iter().map(|(_, i)| i)).take(k).collect()
    }

    #[test]
    fn single_point() {
        let c: PointCloud<f64> = vec![Point::new(1.0, 2.0, 3.0, 0.0)].into_iter().collect();
        let t = KdTree::build_all(&c).unwrap();
        let n = t.neighbors_of(0, 1).unwrap();
        assert_eq!((n.indices, n.distances), (vec![0], vec![0.0]));
        assert!(matches!(t.neighbors_of(0, 2), Err(Error::BadK { .. })));
    }

    #[test]
    fn empty_mask_rejected() {
        let c = random_cloud(5, 1);
        assert!(matches!(KdTree::build(&c, &FovMask::all(5, false)), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn equidistant_tie_goes_to_lower_index() {
        let c: PointCloud<f64> = vec![
            Point::new(0.0, 0.0, 0.0, 0.0),
            Point::new(-1.0, 0.0, 0.0, 0.0),
            Point::new(1.0, 0.0, 0.0, 0.0),
        ]
        .into_iter()
        .collect();
        let t = KdTree::build_all(&c).unwrap();
        assert_eq!(t.neighbors_of(0, 2).unwrap().indices, vec![0, 1]);
        assert_eq!(t.nearest([0.0, 0.0, 0.0], 3).unwrap().indices, vec![0, 1, 2]);
    }

    #[test]
    fn duplicate_points_keep_self_first() {
        let c: PointCloud<f64> = vec![Point::new(1.0, 1.0, 1.0, 0.0); 4].into_iter().collect();
        let t = KdTree::build_all(&c).unwrap();
        assert_eq!(t.neighbors_of(2, 3).unwrap().indices, vec![2, 0, 1]);
        assert_eq!(t.neighbors_excluding(2, 3).unwrap().indices, vec![0, 1, 3]);
    }

    #[test]
    fn matches_exhaustive_search() {
        for seed in 0..4 {
            let c = random_cloud(500, seed);
            let t = KdTree::build_all(&c).unwrap();
            for k in [3, 19] {
                for q in (0..500).step_by(7) {
                    assert_eq!(t.neighbors_of(q, k).unwrap().indices, brute(&c, q, k), "seed {seed} q {q} k {k}");
                }
            }
        }
    }

    #[test]
    fn masked_subset_only() {
        let c = random_cloud(60, 9);
        let mask = FovMask::from_bools((0..60).map(|i| i % 3 == 0).collect());
        let t = KdTree::build(&c, &mask).unwrap();
        assert_eq!(t.len(), 20);
        let n = t.neighbors_of(3, 20).unwrap();
        assert!(n.indices.iter().all(|i| i % 3 == 0));
        assert!(n.distances.windows(2).all(|w| w[0] <= w[1]));
        assert!(t.neighbors_of(1, 1).is_err());
    }

    #[test]
    fn grid_with_many_ties() {
        // integer lattice: lots of exactly equal distances
        let c: PointCloud<f64> = (0..6)
            .flat_map(|x| (0..6).flat_map(move |y| (0..3).map(move |z| Point::new(x as f64, y as f64, z as f64, 0.0))))
            .collect();
        let t = KdTree::build_all(&c).unwrap();
        for q in 0..c.len() {
            for k in [1, 7, 19, 23] {
                assert_eq!(t.neighbors_of(q, k).unwrap().indices, brute(&c, q, k));
            }
        }
    }
}
