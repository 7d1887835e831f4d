//! Voxel-hash index for exact fixed-radius neighbor queries.
//!
//! The cell edge equals the query radius, so every point closer than the
//! radius to `q` lies in the 3x3x3 block of cells around `q`'s cell. Points
//! are stored contiguously, sorted by cell, which keeps the build
//! deterministic and the candidate scan cache friendly.
//!
//! Cell coordinates are `floor(coord / cell)` as `i64`; coordinates are
//! expected to stay within ±1e9 m.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use crate::geometry::{Point3, PointCloud};

pub type CellKey = [i64; 3];

/// Multiplicative hash for cell keys; std's SipHash dominates query time.
#[derive(Default)]
pub struct CellHasher(u64);

impl Hasher for CellHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.write_u64(b as u64);
        }
    }

    fn write_i64(&mut self, v: i64) {
        self.write_u64(v as u64);
    }

    fn write_u64(&mut self, v: u64) {
        self.0 = (self.0.rotate_left(5) ^ v).wrapping_mul(0x51_7c_c1_b7_27_22_0a_95);
    }

    fn write_usize(&mut self, v: usize) {
        self.write_u64(v as u64);
    }
}

type CellMap = HashMap<CellKey, (u32, u32), BuildHasherDefault<CellHasher>>;

#[derive(Debug, Clone)]
pub struct VoxelIndex {
    cell_size: f64,
    radius_sq: f64,
    /// Points sorted by cell.
    points: Vec<Point3>,
    /// Position of each sorted point in the input cloud.
    source_index: Vec<u32>,
    cells: CellMap,
}

impl VoxelIndex {
    pub fn cell_of(&self, p: &Point3) -> CellKey {
        cell_key(p, self.cell_size)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn radius(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Input-order indices of the points stored in `cell`.
    pub fn cell_members(&self, cell: CellKey) -> Vec<usize> {
        match self.cells.get(&cell) {
            Some(&(start, len)) => self.source_index[start as usize..(start + len) as usize]
                .iter()
                .map(|&i| i as usize)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Calls `f(input_index, point)` for every indexed point strictly closer
    /// than the radius to `q`.
    pub fn for_each_within<F: FnMut(usize, &Point3)>(&self, q: &Point3, mut f: F) {
        let [ci, cj, ck] = self.cell_of(q);
        for di in -1..=1 {
            for dj in -1..=1 {
                for dk in -1..=1 {
                    let Some(&(start, len)) = self.cells.get(&[ci + di, cj + dj, ck + dk]) else {
                        continue;
                    };
                    let range = start as usize..(start + len) as usize;
                    for (p, &src) in self.points[range.clone()]
                        .iter()
                        .zip(&self.source_index[range])
                    {
                        if p.distance_squared(q) < self.radius_sq {
                            f(src as usize, p);
                        }
                    }
                }
            }
        }
    }

    /// Number of indexed points `p` with `|p - q| < r`.
    pub fn count_within(&self, q: &Point3) -> usize {
        let mut n = 0;
        self.for_each_within(q, |_, _| n += 1);
        n
    }
}

fn cell_key(p: &Point3, cell: f64) -> CellKey {
    [
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    ]
}

/// Indexes `points` with cell edge `radius`.
///
/// # Panics
/// If `radius` is not strictly positive and finite.
pub fn build_index_from_points(points: &[Point3], radius: f64) -> VoxelIndex {
    assert!(
        radius > 0.0 && radius.is_finite(),
        "index radius must be positive, got {radius}"
    );
    let mut keyed: Vec<(CellKey, u32)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (cell_key(p, radius), i as u32))
        .collect();
    keyed.sort_unstable();

    let mut cells = CellMap::default();
    let mut sorted = Vec::with_capacity(points.len());
    let mut source_index = Vec::with_capacity(points.len());
    let mut start = 0usize;
    while start < keyed.len() {
        let key = keyed[start].0;
        let mut end = start;
        while end < keyed.len() && keyed[end].0 == key {
            sorted.push(points[keyed[end].1 as usize]);
            source_index.push(keyed[end].1);
            end += 1;
        }
        cells.insert(key, (start as u32, (end - start) as u32));
        start = end;
    }

    VoxelIndex {
        cell_size: radius,
        radius_sq: radius * radius,
        points: sorted,
        source_index,
        cells,
    }
}

pub fn build_index(cloud: &PointCloud, radius: f64) -> VoxelIndex {
    build_index_from_points(&cloud.points, radius)
}

pub fn count_within(index: &VoxelIndex, q: &Point3) -> usize {
    index.count_within(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Frame;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(points: &[Point3], q: &Point3, r: f64) -> usize {
        points.iter().filter(|p| p.distance(q) < r).count()
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(0.0..extent),
                    rng.random_range(0.0..extent),
                    rng.random_range(0.0..extent),
                )
            })
            .collect()
    }

    #[test]
    fn preserves_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 1000, 10.0);
        let idx = build_index(&PointCloud::new(pts, Frame::World), 0.3);
        assert_eq!(idx.len(), 1000);
    }

    #[test]
    fn floor_rule() {
        let pts = vec![Point3::new(0.1, 0.1, 0.1), Point3::new(0.35, 0.1, 0.1)];
        let idx = build_index_from_points(&pts, 0.3);
        assert_eq!(idx.cell_of(&pts[0]), [0, 0, 0]);
        assert_eq!(idx.cell_of(&pts[1]), [1, 0, 0]);
        assert_eq!(idx.cell_members([0, 0, 0]), vec![0]);
        assert_eq!(idx.cell_members([1, 0, 0]), vec![1]);
        assert_eq!(idx.cell_of(&Point3::new(-0.1, 0.0, 0.0)), [-1, 0, 0]);
    }

    #[test]
    fn empty_index() {
        let idx = build_index(&PointCloud::new(vec![], Frame::World), 0.3);
        assert!(idx.is_empty());
        assert_eq!(idx.count_within(&Point3::ORIGIN), 0);
    }

    #[test]
    fn self_and_boundary() {
        let q = Point3::new(1.0, 2.0, 3.0);
        let idx = build_index_from_points(&[q], 0.3);
        assert_eq!(count_within(&idx, &q), 1);

        // 0.25 and 0.5 are exact in binary, so the boundary point sits at
        // distance exactly r.
        let q = Point3::new(0.0, 0.0, 0.0);
        let idx = build_index_from_points(&[Point3::new(0.5, 0.0, 0.0)], 0.5);
        assert_eq!(count_within(&idx, &q), 0);
        let idx = build_index_from_points(&[Point3::new(0.25, 0.0, 0.0)], 0.25);
        assert_eq!(count_within(&idx, &q), 0);
    }

    #[test]
    fn matches_brute_force_in_cube() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pts = random_points(&mut rng, 5000, 10.0);
        let idx = build_index_from_points(&pts, 0.3);
        for _ in 0..100 {
            let q = Point3::new(
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..10.0),
            );
            assert_eq!(idx.count_within(&q), brute_force(&pts, &q, 0.3));
        }
    }

    #[test]
    fn reports_input_indices() {
        let pts = vec![
            Point3::new(5.0, 5.0, 5.0),
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.1, 0.0, 0.0),
        ];
        let idx = build_index_from_points(&pts, 0.3);
        let mut hits = vec![];
        idx.for_each_within(&Point3::ORIGIN, |i, _| hits.push(i));
        hits.sort();
        assert_eq!(hits, vec![1, 2]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn equals_brute_force(seed in any::<u64>(), n in 0usize..10_000, extent in 1.0f64..30.0, r in 0.05f64..1.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_points(&mut rng, n, extent);
            let idx = build_index_from_points(&pts, r);
            for _ in 0..20 {
                let q = Point3::new(
                    rng.random_range(-1.0..extent + 1.0),
                    rng.random_range(-1.0..extent + 1.0),
                    rng.random_range(-1.0..extent + 1.0),
                );
                prop_assert_eq!(idx.count_within(&q), brute_force(&pts, &q, r));
            }
        }

        #[test]
        fn translation_invariant(seed in any::<u64>(), dx in -100.0f64..100.0, dy in -100.0f64..100.0, dz in -100.0f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_points(&mut rng, 2000, 5.0);
            let shift = Point3::new(dx, dy, dz);
            let shifted: Vec<Point3> = pts.iter().map(|p| *p + shift).collect();
            let a = build_index_from_points(&pts, 0.3);
            let b = build_index_from_points(&shifted, 0.3);
            for _ in 0..50 {
                let q = Point3::new(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
                // Translation can move a near-boundary distance across r by
                // rounding; compare on queries away from the boundary.
                let near_boundary = pts.iter().any(|p| (p.distance(&q) - 0.3).abs() < 1e-9);
                prop_assume!(!near_boundary);
                prop_assert_eq!(a.count_within(&q), b.count_within(&(q + shift)));
            }
        }

        #[test]
        fn adding_points_is_monotone(seed in any::<u64>(), extra in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0, 0.0f64..5.0), 1..100)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_points(&mut rng, 1000, 5.0);
            let mut more = pts.clone();
            more.extend(extra.iter().map(|&(x, y, z)| Point3::new(x, y, z)));
            let a = build_index_from_points(&pts, 0.4);
            let b = build_index_from_points(&more, 0.4);
            for _ in 0..50 {
                let q = Point3::new(rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
                prop_assert!(b.count_within(&q) >= a.count_within(&q));
            }
        }
    }
}
