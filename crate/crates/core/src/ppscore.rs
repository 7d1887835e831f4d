//! Persistence prior (PP) score.
//!
//! For a query point `q` and traversals `t = 1..T` of its location, `N_t(q)`
//! counts the traversal's aggregated points strictly within radius `r`.
//! Normalizing the counts gives a categorical distribution over traversals;
//! the score is its entropy divided by `ln T`, or 0 when no traversal has a
//! neighbor. Static background is seen in every traversal (score near 1);
//! an object seen once has a single nonzero count (score 0).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{Frame, Point3, PointCloud, UnlabeledScene};
use crate::ingest::{build_traversal_store_with, Dataset, StoreOptions, TraversalStore};
use crate::spatial::{build_index, VoxelIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpConfig {
    /// Neighbor radius in meters.
    pub radius: f64,
    /// Traversals aggregated per location.
    pub max_traversals: usize,
    /// Drop the query scene's own traversal from the counts.
    pub exclude_self: bool,
    pub aggregate_voxel_size: Option<f64>,
}

impl Default for PpConfig {
    fn default() -> Self {
        PpConfig {
            radius: 0.3,
            max_traversals: 5,
            exclude_self: false,
            aggregate_voxel_size: None,
        }
    }
}

impl PpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "pp radius must be positive, got {}",
                self.radius
            )));
        }
        if self.max_traversals < 2 {
            return Err(Error::InvalidConfig(
                "max_traversals must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Spatial indices over the per-traversal clouds of one location.
#[derive(Debug, Clone)]
pub struct IndexedStore {
    pub location_id: String,
    pub traversal_ids: Vec<String>,
    pub indices: Vec<VoxelIndex>,
    pub radius: f64,
}

impl IndexedStore {
    pub fn new(store: &TraversalStore, radius: f64) -> Self {
        let indices = Execution::default().map(&store.clouds, |c| build_index(c, radius));
        IndexedStore {
            location_id: store.location_id.clone(),
            traversal_ids: store.traversal_ids.clone(),
            indices,
            radius,
        }
    }

    fn active(&self, exclude: Option<&str>) -> Vec<usize> {
        (0..self.traversal_ids.len())
            .filter(|&i| Some(self.traversal_ids[i].as_str()) != exclude)
            .collect()
    }
}

/// Indexed stores for every location of a dataset.
#[derive(Debug, Clone, Default)]
pub struct StoreSet {
    pub stores: BTreeMap<String, IndexedStore>,
}

impl StoreSet {
    /// Builds and indexes stores for every location referenced by a scene.
    pub fn build(dataset: &Dataset, config: &PpConfig) -> Result<Self> {
        config.validate()?;
        dataset.manifest.require_multi_traversal()?;
        let options = StoreOptions {
            max_traversals: config.max_traversals,
            aggregate_voxel_size: config.aggregate_voxel_size,
        };
        let mut locations: Vec<&str> = dataset
            .manifest
            .scenes
            .iter()
            .map(|s| s.location.as_str())
            .collect();
        locations.sort_unstable();
        locations.dedup();
        let mut stores = BTreeMap::new();
        for loc in locations {
            let store = build_traversal_store_with(dataset, loc, &options)?;
            stores.insert(loc.to_string(), IndexedStore::new(&store, config.radius));
        }
        Ok(StoreSet { stores })
    }

    pub fn get(&self, location: &str) -> Result<&IndexedStore> {
        self.stores
            .get(location)
            .ok_or_else(|| Error::NotFound(format!("traversal store for location {location}")))
    }
}

/// `N_t(q)` for each traversal of `store`, in store order, skipping
/// `exclude`.
pub fn count_vector(store: &IndexedStore, q: &Point3, exclude: Option<&str>) -> Result<Vec<u32>> {
    let active = store.active(exclude);
    if active.len() < 2 {
        return Err(Error::Location {
            location: store.location_id.clone(),
            message: format!(
                "{} traversal(s) remain after exclusion; at least 2 are needed",
                active.len()
            ),
        });
    }
    Ok(active
        .iter()
        .map(|&i| store.indices[i].count_within(q) as u32)
        .collect())
}

/// `P(t) = N_t / Σ N`. `None` marks the all-zero case.
pub fn normalize_counts(counts: &[u32]) -> Option<Vec<f64>> {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total == 0 {
        return None;
    }
    let total = total as f64;
    Some(counts.iter().map(|&c| c as f64 / total).collect())
}

/// Normalized entropy of the count distribution, in [0, 1].
///
/// Counts are reduced in sorted order so the result is bit-identical under
/// permutation; equal nonzero counts are evaluated in closed form so the
/// uniform case is exactly 1.
pub fn pp_score(counts: &[u32]) -> f64 {
    let t = counts.len();
    debug_assert!(t >= 2, "pp_score needs at least two traversals");
    let mut nonzero: Vec<u32> = counts.iter().copied().filter(|&c| c > 0).collect();
    if nonzero.len() <= 1 {
        return 0.0;
    }
    nonzero.sort_unstable();
    let log_t = (t as f64).ln();
    if nonzero.first() == nonzero.last() {
        return ((nonzero.len() as f64).ln() / log_t).min(1.0);
    }
    let total: u64 = nonzero.iter().map(|&c| c as u64).sum();
    let total = total as f64;
    let entropy: f64 = nonzero
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    (entropy / log_t).clamp(0.0, 1.0)
}

/// Per-point scores of one scene plus the counts behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct PPField {
    /// Row-major `len × traversal_count` counts.
    pub counts: Vec<u32>,
    pub tau: Vec<f64>,
    pub traversal_count: usize,
    pub radius: f64,
    pub exclude_self: bool,
}

impl PPField {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn counts_of(&self, i: usize) -> &[u32] {
        &self.counts[i * self.traversal_count..(i + 1) * self.traversal_count]
    }

    pub fn probabilities(&self, i: usize) -> Option<Vec<f64>> {
        normalize_counts(self.counts_of(i))
    }
}

/// Scores world-frame `points` against `store`.
pub fn score_points(
    points: &[Point3],
    store: &IndexedStore,
    exclude: Option<&str>,
    exec: Execution,
) -> Result<PPField> {
    let active = store.active(exclude);
    if active.len() < 2 {
        // Reuse count_vector's error.
        count_vector(store, &Point3::ORIGIN, exclude)?;
    }
    let t = active.len();
    let rows = exec.map(points, |q| {
        let counts: Vec<u32> = active
            .iter()
            .map(|&i| store.indices[i].count_within(q) as u32)
            .collect();
        let tau = pp_score(&counts);
        (counts, tau)
    });
    let mut counts = Vec::with_capacity(points.len() * t);
    let mut tau = Vec::with_capacity(points.len());
    for (c, s) in rows {
        counts.extend(c);
        tau.push(s);
    }
    Ok(PPField {
        counts,
        tau,
        traversal_count: t,
        radius: store.radius,
        exclude_self: exclude.is_some(),
    })
}

pub fn score_cloud(
    cloud: &PointCloud,
    store: &IndexedStore,
    exclude: Option<&str>,
    exec: Execution,
) -> Result<PPField> {
    if cloud.frame != Frame::World {
        return Err(Error::Invalid(
            "persistence scores are computed on world-frame points".into(),
        ));
    }
    score_points(&cloud.points, store, exclude, exec)
}

/// Scores every point of `scene`, transforming it to the world frame first.
pub fn score_scene(
    scene: &UnlabeledScene,
    stores: &StoreSet,
    config: &PpConfig,
) -> Result<PPField> {
    let store = stores.get(&scene.location_id)?;
    let world = scene.world_cloud()?;
    let exclude = config.exclude_self.then_some(scene.traversal_id.as_str());
    score_cloud(&world, store, exclude, Execution::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose6DoF;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store_from(clouds: Vec<Vec<Point3>>, radius: f64) -> IndexedStore {
        let n = clouds.len();
        let store = TraversalStore {
            location_id: "loc".into(),
            traversal_ids: (0..n).map(|i| format!("t{}", i + 1)).collect(),
            clouds: clouds
                .into_iter()
                .map(|c| PointCloud::new(c, Frame::World))
                .collect(),
        };
        IndexedStore::new(&store, radius)
    }

    fn ring(center: Point3, n: usize, radius: f64) -> Vec<Point3> {
        (0..n)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / n as f64;
                Point3::new(
                    center.x + radius * a.cos(),
                    center.y + radius * a.sin(),
                    center.z,
                )
            })
            .collect()
    }

    #[test]
    fn counts_basic() {
        let q = Point3::new(1.0, 1.0, 1.0);
        let store = store_from(vec![ring(q, 4, 0.1), ring(q, 4, 0.1), ring(q, 4, 0.1)], 0.3);
        assert_eq!(count_vector(&store, &q, None).unwrap(), vec![4, 4, 4]);
        let far = Point3::new(50.0, 0.0, 0.0);
        assert_eq!(count_vector(&store, &far, None).unwrap(), vec![0, 0, 0]);
        assert_eq!(count_vector(&store, &q, Some("t2")).unwrap(), vec![4, 4]);
    }

    #[test]
    fn exclusion_below_two_traversals_errors() {
        let q = Point3::ORIGIN;
        let store = store_from(vec![vec![q], vec![q]], 0.3);
        assert!(count_vector(&store, &q, Some("t1")).is_err());
        assert!(score_points(&[q], &store, Some("t1"), Execution::Sequential).is_err());
    }

    #[test]
    fn normalization() {
        assert_eq!(
            normalize_counts(&[4, 4, 0, 0]).unwrap(),
            vec![0.5, 0.5, 0.0, 0.0]
        );
        assert_eq!(normalize_counts(&[7, 0, 0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(normalize_counts(&[0, 0]), None);
    }

    #[test]
    fn score_examples() {
        assert_eq!(pp_score(&[1, 1, 1, 1, 1]), 1.0);
        assert_eq!(pp_score(&[7, 0, 0]), 0.0);
        assert_eq!(pp_score(&[0, 0]), 0.0);
        assert_eq!(pp_score(&[4, 4, 0, 0]), 0.5);
        let expected = {
            let p = [0.75f64, 0.25];
            -(p[0] * p[0].ln() + p[1] * p[1].ln()) / 2f64.ln()
        };
        assert!((pp_score(&[3, 1]) - expected).abs() < 1e-15);
    }

    #[test]
    fn dynamic_point_scores_zero() {
        let wall: Vec<Point3> = (0..50)
            .map(|i| Point3::new(i as f64 * 0.1, 0.0, 1.0))
            .collect();
        let car = Point3::new(0.0, 10.0, 1.0);
        let mut first = wall.clone();
        first.push(car);
        let store = store_from(vec![first, wall.clone(), wall], 0.3);
        let field = score_points(
            &[car, Point3::new(0.0, 0.0, 1.0)],
            &store,
            None,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(field.tau[0], 0.0);
        assert_eq!(field.counts_of(0), &[1, 0, 0]);
        assert!(field.tau[1] > 0.99);

        let empty = score_points(
            &[Point3::new(100.0, 0.0, 0.0)],
            &store,
            None,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(empty.tau[0], 0.0);
        assert_eq!(empty.probabilities(0), None);
    }

    #[test]
    fn equal_density_wall_scores_near_one() {
        // Five traversals each resample the same wall on a jittered grid.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut clouds = Vec::new();
        for _ in 0..5 {
            let mut pts = Vec::new();
            for i in 0..100 {
                for j in 0..30 {
                    pts.push(Point3::new(
                        (i as f64 + rng.random_range(0.0..1.0)) * 0.05,
                        0.0,
                        (j as f64 + rng.random_range(0.0..1.0)) * 0.05,
                    ));
                }
            }
            clouds.push(pts);
        }
        let queries: Vec<Point3> = clouds[0]
            .iter()
            .filter(|p| p.x > 0.5 && p.x < 4.5 && p.z > 0.4 && p.z < 1.1)
            .copied()
            .collect();
        let store = store_from(clouds, 0.3);
        let field = score_points(&queries, &store, None, Execution::Parallel).unwrap();
        assert!(field.tau.iter().all(|&t| (0.9..=1.0).contains(&t)));
    }

    #[test]
    fn score_scene_requires_location() {
        let scene = UnlabeledScene {
            scene_id: "s".into(),
            location_id: "nowhere".into(),
            traversal_id: "t1".into(),
            cloud: PointCloud::new(vec![Point3::ORIGIN], Frame::Sensor),
            sensor_pose: Pose6DoF::identity(),
        };
        assert!(score_scene(&scene, &StoreSet::default(), &PpConfig::default()).is_err());
    }

    #[test]
    fn world_frame_required() {
        let store = store_from(vec![vec![], vec![]], 0.3);
        let cloud = PointCloud::new(vec![Point3::ORIGIN], Frame::Sensor);
        assert!(score_cloud(&cloud, &store, None, Execution::Sequential).is_err());
    }

    fn brute_counts(clouds: &[Vec<Point3>], q: &Point3, r: f64) -> Vec<u32> {
        clouds
            .iter()
            .map(|c| c.iter().filter(|p| p.distance(q) < r).count() as u32)
            .collect()
    }

    proptest! {
        #[test]
        fn bounded(counts in prop::collection::vec(0u32..50, 2..10)) {
            let t = pp_score(&counts);
            prop_assert!((0.0..=1.0).contains(&t));
            if counts.iter().filter(|&&c| c > 0).count() <= 1 {
                prop_assert_eq!(t, 0.0);
            }
            if let Some(p) = normalize_counts(&counts) {
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn permutation_and_scaling_invariant(
            counts in prop::collection::vec(0u32..100, 2..8),
            scale in 1u32..50,
            seed in any::<u64>(),
        ) {
            let t = pp_score(&counts);
            let mut shuffled = counts.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            prop_assert_eq!(t.to_bits(), pp_score(&shuffled).to_bits());
            let scaled: Vec<u32> = counts.iter().map(|c| c * scale).collect();
            prop_assert_eq!(t.to_bits(), pp_score(&scaled).to_bits());
        }

        #[test]
        fn index_matches_brute_force(seed in any::<u64>(), n in 10usize..2000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clouds: Vec<Vec<Point3>> = (0..3)
                .map(|_| (0..n).map(|_| Point3::new(
                    rng.random_range(0.0..4.0), rng.random_range(0.0..4.0), rng.random_range(0.0..1.0),
                )).collect())
                .collect();
            let store = store_from(clouds.clone(), 0.3);
            let queries: Vec<Point3> = (0..50)
                .map(|_| Point3::new(rng.random_range(0.0..4.0), rng.random_range(0.0..4.0), rng.random_range(0.0..1.0)))
                .collect();
            let field = score_points(&queries, &store, None, Execution::Sequential).unwrap();
            for (i, q) in queries.iter().enumerate() {
                let brute = brute_counts(&clouds, q, 0.3);
                prop_assert_eq!(field.counts_of(i), brute.as_slice());
                prop_assert_eq!(field.tau[i].to_bits(), pp_score(&brute).to_bits());
            }
        }
    }
}
