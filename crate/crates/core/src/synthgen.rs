//! Deterministic synthetic multi-traversal worlds.
//!
//! Each location is a straight road segment. Static structures (buildings,
//! poles, and optionally low roadside clutter) are fixed per location; the
//! dynamic objects are resampled for every traversal. Sensor poses are the
//! same in every traversal, so static surfaces receive the same sampling
//! density each time. Scans sample every surface within range with density
//! falling as 1/range² and truncated Gaussian noise; there is no occlusion.
//!
//! Placement guarantees the persistence score is well posed: dynamic
//! objects keep a clearance from structures and from each other, objects
//! from different traversals never overlap, and object surfaces start above
//! the ground by more than the scoring radius.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{BoxSize, ClassId, LabeledBox, Point3, Pose6DoF, NUM_CLASSES};
use crate::ingest::{
    mask_path_for, write_manifest, Dataset, DatasetManifest, LocationRecord, MaskEntry,
    MemoryFiles, PointKind, ScanRecord, SceneRecord, TraversalRecord,
};

/// A static box on the ground, in the location frame (x along the road).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureSpec {
    pub center: [f64; 2],
    /// Length, width, height.
    pub size: [f64; 3],
    pub yaw: f64,
}

/// A polyline in the location frame on which objects of `classes` are placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSpec {
    pub points: Vec<[f64; 2]>,
    pub classes: Vec<String>,
    #[serde(default)]
    pub lateral_jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    /// Expected objects per traversal of a location.
    pub frequency: f64,
    /// Mean length, width, height.
    pub size_mean: [f64; 3],
    pub size_std: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub seed: u64,
    /// Prefix for location ids; also separates random streams of worlds that
    /// share a seed.
    pub name: String,
    pub locations: usize,
    pub traversals: usize,
    pub scans_per_traversal: usize,
    /// Distance between consecutive scan positions along the road.
    pub scan_spacing: f64,
    /// Scan indices that become scenes; empty means the middle scan.
    pub scene_scans: Vec<usize>,
    /// Half extents of the ground rectangle (along, across the road).
    pub extent: [f64; 2],
    pub max_range: f64,
    pub sensor_height: f64,
    /// Points per m² at 10 m range.
    pub density: f64,
    /// Density stops growing inside this range.
    pub near_range: f64,
    pub ground_density_scale: f64,
    pub ground_noise: f64,
    pub sensor_noise: f64,
    pub structures: Vec<StructureSpec>,
    /// Random buildings per road side, set back beyond `building_setback`.
    pub buildings_per_side: usize,
    pub building_setback: f64,
    pub poles_per_side: usize,
    pub pole_offset: f64,
    pub lanes: Vec<LaneSpec>,
    pub classes: [ClassSpec; NUM_CLASSES],
    /// Object surfaces are not sampled below this height.
    pub object_ground_clearance: f64,
    /// Minimum gap between a dynamic object and anything else.
    pub clearance: f64,
    /// Minimum center distance between objects of different traversals.
    pub traversal_separation: f64,
    /// Objects with fewer points in a scan are not annotated there.
    pub min_box_points: usize,
}

fn lane(y: f64, half: f64, classes: &[&str], jitter: f64) -> LaneSpec {
    LaneSpec {
        points: vec![[-half, y], [half, y]],
        classes: classes.iter().map(|c| c.to_string()).collect(),
        lateral_jitter: jitter,
    }
}

/// Two car lanes per direction plus cyclist and pedestrian lanes along x,
/// spanning `[-half, half]`.
pub fn default_lanes(half: f64) -> Vec<LaneSpec> {
    vec![
        lane(-1.8, half, &["Car"], 0.2),
        lane(1.8, half, &["Car"], 0.2),
        lane(-5.0, half, &["Car"], 0.15),
        lane(5.0, half, &["Car"], 0.15),
        lane(-6.6, half, &["Cyclist"], 0.1),
        lane(6.6, half, &["Cyclist"], 0.1),
        lane(-7.8, half, &["Pedestrian"], 0.2),
        lane(7.8, half, &["Pedestrian"], 0.2),
    ]
}

impl Default for WorldSpec {
    fn default() -> Self {
        let half = 12.0;
        WorldSpec {
            seed: 0,
            name: "world".into(),
            locations: 4,
            traversals: 5,
            scans_per_traversal: 5,
            scan_spacing: 5.0,
            scene_scans: Vec::new(),
            extent: [14.0, 26.0],
            max_range: 40.0,
            sensor_height: 1.8,
            density: 12.0,
            near_range: 12.0,
            ground_density_scale: 0.1,
            ground_noise: 0.02,
            sensor_noise: 0.01,
            structures: Vec::new(),
            buildings_per_side: 4,
            building_setback: 20.0,
            poles_per_side: 4,
            pole_offset: 9.0,
            lanes: default_lanes(half),
            classes: [
                ClassSpec {
                    frequency: 4.0,
                    size_mean: [3.9, 1.6, 1.56],
                    size_std: [0.2, 0.08, 0.08],
                },
                ClassSpec {
                    frequency: 1.2,
                    size_mean: [0.8, 0.6, 1.73],
                    size_std: [0.06, 0.05, 0.08],
                },
                ClassSpec {
                    frequency: 0.6,
                    size_mean: [1.76, 0.6, 1.73],
                    size_std: [0.1, 0.05, 0.08],
                },
            ],
            object_ground_clearance: 0.45,
            clearance: 0.5,
            traversal_separation: 2.0,
            min_box_points: 5,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.traversals < 2 {
            return bad(format!(
                "traversals must be at least 2, got {}",
                self.traversals
            ));
        }
        if self.locations == 0 || self.scans_per_traversal == 0 {
            return bad("locations and scans_per_traversal must be positive".into());
        }
        if let Some(&s) = self
            .scene_scans
            .iter()
            .find(|&&s| s >= self.scans_per_traversal)
        {
            return bad(format!("scene scan {s} out of range"));
        }
        let positive = [
            self.density,
            self.max_range,
            self.near_range,
            self.extent[0],
            self.extent[1],
            self.ground_density_scale,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return bad("densities, ranges, and extents must be positive".into());
        }
        if self.ground_noise < 0.0 || self.sensor_noise < 0.0 {
            return bad("noise levels must be non-negative".into());
        }
        let half_span = self.scan_spacing.abs() * (self.scans_per_traversal as f64 - 1.0) / 2.0;
        if half_span > self.extent[0] {
            return bad("scan positions leave the location extent".into());
        }
        for s in &self.structures {
            if s.center[0].abs() > self.extent[0] || s.center[1].abs() > self.extent[1] {
                return bad(format!("structure at {:?} outside the extent", s.center));
            }
            if s.size.iter().any(|v| !(*v > 0.0)) {
                return bad(format!("structure size must be positive, got {:?}", s.size));
            }
        }
        for l in &self.lanes {
            if l.points.len() < 2 {
                return bad("lanes need at least two points".into());
            }
            if l.points
                .iter()
                .any(|p| p[0].abs() > self.extent[0] || p[1].abs() > self.extent[1])
            {
                return bad("lane leaves the location extent".into());
            }
            for c in &l.classes {
                ClassId::from_name(c)?;
            }
        }
        for c in &self.classes {
            if !(c.frequency >= 0.0) || c.size_mean.iter().any(|v| !(*v > 0.0)) {
                return bad("class frequencies must be non-negative and sizes positive".into());
            }
        }
        Ok(())
    }

    fn scene_scan_indices(&self) -> Vec<usize> {
        if self.scene_scans.is_empty() {
            vec![self.scans_per_traversal / 2]
        } else {
            self.scene_scans.clone()
        }
    }

    fn density_at(&self, range: f64) -> f64 {
        let r = range.max(self.near_range);
        self.density * 100.0 / (r * r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainShiftSpec {
    /// Multiplies car length and width (mean and spread).
    pub car_scale: f64,
    pub class_frequency: [f64; NUM_CLASSES],
    /// Expected car-sized low static blocks per location, placed on the
    /// parking lanes.
    pub static_clutter: f64,
    /// Length, width, height of a clutter block.
    pub clutter_size: [f64; 3],
}

impl Default for DomainShiftSpec {
    fn default() -> Self {
        DomainShiftSpec {
            car_scale: 1.15,
            class_frequency: [1.0; NUM_CLASSES],
            static_clutter: 0.0,
            clutter_size: [4.3, 1.8, 0.5],
        }
    }
}

impl DomainShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.car_scale > 0.0) || self.class_frequency.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::InvalidConfig(
                "scale factors must be positive".into(),
            ));
        }
        if !(self.static_clutter >= 0.0) || self.clutter_size.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig("invalid clutter settings".into()));
        }
        Ok(())
    }

    /// The world with shifted class statistics applied.
    pub fn apply(&self, world: &WorldSpec) -> WorldSpec {
        let mut out = world.clone();
        let car = &mut out.classes[ClassId::CAR.index()];
        for k in 0..2 {
            car.size_mean[k] *= self.car_scale;
            car.size_std[k] *= self.car_scale;
        }
        for (c, m) in out.classes.iter_mut().zip(self.class_frequency) {
            c.frequency *= m;
        }
        out
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream for `(seed, name, indices)`.
fn stream(seed: u64, name: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for b in name.bytes() {
        h = splitmix(h ^ b as u64);
    }
    for &i in indices {
        h = splitmix(h ^ i.wrapping_add(0x5151));
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Oriented footprint used for placement checks.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    center: [f64; 2],
    half: [f64; 2],
    yaw: f64,
}

impl Footprint {
    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.yaw.sin_cos();
        [[c, s], [-s, c]]
    }

    /// True when the footprints, each grown by `margin / 2`, overlap.
    fn conflicts(&self, other: &Footprint, margin: f64) -> bool {
        let d = [
            other.center[0] - self.center[0],
            other.center[1] - self.center[1],
        ];
        let (a, b) = (self.axes(), other.axes());
        let ha = [self.half[0] + margin / 2.0, self.half[1] + margin / 2.0];
        let hb = [other.half[0] + margin / 2.0, other.half[1] + margin / 2.0];
        for axis in a.iter().chain(b.iter()) {
            let dot = |v: &[f64; 2]| v[0] * axis[0] + v[1] * axis[1];
            let ra = ha[0] * dot(&a[0]).abs() + ha[1] * dot(&a[1]).abs();
            let rb = hb[0] * dot(&b[0]).abs() + hb[1] * dot(&b[1]).abs();
            if dot(&d).abs() > ra + rb {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Solid {
    center: [f64; 2],
    size: [f64; 3],
    yaw: f64,
}

impl Solid {
    fn footprint(&self) -> Footprint {
        Footprint {
            center: self.center,
            half: [self.size[0] / 2.0, self.size[1] / 2.0],
            yaw: self.yaw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Object {
    id: u32,
    class: ClassId,
    solid: Solid,
}

/// Fixed layout of one location plus the objects of each traversal, all in
/// the location frame.
#[derive(Debug, Clone)]
struct LocationLayout {
    frame: Pose6DoF,
    statics: Vec<Solid>,
    objects: Vec<Vec<Object>>,
}

fn sample_size(spec: &ClassSpec, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let mut out = [0.0; 3];
    for k in 0..3 {
        let n = Normal::new(spec.size_mean[k], spec.size_std[k].max(0.0))
            .expect("finite size distribution");
        out[k] = n.sample(rng).max(0.3 * spec.size_mean[k]);
    }
    out
}

fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

/// Point on `lane` at a uniformly drawn arc length, with its heading.
fn lane_point(lane: &LaneSpec, rng: &mut ChaCha8Rng) -> ([f64; 2], f64) {
    let seg_len: Vec<f64> = lane
        .points
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .collect();
    let total: f64 = seg_len.iter().sum();
    let mut t = rng.random_range(0.0..total.max(f64::MIN_POSITIVE));
    for (i, len) in seg_len.iter().enumerate() {
        if t <= *len || i + 1 == seg_len.len() {
            let (a, b) = (lane.points[i], lane.points[i + 1]);
            let f = if *len > 0.0 { (t / len).min(1.0) } else { 0.0 };
            let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
            let j = if lane.lateral_jitter > 0.0 {
                rng.random_range(-lane.lateral_jitter..=lane.lateral_jitter)
            } else {
                0.0
            };
            let (s, c) = heading.sin_cos();
            return (
                [
                    a[0] + f * (b[0] - a[0]) - s * j,
                    a[1] + f * (b[1] - a[1]) + c * j,
                ],
                heading,
            );
        }
        t -= len;
    }
    unreachable!("lanes have at least one segment")
}

const PLACEMENT_ATTEMPTS: usize = 200;

fn layout_location(
    world: &WorldSpec,
    shift: Option<&DomainShiftSpec>,
    loc: usize,
) -> LocationLayout {
    let mut rng = stream(world.seed, &world.name, &[loc as u64]);
    // Locations are spread far apart with their own heading.
    let heading = rng.random_range(-PI..PI);
    let frame = Pose6DoF::from_yaw(heading, [loc as f64 * 1000.0, 0.0, 0.0]);
    let [hx, hy] = world.extent;

    let mut statics: Vec<Solid> = world
        .structures
        .iter()
        .map(|s| Solid {
            center: s.center,
            size: s.size,
            yaw: s.yaw,
        })
        .collect();
    for side in [-1.0, 1.0] {
        for _ in 0..world.buildings_per_side {
            let l = rng.random_range(6.0..14.0);
            let w = rng.random_range(2.5..4.0);
            let h = rng.random_range(3.0..6.0);
            let x = rng.random_range(-hx + l / 2.0..hx - l / 2.0);
            let y = side * (world.building_setback + w / 2.0);
            let cand = Solid {
                center: [x, y.clamp(-hy, hy)],
                size: [l, w, h],
                yaw: 0.0,
            };
            if !statics
                .iter()
                .any(|s| s.footprint().conflicts(&cand.footprint(), 0.5))
            {
                statics.push(cand);
            }
        }
        for _ in 0..world.poles_per_side {
            let cand = Solid {
                center: [
                    rng.random_range(-hx + 1.0..hx - 1.0),
                    side * world.pole_offset,
                ],
                size: [0.25, 0.25, rng.random_range(4.0..6.0)],
                yaw: 0.0,
            };
            if !statics
                .iter()
                .any(|s| s.footprint().conflicts(&cand.footprint(), 0.5))
            {
                statics.push(cand);
            }
        }
    }

    let lanes_for = |class: ClassId| -> Vec<&LaneSpec> {
        world
            .lanes
            .iter()
            .filter(|l| l.classes.iter().any(|c| c == class.name()))
            .collect()
    };

    if let Some(shift) = shift {
        let parking: Vec<&LaneSpec> = lanes_for(ClassId::CAR)
            .into_iter()
            .filter(|l| l.points.iter().all(|p| p[1].abs() > 3.0))
            .collect();
        let car_lanes = if parking.is_empty() {
            lanes_for(ClassId::CAR)
        } else {
            parking
        };
        let n = poisson(shift.static_clutter, &mut rng);
        for _ in 0..n {
            if car_lanes.is_empty() {
                break;
            }
            for _ in 0..PLACEMENT_ATTEMPTS {
                let lane = car_lanes[rng.random_range(0..car_lanes.len())];
                let (c, heading) = lane_point(lane, &mut rng);
                let cand = Solid {
                    center: c,
                    size: shift.clutter_size,
                    yaw: heading,
                };
                if !statics
                    .iter()
                    .any(|s| s.footprint().conflicts(&cand.footprint(), world.clearance))
                {
                    statics.push(cand);
                    break;
                }
            }
        }
    }

    let mut objects: Vec<Vec<Object>> = Vec::with_capacity(world.traversals);
    let mut next_id = 0u32;
    for t in 0..world.traversals {
        let mut trng = stream(world.seed, &world.name, &[loc as u64, t as u64, 1]);
        let mut placed: Vec<Object> = Vec::new();
        for class in ClassId::ALL {
            let spec = &world.classes[class.index()];
            let lanes = lanes_for(class);
            if lanes.is_empty() {
                continue;
            }
            let n = poisson(spec.frequency, &mut trng);
            for _ in 0..n {
                for _ in 0..PLACEMENT_ATTEMPTS {
                    let lane = lanes[trng.random_range(0..lanes.len())];
                    let (c, heading) = lane_point(lane, &mut trng);
                    let flip = if trng.random_bool(0.5) { PI } else { 0.0 };
                    let yaw = crate::geometry::normalize_yaw(
                        heading + flip + trng.random_range(-0.08..0.08),
                    );
                    let size = sample_size(spec, &mut trng);
                    let solid = Solid {
                        center: c,
                        size,
                        yaw,
                    };
                    let fp = solid.footprint();
                    let clash = statics
                        .iter()
                        .any(|s| s.footprint().conflicts(&fp, world.clearance))
                        || placed
                            .iter()
                            .chain(objects.iter().flatten())
                            .any(|o| o.solid.footprint().conflicts(&fp, world.clearance))
                        || objects.iter().flatten().any(|o| {
                            (o.solid.center[0] - c[0]).hypot(o.solid.center[1] - c[1])
                                < world.traversal_separation
                        });
                    if clash {
                        continue;
                    }
                    placed.push(Object {
                        id: next_id,
                        class,
                        solid,
                    });
                    next_id += 1;
                    break;
                }
            }
        }
        objects.push(placed);
    }
    LocationLayout {
        frame,
        statics,
        objects,
    }
}

/// Sensor pose of scan `k` in the location frame.
fn scan_pose_local(world: &WorldSpec, k: usize) -> Pose6DoF {
    let x = (k as f64 - (world.scans_per_traversal as f64 - 1.0) / 2.0) * world.scan_spacing;
    Pose6DoF::from_yaw(0.0, [x, 0.0, world.sensor_height])
}

fn truncated_normal(sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    loop {
        let v: f64 = n.sample(rng);
        if v.abs() <= 3.0 * sigma {
            return v;
        }
    }
}

struct Sampler<'a> {
    world: &'a WorldSpec,
    /// Sensor position in the location frame.
    sensor: [f64; 2],
    rng: ChaCha8Rng,
    points: Vec<Point3>,
    mask: Vec<MaskEntry>,
}

const TILE: f64 = 1.0;

impl Sampler<'_> {
    /// Stratified jittered samples on the rectangle `o + a·u + b·v` with
    /// `a ∈ [0, la]`, `b ∈ [0, lb]`, all in the location frame.
    fn rect(
        &mut self,
        o: [f64; 3],
        u: [f64; 3],
        la: f64,
        v: [f64; 3],
        lb: f64,
        scale: f64,
        entry: MaskEntry,
    ) {
        let na = (la / TILE).ceil().max(1.0) as usize;
        let nb = (lb / TILE).ceil().max(1.0) as usize;
        let (ta, tb) = (la / na as f64, lb / nb as f64);
        let at = |a: f64, b: f64| {
            [
                o[0] + a * u[0] + b * v[0],
                o[1] + a * u[1] + b * v[1],
                o[2] + a * u[2] + b * v[2],
            ]
        };
        for i in 0..na {
            for j in 0..nb {
                let c = at((i as f64 + 0.5) * ta, (j as f64 + 0.5) * tb);
                let range = (c[0] - self.sensor[0]).hypot(c[1] - self.sensor[1]);
                if range > self.world.max_range {
                    continue;
                }
                let d = self.world.density_at(range) * scale;
                let expected = d * ta * tb;
                let spacing = 1.0 / d.sqrt();
                let ca = (ta / spacing).ceil().max(1.0) as usize;
                let cb = (tb / spacing).ceil().max(1.0) as usize;
                let p_cell = expected / (ca * cb) as f64;
                let (sa, sb) = (ta / ca as f64, tb / cb as f64);
                for ci in 0..ca {
                    for cj in 0..cb {
                        if self.rng.random::<f64>() >= p_cell {
                            continue;
                        }
                        let a = i as f64 * ta + (ci as f64 + self.rng.random::<f64>()) * sa;
                        let b = j as f64 * tb + (cj as f64 + self.rng.random::<f64>()) * sb;
                        self.push(at(a, b), entry);
                    }
                }
            }
        }
    }

    fn push(&mut self, p: [f64; 3], entry: MaskEntry) {
        let s = self.world.sensor_noise;
        let mut z = p[2] + truncated_normal(s, &mut self.rng);
        if entry.kind == PointKind::Ground {
            z += truncated_normal(self.world.ground_noise, &mut self.rng);
        }
        let x = p[0] + truncated_normal(s, &mut self.rng);
        let y = p[1] + truncated_normal(s, &mut self.rng);
        self.points.push(Point3::new(x, y, z));
        self.mask.push(entry);
    }

    /// Side faces between heights `z0` and `z1` plus the top face of a box.
    fn solid(&mut self, solid: &Solid, inset: f64, z0: f64, entry: MaskEntry) {
        let l = (solid.size[0] - 2.0 * inset).max(0.01);
        let w = (solid.size[1] - 2.0 * inset).max(0.01);
        let z1 = solid.size[2] - inset;
        if z1 <= z0 {
            return;
        }
        let (s, c) = solid.yaw.sin_cos();
        let ex = [c, s, 0.0];
        let ey = [-s, c, 0.0];
        let ez = [0.0, 0.0, 1.0];
        let corner = |a: f64, b: f64, z: f64| {
            [
                solid.center[0] + a * ex[0] + b * ey[0],
                solid.center[1] + a * ex[1] + b * ey[1],
                z,
            ]
        };
        let neg = |v: [f64; 3]| [-v[0], -v[1], -v[2]];
        let h = z1 - z0;
        self.rect(corner(-l / 2.0, -w / 2.0, z0), ex, l, ez, h, 1.0, entry);
        self.rect(corner(l / 2.0, w / 2.0, z0), neg(ex), l, ez, h, 1.0, entry);
        self.rect(corner(l / 2.0, -w / 2.0, z0), ey, w, ez, h, 1.0, entry);
        self.rect(corner(-l / 2.0, w / 2.0, z0), neg(ey), w, ez, h, 1.0, entry);
        self.rect(corner(-l / 2.0, -w / 2.0, z1), ex, l, ey, w, 1.0, entry);
    }
}

struct ScanOutput {
    /// Sensor-frame points.
    points: Vec<Point3>,
    mask: Vec<MaskEntry>,
    pose: Pose6DoF,
    boxes: Vec<LabeledBox>,
}

fn sample_scan(
    world: &WorldSpec,
    layout: &LocationLayout,
    loc: usize,
    t: usize,
    k: usize,
) -> Result<ScanOutput> {
    let local = scan_pose_local(world, k);
    let sensor = local.position();
    let mut sampler = Sampler {
        world,
        sensor: [sensor.x, sensor.y],
        rng: stream(
            world.seed,
            &world.name,
            &[loc as u64, t as u64, 2, k as u64],
        ),
        points: Vec::new(),
        mask: Vec::new(),
    };
    let [hx, hy] = world.extent;
    let ground = MaskEntry {
        kind: PointKind::Ground,
        object: None,
    };
    sampler.rect(
        [-hx, -hy, 0.0],
        [1.0, 0.0, 0.0],
        2.0 * hx,
        [0.0, 1.0, 0.0],
        2.0 * hy,
        world.ground_density_scale,
        ground,
    );
    let stat = MaskEntry {
        kind: PointKind::Static,
        object: None,
    };
    for s in &layout.statics {
        sampler.solid(s, 0.0, 0.0, stat);
    }
    let mut first_point = Vec::new();
    for o in &layout.objects[t] {
        first_point.push(sampler.points.len());
        let entry = MaskEntry {
            kind: PointKind::Dynamic,
            object: Some(o.id),
        };
        sampler.solid(&o.solid, 0.05, world.object_ground_clearance, entry);
    }
    first_point.push(sampler.points.len());

    let world_pose = layout.frame.compose(&local);
    let to_sensor = local.inverse();
    let points = sampler.points.iter().map(|p| to_sensor.apply(p)).collect();
    let mut boxes = Vec::new();
    for (i, o) in layout.objects[t].iter().enumerate() {
        let count = first_point[i + 1] - first_point[i];
        let range = (o.solid.center[0] - sensor.x).hypot(o.solid.center[1] - sensor.y);
        if count < world.min_box_points || range > world.max_range {
            continue;
        }
        let local_box = LabeledBox::ground_truth(
            Point3::new(o.solid.center[0], o.solid.center[1], o.solid.size[2] / 2.0),
            BoxSize::new(o.solid.size[0], o.solid.size[1], o.solid.size[2]),
            o.solid.yaw,
            o.class,
        )?;
        boxes.push(local_box.transformed(&layout.frame));
    }
    Ok(ScanOutput {
        points,
        mask: sampler.mask,
        pose: world_pose,
        boxes,
    })
}

/// A generated dataset held in memory.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub manifest: DatasetManifest,
    pub files: MemoryFiles,
}

impl GeneratedDataset {
    pub fn into_dataset(self) -> Result<Dataset> {
        Dataset::from_memory(self.manifest, self.files)
    }

    pub fn write_to(&self, root: &Path) -> Result<()> {
        self.files.write_to(root)?;
        write_manifest(root, &self.manifest)
    }
}

pub fn location_id(world: &WorldSpec, loc: usize) -> String {
    format!("{}-loc{:03}", world.name, loc)
}

pub fn traversal_id(t: usize) -> String {
    format!("t{t}")
}

/// Generates the dataset without touching the filesystem.
pub fn generate(world: &WorldSpec, shift: Option<&DomainShiftSpec>) -> Result<GeneratedDataset> {
    world.validate()?;
    if let Some(s) = shift {
        s.validate()?;
    }
    let shifted;
    let world = match shift {
        Some(s) => {
            shifted = s.apply(world);
            &shifted
        }
        None => world,
    };
    let layouts: Vec<LocationLayout> =
        Execution::default().map_range(world.locations, |loc| layout_location(world, shift, loc));

    let mut jobs = Vec::new();
    for loc in 0..world.locations {
        for t in 0..world.traversals {
            for k in 0..world.scans_per_traversal {
                jobs.push((loc, t, k));
            }
        }
    }
    let scans: Vec<ScanOutput> = Execution::default()
        .map(&jobs, |&(loc, t, k)| {
            sample_scan(world, &layouts[loc], loc, t, k)
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let scene_scans = world.scene_scan_indices();
    let mut files = MemoryFiles::default();
    let mut locations = Vec::new();
    let mut scenes = Vec::new();
    let mut by_job = jobs.iter().zip(scans);
    for loc in 0..world.locations {
        let lid = location_id(world, loc);
        let mut traversals = Vec::new();
        for t in 0..world.traversals {
            let tid = traversal_id(t);
            let mut records = Vec::new();
            for k in 0..world.scans_per_traversal {
                let (_, scan) = by_job.next().expect("one output per job");
                let stem = format!("{lid}/{tid}/scan{k:02}");
                let cloud = format!("{stem}.xyz");
                let pose = format!("{stem}.pose.json");
                files.masks.insert(mask_path_for(&cloud), scan.mask);
                files.clouds.insert(cloud.clone(), scan.points);
                files.poses.insert(pose.clone(), scan.pose);
                if scene_scans.contains(&k) {
                    let labels = format!("{stem}.boxes.json");
                    files.boxes.insert(labels.clone(), scan.boxes);
                    scenes.push(SceneRecord {
                        id: format!("{lid}_{tid}_s{k:02}"),
                        location: lid.clone(),
                        traversal: tid.clone(),
                        scan_index: k,
                        labels: Some(labels),
                    });
                }
                records.push(ScanRecord { cloud, pose });
            }
            traversals.push(TraversalRecord {
                id: tid,
                scans: records,
            });
        }
        locations.push(LocationRecord {
            id: lid,
            traversals,
        });
    }
    let mut manifest = DatasetManifest {
        root: Default::default(),
        locations,
        scenes,
    };
    manifest.canonicalize();
    Ok(GeneratedDataset { manifest, files })
}

/// Generates the dataset and writes it under `out_root`.
pub fn generate_dataset(
    world: &WorldSpec,
    shift: Option<&DomainShiftSpec>,
    out_root: &Path,
) -> Result<DatasetManifest> {
    let generated = generate(world, shift)?;
    generated.write_to(out_root)?;
    let mut manifest = generated.manifest;
    manifest.root = out_root.to_path_buf();
    Ok(manifest)
}

/// Per-scene point provenance, keyed by scene id.
pub fn oracle_masks(dataset: &Dataset) -> Result<BTreeMap<String, Vec<MaskEntry>>> {
    dataset
        .manifest
        .scenes
        .iter()
        .map(|s| Ok((s.id.clone(), dataset.load_mask(&s.id)?)))
        .collect()
}
