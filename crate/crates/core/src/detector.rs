//! A small two-stage detector: a linear per-point one-vs-all classifier over
//! hand-crafted neighborhood features, followed by clustering of foreground
//! points into oriented boxes.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{
    BoxSize, ClassId, ClassMask, Frame, LabeledBox, Point3, PointCloud, PointLabelSet, Pose6DoF,
    Provenance, UnlabeledScene, NUM_CLASSES,
};
use crate::ingest::{read_json, write_json};
use crate::spatial::build_index_from_points;
use crate::supervise::{focal_loss, focal_loss_grad, FocalConfig};

pub const FEATURE_DIM: usize = 5;
pub const NEIGHBORHOOD_RADIUS: f64 = 0.6;
pub const GROUND_CELL: f64 = 2.0;

/// Divisors applied to raw features before the linear score: height (m),
/// density (points), range (m), vertical extent (m), bias.
pub const FEATURE_SCALE: [f64; FEATURE_DIM] = [1.0, 20.0, 20.0, 1.0, 1.0];

pub type Feature = [f64; FEATURE_DIM];

/// Raw per-point features in the order height above ground, neighbor count,
/// horizontal range, vertical extent, bias.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointFeatures {
    pub rows: Vec<Feature>,
}

impl PointFeatures {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a PointFeatures>) -> PointFeatures {
        let mut rows = Vec::new();
        for p in parts {
            rows.extend_from_slice(&p.rows);
        }
        PointFeatures { rows }
    }
}

fn ground_key(p: &Point3) -> (i64, i64) {
    (
        (p.x / GROUND_CELL).floor() as i64,
        (p.y / GROUND_CELL).floor() as i64,
    )
}

pub fn extract_features(cloud: &PointCloud, sensor_pose: &Pose6DoF) -> Result<PointFeatures> {
    extract_features_with(cloud, sensor_pose, Execution::default())
}

pub fn extract_features_with(
    cloud: &PointCloud,
    sensor_pose: &Pose6DoF,
    exec: Execution,
) -> Result<PointFeatures> {
    if cloud.frame != Frame::World {
        return Err(Error::Invalid(
            "extract_features expects a world-frame cloud".into(),
        ));
    }
    let mut ground: HashMap<(i64, i64), f64> = HashMap::new();
    for p in &cloud.points {
        let g = ground.entry(ground_key(p)).or_insert(f64::INFINITY);
        *g = g.min(p.z);
    }
    let index = build_index_from_points(&cloud.points, NEIGHBORHOOD_RADIUS);
    let sensor = sensor_pose.position();
    let rows = exec.map(&cloud.points, |p| {
        let mut count = 0usize;
        let (mut lo, mut hi) = (p.z, p.z);
        index.for_each_within(p, |_, n| {
            count += 1;
            lo = lo.min(n.z);
            hi = hi.max(n.z);
        });
        [
            p.z - ground[&ground_key(p)],
            count as f64,
            p.horizontal_distance(&sensor),
            hi - lo,
            1.0,
        ]
    });
    Ok(PointFeatures { rows })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn scaled(f: &Feature) -> Feature {
    let mut out = [0.0; FEATURE_DIM];
    for k in 0..FEATURE_DIM {
        out[k] = f[k] / FEATURE_SCALE[k];
    }
    out
}

/// Per-class linear scores over scaled features.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stage1Model {
    pub weights: [[f64; FEATURE_DIM]; NUM_CLASSES],
}

impl Stage1Model {
    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().flatten().all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Invalid("model weights must be finite".into()))
        }
    }

    fn logits(&self, f: &Feature) -> [f64; NUM_CLASSES] {
        let x = scaled(f);
        let mut z = [0.0; NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            z[c] = self.weights[c].iter().zip(&x).map(|(w, v)| w * v).sum();
        }
        z
    }

    pub fn predict_one(&self, f: &Feature) -> [f64; NUM_CLASSES] {
        self.logits(f).map(sigmoid)
    }
}

pub fn stage1_predict(model: &Stage1Model, features: &PointFeatures) -> Vec<[f64; NUM_CLASSES]> {
    Execution::default().map(&features.rows, |f| model.predict_one(f))
}

/// Mean focal loss of `model` over a labeled point set.
pub fn mean_focal_loss(
    model: &Stage1Model,
    features: &PointFeatures,
    labels: &[ClassMask],
    focal: &FocalConfig,
    exec: Execution,
) -> f64 {
    if features.is_empty() {
        return 0.0;
    }
    let total = exec.chunked_sum(features.len(), 1, |i, acc| {
        acc[0] += focal_loss(&model.predict_one(&features.rows[i]), &labels[i], focal);
    });
    total[0] / features.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizePrior {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl From<SizePrior> for BoxSize {
    fn from(s: SizePrior) -> Self {
        BoxSize::new(s.length, s.width, s.height)
    }
}

impl From<BoxSize> for SizePrior {
    fn from(s: BoxSize) -> Self {
        SizePrior {
            length: s.length,
            width: s.width,
            height: s.height,
        }
    }
}

/// Mean box dimensions per class, keyed by class name in files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizePriors(pub [SizePrior; NUM_CLASSES]);

impl Default for SizePriors {
    fn default() -> Self {
        SizePriors([
            SizePrior {
                length: 3.9,
                width: 1.6,
                height: 1.56,
            },
            SizePrior {
                length: 0.8,
                width: 0.6,
                height: 1.73,
            },
            SizePrior {
                length: 1.76,
                width: 0.6,
                height: 1.73,
            },
        ])
    }
}

impl SizePriors {
    pub fn get(&self, class: ClassId) -> SizePrior {
        self.0[class.index()]
    }

    fn max_dims(&self) -> (f64, f64, f64) {
        self.0.iter().fold((0.0f64, 0.0f64, 0.0f64), |m, s| {
            (m.0.max(s.length), m.1.max(s.width), m.2.max(s.height))
        })
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.0 {
            if !(s.length > 0.0 && s.width > 0.0 && s.height > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "size priors must be positive, got {s:?}"
                )));
            }
        }
        Ok(())
    }
}

impl Serialize for SizePriors {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let map: BTreeMap<&str, SizePrior> = ClassId::ALL
            .iter()
            .map(|c| (c.name(), self.get(*c)))
            .collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SizePriors {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, SizePrior>::deserialize(d)?;
        let mut out = SizePriors::default();
        for (name, prior) in map {
            let class = ClassId::from_name(&name).map_err(serde::de::Error::custom)?;
            out.0[class.index()] = prior;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub fg_threshold: f64,
    pub cluster_radius: f64,
    pub min_cluster_points: usize,
    pub size_priors: SizePriors,
    pub learning_rate: f64,
    pub epochs_per_round: usize,
    /// Relative spread of the size likelihood used to pick a cluster's class.
    pub size_sigma: f64,
    /// Clusters larger than this multiple of the largest prior in any
    /// dimension are rejected.
    pub max_size_ratio: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            fg_threshold: 0.5,
            cluster_radius: 0.7,
            min_cluster_points: 5,
            size_priors: SizePriors::default(),
            learning_rate: 1.5e-3,
            epochs_per_round: 10,
            size_sigma: 0.3,
            max_size_ratio: 2.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fg_threshold > 0.0 && self.fg_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "fg_threshold must lie in (0, 1), got {}",
                self.fg_threshold
            )));
        }
        if !(self.cluster_radius > 0.0) || !self.cluster_radius.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "cluster_radius must be positive, got {}",
                self.cluster_radius
            )));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.size_sigma > 0.0 && self.max_size_ratio > 0.0) {
            return Err(Error::InvalidConfig(
                "size_sigma and max_size_ratio must be positive".into(),
            ));
        }
        self.size_priors.validate()
    }
}

/// Full-batch gradient descent on mean focal loss. Returns the trained model
/// and the loss before each epoch's update.
pub fn stage1_train_logged(
    model: &Stage1Model,
    features: &PointFeatures,
    labels: &PointLabelSet,
    focal: &FocalConfig,
    config: &DetectorConfig,
    exec: Execution,
) -> Result<(Stage1Model, Vec<f64>)> {
    if features.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let mut m = *model;
    let mut losses = Vec::with_capacity(config.epochs_per_round);
    if features.is_empty() {
        return Ok((m, losses));
    }
    let n = features.len() as f64;
    const WIDTH: usize = NUM_CLASSES * FEATURE_DIM + 1;
    for _ in 0..config.epochs_per_round {
        let cur = m;
        let sums = exec.chunked_sum(features.len(), WIDTH, |i, acc| {
            let x = scaled(&features.rows[i]);
            let p = cur.logits(&features.rows[i]).map(sigmoid);
            let y = &labels.labels[i];
            let g = focal_loss_grad(&p, y, focal);
            for c in 0..NUM_CLASSES {
                for k in 0..FEATURE_DIM {
                    acc[c * FEATURE_DIM + k] += g[c] * x[k];
                }
            }
            acc[WIDTH - 1] += focal_loss(&p, y, focal);
        });
        losses.push(sums[WIDTH - 1] / n);
        for c in 0..NUM_CLASSES {
            for k in 0..FEATURE_DIM {
                m.weights[c][k] -= config.learning_rate * sums[c * FEATURE_DIM + k] / n;
            }
        }
    }
    m.validate()?;
    Ok((m, losses))
}

pub fn stage1_train(
    model: &Stage1Model,
    features: &PointFeatures,
    labels: &PointLabelSet,
    focal: &FocalConfig,
    config: &DetectorConfig,
) -> Result<Stage1Model> {
    stage1_train_logged(model, features, labels, focal, config, Execution::default()).map(|r| r.0)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        // Smaller root wins so labels do not depend on visiting order.
        if ra < rb {
            self.parent[rb] = ra;
        } else if rb < ra {
            self.parent[ra] = rb;
        }
    }
}

/// Single-linkage clusters of `points` at `radius` (strict). Clusters are
/// lists of indices into `points`, ordered by their smallest member.
pub fn single_linkage(points: &[Point3], radius: f64) -> Vec<Vec<usize>> {
    if points.is_empty() {
        return Vec::new();
    }
    let index = build_index_from_points(points, radius);
    let mut uf = UnionFind::new(points.len());
    for (i, p) in points.iter().enumerate() {
        index.for_each_within(p, |j, _| {
            if j > i {
                uf.union(i, j);
            }
        });
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..points.len() {
        let r = uf.find(i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Tight oriented rectangle around the xy coordinates along their principal
/// axis: (center x, center y, yaw, length, width) with length ≥ width.
fn principal_rectangle(points: &[Point3]) -> (f64, f64, f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let my = points.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let mut yaw = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let extents = |yaw: f64| {
        let (s, c) = yaw.sin_cos();
        let (mut u0, mut u1, mut v0, mut v1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in points {
            let (dx, dy) = (p.x - mx, p.y - my);
            let u = c * dx + s * dy;
            let v = -s * dx + c * dy;
            u0 = u0.min(u);
            u1 = u1.max(u);
            v0 = v0.min(v);
            v1 = v1.max(v);
        }
        (u0, u1, v0, v1)
    };
    let (mut u0, mut u1, mut v0, mut v1) = extents(yaw);
    if v1 - v0 > u1 - u0 {
        yaw += std::f64::consts::FRAC_PI_2;
        (u0, u1, v0, v1) = extents(yaw);
    }
    let (s, c) = yaw.sin_cos();
    let (uc, vc) = ((u0 + u1) / 2.0, (v0 + v1) / 2.0);
    (
        mx + c * uc - s * vc,
        my + s * uc + c * vc,
        yaw,
        u1 - u0,
        v1 - v0,
    )
}

const MIN_DIM: f64 = 0.05;

fn size_likelihood(l: f64, w: f64, prior: &SizePrior, sigma: f64) -> f64 {
    let zl = (l - prior.length) / (sigma * prior.length);
    let zw = (w - prior.width) / (sigma * prior.width);
    (-0.5 * (zl * zl + zw * zw)).exp()
}

/// Boxes from clusters of foreground points. Each cluster's class maximizes
/// mean class probability times a footprint likelihood under the size
/// priors; its confidence is the mean probability of that class.
pub fn stage2_propose(
    cloud: &PointCloud,
    probs: &[[f64; NUM_CLASSES]],
    config: &DetectorConfig,
) -> Result<Vec<LabeledBox>> {
    if probs.len() != cloud.len() {
        return Err(Error::Invalid(format!(
            "{} probabilities for {} points",
            probs.len(),
            cloud.len()
        )));
    }
    let fg: Vec<usize> = (0..cloud.len())
        .filter(|&i| probs[i].iter().any(|&p| p > config.fg_threshold))
        .collect();
    let fg_points: Vec<Point3> = fg.iter().map(|&i| cloud.points[i]).collect();
    let clusters = single_linkage(&fg_points, config.cluster_radius);
    let (max_l, max_w, max_h) = config.size_priors.max_dims();
    let r = config.max_size_ratio;
    let mut boxes = Vec::new();
    for cluster in clusters {
        if cluster.len() < config.min_cluster_points {
            continue;
        }
        let pts: Vec<Point3> = cluster.iter().map(|&k| fg_points[k]).collect();
        let (cx, cy, yaw, l, w) = principal_rectangle(&pts);
        let z0 = pts.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        let z1 = pts.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
        if l > r * max_l || w > r * max_w || z1 - z0 > r * max_h {
            continue;
        }
        let mut mean = [0.0; NUM_CLASSES];
        for &k in &cluster {
            for (m, p) in mean.iter_mut().zip(&probs[fg[k]]) {
                *m += p;
            }
        }
        mean.iter_mut().for_each(|m| *m /= cluster.len() as f64);
        let mut best = (ClassId::CAR, f64::NEG_INFINITY);
        for class in ClassId::ALL {
            let prior = config.size_priors.get(class);
            let score = mean[class.index()] * size_likelihood(l, w, &prior, config.size_sigma);
            if score > best.1 {
                best = (class, score);
            }
        }
        let class = best.0;
        let prior = config.size_priors.get(class);
        let size = BoxSize::new(
            (0.5 * l + 0.5 * prior.length).max(MIN_DIM),
            (0.5 * w + 0.5 * prior.width).max(MIN_DIM),
            (z1 - z0).max(MIN_DIM),
        );
        boxes.push(LabeledBox::new(
            Point3::new(cx, cy, (z0 + z1) / 2.0),
            size,
            yaw,
            class,
            mean[class.index()].clamp(0.0, 1.0),
            Provenance::Detection,
        )?);
    }
    Ok(boxes)
}

/// Detections from precomputed world-frame points and features.
pub fn detect_points(
    model: &Stage1Model,
    world: &PointCloud,
    features: &PointFeatures,
    config: &DetectorConfig,
) -> Result<Vec<LabeledBox>> {
    let probs = stage1_predict(model, features);
    stage2_propose(world, &probs, config)
}

/// Runs both stages on one scene. Only the scan and its pose are used.
pub fn detect(
    model: &Stage1Model,
    scene: &UnlabeledScene,
    config: &DetectorConfig,
) -> Result<Vec<LabeledBox>> {
    let world = scene.world_cloud()?;
    let features = extract_features(&world, &scene.sensor_pose)?;
    detect_points(model, &world, &features, config)
}

/// On-disk model: stage-1 weights plus the size priors used by stage 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub weights: Vec<Vec<f64>>,
    pub class_names: Vec<String>,
    pub size_priors: SizePriors,
}

impl ModelFile {
    pub fn new(model: &Stage1Model, size_priors: SizePriors) -> Self {
        ModelFile {
            weights: model.weights.iter().map(|r| r.to_vec()).collect(),
            class_names: ClassId::ALL.iter().map(|c| c.name().to_string()).collect(),
            size_priors,
        }
    }

    pub fn to_model(&self) -> Result<Stage1Model> {
        if self.weights.len() != NUM_CLASSES || self.weights.iter().any(|r| r.len() != FEATURE_DIM)
        {
            return Err(Error::Invalid(format!(
                "model weights must be {NUM_CLASSES}x{FEATURE_DIM}"
            )));
        }
        for (i, name) in self.class_names.iter().enumerate() {
            if ClassId::from_name(name)?.index() != i {
                return Err(Error::Invalid(format!("unexpected class order at {name}")));
            }
        }
        let mut m = Stage1Model::zeros();
        for (c, row) in self.weights.iter().enumerate() {
            m.weights[c].copy_from_slice(row);
        }
        m.validate()?;
        Ok(m)
    }
}

pub fn save_model(path: &Path, model: &Stage1Model, size_priors: SizePriors) -> Result<()> {
    write_json(path, &ModelFile::new(model, size_priors))
}

pub fn load_model(path: &Path) -> Result<(Stage1Model, SizePriors)> {
    let file: ModelFile = read_json(path)?;
    file.size_priors.validate()?;
    Ok((file.to_model()?, file.size_priors))
}
