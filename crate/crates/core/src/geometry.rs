//! Geometric and label types shared by every stage of the pipeline.
//!
//! All types are plain immutable data after construction and are `Send + Sync`.
//! Rotations are stored as full 3x3 matrices and validated on construction.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `det(R) - 1` and on `R^T R - I`.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance_squared(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        self.distance_squared(other).sqrt()
    }

    /// Distance in the ground plane, ignoring z.
    pub fn horizontal_distance(&self, other: &Point3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(v: [f64; 3]) -> Self {
        Point3::new(v[0], v[1], v[2])
    }
}

impl Add for Point3 {
    type Output = Point3;

    fn add(self, rhs: Point3) -> Point3 {
        Point3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;

    fn sub(self, rhs: Point3) -> Point3 {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

/// Rigid sensor-to-world transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6DoF {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl Pose6DoF {
    /// Validates that `rotation` is a proper rotation matrix (row-major).
    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let pose = Pose6DoF {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Pose6DoF {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Rotation about +z by `yaw` followed by translation.
    pub fn from_yaw(yaw: f64, translation: [f64; 3]) -> Self {
        let (s, c) = yaw.sin_cos();
        Pose6DoF {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation,
        }
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation(&self) -> &[f64; 3] {
        &self.translation
    }

    pub fn position(&self) -> Point3 {
        Point3::from(self.translation)
    }

    /// Heading of the sensor x-axis in the world ground plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[1][0].atan2(self.rotation[0][0])
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if r.iter()
            .flatten()
            .chain(&self.translation)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > ROTATION_TOLERANCE {
                    return Err(Error::InvalidPose(format!(
                        "rotation is not orthonormal: (R^T R)[{i}][{j}] = {dot}"
                    )));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidPose(format!("det(R) = {det}, expected 1")));
        }
        Ok(())
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        let r = &self.rotation;
        let t = &self.translation;
        Point3::new(
            r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z + t[0],
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z + t[1],
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z + t[2],
        )
    }

    pub fn inverse(&self) -> Pose6DoF {
        let r = &self.rotation;
        let t = &self.translation;
        let mut rt = [[0.0; 3]; 3];
        for (i, row) in rt.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = r[j][i];
            }
        }
        let mut ti = [0.0; 3];
        for (i, v) in ti.iter_mut().enumerate() {
            *v = -(rt[i][0] * t[0] + rt[i][1] * t[1] + rt[i][2] * t[2]);
        }
        Pose6DoF {
            rotation: rt,
            translation: ti,
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose6DoF) -> Pose6DoF {
        let a = &self.rotation;
        let b = &other.rotation;
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        let t = self.apply(&Point3::from(other.translation)).to_array();
        Pose6DoF {
            rotation: r,
            translation: t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Sensor,
    World,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame: Frame) -> Self {
        PointCloud { points, frame }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Maps a sensor-frame cloud to the world frame with `pose`.
pub fn transform_cloud(cloud: &PointCloud, pose: &Pose6DoF) -> Result<PointCloud> {
    if cloud.frame != Frame::Sensor {
        return Err(Error::Invalid(
            "transform_cloud expects a sensor-frame cloud".into(),
        ));
    }
    pose.validate()?;
    let points = cloud.points.iter().map(|p| pose.apply(p)).collect();
    Ok(PointCloud::new(points, Frame::World))
}

/// Maps a world-frame cloud back into the sensor frame of `pose`.
pub fn to_sensor_frame(cloud: &PointCloud, pose: &Pose6DoF) -> Result<PointCloud> {
    if cloud.frame != Frame::World {
        return Err(Error::Invalid(
            "to_sensor_frame expects a world-frame cloud".into(),
        ));
    }
    pose.validate()?;
    let inv = pose.inverse();
    let points = cloud.points.iter().map(|p| inv.apply(p)).collect();
    Ok(PointCloud::new(points, Frame::Sensor))
}

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(u8);

impl ClassId {
    pub const CAR: ClassId = ClassId(0);
    pub const PEDESTRIAN: ClassId = ClassId(1);
    pub const CYCLIST: ClassId = ClassId(2);

    pub const ALL: [ClassId; NUM_CLASSES] = [ClassId::CAR, ClassId::PEDESTRIAN, ClassId::CYCLIST];
    pub const NAMES: [&'static str; NUM_CLASSES] = ["Car", "Pedestrian", "Cyclist"];

    pub fn new(id: usize) -> Result<Self> {
        if id < NUM_CLASSES {
            Ok(ClassId(id as u8))
        } else {
            Err(Error::Invalid(format!("class id {id} out of range")))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self.index()]
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| ClassId(i as u8))
            .ok_or_else(|| Error::Invalid(format!("unknown class {name:?}")))
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    PseudoLabel,
    Detection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSize {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl BoxSize {
    pub const fn new(length: f64, width: f64, height: f64) -> Self {
        BoxSize {
            length,
            width,
            height,
        }
    }
}

/// Wraps an angle into (−π, π].
pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut a = yaw.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// An oriented 3D box. `center` is the volumetric center; `yaw` rotates the
/// length axis about +z. Yaw is kept in (−π, π]; the IoU metrics are
/// invariant to a half-turn, so `yaw` and `yaw + π` describe the same
/// footprint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBox {
    pub center: Point3,
    pub size: BoxSize,
    pub yaw: f64,
    pub class: ClassId,
    pub confidence: f64,
    pub provenance: Provenance,
}

impl LabeledBox {
    pub fn new(
        center: Point3,
        size: BoxSize,
        yaw: f64,
        class: ClassId,
        confidence: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        if !center.is_finite() || !yaw.is_finite() {
            return Err(Error::InvalidBox("non-finite center or yaw".into()));
        }
        if !(size.length > 0.0 && size.width > 0.0 && size.height > 0.0)
            || !(size.length.is_finite() && size.width.is_finite() && size.height.is_finite())
        {
            return Err(Error::InvalidBox(format!(
                "size must be positive, got {:?}",
                size
            )));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidBox(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        if provenance == Provenance::GroundTruth && confidence != 1.0 {
            return Err(Error::InvalidBox(
                "ground-truth boxes must have confidence 1".into(),
            ));
        }
        Ok(LabeledBox {
            center,
            size,
            yaw: normalize_yaw(yaw),
            class,
            confidence,
            provenance,
        })
    }

    pub fn ground_truth(center: Point3, size: BoxSize, yaw: f64, class: ClassId) -> Result<Self> {
        Self::new(center, size, yaw, class, 1.0, Provenance::GroundTruth)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// `p` in the box's yaw-aligned local frame, relative to the center.
    pub fn to_local(&self, p: &Point3) -> Point3 {
        let (s, c) = self.yaw.sin_cos();
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        Point3::new(c * dx + s * dy, -s * dx + c * dy, p.z - self.center.z)
    }

    pub fn contains(&self, p: &Point3) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.size.length / 2.0
            && l.y.abs() <= self.size.width / 2.0
            && l.z.abs() <= self.size.height / 2.0
    }

    /// Footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.size.length / 2.0;
        let hw = self.size.width / 2.0;
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(lx, ly)| {
            [
                self.center.x + c * lx - s * ly,
                self.center.y + s * lx + c * ly,
            ]
        })
    }

    pub fn corners(&self) -> [Point3; 8] {
        let bev = self.bev_corners();
        let zl = self.center.z - self.size.height / 2.0;
        let zh = self.center.z + self.size.height / 2.0;
        let mut out = [Point3::ORIGIN; 8];
        for (i, c) in bev.iter().enumerate() {
            out[i] = Point3::new(c[0], c[1], zl);
            out[i + 4] = Point3::new(c[0], c[1], zh);
        }
        out
    }

    pub fn bev_area(&self) -> f64 {
        self.size.length * self.size.width
    }

    pub fn volume(&self) -> f64 {
        self.size.length * self.size.width * self.size.height
    }

    pub fn z_range(&self) -> (f64, f64) {
        let h = self.size.height / 2.0;
        (self.center.z - h, self.center.z + h)
    }

    /// Applies a rigid transform to the box. Only rotations about z keep a
    /// box axis-aligned with gravity; the yaw is read from the pose.
    pub fn transformed(&self, pose: &Pose6DoF) -> LabeledBox {
        LabeledBox {
            center: pose.apply(&self.center),
            yaw: normalize_yaw(self.yaw + pose.yaw()),
            ..*self
        }
    }
}

/// True iff `p` lies inside `bx` (boundary inclusive).
pub fn box_contains(bx: &LabeledBox, p: &Point3) -> bool {
    bx.contains(p)
}

/// One-vs-all class targets for a single point.
pub type ClassMask = [bool; NUM_CLASSES];

pub const BACKGROUND: ClassMask = [false; NUM_CLASSES];
pub const ALL_FOREGROUND: ClassMask = [true; NUM_CLASSES];

pub fn one_hot(class: ClassId) -> ClassMask {
    let mut m = BACKGROUND;
    m[class.index()] = true;
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    FromBoxes,
    RewrittenFbs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointLabelSet {
    pub labels: Vec<ClassMask>,
    pub source: LabelSource,
}

impl PointLabelSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|m| m.iter().any(|&b| b)).count()
    }
}

/// One posed scan together with its optional annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub location_id: String,
    pub traversal_id: String,
    pub cloud: PointCloud,
    pub sensor_pose: Pose6DoF,
    /// World-frame annotations; evaluation only.
    pub gt_boxes: Option<Vec<LabeledBox>>,
}

impl Scene {
    pub fn world_cloud(&self) -> Result<PointCloud> {
        transform_cloud(&self.cloud, &self.sensor_pose)
    }

    /// Drops the annotations. Adaptation code only accepts the result.
    pub fn unlabeled(&self) -> UnlabeledScene {
        UnlabeledScene {
            scene_id: self.scene_id.clone(),
            location_id: self.location_id.clone(),
            traversal_id: self.traversal_id.clone(),
            cloud: self.cloud.clone(),
            sensor_pose: self.sensor_pose,
        }
    }
}

/// A scene with no access to annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledScene {
    pub scene_id: String,
    pub location_id: String,
    pub traversal_id: String,
    pub cloud: PointCloud,
    pub sensor_pose: Pose6DoF,
}

impl UnlabeledScene {
    pub fn world_cloud(&self) -> Result<PointCloud> {
        transform_cloud(&self.cloud, &self.sensor_pose)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn unit_cube() -> LabeledBox {
        LabeledBox::ground_truth(
            Point3::ORIGIN,
            BoxSize::new(1.0, 1.0, 1.0),
            0.0,
            ClassId::CAR,
        )
        .unwrap()
    }

    fn pose_from(yaw: f64, pitch: f64, roll: f64, t: [f64; 3]) -> Pose6DoF {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sr, cr) = roll.sin_cos();
        let r = [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ];
        Pose6DoF::new(r, t).unwrap()
    }

    #[test]
    fn identity_transform_is_identity() {
        let cloud = PointCloud::new(
            vec![Point3::new(1.0, -2.0, 3.5), Point3::new(0.25, 0.0, -7.0)],
            Frame::Sensor,
        );
        let out = transform_cloud(&cloud, &Pose6DoF::identity()).unwrap();
        assert_eq!(out.points, cloud.points);
        assert_eq!(out.frame, Frame::World);
    }

    #[test]
    fn quarter_turn() {
        let pose = Pose6DoF::from_yaw(std::f64::consts::FRAC_PI_2, [0.0; 3]);
        let cloud = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0)], Frame::Sensor);
        let p = transform_cloud(&cloud, &pose).unwrap().points[0];
        assert!(p.x.abs() < 1e-15 && (p.y - 1.0).abs() < 1e-15 && p.z == 0.0);
    }

    #[test]
    fn random_pose_matches_matrix_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let pose = pose_from(0.7, -0.2, 0.4, [3.0, -1.5, 0.25]);
        let pts: Vec<Point3> = (0..100)
            .map(|_| {
                Point3::new(
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-5.0..5.0),
                )
            })
            .collect();
        let out = transform_cloud(&PointCloud::new(pts.clone(), Frame::Sensor), &pose).unwrap();
        let r = pose.rotation();
        let t = pose.translation();
        for (p, q) in pts.iter().zip(&out.points) {
            let v = [p.x, p.y, p.z];
            for row in 0..3 {
                let mut acc = t[row];
                for col in 0..3 {
                    acc += r[row][col] * v[col];
                }
                assert!((acc - q.to_array()[row]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_rotation() {
        let scaled = [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Pose6DoF::new(scaled, [0.0; 3]).is_err());
        let reflection = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Pose6DoF::new(reflection, [0.0; 3]).is_err());
    }

    #[test]
    fn world_cloud_cannot_be_transformed_again() {
        let cloud = PointCloud::new(vec![Point3::ORIGIN], Frame::World);
        assert!(transform_cloud(&cloud, &Pose6DoF::identity()).is_err());
    }

    #[test]
    fn box_contains_basic_cases() {
        let b = unit_cube();
        assert!(box_contains(&b, &Point3::ORIGIN));
        assert!(!box_contains(&b, &Point3::new(0.51, 0.0, 0.0)));

        let rotated = LabeledBox::ground_truth(
            Point3::ORIGIN,
            BoxSize::new(2.0, 1.0, 1.0),
            FRAC_PI_4,
            ClassId::CAR,
        )
        .unwrap();
        let p = Point3::new(0.9 * FRAC_PI_4.cos(), 0.9 * FRAC_PI_4.sin(), 0.0);
        assert!(box_contains(&rotated, &p));
        // Same offset along the short axis falls outside.
        let q = Point3::new(-0.9 * FRAC_PI_4.sin(), 0.9 * FRAC_PI_4.cos(), 0.0);
        assert!(!box_contains(&rotated, &q));
    }

    #[test]
    fn box_validation() {
        let c = Point3::ORIGIN;
        assert!(
            LabeledBox::ground_truth(c, BoxSize::new(0.0, 1.0, 1.0), 0.0, ClassId::CAR).is_err()
        );
        assert!(LabeledBox::new(
            c,
            BoxSize::new(1.0, 1.0, 1.0),
            0.0,
            ClassId::CAR,
            1.5,
            Provenance::Detection
        )
        .is_err());
        assert!(LabeledBox::new(
            c,
            BoxSize::new(1.0, 1.0, 1.0),
            0.0,
            ClassId::CAR,
            0.5,
            Provenance::GroundTruth
        )
        .is_err());
    }

    #[test]
    fn yaw_normalization() {
        assert_eq!(normalize_yaw(PI), PI);
        assert!((normalize_yaw(-PI) - PI).abs() < 1e-15);
        assert!((normalize_yaw(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((normalize_yaw(0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn class_names_round_trip() {
        for c in ClassId::ALL {
            assert_eq!(ClassId::from_name(c.name()).unwrap(), c);
        }
        assert!(ClassId::from_name("Truck").is_err());
        assert!(ClassId::new(3).is_err());
    }

    proptest! {
        #[test]
        fn transform_round_trip(
            yaw in -3.1f64..3.1, pitch in -1.5f64..1.5, roll in -3.1f64..3.1,
            tx in -100.0f64..100.0, ty in -100.0f64..100.0, tz in -10.0f64..10.0,
            pts in prop::collection::vec((-80.0f64..80.0, -80.0f64..80.0, -5.0f64..5.0), 1..50),
        ) {
            let pose = pose_from(yaw, pitch, roll, [tx, ty, tz]);
            let cloud = PointCloud::new(
                pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect(),
                Frame::Sensor,
            );
            let back = to_sensor_frame(&transform_cloud(&cloud, &pose).unwrap(), &pose).unwrap();
            for (a, b) in cloud.points.iter().zip(&back.points) {
                prop_assert!((a.x - b.x).abs() <= 1e-9);
                prop_assert!((a.y - b.y).abs() <= 1e-9);
                prop_assert!((a.z - b.z).abs() <= 1e-9);
            }
        }

        #[test]
        fn containment_is_rigid_invariant(
            cx in -20.0f64..20.0, cy in -20.0f64..20.0, cz in -2.0f64..2.0,
            l in 0.2f64..6.0, w in 0.2f64..3.0, h in 0.2f64..3.0, byaw in -3.1f64..3.1,
            px in -25.0f64..25.0, py in -25.0f64..25.0, pz in -3.0f64..3.0,
            yaw in -3.1f64..3.1, tx in -50.0f64..50.0, ty in -50.0f64..50.0, tz in -5.0f64..5.0,
        ) {
            let b = LabeledBox::ground_truth(Point3::new(cx, cy, cz), BoxSize::new(l, w, h), byaw, ClassId::CAR).unwrap();
            let p = Point3::new(px, py, pz);
            let pose = Pose6DoF::from_yaw(yaw, [tx, ty, tz]);
            let local = b.to_local(&p);
            // Skip points within rounding distance of a face.
            let margin = [local.x.abs() - l / 2.0, local.y.abs() - w / 2.0, local.z.abs() - h / 2.0];
            prop_assume!(margin.iter().all(|m| m.abs() > 1e-9));
            prop_assert_eq!(b.contains(&p), b.transformed(&pose).contains(&pose.apply(&p)));
        }

        #[test]
        fn corners_shrunk_inside_expanded_outside(
            cx in -20.0f64..20.0, cy in -20.0f64..20.0, cz in -2.0f64..2.0,
            l in 0.2f64..6.0, w in 0.2f64..3.0, h in 0.2f64..3.0, yaw in -3.1f64..3.1,
        ) {
            let b = LabeledBox::ground_truth(Point3::new(cx, cy, cz), BoxSize::new(l, w, h), yaw, ClassId::CAR).unwrap();
            // Nudge each corner along the local axes so the 1e-9 offset is
            // measured in the frame where the faces are defined.
            let (s, c) = b.yaw.sin_cos();
            for sx in [-1.0, 1.0] {
                for sy in [-1.0, 1.0] {
                    for sz in [-1.0, 1.0] {
                        let corner = |d: f64| {
                            let lx = sx * (l / 2.0 + d);
                            let ly = sy * (w / 2.0 + d);
                            let lz = sz * (h / 2.0 + d);
                            Point3::new(cx + c * lx - s * ly, cy + s * lx + c * ly, cz + lz)
                        };
                        prop_assert!(b.contains(&corner(-1e-9)));
                        prop_assert!(!b.contains(&corner(1e-9)));
                    }
                }
            }
        }
    }
}
