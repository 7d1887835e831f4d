//! Repeated-traversal datasets: manifest, file formats, and the aggregated
//! per-traversal clouds used for persistence scoring.
//!
//! On disk a dataset is a directory holding `manifest.json` plus the files it
//! references (paths relative to the root):
//!
//! * `*.xyz` clouds: one `x y z` triple per line, single spaces, LF endings.
//! * `*.pose.json`: `{"rotation": [[..],[..],[..]], "translation": [..]}`.
//! * `*.boxes.json`: `[{"center", "size", "yaw", "class", "score"}]`.
//! * `*.mask.json`: per-point provenance written by the synthetic generator.
//!
//! The same structures can be held in memory ([`MemoryFiles`]) so generated
//! worlds can be consumed without touching the filesystem.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{
    transform_cloud, BoxSize, ClassId, Frame, LabeledBox, Point3, PointCloud, Pose6DoF, Provenance,
    Scene,
};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub cloud: String,
    pub pose: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraversalRecord {
    pub id: String,
    pub scans: Vec<ScanRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationRecord {
    pub id: String,
    pub traversals: Vec<TraversalRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    pub location: String,
    pub traversal: String,
    pub scan_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub locations: Vec<LocationRecord>,
    pub scenes: Vec<SceneRecord>,
}

impl DatasetManifest {
    /// Sorts locations, traversals, and scenes by id. Scan order is kept.
    pub fn canonicalize(&mut self) {
        self.locations.sort_by(|a, b| a.id.cmp(&b.id));
        for loc in &mut self.locations {
            loc.traversals.sort_by(|a, b| a.id.cmp(&b.id));
        }
        self.scenes.sort_by(|a, b| a.id.cmp(&b.id));
    }

    pub fn location(&self, id: &str) -> Option<&LocationRecord> {
        self.locations.iter().find(|l| l.id == id)
    }

    pub fn scene(&self, id: &str) -> Option<&SceneRecord> {
        self.scenes.iter().find(|s| s.id == id)
    }

    pub fn scene_ids(&self) -> Vec<String> {
        self.scenes.iter().map(|s| s.id.clone()).collect()
    }

    pub fn scan(&self, scene: &SceneRecord) -> Result<&ScanRecord> {
        let loc = self
            .location(&scene.location)
            .ok_or_else(|| Error::NotFound(format!("location {}", scene.location)))?;
        let trav = loc
            .traversals
            .iter()
            .find(|t| t.id == scene.traversal)
            .ok_or_else(|| {
                Error::NotFound(format!(
                    "traversal {} of location {}",
                    scene.traversal, scene.location
                ))
            })?;
        trav.scans.get(scene.scan_index).ok_or_else(|| {
            Error::Invalid(format!(
                "scene {}: scan index {} out of range ({} scans)",
                scene.id,
                scene.scan_index,
                trav.scans.len()
            ))
        })
    }

    /// Every location referenced by a scene must have at least two
    /// traversals, or the persistence score is undefined there.
    pub fn require_multi_traversal(&self) -> Result<()> {
        let used: BTreeSet<&str> = self.scenes.iter().map(|s| s.location.as_str()).collect();
        for loc in &self.locations {
            if used.contains(loc.id.as_str()) && loc.traversals.len() < 2 {
                return Err(Error::Location {
                    location: loc.id.clone(),
                    message: format!(
                        "has {} traversal(s); at least 2 are needed for persistence scoring",
                        loc.traversals.len()
                    ),
                });
            }
        }
        Ok(())
    }

    fn validate_structure(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for loc in &self.locations {
            if !seen.insert(loc.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate location id {}", loc.id)));
            }
            let mut trav_ids = BTreeSet::new();
            for t in &loc.traversals {
                if !trav_ids.insert(t.id.as_str()) {
                    return Err(Error::Invalid(format!(
                        "duplicate traversal id {} in location {}",
                        t.id, loc.id
                    )));
                }
            }
        }
        let mut scene_ids = BTreeSet::new();
        for s in &self.scenes {
            if !scene_ids.insert(s.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate scene id {}", s.id)));
            }
            self.scan(s)?;
        }
        Ok(())
    }

    fn referenced_files(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for loc in &self.locations {
            for t in &loc.traversals {
                for s in &t.scans {
                    out.push(s.cloud.as_str());
                    out.push(s.pose.as_str());
                }
            }
        }
        out.extend(self.scenes.iter().filter_map(|s| s.labels.as_deref()));
        out
    }
}

/// Path of the generator's provenance sidecar for a cloud file.
pub fn mask_path_for(cloud_path: &str) -> String {
    match cloud_path.strip_suffix(".xyz") {
        Some(stem) => format!("{stem}.mask.json"),
        None => format!("{cloud_path}.mask.json"),
    }
}

/// Provenance of one generated point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub kind: PointKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    Ground,
    Static,
    Dynamic,
}

/// Where dataset files come from.
pub trait DataSource: Send + Sync {
    fn exists(&self, path: &str) -> bool;
    fn read_cloud(&self, path: &str) -> Result<Vec<Point3>>;
    fn read_pose(&self, path: &str) -> Result<Pose6DoF>;
    fn read_boxes(&self, path: &str, provenance: Provenance) -> Result<Vec<LabeledBox>>;
    fn read_mask(&self, path: &str) -> Result<Vec<MaskEntry>>;
}

#[derive(Debug, Clone)]
pub struct DiskSource {
    pub root: PathBuf,
}

impl DataSource for DiskSource {
    fn exists(&self, path: &str) -> bool {
        self.root.join(path).is_file()
    }

    fn read_cloud(&self, path: &str) -> Result<Vec<Point3>> {
        read_xyz(&self.root.join(path))
    }

    fn read_pose(&self, path: &str) -> Result<Pose6DoF> {
        read_pose(&self.root.join(path))
    }

    fn read_boxes(&self, path: &str, provenance: Provenance) -> Result<Vec<LabeledBox>> {
        read_boxes(&self.root.join(path), provenance)
    }

    fn read_mask(&self, path: &str) -> Result<Vec<MaskEntry>> {
        let full = self.root.join(path);
        let text = fs::read_to_string(&full).map_err(|e| Error::io(&full, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(&full, e.to_string()))
    }
}

/// Typed in-memory counterpart of a dataset directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryFiles {
    pub clouds: BTreeMap<String, Vec<Point3>>,
    pub poses: BTreeMap<String, Pose6DoF>,
    pub boxes: BTreeMap<String, Vec<LabeledBox>>,
    pub masks: BTreeMap<String, Vec<MaskEntry>>,
}

impl DataSource for MemoryFiles {
    fn exists(&self, path: &str) -> bool {
        self.clouds.contains_key(path)
            || self.poses.contains_key(path)
            || self.boxes.contains_key(path)
            || self.masks.contains_key(path)
    }

    fn read_cloud(&self, path: &str) -> Result<Vec<Point3>> {
        self.clouds
            .get(path)
            .cloned()
            .ok_or_else(|| Error::NotFound(path.to_string()))
    }

    fn read_pose(&self, path: &str) -> Result<Pose6DoF> {
        self.poses
            .get(path)
            .copied()
            .ok_or_else(|| Error::NotFound(path.to_string()))
    }

    fn read_boxes(&self, path: &str, provenance: Provenance) -> Result<Vec<LabeledBox>> {
        let boxes = self
            .boxes
            .get(path)
            .ok_or_else(|| Error::NotFound(path.to_string()))?;
        boxes.iter().map(|b| retag(b, provenance)).collect()
    }

    fn read_mask(&self, path: &str) -> Result<Vec<MaskEntry>> {
        self.masks
            .get(path)
            .cloned()
            .ok_or_else(|| Error::NotFound(path.to_string()))
    }
}

impl MemoryFiles {
    /// Writes every file under `root`.
    pub fn write_to(&self, root: &Path) -> Result<()> {
        for (path, pts) in &self.clouds {
            write_xyz(&prepare(root, path)?, pts)?;
        }
        for (path, pose) in &self.poses {
            write_pose(&prepare(root, path)?, pose)?;
        }
        for (path, boxes) in &self.boxes {
            write_boxes(&prepare(root, path)?, boxes)?;
        }
        for (path, mask) in &self.masks {
            write_json(&prepare(root, path)?, mask)?;
        }
        Ok(())
    }
}

fn prepare(root: &Path, rel: &str) -> Result<PathBuf> {
    let full = root.join(rel);
    if let Some(parent) = full.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(full)
}

fn retag(b: &LabeledBox, provenance: Provenance) -> Result<LabeledBox> {
    let confidence = if provenance == Provenance::GroundTruth {
        1.0
    } else {
        b.confidence
    };
    LabeledBox::new(b.center, b.size, b.yaw, b.class, confidence, provenance)
}

/// A manifest bound to the storage holding its files.
pub struct Dataset {
    pub manifest: DatasetManifest,
    source: Box<dyn DataSource>,
}

impl std::fmt::Debug for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dataset")
            .field("manifest", &self.manifest)
            .finish_non_exhaustive()
    }
}

impl Dataset {
    /// Opens a dataset directory; see [`load_manifest`].
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let manifest = load_manifest(root)?;
        Ok(Dataset {
            manifest,
            source: Box::new(DiskSource {
                root: root.to_path_buf(),
            }),
        })
    }

    /// Wraps in-memory files, applying the same validation as [`Dataset::open`].
    pub fn from_memory(mut manifest: DatasetManifest, files: MemoryFiles) -> Result<Self> {
        manifest.canonicalize();
        manifest.validate_structure()?;
        check_files(&manifest, &files)?;
        Ok(Dataset {
            manifest,
            source: Box::new(files),
        })
    }

    pub fn source(&self) -> &dyn DataSource {
        self.source.as_ref()
    }

    pub fn load_scene(&self, scene_id: &str) -> Result<Scene> {
        load_scene(self, scene_id)
    }

    pub fn load_scenes(&self) -> Result<Vec<Scene>> {
        let ids = self.manifest.scene_ids();
        Execution::default()
            .map(&ids, |id| self.load_scene(id))
            .into_iter()
            .collect()
    }

    pub fn load_mask(&self, scene_id: &str) -> Result<Vec<MaskEntry>> {
        let rec = self
            .manifest
            .scene(scene_id)
            .ok_or_else(|| Error::NotFound(format!("scene {scene_id}")))?;
        let scan = self.manifest.scan(rec)?;
        self.source.read_mask(&mask_path_for(&scan.cloud))
    }
}

fn check_files(manifest: &DatasetManifest, source: &dyn DataSource) -> Result<()> {
    for path in manifest.referenced_files() {
        if !source.exists(path) {
            return Err(Error::NotFound(format!("referenced file {path}")));
        }
    }
    Ok(())
}

/// Reads and validates `root/manifest.json`.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::NotFound(MANIFEST_FILE.to_string()));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
    manifest.root = root.to_path_buf();
    manifest.canonicalize();
    manifest.validate_structure()?;
    check_files(
        &manifest,
        &DiskSource {
            root: root.to_path_buf(),
        },
    )?;
    Ok(manifest)
}

pub fn write_manifest(root: &Path, manifest: &DatasetManifest) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_json(&root.join(MANIFEST_FILE), manifest)
}

/// Loads one scene: sensor-frame cloud, pose, and world-frame labels when
/// the scene has a label file.
pub fn load_scene(dataset: &Dataset, scene_id: &str) -> Result<Scene> {
    let rec = dataset
        .manifest
        .scene(scene_id)
        .ok_or_else(|| Error::NotFound(format!("scene {scene_id}")))?;
    let scan = dataset.manifest.scan(rec)?;
    let points = dataset.source.read_cloud(&scan.cloud)?;
    let pose = dataset.source.read_pose(&scan.pose)?;
    let gt_boxes = rec
        .labels
        .as_deref()
        .map(|p| dataset.source.read_boxes(p, Provenance::GroundTruth))
        .transpose()?;
    Ok(Scene {
        scene_id: rec.id.clone(),
        location_id: rec.location.clone(),
        traversal_id: rec.traversal.clone(),
        cloud: PointCloud::new(points, Frame::Sensor),
        sensor_pose: pose,
        gt_boxes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreOptions {
    pub max_traversals: usize,
    /// Keep one point per cube of this edge when aggregating. Off by default:
    /// neighbor counts are sensitive to it.
    pub aggregate_voxel_size: Option<f64>,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            max_traversals: 5,
            aggregate_voxel_size: None,
        }
    }
}

/// World-frame aggregated clouds of one location, one per traversal.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversalStore {
    pub location_id: String,
    pub traversal_ids: Vec<String>,
    pub clouds: Vec<PointCloud>,
}

impl TraversalStore {
    pub fn traversal_count(&self) -> usize {
        self.traversal_ids.len()
    }

    pub fn point_count(&self) -> usize {
        self.clouds.iter().map(PointCloud::len).sum()
    }
}

pub fn build_traversal_store(
    dataset: &Dataset,
    location: &str,
    max_traversals: usize,
) -> Result<TraversalStore> {
    build_traversal_store_with(
        dataset,
        location,
        &StoreOptions {
            max_traversals,
            ..StoreOptions::default()
        },
    )
}

/// Aggregates the first `max_traversals` traversals (manifest order) of
/// `location`, transforming every scan to the world frame.
pub fn build_traversal_store_with(
    dataset: &Dataset,
    location: &str,
    options: &StoreOptions,
) -> Result<TraversalStore> {
    if options.max_traversals == 0 {
        return Err(Error::InvalidConfig(
            "max_traversals must be positive".into(),
        ));
    }
    let loc = dataset
        .manifest
        .location(location)
        .ok_or_else(|| Error::NotFound(format!("location {location}")))?;
    if loc.traversals.len() < 2 {
        return Err(Error::Location {
            location: location.to_string(),
            message: format!(
                "has {} traversal(s); at least 2 are needed",
                loc.traversals.len()
            ),
        });
    }
    let selected: Vec<&TraversalRecord> =
        loc.traversals.iter().take(options.max_traversals).collect();
    let clouds = Execution::default()
        .map(&selected, |t| aggregate_traversal(dataset, t, options))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(TraversalStore {
        location_id: location.to_string(),
        traversal_ids: selected.iter().map(|t| t.id.clone()).collect(),
        clouds,
    })
}

fn aggregate_traversal(
    dataset: &Dataset,
    traversal: &TraversalRecord,
    options: &StoreOptions,
) -> Result<PointCloud> {
    let mut points = Vec::new();
    for scan in &traversal.scans {
        let raw = dataset.source.read_cloud(&scan.cloud)?;
        let pose = dataset.source.read_pose(&scan.pose)?;
        let world = transform_cloud(&PointCloud::new(raw, Frame::Sensor), &pose)?;
        points.extend(world.points);
    }
    if let Some(voxel) = options.aggregate_voxel_size {
        points = voxel_downsample(&points, voxel);
    }
    Ok(PointCloud::new(points, Frame::World))
}

/// Keeps the first point that falls in each cube of edge `voxel`.
pub fn voxel_downsample(points: &[Point3], voxel: f64) -> Vec<Point3> {
    let mut seen = std::collections::HashSet::new();
    points
        .iter()
        .filter(|p| {
            seen.insert([
                (p.x / voxel).floor() as i64,
                (p.y / voxel).floor() as i64,
                (p.z / voxel).floor() as i64,
            ])
        })
        .copied()
        .collect()
}

pub fn read_xyz(path: &Path) -> Result<Vec<Point3>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text).map_err(|m| Error::parse(path, m))
}

/// Parses the `.xyz` format; the error names the 1-based line.
pub fn parse_xyz(text: &str) -> std::result::Result<Vec<Point3>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let mut xyz = [0.0; 3];
        for v in &mut xyz {
            let field = fields
                .next()
                .ok_or_else(|| format!("line {}: expected 3 values", n + 1))?;
            *v = field
                .parse::<f64>()
                .map_err(|_| format!("line {}: invalid number {field:?}", n + 1))?;
            if !v.is_finite() {
                return Err(format!("line {}: non-finite coordinate {field:?}", n + 1));
            }
        }
        if fields.next().is_some() {
            return Err(format!("line {}: expected 3 values", n + 1));
        }
        out.push(Point3::from(xyz));
    }
    Ok(out)
}

pub fn write_xyz(path: &Path, points: &[Point3]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseRecord {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

pub fn read_pose(path: &Path) -> Result<Pose6DoF> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rec: PoseRecord =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    Pose6DoF::new(rec.rotation, rec.translation).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_pose(path: &Path, pose: &Pose6DoF) -> Result<()> {
    write_json(
        path,
        &PoseRecord {
            rotation: *pose.rotation(),
            translation: *pose.translation(),
        },
    )
}

/// One entry of a `.boxes.json` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    pub class: String,
    pub score: f64,
}

impl BoxRecord {
    pub fn from_box(b: &LabeledBox) -> Self {
        BoxRecord {
            center: b.center.to_array(),
            size: [b.size.length, b.size.width, b.size.height],
            yaw: b.yaw,
            class: b.class.name().to_string(),
            score: b.confidence,
        }
    }

    pub fn to_box(&self, provenance: Provenance) -> Result<LabeledBox> {
        let confidence = if provenance == Provenance::GroundTruth {
            1.0
        } else {
            self.score
        };
        LabeledBox::new(
            Point3::from(self.center),
            BoxSize::new(self.size[0], self.size[1], self.size[2]),
            self.yaw,
            ClassId::from_name(&self.class)?,
            confidence,
            provenance,
        )
    }
}

pub fn parse_boxes(
    text: &str,
    provenance: Provenance,
) -> std::result::Result<Vec<LabeledBox>, String> {
    let records: Vec<BoxRecord> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| r.to_box(provenance).map_err(|e| format!("box {i}: {e}")))
        .collect()
}

pub fn read_boxes(path: &Path, provenance: Provenance) -> Result<Vec<LabeledBox>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_boxes(&text, provenance).map_err(|m| Error::parse(path, m))
}

pub fn write_boxes(path: &Path, boxes: &[LabeledBox]) -> Result<()> {
    let records: Vec<BoxRecord> = boxes.iter().map(BoxRecord::from_box).collect();
    write_json(path, &records)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::parse(path, e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}
