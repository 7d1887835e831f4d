//! Detection metrics: rotated BEV and 3D IoU, greedy matching, R40 average
//! precision, per-depth-bin tables, and distance-matched mAP.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::geometry::{ClassId, LabeledBox, Pose6DoF, NUM_CLASSES};

pub type Polygon = Vec<[f64; 2]>;

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area (positive for counter-clockwise vertices).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        twice += a[0] * b[1] - b[0] * a[1];
    }
    twice / 2.0
}

/// Sutherland-Hodgman clip of `subject` by the convex counter-clockwise
/// polygon `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Polygon {
    let mut out: Polygon = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    out.push(segment_line_intersection(prev, cur, a, b));
                }
                out.push(cur);
            } else if prev_in {
                out.push(segment_line_intersection(prev, cur, a, b));
            }
        }
    }
    out
}

fn segment_line_intersection(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Footprint intersection area of two boxes.
pub fn bev_intersection(a: &LabeledBox, b: &LabeledBox) -> f64 {
    // Cheap reject on bounding circles.
    let ra = a.size.length.hypot(a.size.width) / 2.0;
    let rb = b.size.length.hypot(b.size.width) / 2.0;
    if a.center.horizontal_distance(&b.center) > ra + rb {
        return 0.0;
    }
    polygon_area(&clip_convex(&a.bev_corners(), &b.bev_corners())).max(0.0)
}

pub fn bev_iou(a: &LabeledBox, b: &LabeledBox) -> f64 {
    let (aa, ab) = (a.bev_area(), b.bev_area());
    if aa <= 0.0 || ab <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection(a, b);
    let union = aa + ab - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub fn iou_3d(a: &LabeledBox, b: &LabeledBox) -> f64 {
    let (va, vb) = (a.volume(), b.volume());
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = (a1.min(b1) - a0.max(b0)).max(0.0);
    if dz == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection(a, b) * dz;
    let union = va + vb - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchCriterion {
    BevIou(f64),
    Iou3d(f64),
    /// Horizontal center distance in meters.
    CenterDistance(f64),
}

impl MatchCriterion {
    /// Higher is better; `None` when the pair does not satisfy the threshold.
    fn affinity(&self, det: &LabeledBox, gt: &LabeledBox) -> Option<f64> {
        match *self {
            MatchCriterion::BevIou(t) => Some(bev_iou(det, gt)).filter(|&v| v >= t && v > 0.0),
            MatchCriterion::Iou3d(t) => Some(iou_3d(det, gt)).filter(|&v| v >= t && v > 0.0),
            MatchCriterion::CenterDistance(t) => {
                let d = det.center.horizontal_distance(&gt.center);
                (d <= t).then_some(-d)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Matched ground-truth index per detection; `None` is a false positive.
    pub det_match: Vec<Option<usize>>,
    pub gt_matched: Vec<bool>,
    /// Boxes dropped by the frontal-view filter are excluded from both sides.
    pub det_included: Vec<bool>,
    pub gt_included: Vec<bool>,
}

/// True when `b` lies in front of the sensor (positive sensor-frame x).
pub fn is_frontal(b: &LabeledBox, sensor_pose: &Pose6DoF) -> bool {
    sensor_pose.inverse().apply(&b.center).x > 0.0
}

/// Greedy matching of same-class detections to ground truth, most confident
/// detection first. Each ground truth matches at most once.
pub fn match_detections(
    dets: &[LabeledBox],
    gts: &[LabeledBox],
    criterion: MatchCriterion,
    frontal: Option<&Pose6DoF>,
) -> MatchResult {
    let det_included: Vec<bool> = dets
        .iter()
        .map(|d| frontal.is_none_or(|p| is_frontal(d, p)))
        .collect();
    let gt_included: Vec<bool> = gts
        .iter()
        .map(|g| frontal.is_none_or(|p| is_frontal(g, p)))
        .collect();
    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| det_included[i]).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(a.cmp(&b))
    });

    let mut det_match = vec![None; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if gt_matched[j] || !gt_included[j] {
                continue;
            }
            if let Some(score) = criterion.affinity(&dets[i], g) {
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((j, score));
                }
            }
        }
        if let Some((j, _)) = best {
            gt_matched[j] = true;
            det_match[i] = Some(j);
        }
    }
    MatchResult {
        det_match,
        gt_matched,
        det_included,
        gt_included,
    }
}

/// A scored detection after matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedDetection {
    pub confidence: f64,
    pub tp: bool,
}

pub const RECALL_POSITIONS: usize = 40;

/// Cumulative precision/recall along detections sorted by confidence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PRCurve {
    pub confidence: Vec<f64>,
    pub tp: Vec<bool>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

fn sort_ranked(entries: &[RankedDetection]) -> Vec<RankedDetection> {
    let mut sorted = entries.to_vec();
    // Stable: ties keep their input order.
    sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    sorted
}

pub fn pr_curve(entries: &[RankedDetection], gt_count: usize) -> PRCurve {
    let sorted = sort_ranked(entries);
    let mut tp_cum = 0usize;
    let mut curve = PRCurve {
        confidence: Vec::with_capacity(sorted.len()),
        tp: Vec::with_capacity(sorted.len()),
        precision: Vec::with_capacity(sorted.len()),
        recall: Vec::with_capacity(sorted.len()),
    };
    for (i, e) in sorted.iter().enumerate() {
        tp_cum += e.tp as usize;
        curve.confidence.push(e.confidence);
        curve.tp.push(e.tp);
        curve.precision.push(tp_cum as f64 / (i + 1) as f64);
        curve.recall.push(if gt_count == 0 {
            0.0
        } else {
            tp_cum as f64 / gt_count as f64
        });
    }
    curve
}

/// R40 average precision of detections already in ranked order
/// (`entries[0]` most confident). `None` when there is no ground truth.
pub fn average_precision_ranked(entries: &[RankedDetection], gt_count: usize) -> Option<f64> {
    if gt_count == 0 {
        return None;
    }
    let n = entries.len();
    let mut tp_cum = Vec::with_capacity(n);
    let mut acc = 0usize;
    for e in entries {
        acc += e.tp as usize;
        tp_cum.push(acc);
    }
    // Right envelope of precision.
    let mut envelope = vec![0.0; n];
    let mut best = 0.0f64;
    for i in (0..n).rev() {
        best = best.max(tp_cum[i] as f64 / (i + 1) as f64);
        envelope[i] = best;
    }
    let mut sum = 0.0;
    let mut first = 0usize;
    for k in 1..=RECALL_POSITIONS {
        // First prefix whose recall reaches k/40, compared in integers.
        while first < n && tp_cum[first] * RECALL_POSITIONS < k * gt_count {
            first += 1;
        }
        if first < n {
            sum += envelope[first];
        }
    }
    Some(sum / RECALL_POSITIONS as f64)
}

/// R40 average precision; entries are ranked by confidence first.
pub fn average_precision(entries: &[RankedDetection], gt_count: usize) -> Option<f64> {
    average_precision_ranked(&sort_ranked(entries), gt_count)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthBin {
    pub min: f64,
    pub max: f64,
}

impl DepthBin {
    pub const fn new(min: f64, max: f64) -> Self {
        DepthBin { min, max }
    }

    pub fn contains(&self, range: f64) -> bool {
        range >= self.min && range < self.max
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// `[primary, loose]` IoU thresholds per class.
    pub iou_thresholds: [[f64; 2]; NUM_CLASSES],
    pub depth_bins: Vec<DepthBin>,
    pub distance_thresholds: Vec<f64>,
    pub frontal_only: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: [[0.7, 0.5], [0.5, 0.25], [0.5, 0.25]],
            depth_bins: vec![
                DepthBin::new(0.0, 30.0),
                DepthBin::new(30.0, 50.0),
                DepthBin::new(50.0, 80.0),
                DepthBin::new(0.0, 80.0),
            ],
            distance_thresholds: vec![0.5, 1.0, 2.0, 4.0],
            frontal_only: false,
        }
    }
}

/// Detections and annotations of one scene, both in the world frame.
#[derive(Debug, Clone, Copy)]
pub struct EvalScene<'a> {
    pub detections: &'a [LabeledBox],
    pub ground_truth: &'a [LabeledBox],
    pub sensor_pose: &'a Pose6DoF,
}

fn box_range(b: &LabeledBox, pose: &Pose6DoF) -> f64 {
    b.center.horizontal_distance(&pose.position())
}

/// Per-bin ranked entries and ground-truth counts for one class and
/// criterion.
fn binned_entries(
    scenes: &[EvalScene<'_>],
    class: ClassId,
    criterion: MatchCriterion,
    config: &EvalConfig,
) -> Vec<(Vec<RankedDetection>, usize)> {
    let per_scene = Execution::default().map(scenes, |s| {
        let dets: Vec<LabeledBox> = s
            .detections
            .iter()
            .filter(|d| d.class == class)
            .copied()
            .collect();
        let gts: Vec<LabeledBox> = s
            .ground_truth
            .iter()
            .filter(|g| g.class == class)
            .copied()
            .collect();
        let frontal = config.frontal_only.then_some(s.sensor_pose);
        let m = match_detections(&dets, &gts, criterion, frontal);
        let mut out: Vec<(Vec<RankedDetection>, usize)> =
            vec![(Vec::new(), 0); config.depth_bins.len()];
        for (bi, bin) in config.depth_bins.iter().enumerate() {
            for (j, g) in gts.iter().enumerate() {
                if m.gt_included[j] && bin.contains(box_range(g, s.sensor_pose)) {
                    out[bi].1 += 1;
                }
            }
            for (i, d) in dets.iter().enumerate() {
                if !m.det_included[i] {
                    continue;
                }
                let range = match m.det_match[i] {
                    Some(j) => box_range(&gts[j], s.sensor_pose),
                    None => box_range(d, s.sensor_pose),
                };
                if bin.contains(range) {
                    out[bi].0.push(RankedDetection {
                        confidence: d.confidence,
                        tp: m.det_match[i].is_some(),
                    });
                }
            }
        }
        out
    });
    let mut merged: Vec<(Vec<RankedDetection>, usize)> =
        vec![(Vec::new(), 0); config.depth_bins.len()];
    for scene in per_scene {
        for (acc, (entries, n)) in merged.iter_mut().zip(scene) {
            acc.0.extend(entries);
            acc.1 += n;
        }
    }
    merged
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BinMetrics {
    pub ap_bev_primary: Option<f64>,
    pub ap_bev_loose: Option<f64>,
    pub ap_3d_primary: Option<f64>,
    pub ap_3d_loose: Option<f64>,
    pub distance_map: Option<f64>,
    pub gt_count: usize,
}

impl BinMetrics {
    pub const COLUMNS: [&'static str; 5] = [
        "ap_bev_primary",
        "ap_bev_loose",
        "ap_3d_primary",
        "ap_3d_loose",
        "distance_map",
    ];

    pub fn values(&self) -> [Option<f64>; 5] {
        [
            self.ap_bev_primary,
            self.ap_bev_loose,
            self.ap_3d_primary,
            self.ap_3d_loose,
            self.distance_map,
        ]
    }
}

/// class name → bin label → metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub classes: BTreeMap<String, BTreeMap<String, BinMetrics>>,
    #[serde(skip)]
    pub bin_order: Vec<String>,
}

impl MetricReport {
    pub fn get(&self, class: ClassId, bin: &str) -> Option<&BinMetrics> {
        self.classes.get(class.name())?.get(bin)
    }
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    if values.iter().any(Option::is_none) || values.is_empty() {
        return None;
    }
    Some(values.iter().flatten().sum::<f64>() / values.len() as f64)
}

/// AP of one class under one criterion, per configured depth bin.
pub fn ap_per_bin(
    scenes: &[EvalScene<'_>],
    class: ClassId,
    criterion: MatchCriterion,
    config: &EvalConfig,
) -> Vec<Option<f64>> {
    binned_entries(scenes, class, criterion, config)
        .iter()
        .map(|(entries, n)| average_precision(entries, *n))
        .collect()
}

pub fn metric_report(scenes: &[EvalScene<'_>], config: &EvalConfig) -> MetricReport {
    let mut classes = BTreeMap::new();
    for class in ClassId::ALL {
        let [primary, loose] = config.iou_thresholds[class.index()];
        let bev_p = binned_entries(scenes, class, MatchCriterion::BevIou(primary), config);
        let bev_l = ap_per_bin(scenes, class, MatchCriterion::BevIou(loose), config);
        let d3_p = ap_per_bin(scenes, class, MatchCriterion::Iou3d(primary), config);
        let d3_l = ap_per_bin(scenes, class, MatchCriterion::Iou3d(loose), config);
        let dist: Vec<Vec<Option<f64>>> = config
            .distance_thresholds
            .iter()
            .map(|&t| ap_per_bin(scenes, class, MatchCriterion::CenterDistance(t), config))
            .collect();
        let mut bins = BTreeMap::new();
        for (bi, bin) in config.depth_bins.iter().enumerate() {
            let dist_aps: Vec<Option<f64>> = dist.iter().map(|d| d[bi]).collect();
            bins.insert(
                bin.label(),
                BinMetrics {
                    ap_bev_primary: average_precision(&bev_p[bi].0, bev_p[bi].1),
                    ap_bev_loose: bev_l[bi],
                    ap_3d_primary: d3_p[bi],
                    ap_3d_loose: d3_l[bi],
                    distance_map: mean_defined(&dist_aps),
                    gt_count: bev_p[bi].1,
                },
            );
        }
        classes.insert(class.name().to_string(), bins);
    }
    MetricReport {
        classes,
        bin_order: config.depth_bins.iter().map(DepthBin::label).collect(),
    }
}

/// Precision-recall curve of one class under its primary BEV threshold,
/// over all ranges.
pub fn class_pr_curve(scenes: &[EvalScene<'_>], class: ClassId, config: &EvalConfig) -> PRCurve {
    let all = EvalConfig {
        depth_bins: vec![DepthBin::new(0.0, f64::INFINITY)],
        ..config.clone()
    };
    let crit = MatchCriterion::BevIou(config.iou_thresholds[class.index()][0]);
    let binned = binned_entries(scenes, class, crit, &all);
    pr_curve(&binned[0].0, binned[0].1)
}
