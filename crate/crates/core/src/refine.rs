//! Pseudo-label quality control.
//!
//! Foreground-background filtering (FB-F) drops a box when a low percentile
//! of its points' persistence scores is still high, i.e. the box sits on
//! background that every traversal observed. Posterior filtering (PO-F) caps
//! the number of boxes per class across the whole target split at
//! `β · (N_c^S / N_scenes^S) · N_scenes^T`, keeping the most confident.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{ClassId, LabeledBox, Point3, Provenance, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOrder {
    FbfThenPof,
    PofThenFbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PofScope {
    /// One cap over the whole target split.
    Split,
    /// The per-scene average cap applied to each scene separately.
    Scene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub alpha_fbf: f64,
    pub gamma_fbf: f64,
    pub beta: f64,
    pub source_class_counts: [u64; NUM_CLASSES],
    pub source_scene_count: u64,
    pub min_points_fbf: usize,
    pub order: FilterOrder,
    pub pof_scope: PofScope,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            alpha_fbf: 20.0,
            gamma_fbf: 0.5,
            beta: 0.333,
            source_class_counts: [14357, 2207, 734],
            source_scene_count: 3712,
            min_points_fbf: 1,
            order: FilterOrder::FbfThenPof,
            pof_scope: PofScope::Split,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_fbf > 0.0 && self.alpha_fbf < 100.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha_fbf must be in (0, 100), got {}",
                self.alpha_fbf
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma_fbf) {
            return Err(Error::InvalidConfig(format!(
                "gamma_fbf must be in [0, 1], got {}",
                self.gamma_fbf
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!(
                "beta must be in [0, 1], got {}",
                self.beta
            )));
        }
        if self.source_scene_count == 0 {
            return Err(Error::InvalidConfig(
                "source_scene_count must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    Fbf,
    Pof,
    EmptyBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDecision {
    pub index: usize,
    pub class: String,
    pub confidence: f64,
    pub kept: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<RemovalReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene_id: String,
    pub boxes: Vec<BoxDecision>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub input: usize,
    pub kept: usize,
    pub removed_fbf: usize,
    pub removed_pof: usize,
    pub removed_empty: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub scenes: Vec<SceneReport>,
    pub per_class: Vec<(String, ClassSummary)>,
}

impl FilterReport {
    fn from_scenes(scenes: Vec<SceneReport>) -> Self {
        let mut per_class = [ClassSummary::default(); NUM_CLASSES];
        for d in scenes.iter().flat_map(|s| &s.boxes) {
            let c = ClassId::from_name(&d.class)
                .map(ClassId::index)
                .unwrap_or(0);
            let s = &mut per_class[c];
            s.input += 1;
            match d.reason {
                None => s.kept += 1,
                Some(RemovalReason::Fbf) => s.removed_fbf += 1,
                Some(RemovalReason::Pof) => s.removed_pof += 1,
                Some(RemovalReason::EmptyBox) => s.removed_empty += 1,
            }
        }
        FilterReport {
            scenes,
            per_class: ClassId::ALL
                .iter()
                .map(|c| (c.name().to_string(), per_class[c.index()]))
                .collect(),
        }
    }

    pub fn summary(&self, class: ClassId) -> ClassSummary {
        self.per_class[class.index()].1
    }

    pub fn total_kept(&self) -> usize {
        self.per_class.iter().map(|(_, s)| s.kept).sum()
    }
}

/// Nearest-rank percentile: element `ceil(alpha/100 · n) - 1` of the sorted
/// values.
pub fn percentile_nearest_rank(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Invalid("percentile of an empty list".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (alpha * n as f64 / 100.0).ceil() as i64 - 1;
    Ok(sorted[rank.clamp(0, n as i64 - 1) as usize])
}

/// FB-F decision for one box, `None` when kept.
pub fn fbf_decision(
    bx: &LabeledBox,
    points: &[Point3],
    tau: &[f64],
    config: &FilterConfig,
) -> Option<RemovalReason> {
    let inside: Vec<f64> = points
        .iter()
        .zip(tau)
        .filter(|(p, _)| bx.contains(p))
        .map(|(_, &t)| t)
        .collect();
    if inside.len() < config.min_points_fbf.max(1) {
        return Some(RemovalReason::EmptyBox);
    }
    let summary = percentile_nearest_rank(&inside, config.alpha_fbf).ok()?;
    (summary > config.gamma_fbf).then_some(RemovalReason::Fbf)
}

/// Applies FB-F to the boxes of one scene. `points` are world-frame and
/// aligned with `tau`.
pub fn fbf_filter(
    boxes: &[LabeledBox],
    points: &[Point3],
    tau: &[f64],
    config: &FilterConfig,
) -> (Vec<LabeledBox>, Vec<BoxDecision>) {
    let decisions: Vec<BoxDecision> = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let reason = fbf_decision(b, points, tau, config);
            BoxDecision {
                index: i,
                class: b.class.name().to_string(),
                confidence: b.confidence,
                kept: reason.is_none(),
                reason,
            }
        })
        .collect();
    let kept = boxes
        .iter()
        .zip(&decisions)
        .filter(|(_, d)| d.kept)
        .map(|(b, _)| *b)
        .collect();
    (kept, decisions)
}

/// `floor(β · N_c^S / N_scenes^S · N_scenes^T)`.
pub fn pof_cap(class: ClassId, config: &FilterConfig, target_scene_count: usize) -> usize {
    let per_scene =
        config.source_class_counts[class.index()] as f64 / config.source_scene_count as f64;
    (config.beta * per_scene * target_scene_count as f64).floor() as usize
}

/// A box competing for a PO-F slot.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub scene_id: &'a str,
    pub index: usize,
    pub bx: &'a LabeledBox,
}

/// Confidence descending, then scene id, then box index.
pub fn candidate_order(a: &Candidate<'_>, b: &Candidate<'_>) -> Ordering {
    b.bx.confidence
        .total_cmp(&a.bx.confidence)
        .then_with(|| a.scene_id.cmp(b.scene_id))
        .then_with(|| a.index.cmp(&b.index))
}

/// Indices into `candidates` that survive the per-class cap.
pub fn pof_filter(
    candidates: &[Candidate<'_>],
    config: &FilterConfig,
    target_scene_count: usize,
) -> Vec<bool> {
    let mut keep = vec![false; candidates.len()];
    for class in ClassId::ALL {
        let cap = pof_cap(class, config, target_scene_count);
        let mut members: Vec<usize> = (0..candidates.len())
            .filter(|&i| candidates[i].bx.class == class)
            .collect();
        members.sort_by(|&a, &b| candidate_order(&candidates[a], &candidates[b]));
        for &i in members.iter().take(cap) {
            keep[i] = true;
        }
    }
    keep
}

/// Inputs for refining one scene's detections.
#[derive(Debug, Clone, Copy)]
pub struct SceneEvidence<'a> {
    pub scene_id: &'a str,
    /// World-frame points aligned with `tau`.
    pub points: &'a [Point3],
    pub tau: &'a [f64],
    pub detections: &'a [LabeledBox],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterToggles {
    pub fbf: bool,
    pub pof: bool,
}

impl Default for FilterToggles {
    fn default() -> Self {
        FilterToggles {
            fbf: true,
            pof: true,
        }
    }
}

/// Runs the enabled filters over the whole split and returns the surviving
/// boxes per scene (tagged as pseudo-labels) with a report.
pub fn refine_pseudo_labels(
    scenes: &[SceneEvidence<'_>],
    config: &FilterConfig,
    toggles: FilterToggles,
) -> (Vec<Vec<LabeledBox>>, FilterReport) {
    // reasons[s][b]: None while kept.
    let mut reasons: Vec<Vec<Option<RemovalReason>>> = scenes
        .iter()
        .map(|s| vec![None; s.detections.len()])
        .collect();

    let run_fbf = |reasons: &mut Vec<Vec<Option<RemovalReason>>>| {
        let fresh = Execution::default().map_range(scenes.len(), |s| {
            let ev = &scenes[s];
            ev.detections
                .iter()
                .enumerate()
                .map(|(b, bx)| match reasons[s][b] {
                    Some(r) => Some(r),
                    None => fbf_decision(bx, ev.points, ev.tau, config),
                })
                .collect::<Vec<_>>()
        });
        *reasons = fresh;
    };

    let run_pof = |reasons: &mut Vec<Vec<Option<RemovalReason>>>| match config.pof_scope {
        PofScope::Split => {
            let mut owners = Vec::new();
            let mut candidates = Vec::new();
            for (s, ev) in scenes.iter().enumerate() {
                for (b, bx) in ev.detections.iter().enumerate() {
                    if reasons[s][b].is_none() {
                        owners.push((s, b));
                        candidates.push(Candidate {
                            scene_id: ev.scene_id,
                            index: b,
                            bx,
                        });
                    }
                }
            }
            let keep = pof_filter(&candidates, config, scenes.len());
            for ((s, b), k) in owners.into_iter().zip(keep) {
                if !k {
                    reasons[s][b] = Some(RemovalReason::Pof);
                }
            }
        }
        PofScope::Scene => {
            for (s, ev) in scenes.iter().enumerate() {
                let live: Vec<usize> = (0..ev.detections.len())
                    .filter(|&b| reasons[s][b].is_none())
                    .collect();
                let candidates: Vec<Candidate> = live
                    .iter()
                    .map(|&b| Candidate {
                        scene_id: ev.scene_id,
                        index: b,
                        bx: &ev.detections[b],
                    })
                    .collect();
                let keep = pof_filter(&candidates, config, 1);
                for (b, k) in live.into_iter().zip(keep) {
                    if !k {
                        reasons[s][b] = Some(RemovalReason::Pof);
                    }
                }
            }
        }
    };

    match config.order {
        FilterOrder::FbfThenPof => {
            if toggles.fbf {
                run_fbf(&mut reasons);
            }
            if toggles.pof {
                run_pof(&mut reasons);
            }
        }
        FilterOrder::PofThenFbf => {
            if toggles.pof {
                run_pof(&mut reasons);
            }
            if toggles.fbf {
                run_fbf(&mut reasons);
            }
        }
    }

    let mut kept = Vec::with_capacity(scenes.len());
    let mut reports = Vec::with_capacity(scenes.len());
    for (ev, rs) in scenes.iter().zip(&reasons) {
        kept.push(
            ev.detections
                .iter()
                .zip(rs)
                .filter(|(_, r)| r.is_none())
                .map(|(b, _)| b.with_provenance(Provenance::PseudoLabel))
                .collect(),
        );
        reports.push(SceneReport {
            scene_id: ev.scene_id.to_string(),
            boxes: ev
                .detections
                .iter()
                .zip(rs)
                .enumerate()
                .map(|(i, (b, r))| BoxDecision {
                    index: i,
                    class: b.class.name().to_string(),
                    confidence: b.confidence,
                    kept: r.is_none(),
                    reason: *r,
                })
                .collect(),
        });
    }
    (kept, FilterReport::from_scenes(reports))
}
