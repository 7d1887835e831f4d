//! The self-training loop: detect on the unlabeled target split, refine the
//! detections into pseudo-labels, turn them into point labels (optionally
//! rewritten by persistence), fine-tune stage 1, and repeat.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detector::{
    detect_points, extract_features, stage1_train_logged, DetectorConfig, PointFeatures,
    Stage1Model,
};
use crate::error::{Error, Result};
use crate::eval::{metric_report, BinMetrics, EvalConfig, EvalScene, MetricReport};
use crate::exec::Execution;
use crate::geometry::{
    ClassId, ClassMask, LabelSource, LabeledBox, PointCloud, PointLabelSet, Pose6DoF, Provenance,
    Scene, UnlabeledScene, NUM_CLASSES,
};
use crate::ppscore::{score_cloud, PPField, PpConfig, StoreSet};
use crate::refine::{refine_pseudo_labels, FilterConfig, FilterToggles, SceneEvidence};
use crate::supervise::{fbs_rewrite, labels_from_boxes, FbsConfig, FocalConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationConfig {
    pub rounds: usize,
    pub enable_pof: bool,
    pub enable_fbf: bool,
    pub enable_fbs: bool,
    pub filter: FilterConfig,
    pub fbs: FbsConfig,
    pub focal: FocalConfig,
    pub detector: DetectorConfig,
    pub pp: PpConfig,
    /// Recorded with the run. The loop itself has no random choices.
    pub seed: u64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            rounds: 10,
            enable_pof: true,
            enable_fbf: true,
            enable_fbs: true,
            filter: FilterConfig::default(),
            fbs: FbsConfig::default(),
            focal: FocalConfig::default(),
            detector: DetectorConfig::default(),
            pp: PpConfig::default(),
            seed: 0,
        }
    }
}

impl AdaptationConfig {
    /// Plain self-training: every persistence-based component off.
    pub fn vanilla() -> Self {
        AdaptationConfig {
            enable_pof: false,
            enable_fbf: false,
            enable_fbs: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be at least 1".into()));
        }
        self.filter.validate()?;
        self.fbs.validate()?;
        self.focal.validate()?;
        self.detector.validate()?;
        self.pp.validate()
    }

    /// Ablation label in the PO-F / FB-F / FB-S column order.
    pub fn variant_label(&self) -> String {
        let mark = |b: bool| if b { "x" } else { "-" };
        format!(
            "PO-F:{} FB-F:{} FB-S:{}",
            mark(self.enable_pof),
            mark(self.enable_fbf),
            mark(self.enable_fbs)
        )
    }
}

/// A target scene with everything the loop reuses across rounds.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub scene_id: String,
    pub world: PointCloud,
    pub features: PointFeatures,
    pub pp: PPField,
}

/// The unlabeled target split, scored once.
#[derive(Debug, Clone)]
pub struct PreparedTarget {
    pub scenes: Vec<PreparedScene>,
    features: PointFeatures,
    /// Number of persistence fields computed while preparing.
    pub pp_evaluations: usize,
}

impl PreparedTarget {
    pub fn point_count(&self) -> usize {
        self.features.len()
    }
}

/// Extracts features and persistence scores for every target scene. The
/// input type carries no annotations.
pub fn prepare_target(
    scenes: &[UnlabeledScene],
    stores: &StoreSet,
    pp: &PpConfig,
) -> Result<PreparedTarget> {
    pp.validate()?;
    let prepared: Vec<PreparedScene> = Execution::default()
        .map(scenes, |s| -> Result<PreparedScene> {
            let world = s.world_cloud()?;
            let features = extract_features(&world, &s.sensor_pose)?;
            let store = stores.get(&s.location_id)?;
            let exclude = pp.exclude_self.then_some(s.traversal_id.as_str());
            let field = score_cloud(&world, store, exclude, Execution::Sequential)?;
            Ok(PreparedScene {
                scene_id: s.scene_id.clone(),
                world,
                features,
                pp: field,
            })
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let features = PointFeatures::concat(prepared.iter().map(|s| &s.features));
    Ok(PreparedTarget {
        pp_evaluations: prepared.len(),
        scenes: prepared,
        features,
    })
}

/// A labeled evaluation scene with cached features.
#[derive(Debug, Clone)]
pub struct EvalSceneData {
    pub scene_id: String,
    pub world: PointCloud,
    pub features: PointFeatures,
    pub sensor_pose: Pose6DoF,
    pub ground_truth: Vec<LabeledBox>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalSplit {
    pub scenes: Vec<EvalSceneData>,
}

impl EvalSplit {
    pub fn from_scenes(scenes: &[Scene]) -> Result<Self> {
        let scenes = Execution::default()
            .map(scenes, |s| -> Result<EvalSceneData> {
                let world = s.world_cloud()?;
                let features = extract_features(&world, &s.sensor_pose)?;
                let ground_truth = s.gt_boxes.clone().ok_or_else(|| {
                    Error::Invalid(format!("evaluation scene {} has no labels", s.scene_id))
                })?;
                Ok(EvalSceneData {
                    scene_id: s.scene_id.clone(),
                    world,
                    features,
                    sensor_pose: s.sensor_pose,
                    ground_truth,
                })
            })
            .into_iter()
            .collect::<Result<_>>()?;
        Ok(EvalSplit { scenes })
    }

    pub fn detect(
        &self,
        model: &Stage1Model,
        config: &DetectorConfig,
    ) -> Result<Vec<Vec<LabeledBox>>> {
        Execution::default()
            .map(&self.scenes, |s| {
                detect_points(model, &s.world, &s.features, config)
            })
            .into_iter()
            .collect()
    }

    /// Metrics of precomputed detections against this split.
    pub fn score(&self, detections: &[Vec<LabeledBox>], config: &EvalConfig) -> MetricReport {
        let scenes: Vec<EvalScene<'_>> = self
            .scenes
            .iter()
            .zip(detections)
            .map(|(s, d)| EvalScene {
                detections: d,
                ground_truth: &s.ground_truth,
                sensor_pose: &s.sensor_pose,
            })
            .collect();
        metric_report(&scenes, config)
    }
}

/// Detects on a labeled split and scores the result.
pub fn evaluate_round(
    model: &Stage1Model,
    split: &EvalSplit,
    detector: &DetectorConfig,
    eval: &EvalConfig,
) -> Result<MetricReport> {
    let dets = split.detect(model, detector)?;
    Ok(split.score(&dets, eval))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundLog {
    pub round: usize,
    pub pseudo_labels: [usize; NUM_CLASSES],
    pub detections: [usize; NUM_CLASSES],
    pub filter: Option<Vec<(String, crate::refine::ClassSummary)>>,
    pub mean_loss: Option<f64>,
    pub metrics: Option<MetricReport>,
}

#[derive(Debug, Clone)]
pub struct AdaptationResult {
    pub model: Stage1Model,
    /// Model after each round; index 0 is the input model.
    pub checkpoints: Vec<Stage1Model>,
    /// Index 0 describes the input model.
    pub logs: Vec<RoundLog>,
    pub pp_evaluations: usize,
}

fn class_counts(boxes: &[Vec<LabeledBox>]) -> [usize; NUM_CLASSES] {
    let mut out = [0; NUM_CLASSES];
    for b in boxes.iter().flatten() {
        out[b.class.index()] += 1;
    }
    out
}

/// Runs `config.rounds` rounds on a prepared target split.
pub fn run_adaptation_prepared(
    source: &Stage1Model,
    target: &PreparedTarget,
    config: &AdaptationConfig,
    eval: Option<(&EvalSplit, &EvalConfig)>,
) -> Result<AdaptationResult> {
    config.validate()?;
    let evaluate = |m: &Stage1Model| -> Result<Option<MetricReport>> {
        eval.map(|(split, ec)| evaluate_round(m, split, &config.detector, ec))
            .transpose()
    };
    let mut model = *source;
    let mut checkpoints = vec![model];
    let mut logs = vec![RoundLog {
        round: 0,
        pseudo_labels: [0; NUM_CLASSES],
        detections: [0; NUM_CLASSES],
        filter: None,
        mean_loss: None,
        metrics: evaluate(&model)?,
    }];
    let toggles = FilterToggles {
        fbf: config.enable_fbf,
        pof: config.enable_pof,
    };
    for round in 1..=config.rounds {
        let detections: Vec<Vec<LabeledBox>> = Execution::default()
            .map(&target.scenes, |s| {
                detect_points(&model, &s.world, &s.features, &config.detector)
            })
            .into_iter()
            .collect::<Result<_>>()?;

        let (pseudo, filter) = if toggles.fbf || toggles.pof {
            let evidence: Vec<SceneEvidence<'_>> = target
                .scenes
                .iter()
                .zip(&detections)
                .map(|(s, d)| SceneEvidence {
                    scene_id: &s.scene_id,
                    points: &s.world.points,
                    tau: &s.pp.tau,
                    detections: d,
                })
                .collect();
            let (kept, report) = refine_pseudo_labels(&evidence, &config.filter, toggles);
            (kept, Some(report.per_class))
        } else {
            let kept = detections
                .iter()
                .map(|d| {
                    d.iter()
                        .map(|b| b.with_provenance(Provenance::PseudoLabel))
                        .collect()
                })
                .collect();
            (kept, None)
        };

        let labels: Vec<PointLabelSet> = Execution::default()
            .map_range(target.scenes.len(), |i| -> Result<PointLabelSet> {
                let s = &target.scenes[i];
                let base = labels_from_boxes(&s.world.points, &pseudo[i]);
                if config.enable_fbs {
                    fbs_rewrite(&base, &s.pp.tau, &config.fbs)
                } else {
                    Ok(base)
                }
            })
            .into_iter()
            .collect::<Result<_>>()?;
        let all: Vec<ClassMask> = labels
            .iter()
            .flat_map(|l| l.labels.iter().copied())
            .collect();
        let source = if config.enable_fbs {
            LabelSource::RewrittenFbs
        } else {
            LabelSource::FromBoxes
        };
        let joined = PointLabelSet {
            labels: all,
            source,
        };
        let (next, losses) = stage1_train_logged(
            &model,
            &target.features,
            &joined,
            &config.focal,
            &config.detector,
            Execution::default(),
        )?;
        model = next;
        checkpoints.push(model);
        let mean_loss = if losses.is_empty() {
            None
        } else {
            Some(losses.iter().sum::<f64>() / losses.len() as f64)
        };
        logs.push(RoundLog {
            round,
            pseudo_labels: class_counts(&pseudo),
            detections: class_counts(&detections),
            filter,
            mean_loss,
            metrics: evaluate(&model)?,
        });
        log::info!(
            "round {round}: {} pseudo-labels, loss {:?}",
            class_counts(&pseudo).iter().sum::<usize>(),
            mean_loss
        );
    }
    Ok(AdaptationResult {
        model,
        checkpoints,
        logs,
        pp_evaluations: target.pp_evaluations,
    })
}

/// Scores the target split once, then adapts `source` to it.
pub fn run_adaptation(
    source: &Stage1Model,
    target: &[UnlabeledScene],
    stores: &StoreSet,
    config: &AdaptationConfig,
    eval: Option<(&EvalSplit, &EvalConfig)>,
) -> Result<AdaptationResult> {
    config.validate()?;
    let prepared = prepare_target(target, stores, &config.pp)?;
    run_adaptation_prepared(source, &prepared, config, eval)
}

fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "NA".into(),
    }
}

pub const ROUNDS_CSV_HEADER: &str =
    "round,class,depth_bin,ap_bev_primary,ap_bev_loose,ap_3d_primary,ap_3d_loose,distance_map";

/// One row per round, class, and depth bin for rounds with metrics.
pub fn rounds_csv(logs: &[RoundLog]) -> String {
    let mut out = String::from(ROUNDS_CSV_HEADER);
    out.push('\n');
    for log in logs {
        let Some(report) = &log.metrics else { continue };
        for class in ClassId::ALL {
            let Some(bins) = report.classes.get(class.name()) else {
                continue;
            };
            let order: Vec<String> = if report.bin_order.is_empty() {
                bins.keys().cloned().collect()
            } else {
                report.bin_order.clone()
            };
            for bin in order {
                let m = bins.get(&bin).copied().unwrap_or_default();
                let _ = write!(out, "{},{},{}", log.round, class.name(), bin);
                for v in BinMetrics::values(&m) {
                    let _ = write!(out, ",{}", fmt_metric(v));
                }
                out.push('\n');
            }
        }
    }
    out
}
