use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use traverse_da::detector::{detect, load_model, save_model, DetectorConfig};
use traverse_da::eval::{class_pr_curve, EvalConfig, EvalScene, MetricReport};
use traverse_da::experiment::{source_statistics, train_source, SourceTraining};
use traverse_da::geometry::{ClassId, LabeledBox, Provenance, Scene};
use traverse_da::ingest::{read_boxes, read_json, write_boxes, write_json, Dataset};
use traverse_da::ppscore::{score_scene, PpConfig, StoreSet};
use traverse_da::refine::{refine_pseudo_labels, FilterConfig, FilterToggles, SceneEvidence};
use traverse_da::selftrain::{rounds_csv, run_adaptation, AdaptationConfig, EvalSplit};
use traverse_da::supervise::FocalConfig;
use traverse_da::synthgen::{generate, DomainShiftSpec, WorldSpec};
use traverse_da::Execution;

use crate::report;
use crate::{Cli, CliError, CliResult, Command};

/// Settings for `train-source`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub training: SourceTraining,
    pub focal: FocalConfig,
    pub detector: DetectorConfig,
}

/// Settings for `evaluate`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub eval: EvalConfig,
    pub detector: DetectorConfig,
}

/// Source-domain class frequencies, written next to a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub class_counts: BTreeMap<String, u64>,
    pub scene_count: u64,
}

impl SourceSummary {
    fn apply(&self, filter: &mut FilterConfig) -> CliResult<()> {
        for (name, &count) in &self.class_counts {
            filter.source_class_counts[ClassId::from_name(name)?.index()] = count;
        }
        filter.source_scene_count = self.scene_count;
        Ok(())
    }
}

pub fn stats_path(model: &Path) -> PathBuf {
    model.with_extension("stats.json")
}

fn load_config<T: DeserializeOwned + Default>(cli: &Cli) -> CliResult<T> {
    match &cli.config {
        Some(path) => Ok(read_json(path)?),
        None => Ok(T::default()),
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn scene_file(dir: &Path, scene_id: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{scene_id}{suffix}"))
}

fn labeled_scenes(root: &Path) -> CliResult<Vec<Scene>> {
    Ok(Dataset::open(root)?.load_scenes()?)
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Generate { out, shift } => generate_cmd(cli, out, shift.as_deref()),
        Command::IngestCheck { root } => ingest_check(root),
        Command::Ppscore { root, out } => ppscore(cli, root, out),
        Command::Detect { model, root, out } => detect_cmd(cli, model, root, out),
        Command::Refine {
            root,
            detections,
            tau,
            out,
            source_stats,
            no_fbf,
            no_pof,
        } => refine(
            cli,
            root,
            detections,
            tau,
            out,
            source_stats.as_deref(),
            FilterToggles {
                fbf: !no_fbf,
                pof: !no_pof,
            },
        ),
        Command::TrainSource { root, out } => train(cli, root, out),
        Command::Selftrain {
            source_model,
            target_root,
            eval_root,
            out_dir,
        } => selftrain(
            cli,
            source_model,
            target_root,
            eval_root.as_deref(),
            out_dir,
        ),
        Command::Evaluate {
            root,
            model,
            detections,
            out,
        } => evaluate(cli, root, model.as_deref(), detections.as_deref(), out),
        Command::Report {
            runs,
            metrics,
            column,
            out,
        } => report_cmd(runs, metrics, column, out),
    }
}

fn generate_cmd(cli: &Cli, out: &Path, shift: Option<&Path>) -> CliResult<()> {
    let mut world: WorldSpec = load_config(cli)?;
    if let Some(seed) = cli.seed {
        world.seed = seed;
    }
    let shift: Option<DomainShiftSpec> = shift.map(read_json).transpose()?;
    let data = generate(&world, shift.as_ref())?;
    data.write_to(out)?;
    println!(
        "wrote {} scenes at {} locations to {}",
        data.manifest.scenes.len(),
        data.manifest.locations.len(),
        out.display()
    );
    Ok(())
}

fn ingest_check(root: &Path) -> CliResult<()> {
    let ds = Dataset::open(root)?;
    let scenes = ds.load_scenes()?;
    let traversals: usize = ds
        .manifest
        .locations
        .iter()
        .map(|l| l.traversals.len())
        .sum();
    let labeled = scenes.iter().filter(|s| s.gt_boxes.is_some()).count();
    let points: usize = scenes.iter().map(|s| s.cloud.len()).sum();
    println!(
        "{}: {} locations, {} traversals, {} scenes ({} labeled), {} points",
        root.display(),
        ds.manifest.locations.len(),
        traversals,
        scenes.len(),
        labeled,
        points
    );
    match ds.manifest.require_multi_traversal() {
        Ok(()) => println!("persistence scoring: available"),
        Err(e) => println!("persistence scoring: unavailable ({e})"),
    }
    Ok(())
}

fn ppscore(cli: &Cli, root: &Path, out: &Path) -> CliResult<()> {
    let config: PpConfig = load_config(cli)?;
    config.validate()?;
    let ds = Dataset::open(root)?;
    ds.manifest.require_multi_traversal()?;
    let stores = StoreSet::build(&ds, &config)?;
    create_dir(out)?;
    let scenes = ds.load_scenes()?;
    for scene in &scenes {
        let field = score_scene(&scene.unlabeled(), &stores, &config)?;
        write_json(&scene_file(out, &scene.scene_id, ".tau.json"), &field.tau)?;
    }
    println!("scored {} scenes into {}", scenes.len(), out.display());
    Ok(())
}

fn detect_cmd(cli: &Cli, model: &Path, root: &Path, out: &Path) -> CliResult<()> {
    let mut config: DetectorConfig = load_config(cli)?;
    let (model, priors) = load_model(model)?;
    config.size_priors = priors;
    config.validate()?;
    let scenes = labeled_scenes(root)?;
    let boxes: Vec<Vec<LabeledBox>> = Execution::default()
        .map(&scenes, |s| detect(&model, &s.unlabeled(), &config))
        .into_iter()
        .collect::<traverse_da::Result<_>>()?;
    create_dir(out)?;
    for (scene, b) in scenes.iter().zip(&boxes) {
        write_boxes(&scene_file(out, &scene.scene_id, ".boxes.json"), b)?;
    }
    let total: usize = boxes.iter().map(Vec::len).sum();
    println!("{total} detections in {} scenes", scenes.len());
    Ok(())
}

fn refine(
    cli: &Cli,
    root: &Path,
    detections: &Path,
    tau: &Path,
    out: &Path,
    source_stats: Option<&Path>,
    toggles: FilterToggles,
) -> CliResult<()> {
    let mut config: FilterConfig = load_config(cli)?;
    if let Some(path) = source_stats {
        read_json::<SourceSummary>(path)?.apply(&mut config)?;
    }
    config.validate()?;
    let scenes = labeled_scenes(root)?;
    let mut worlds = Vec::with_capacity(scenes.len());
    let mut taus = Vec::with_capacity(scenes.len());
    let mut dets = Vec::with_capacity(scenes.len());
    for s in &scenes {
        let world = s.world_cloud()?;
        let t: Vec<f64> = read_json(&scene_file(tau, &s.scene_id, ".tau.json"))?;
        if t.len() != world.len() {
            return Err(CliError::Usage(format!(
                "scene {}: {} scores for {} points",
                s.scene_id,
                t.len(),
                world.len()
            )));
        }
        worlds.push(world);
        taus.push(t);
        dets.push(read_boxes(
            &scene_file(detections, &s.scene_id, ".boxes.json"),
            Provenance::Detection,
        )?);
    }
    let evidence: Vec<SceneEvidence> = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| SceneEvidence {
            scene_id: &s.scene_id,
            points: &worlds[i].points,
            tau: &taus[i],
            detections: &dets[i],
        })
        .collect();
    let (kept, report) = refine_pseudo_labels(&evidence, &config, toggles);
    create_dir(out)?;
    for (s, boxes) in scenes.iter().zip(&kept) {
        write_boxes(&scene_file(out, &s.scene_id, ".pseudo.json"), boxes)?;
    }
    write_json(&out.join("filter_report.json"), &report)?;
    for (class, summary) in &report.per_class {
        println!(
            "{class}: {} in, {} kept, {} removed by FB-F, {} by PO-F, {} empty",
            summary.input,
            summary.kept,
            summary.removed_fbf,
            summary.removed_pof,
            summary.removed_empty
        );
    }
    Ok(())
}

fn train(cli: &Cli, root: &Path, out: &Path) -> CliResult<()> {
    let mut config: TrainConfig = load_config(cli)?;
    let scenes = labeled_scenes(root)?;
    let stats = source_statistics(&scenes)?;
    config.detector.size_priors = stats.size_priors;
    let model = train_source(&scenes, &config.training, &config.focal, &config.detector)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_model(out, &model, stats.size_priors)?;
    let summary = SourceSummary {
        class_counts: ClassId::ALL
            .iter()
            .map(|c| (c.name().to_string(), stats.class_counts[c.index()]))
            .collect(),
        scene_count: stats.scene_count,
    };
    write_json(&stats_path(out), &summary)?;
    println!(
        "trained on {} scenes ({} boxes); model at {}",
        scenes.len(),
        stats.class_counts.iter().sum::<u64>(),
        out.display()
    );
    Ok(())
}

fn selftrain(
    cli: &Cli,
    source_model: &Path,
    target_root: &Path,
    eval_root: Option<&Path>,
    out_dir: &Path,
) -> CliResult<()> {
    let mut config: AdaptationConfig = load_config(cli)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let (model, priors) = load_model(source_model)?;
    config.detector.size_priors = priors;
    let stats = stats_path(source_model);
    if stats.is_file() {
        read_json::<SourceSummary>(&stats)?.apply(&mut config.filter)?;
    } else {
        log::warn!(
            "no {}; PO-F uses the configured source counts",
            stats.display()
        );
    }
    config.validate()?;

    let target = Dataset::open(target_root)?;
    target.manifest.require_multi_traversal()?;
    let unlabeled: Vec<_> = target.load_scenes()?.iter().map(Scene::unlabeled).collect();
    let stores = StoreSet::build(&target, &config.pp)?;
    let eval_split = eval_root
        .map(|root| EvalSplit::from_scenes(&labeled_scenes(root)?).map_err(CliError::from))
        .transpose()?;
    let eval_config = EvalConfig::default();
    let result = run_adaptation(
        &model,
        &unlabeled,
        &stores,
        &config,
        eval_split.as_ref().map(|s| (s, &eval_config)),
    )?;

    create_dir(out_dir)?;
    for (k, checkpoint) in result.checkpoints.iter().enumerate() {
        save_model(
            &out_dir.join(format!("round_{k}.model.json")),
            checkpoint,
            priors,
        )?;
    }
    write_text(&out_dir.join("rounds.csv"), &rounds_csv(&result.logs))?;
    write_json(&out_dir.join("rounds.json"), &result.logs)?;
    write_json(&out_dir.join("config.json"), &config)?;
    for log in &result.logs {
        let mut line = format!(
            "round {:2}: pseudo-labels {:?}",
            log.round, log.pseudo_labels
        );
        if let Some(loss) = log.mean_loss {
            let _ = write!(line, ", loss {loss:.5}");
        }
        if let Some(m) = log
            .metrics
            .as_ref()
            .and_then(|m| m.get(ClassId::CAR, "0-80"))
        {
            let ap = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{:.1}", 100.0 * x));
            let _ = write!(
                line,
                ", Car AP_BEV {}/{}",
                ap(m.ap_bev_primary),
                ap(m.ap_bev_loose)
            );
        }
        println!("{line}");
    }
    println!(
        "{} ({} rounds) -> {}",
        config.variant_label(),
        config.rounds,
        out_dir.display()
    );
    Ok(())
}

fn pr_csv(curve: &traverse_da::eval::PRCurve) -> String {
    let mut out = String::from("confidence,precision,recall\n");
    for i in 0..curve.confidence.len() {
        let _ = writeln!(
            out,
            "{:.6},{:.6},{:.6}",
            curve.confidence[i], curve.precision[i], curve.recall[i]
        );
    }
    out
}

fn evaluate(
    cli: &Cli,
    root: &Path,
    model: Option<&Path>,
    detections: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    let mut config: EvaluateConfig = load_config(cli)?;
    let split = EvalSplit::from_scenes(&labeled_scenes(root)?)?;
    let dets: Vec<Vec<LabeledBox>> = match (model, detections) {
        (Some(path), _) => {
            let (model, priors) = load_model(path)?;
            config.detector.size_priors = priors;
            config.detector.validate()?;
            split.detect(&model, &config.detector)?
        }
        (None, Some(dir)) => split
            .scenes
            .iter()
            .map(|s| {
                read_boxes(
                    &scene_file(dir, &s.scene_id, ".boxes.json"),
                    Provenance::Detection,
                )
            })
            .collect::<traverse_da::Result<_>>()?,
        (None, None) => {
            return Err(CliError::Usage(
                "either --model or --detections is required".into(),
            ))
        }
    };
    let report: MetricReport = split.score(&dets, &config.eval);
    create_dir(out)?;
    write_json(&out.join("metrics.json"), &report)?;
    let scenes: Vec<EvalScene> = split
        .scenes
        .iter()
        .zip(&dets)
        .map(|(s, d)| EvalScene {
            detections: d,
            ground_truth: &s.ground_truth,
            sensor_pose: &s.sensor_pose,
        })
        .collect();
    for class in ClassId::ALL {
        let curve = class_pr_curve(&scenes, class, &config.eval);
        write_text(
            &out.join(format!("pr_{}.csv", class.name())),
            &pr_csv(&curve),
        )?;
    }
    print!("{}", report::metrics_markdown(&report, &report.bin_order));
    Ok(())
}

fn report_cmd(runs: &[PathBuf], metrics: &[PathBuf], column: &str, out: &Path) -> CliResult<()> {
    let column_index = report::column_index(column).ok_or_else(|| {
        CliError::Usage(format!(
            "--column must be one of {}",
            traverse_da::eval::BinMetrics::COLUMNS.join(", ")
        ))
    })?;
    let mut inputs = Vec::with_capacity(runs.len());
    for dir in runs {
        let csv_path = dir.join("rounds.csv");
        let text = fs::read_to_string(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
        let rows = report::parse_rounds_csv(&text)
            .map_err(|m| CliError::Usage(format!("{}: {m}", csv_path.display())))?;
        let config_path = dir.join("config.json");
        let toggles = if config_path.is_file() {
            let c: AdaptationConfig = read_json(&config_path)?;
            Some([c.enable_pof, c.enable_fbf, c.enable_fbs])
        } else {
            None
        };
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        inputs.push(report::RunInput {
            name,
            toggles,
            rows,
        });
    }
    let mut extra = Vec::with_capacity(metrics.len());
    for path in metrics {
        if !path.is_file() {
            return Err(CliError::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
            ));
        }
        let m: MetricReport = read_json(path)?;
        extra.push((path.display().to_string(), m));
    }
    create_dir(out)?;
    let md = report::render(&inputs, &extra, column_index);
    write_text(&out.join("report.md"), &md)?;
    write_text(
        &out.join("rounds_plot.csv"),
        &report::plot_csv(&inputs, column_index),
    )?;
    print!("{md}");
    Ok(())
}
