use traverse_da::experiment::{source_statistics, train_source, ExperimentConfig};
use traverse_da::geometry::ClassId;
use traverse_da::selftrain::{evaluate_round, EvalSplit};
use traverse_da::synthgen::{generate, WorldSpec};

#[test]
fn source_model_detects_source_cars() {
    let config = ExperimentConfig::default();
    let [source, _, _, _] = config.worlds();
    let held_out = WorldSpec {
        name: "src-held-out".into(),
        locations: 4,
        seed: 99,
        ..source.clone()
    };
    let train = generate(&source, None)
        .unwrap()
        .into_dataset()
        .unwrap()
        .load_scenes()
        .unwrap();
    let test = generate(&held_out, None)
        .unwrap()
        .into_dataset()
        .unwrap()
        .load_scenes()
        .unwrap();
    assert_eq!(test.len(), 20);

    let stats = source_statistics(&train).unwrap();
    let mut detector = config.adaptation.detector.clone();
    detector.size_priors = stats.size_priors;
    let model = train_source(
        &train,
        &config.source_training,
        &config.adaptation.focal,
        &detector,
    )
    .unwrap();
    let split = EvalSplit::from_scenes(&test).unwrap();
    let report = evaluate_round(&model, &split, &detector, &config.eval).unwrap();
    let ap = report
        .get(ClassId::CAR, "0-80")
        .unwrap()
        .ap_bev_loose
        .unwrap();
    assert!(ap >= 0.6, "source AP_BEV@0.5 = {ap}");

    let again = split.detect(&model, &detector).unwrap();
    assert_eq!(again, split.detect(&model, &detector).unwrap());
}
