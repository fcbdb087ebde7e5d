use ers_core::data::{generate, mine_neighbors, GenerateParams, HierarchicalDataset};
use ers_core::eval::{confusion_matrix, PredictionSet};
use ers_core::pipeline::{
    cluster_probs, prepare_pretext, recompute_terms, train_ensemble, train_pretext, train_scan,
    train_selflabel, Checkpoint, CheckpointError, EnsembleSpec, PipelineConfig, PipelineError,
    Stage,
};
use ers_core::LambdaVector;

fn dataset() -> HierarchicalDataset {
    generate(&GenerateParams::default()).unwrap()
}

fn config(ds: &HierarchicalDataset) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(ds.dim(), ds.n_super(), 2.5);
    cfg.selflabel = None;
    cfg
}

fn small(ds: &HierarchicalDataset) -> PipelineConfig {
    let mut cfg = config(ds);
    cfg.pretext.epochs = 2;
    cfg.scan.epochs = 3;
    cfg.scan.log_every = 1;
    cfg
}

fn accuracy(ckpt: &Checkpoint, ds: &HierarchicalDataset) -> f64 {
    let probs = cluster_probs(ckpt, ds).unwrap();
    PredictionSet::new(probs, "m")
        .unwrap()
        .mapped(ds.super_labels(), ds.n_super())
        .unwrap()
        .accuracy(ds.super_labels())
        .unwrap()
}

#[test]
fn pretext_descends_without_regularizer() {
    let ds = dataset();
    let cfg = config(&ds);
    let run = train_pretext(
        &cfg.stage_config(Stage::Pretext, LambdaVector::new(0.0, 0.0, 0.0, 0.0)),
        &ds,
    )
    .unwrap();
    let first = run.metrics.first().unwrap().loss;
    let last = run.metrics.last().unwrap().loss;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn zero_epochs_rejected() {
    let ds = dataset();
    let mut cfg = config(&ds);
    cfg.pretext.epochs = 0;
    let err = train_pretext(
        &cfg.stage_config(Stage::Pretext, LambdaVector::baseline()),
        &ds,
    )
    .unwrap_err();
    assert!(matches!(err, PipelineError::Config(_)));
}

#[test]
fn stages_are_deterministic() {
    let ds = dataset();
    let cfg = small(&ds);
    let a = prepare_pretext(&cfg, LambdaVector::baseline(), &ds).unwrap();
    let b = prepare_pretext(&cfg, LambdaVector::baseline(), &ds).unwrap();
    assert_eq!(a.0.checkpoint.to_bytes(), b.0.checkpoint.to_bytes());
    let scan_cfg = cfg.stage_config(Stage::Scan, LambdaVector::baseline());
    let sa = train_scan(&scan_cfg, &ds, &a.1, &a.0.checkpoint).unwrap();
    let sb = train_scan(&scan_cfg, &ds, &b.1, &b.0.checkpoint).unwrap();
    assert_eq!(sa.checkpoint.to_bytes(), sb.checkpoint.to_bytes());
}

#[test]
fn stage_order_enforced() {
    let ds = dataset();
    let cfg = small(&ds);
    let (pre, nb) = prepare_pretext(&cfg, LambdaVector::baseline(), &ds).unwrap();
    let scan = train_scan(
        &cfg.stage_config(Stage::Scan, LambdaVector::baseline()),
        &ds,
        &nb,
        &pre.checkpoint,
    )
    .unwrap();
    let err = train_scan(
        &cfg.stage_config(Stage::Scan, LambdaVector::baseline()),
        &ds,
        &nb,
        &scan.checkpoint,
    )
    .unwrap_err();
    assert!(matches!(err, PipelineError::StageOrder { .. }));
    let err = train_selflabel(
        &cfg.stage_config(Stage::Selflabel, LambdaVector::baseline()),
        &ds,
        &pre.checkpoint,
        0.9,
    )
    .unwrap_err();
    assert!(matches!(err, PipelineError::StageOrder { .. }));
}

#[test]
fn other_dataset_rejected() {
    let ds = dataset();
    let other = generate(&GenerateParams {
        seed: 8,
        ..GenerateParams::default()
    })
    .unwrap();
    let cfg = small(&ds);
    let (pre, nb) = prepare_pretext(&cfg, LambdaVector::baseline(), &ds).unwrap();
    let err = train_scan(
        &cfg.stage_config(Stage::Scan, LambdaVector::baseline()),
        &other,
        &nb,
        &pre.checkpoint,
    )
    .unwrap_err();
    assert!(matches!(err, PipelineError::DatasetMismatch));
}

#[test]
fn checkpoint_file_contract() {
    let ds = dataset();
    let cfg = small(&ds);
    let lambda = LambdaVector::new(2.0, 5.0, 4.0, 8.0);
    let (pre, nb) = prepare_pretext(&cfg, lambda, &ds).unwrap();
    let scan = train_scan(
        &cfg.stage_config(Stage::Scan, lambda),
        &ds,
        &nb,
        &pre.checkpoint,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.ckpt");
    scan.checkpoint.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), scan.checkpoint);

    let bytes = scan.checkpoint.to_bytes();
    let truncated = &bytes[..bytes.len() / 2];
    assert!(matches!(
        Checkpoint::from_bytes(truncated),
        Err(CheckpointError::Corrupt(_))
    ));

    let mut bumped = bytes.clone();
    let at = b"ERSCKPT".len();
    bumped[at] = bumped[at].wrapping_add(1);
    assert!(matches!(
        Checkpoint::from_bytes(&bumped),
        Err(CheckpointError::VersionMismatch { .. })
    ));
}

#[test]
fn logged_terms_recompute() {
    let ds = dataset();
    let cfg = small(&ds);
    let lambda = LambdaVector::new(2.0, 5.0, 4.0, 16.0);
    let (pre, nb) = prepare_pretext(&cfg, lambda, &ds).unwrap();
    let scan = train_scan(
        &cfg.stage_config(Stage::Scan, lambda),
        &ds,
        &nb,
        &pre.checkpoint,
    )
    .unwrap();
    let logged = scan.checkpoint.records.last().unwrap().terms;
    let again = recompute_terms(&scan.checkpoint, &ds, &nb).unwrap();
    for (a, b) in [
        (logged.consistency, again.consistency),
        (logged.mean_entropy, again.mean_entropy),
        (logged.pointwise_cross, again.pointwise_cross),
        (logged.mean_cross, again.mean_cross),
        (logged.total, again.total),
    ] {
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
    assert_eq!(scan.checkpoint.records.len(), cfg.scan.epochs);
}

#[test]
fn missing_entropy_weight_warns() {
    let ds = dataset();
    let cfg = small(&ds);
    let lambda = LambdaVector::new(0.0, 0.0, 0.0, 0.0);
    let (pre, nb) = prepare_pretext(&cfg, lambda, &ds).unwrap();
    let scan = train_scan(
        &cfg.stage_config(Stage::Scan, lambda),
        &ds,
        &nb,
        &pre.checkpoint,
    )
    .unwrap();
    assert!(!scan.warnings.is_empty());
}

#[test]
fn baseline_clusters_superclasses() {
    let ds = dataset();
    let cfg = config(&ds);
    let (pre, nb) = prepare_pretext(&cfg, LambdaVector::baseline(), &ds).unwrap();
    let scan = train_scan(
        &cfg.stage_config(Stage::Scan, LambdaVector::baseline()),
        &ds,
        &nb,
        &pre.checkpoint,
    )
    .unwrap();
    let acc = accuracy(&scan.checkpoint, &ds);
    assert!(acc > 0.8, "accuracy {acc}");

    let sl_cfg = cfg.stage_config(Stage::Selflabel, LambdaVector::baseline());
    let sl = train_selflabel(&sl_cfg, &ds, &scan.checkpoint, 0.9).unwrap();
    let after = accuracy(&sl.checkpoint, &ds);
    assert!(after >= acc - 0.05, "{acc} -> {after}");
    let again = train_selflabel(&sl_cfg, &ds, &scan.checkpoint, 0.9).unwrap();
    assert_eq!(sl.checkpoint.to_bytes(), again.checkpoint.to_bytes());
}

#[test]
fn selflabel_without_confident_samples_is_a_no_op() {
    let ds = dataset();
    let mut cfg = small(&ds);
    cfg.scan.epochs = 1;
    cfg.scan.learning_rate = 1e-6;
    let (pre, nb) = prepare_pretext(&cfg, LambdaVector::baseline(), &ds).unwrap();
    let scan = train_scan(
        &cfg.stage_config(Stage::Scan, LambdaVector::baseline()),
        &ds,
        &nb,
        &pre.checkpoint,
    )
    .unwrap();
    let sl = train_selflabel(
        &cfg.stage_config(Stage::Selflabel, LambdaVector::baseline()),
        &ds,
        &scan.checkpoint,
        0.99,
    )
    .unwrap();
    assert_eq!(sl.checkpoint, scan.checkpoint);
    assert!(!sl.warnings.is_empty());
}

#[test]
fn series_members_differ() {
    let ds = dataset();
    let cfg = config(&ds);
    let base = LambdaVector::new(2.0, 5.0, 4.0, 0.0);
    let spec = EnsembleSpec {
        members: vec![base.with_lambda3(4.0), base.with_lambda3(32.0)],
        pipeline: cfg,
    };
    let run = train_ensemble(&spec, &ds).unwrap();
    let cms: Vec<_> = run
        .succeeded()
        .map(|(_, m)| {
            let set = PredictionSet::new(cluster_probs(m.final_checkpoint(), &ds).unwrap(), "m")
                .unwrap()
                .mapped(ds.super_labels(), ds.n_super())
                .unwrap();
            confusion_matrix(&set, ds.super_labels()).unwrap()
        })
        .collect();
    assert_eq!(cms.len(), 2);
    assert_ne!(cms[0], cms[1]);
}

#[test]
fn ensemble_shapes_and_identical_members() {
    let ds = dataset();
    let cfg = small(&ds);
    let base = LambdaVector::new(2.0, 5.0, 4.0, 0.0);
    let spec = EnsembleSpec {
        members: "geometric base=4 ratio=2 count=4"
            .parse::<ers_core::SeriesSpec>()
            .unwrap()
            .expand(base),
        pipeline: cfg.clone(),
    };
    let run = train_ensemble(&spec, &ds).unwrap();
    assert_eq!(run.succeeded().count(), 4);
    let lambdas: Vec<f64> = run.succeeded().map(|(_, m)| m.lambda.lambda3).collect();
    assert_eq!(lambdas, vec![4.0, 8.0, 16.0, 32.0]);

    let twins = EnsembleSpec {
        members: vec![base.with_lambda3(4.0); 2],
        pipeline: cfg.clone(),
    };
    let run = train_ensemble(&twins, &ds).unwrap();
    let m: Vec<_> = run
        .succeeded()
        .map(|(_, m)| m.final_checkpoint().to_bytes())
        .collect();
    assert_eq!(m[0], m[1]);

    let single = EnsembleSpec {
        members: vec![base.with_lambda3(4.0)],
        pipeline: cfg.clone(),
    };
    let run = train_ensemble(&single, &ds).unwrap();
    let member = run.members.into_iter().next().unwrap().unwrap();
    let (pre, nb) = prepare_pretext(&cfg, base.with_lambda3(4.0), &ds).unwrap();
    let scan = train_scan(
        &cfg.stage_config(Stage::Scan, base.with_lambda3(4.0)),
        &ds,
        &nb,
        &pre.checkpoint,
    )
    .unwrap();
    assert_eq!(member.scan.to_bytes(), scan.checkpoint.to_bytes());
    assert_eq!(
        mine_neighbors(
            &ers_core::pipeline::embed_dataset(&pre.checkpoint.encoder, &ds).unwrap(),
            5
        )
        .unwrap(),
        nb
    );
}
