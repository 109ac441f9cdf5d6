use regunet::checkpoint::{from_document, to_document};
use regunet::{
    load_checkpoint, save_checkpoint, standardize, stratified_split, synthetic_dataset, train,
    DataRecord, Error, Matrix, Mode, Model, ModelConfig, RngState, SyntheticConfig, TrainConfig,
    Variant, CHECKPOINT_FORMAT,
};

fn trained(variant: Variant) -> (Model, DataRecord) {
    let raw = synthetic_dataset(&SyntheticConfig {
        n: 80,
        dim: 7,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
    .dataset;
    let split = stratified_split(&raw, 0.25, 3).unwrap();
    let ds = standardize(raw, &split).unwrap();
    let mut model =
        Model::build(ModelConfig::new(variant).with_dims(7, 10, 6).with_seed(9)).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        ..Default::default()
    };
    train(&mut model, &ds, &split, &cfg).unwrap();
    let record = DataRecord {
        feature_names: ds.feature_names().to_vec(),
        label_column: "label".into(),
        val_fraction: 0.25,
        split_seed: 3,
        standardization: ds.standardization().unwrap().clone(),
    };
    (model, record)
}

fn probe(rows: usize, cols: usize) -> Matrix {
    let mut rng = RngState::new(17);
    Matrix::new(
        rows,
        cols,
        (0..rows * cols).map(|_| 2.0 * rng.normal()).collect(),
    )
    .unwrap()
}

#[test]
fn round_trip_preserves_everything() {
    let dir = tempfile::tempdir().unwrap();
    for v in Variant::ALL {
        let (model, record) = trained(v);
        let path = dir.path().join(format!("{v}.json"));
        save_checkpoint(&model, Some(&record), &path).unwrap();
        let back = load_checkpoint(&path).unwrap();

        assert_eq!(back.model.mode(), Mode::Eval);
        assert_eq!(back.model.config(), model.config());
        assert_eq!(back.model.param_count(), model.param_count());
        assert_eq!(back.data.as_ref(), Some(&record));
        let x = probe(13, 7);
        let diff = back
            .model
            .predict(&x)
            .unwrap()
            .max_abs_diff(&model.predict(&x).unwrap())
            .unwrap();
        assert!(diff <= 1e-12, "{v}: {diff}");
        for (a, b) in back.model.branches().iter().zip(model.branches()) {
            for (na, nb) in a.batch_norms().iter().zip(b.batch_norms()) {
                assert_eq!(na.running_mean(), nb.running_mean());
                assert_eq!(na.running_var(), nb.running_var());
            }
        }
    }
}

#[test]
fn document_layout() {
    let (model, _) = trained(Variant::L1Reg);
    let doc = to_document(&model, None);
    assert_eq!(doc.format, CHECKPOINT_FORMAT);
    let text = serde_json::to_string(&doc).unwrap();
    let at: Vec<usize> = [
        "\"format\"",
        "\"model\"",
        "\"rng_seed\"",
        "\"layers\"",
        "\"data\"",
    ]
    .iter()
    .map(|k| text.find(k).unwrap())
    .collect();
    assert!(at.windows(2).all(|w| w[0] < w[1]), "{at:?}");
    let names: Vec<&str> = doc.layers.iter().map(|l| l.name.as_str()).collect();
    assert!(
        names.contains(&"branch0.dense1")
            && names.contains(&"branch0.bn4")
            && names.contains(&"head.output")
    );
}

#[test]
fn tampering_is_rejected() {
    let (model, record) = trained(Variant::Concat);
    let doc = to_document(&model, Some(&record));

    let mut bad = doc.clone();
    let dense = bad
        .layers
        .iter_mut()
        .find(|l| l.name == "branch1.dense2")
        .unwrap();
    dense.shape = [10, 11];
    match from_document(bad) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("shape inconsistency"), "{msg}"),
        other => panic!("expected a shape error, got {other:?}"),
    }

    let mut bad = doc.clone();
    bad.format = "regunet-ckpt-0".into();
    assert!(matches!(from_document(bad), Err(Error::Checkpoint(_))));

    let mut bad = doc.clone();
    bad.layers
        .iter_mut()
        .find(|l| l.name == "head.output")
        .unwrap()
        .weight
        .as_mut()
        .unwrap()
        .pop();
    assert!(from_document(bad).is_err());

    let mut bad = doc;
    bad.data.as_mut().unwrap().feature_names.pop();
    assert!(from_document(bad).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\"format\": ").unwrap();
    assert!(load_checkpoint(&path).is_err());
    assert!(load_checkpoint(&dir.path().join("absent.json")).is_err());
}
