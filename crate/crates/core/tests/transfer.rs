use crossmodal::experiment::{
    predict_checkpoint, train_source, train_target, ExperimentConfig, TargetData,
};
use crossmodal::flowdata::FlowMatrix;
use crossmodal::netcore::{read_checkpoint, write_checkpoint, BlockId, Checkpoint};
use crossmodal::synthgen::{generate_multimodal, SynthConfig};
use crossmodal::transfer::{plan_transfer, Strategy};
use crossmodal::Error;

fn setup() -> (ExperimentConfig, FlowMatrix, FlowMatrix) {
    let out = generate_multimodal(&SynthConfig {
        days: 7,
        source_stations: 5,
        target_stations: 7,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut config = ExperimentConfig {
        seq_len: 3,
        hidden_layers: vec![6, 6, 6],
        master_seed: Some(3),
        ..ExperimentConfig::default()
    };
    config.train.epochs = 3;
    (config, out.source, out.target)
}

#[test]
fn checkpoint_round_trip_reproduces_predictions() {
    let (config, source, target) = setup();
    let data = TargetData::prepare(&config, target).unwrap();
    let src = train_source(&config, &source, 1).unwrap();
    let (model, pred) =
        train_target(&config, Strategy::FT, &data, Some(&src.params), None, 2).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ft.ckpt");
    let hash = write_checkpoint(&model.checkpoint(), &path).unwrap();
    let loaded = read_checkpoint(&path).unwrap();
    assert_eq!(loaded, model.checkpoint());
    assert_eq!(loaded.hash().unwrap(), hash);
    assert_eq!(predict_checkpoint(&loaded, &data, None).unwrap(), pred);

    let mut bytes = std::fs::read(&path).unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    bytes[0] ^= 0xff;
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap_err().exit_code(), 3);
}

#[test]
fn split_brain_checkpoint_needs_the_source_flows() {
    let (config, source, target) = setup();
    let data = TargetData::prepare(&config, target).unwrap();
    let (model, pred) = train_target(&config, Strategy::SB, &data, None, Some(&source), 4).unwrap();
    assert_eq!(model.spec.input_dim, source.n_stations());
    assert_eq!(model.spec.output_dim, data.flow.n_stations());
    assert_eq!(
        predict_checkpoint(&model.checkpoint(), &data, Some(&source)).unwrap(),
        pred
    );
    assert!(predict_checkpoint(&model.checkpoint(), &data, None).is_err());
}

#[test]
fn ftf_keeps_transplanted_layers_and_retrains_the_rest() {
    let (config, source, target) = setup();
    let data = TargetData::prepare(&config, target).unwrap();
    let src = train_source(&config, &source, 1).unwrap();
    let (ftf, _) = train_target(&config, Strategy::FTF, &data, Some(&src.params), None, 5).unwrap();
    let (ft, _) = train_target(&config, Strategy::FT, &data, Some(&src.params), None, 5).unwrap();

    let frozen: Vec<BlockId> = ftf.plan.frozen.iter().copied().collect();
    assert_eq!(frozen.len(), 6, "W, U and b of layers 2 and 3");
    for id in &frozen {
        assert_eq!(ftf.params.block(*id), src.params.block(*id), "{id}");
        assert_ne!(
            ft.params.block(*id),
            src.params.block(*id),
            "{id} should move under FT"
        );
    }
    for id in [BlockId::OutputWeight, BlockId::OutputBias] {
        assert!(!ftf.plan.transferable.contains(&id));
    }
    assert!(ftf.trainable_params < ft.trainable_params);
    assert_eq!(ft.trainable_params, ft.params.n_params());
}

#[test]
fn mismatched_hidden_layers_cannot_transfer() {
    let (config, source, target) = setup();
    let src = train_source(&config, &source, 1).unwrap();
    let mut other = config.clone();
    other.hidden_layers = vec![6, 8, 6];
    let data = TargetData::prepare(&other, target).unwrap();
    let err = train_target(&other, Strategy::FT, &data, Some(&src.params), None, 2).unwrap_err();
    assert!(matches!(err, Error::IncompatibleArchitecture(_)), "{err}");
    assert_eq!(err.exit_code(), 2);

    let spec = src.spec.clone();
    assert!(plan_transfer(&spec, &spec, Strategy::SB).is_err());
    assert!(plan_transfer(&spec, &spec, Strategy::Base)
        .unwrap()
        .transferable
        .is_empty());
}

#[test]
fn transfer_without_a_source_model_is_a_config_error() {
    let (config, _, target) = setup();
    let data = TargetData::prepare(&config, target).unwrap();
    let err = train_target(&config, Strategy::FTF, &data, None, None, 2).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}
