use std::collections::BTreeMap;

use medvlm_curriculum::data::{caption_corpus, description_corpus, instruct_corpus};
use medvlm_curriculum::{
    default_stages, run_stage, train_curriculum, Dataset, StageConfig, StageName, TrainError, TrainOptions,
};
use medvlm_model::{Module, Vlm, VlmConfig};
use medvlm_nn::{LrSchedule, Tensor};
use proptest::prelude::*;

fn module_snapshot(model: &Vlm, m: Module) -> Vec<(String, Tensor)> {
    model
        .params()
        .module_paths(m)
        .into_iter()
        .map(|p| {
            let t = model.params().get(&p).unwrap().clone();
            (p, t)
        })
        .collect()
}

fn unchanged(before: &[(String, Tensor)], model: &Vlm) -> bool {
    before.iter().all(|(p, t)| model.params().get(p).unwrap().bitwise_eq(t))
}

#[test]
fn pretraining_leaves_lm_and_vision_bitwise_unchanged() {
    let mut model = Vlm::init(VlmConfig::default(), 0).unwrap();
    let lm = module_snapshot(&model, Module::Lm);
    let vision = module_snapshot(&model, Module::Vision);
    let projector = module_snapshot(&model, Module::Projector);
    let [s0, ..] = default_stages();
    let out = run_stage(&mut model, &s0, 0, &caption_corpus("pretrain", 50, 0), 0).unwrap();
    assert!(unchanged(&lm, &model));
    assert!(unchanged(&vision, &model));
    assert!(projector.iter().all(|(p, t)| !model.params().get(p).unwrap().bitwise_eq(t)));
    assert!(out.optimizers[&Module::Lm].is_pristine());
    assert!(out.optimizers[&Module::Vision].is_pristine());
    assert!(!out.optimizers[&Module::Projector].is_pristine());
}

#[test]
fn stage_rates_logged_at_warmup_end() {
    // batch 1 over 20 items: 20 steps, warmup round(0.03 * 20) = 1
    let data: [Dataset; 3] = [
        caption_corpus("pretrain", 20, 0),
        description_corpus("midtrain", 20, 0),
        instruct_corpus("instruct", 20, 0),
    ];
    let expected = [
        BTreeMap::from([(Module::Projector, 1e-3)]),
        BTreeMap::from([(Module::Projector, 2e-5), (Module::Lm, 2e-5)]),
        BTreeMap::from([(Module::Vision, 8e-5), (Module::Projector, 8e-5), (Module::Lm, 8e-5)]),
    ];
    let mut model = Vlm::init(VlmConfig::default(), 0).unwrap();
    for (i, (mut stage, ds)) in default_stages().into_iter().zip(&data).enumerate() {
        stage.batch_size = 1;
        let total = stage.total_steps(ds.len());
        let warmup = LrSchedule::new(1.0, total, stage.warmup_ratio).unwrap().warmup_steps();
        assert_eq!((total, warmup), (20, 1));
        let out = run_stage(&mut model, &stage, i, ds, 0).unwrap();
        let rec = out.log.steps.iter().find(|r| r.step == warmup).unwrap();
        assert_eq!(rec.lr, expected[i], "{}", stage.name);
        for (m, opt) in &out.optimizers {
            assert_eq!(opt.is_pristine(), !stage.trainable.contains(m));
        }
    }
}

#[test]
fn empty_stage_list_returns_model_unchanged() {
    let model = Vlm::init(VlmConfig::tiny(), 4).unwrap();
    let before = model.params().clone();
    let out = train_curriculum(model, &[], &BTreeMap::new(), &TrainOptions::default()).unwrap();
    assert!(out.model.params().bitwise_eq(&before));
    assert!(out.log.steps.is_empty() && out.checkpoints.is_empty());
}

#[test]
fn missing_dataset_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let model = Vlm::init(VlmConfig::tiny(), 0).unwrap();
    let datasets = BTreeMap::from([("pretrain".to_string(), caption_corpus("pretrain", 4, 0))]);
    let opts = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let err = train_curriculum(model, &default_stages(), &datasets, &opts).err().unwrap();
    assert!(matches!(err, TrainError::MissingDataset(ref id) if id == "midtrain"), "{err}");
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn nan_loss_aborts_with_diagnostic() {
    let mut model = Vlm::init(VlmConfig::tiny(), 0).unwrap();
    let path = "projector.fc2.bias";
    let shape = model.params().get(path).unwrap().shape().to_vec();
    let n = shape.iter().product();
    model.params_mut().set(path, Tensor::new(shape, vec![f64::NAN; n]).unwrap()).unwrap();
    let [s0, ..] = default_stages();
    let err = run_stage(&mut model, &s0, 0, &caption_corpus("pretrain", 8, 0), 0).err().unwrap();
    match err {
        TrainError::NonFinite { stage, step, items } => {
            assert_eq!(stage, "0/pretrain");
            assert_eq!(step, 1);
            assert_eq!(items.len(), 8);
        }
        other => panic!("{other}"),
    }
}

fn stage_with(trainable: &[Module]) -> StageConfig {
    let [s0, ..] = default_stages();
    StageConfig {
        name: StageName::Instruct,
        trainable: trainable.iter().copied().collect(),
        lr_map: trainable.iter().map(|m| (*m, 1e-2)).collect(),
        batch_size: 2,
        ..s0
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn frozen_modules_never_move(mask in 1u8..8, seed in 0u64..1000) {
        let trainable: Vec<Module> = Module::ALL
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, m)| *m)
            .collect();
        let stage = stage_with(&trainable);
        let mut model = Vlm::init(VlmConfig::tiny(), seed).unwrap();
        let frozen: Vec<_> = Module::ALL
            .iter()
            .filter(|m| !trainable.contains(m))
            .flat_map(|m| module_snapshot(&model, *m))
            .collect();
        let out = run_stage(&mut model, &stage, 0, &caption_corpus("c", 4, seed), seed).unwrap();
        prop_assert!(unchanged(&frozen, &model));
        for (m, opt) in &out.optimizers {
            prop_assert_eq!(opt.is_pristine(), !trainable.contains(m));
        }
    }
}
