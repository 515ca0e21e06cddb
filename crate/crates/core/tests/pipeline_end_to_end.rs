use mirepnet::data::{synth_dataset, DatasetManifest, SynthConfig};
use mirepnet::nn::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use mirepnet::pipeline::{
    harmonize_dataset, harmonize_downstream, load_harmonized, save_harmonized, unified_classes, HarmonizeConfig,
    ScreeningSpec,
};
use mirepnet::spatial::{mean_covariance, TemplateSpec};
use mirepnet::train::{
    evaluate, finetune, prepare_downstream, pretrain, ablation_suite, Ablation, Corpus, TrainConfig, SPLIT_REPORT,
};
use ndarray::Array2;
use proptest::prelude::*;

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        epochs_pretrain: 2,
        epochs_finetune: 2,
        report_epoch: 2,
        seeds: vec![0],
        ..TrainConfig::desk()
    }
}

fn raw(dir: &std::path::Path, name: &str, seed: u64, channels: Option<&[&str]>) -> DatasetManifest {
    let mut cfg = SynthConfig {
        name: name.into(),
        n_subjects: 2,
        trials_per_class: 15,
        fs: 512.0,
        duration: 2.0,
        seed,
        subject_prefix: name[..1].to_uppercase(),
        ..Default::default()
    };
    if let Some(c) = channels {
        cfg.channels = c.iter().map(|s| s.to_string()).collect();
    }
    synth_dataset(&cfg, &dir.join(name)).unwrap()
}

fn corpus(dir: &std::path::Path) -> Corpus {
    // a 32-channel headset with legacy temporal names, plus the template headset
    let wide: Vec<&str> = vec![
        "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FC5", "FC1", "FC2", "FC6", "T3", "C3", "Cz", "C4", "T4", "CP5",
        "CP1", "CP2", "CP6", "T5", "P3", "Pz", "P4", "T6", "PO3", "PO4", "O1", "Oz", "O2", "FC3", "FC4",
    ];
    let a = raw(dir, "alpha", 1, Some(&wide));
    let b = raw(dir, "down", 2, None);
    let classes = unified_classes([&a.label_vocab, &b.label_vocab]).unwrap();
    let cfg = HarmonizeConfig {
        screening: ScreeningSpec { enabled: false, ..Default::default() },
        ..Default::default()
    };
    let t = TemplateSpec::default();
    Corpus {
        pretrain: vec![harmonize_dataset(&a, &cfg, &t, &classes).unwrap()],
        downstream: vec![harmonize_downstream(&b, &cfg, &t, &classes).unwrap()],
    }
}

#[test]
fn heterogeneous_headsets_land_in_white_template_space() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    for s in &c.pretrain[0].subjects {
        assert!(s.trials.iter().all(|t| t.n_channels() == 23 && t.fs == 250.0 && t.n_samples() == 500));
        let cov = mean_covariance(&s.trials).unwrap();
        let dev = (cov - Array2::<f64>::eye(23)).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(dev < 1e-6, "{dev}");
    }
    // downstream stays unaligned until a calibration slice is chosen
    assert!(c.downstream[0].subjects.iter().all(|s| s.references.is_empty()));
    let split = prepare_downstream(&c.downstream[0].subjects[0], 0.3).unwrap();
    assert_eq!((split.calibration.len(), split.test.len()), (9, 21));
    let cov = mean_covariance(&split.calibration).unwrap();
    assert!((cov - Array2::<f64>::eye(23)).iter().all(|v| v.abs() < 1e-6));
}

#[test]
fn pretrain_checkpoint_finetune_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let cfg = tiny_cfg();
    let (model, report) = pretrain(&c.pretrain, &cfg, 0).unwrap();
    assert_eq!(report.epochs.len(), 2);
    assert!(report.epochs.iter().all(|e| e.rec.is_some() && e.total.is_finite()));

    let path = dir.path().join("m.mirm");
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.config, model.config);
    // f32 storage: re-encoding the loaded model is a fixed point
    assert_eq!(encode_checkpoint(&loaded).unwrap(), std::fs::read(&path).unwrap());

    let split = prepare_downstream(&c.downstream[0].subjects[1], cfg.finetune_fraction).unwrap();
    let a = evaluate(&model, &split.test).unwrap();
    let b = evaluate(&loaded, &split.test).unwrap();
    assert!((a - b).abs() <= 100.0 / split.test.len() as f64, "{a} vs {b}");

    let classes = &c.downstream[0].classes;
    let one = finetune(loaded.clone(), &split.calibration, &split.test, classes, &cfg, 4).unwrap();
    let two = finetune(loaded, &split.calibration, &split.test, classes, &cfg, 4).unwrap();
    assert_eq!(one.epochs, two.epochs);
    assert_eq!(encode_checkpoint(&one.model).unwrap(), encode_checkpoint(&two.model).unwrap());
}

#[test]
fn ablation_grid_shares_splits_across_variants() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let report = ablation_suite(&c, &tiny_cfg(), None).unwrap();
    // 3 variants x 1 seed x 2 subjects x 2 splits
    assert_eq!(report.rows.len(), 12);
    for subject in ["D01", "D02"] {
        let hashes: Vec<&str> = report.splits.iter().filter(|s| s.subject == subject).map(|s| s.hash.as_str()).collect();
        assert_eq!(hashes.len(), 3);
        assert!(hashes.windows(2).all(|w| w[0] == w[1]));
    }
    for v in Ablation::ALL {
        assert!(report.overall_mean(v, 0.5, SPLIT_REPORT).is_some());
    }
    // no_pretrain skips pretraining epochs entirely
    let np = report.pretrain_curves.iter().find(|c| c.ablation == Ablation::NoPretrain).unwrap();
    assert!(np.epochs.is_empty());
    let nss = report.pretrain_curves.iter().find(|c| c.ablation == Ablation::NoSelfsup).unwrap();
    assert!(nss.epochs.iter().all(|e| e.rec.is_none()));
}

#[test]
fn harmonized_directories_reload() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let out = dir.path().join("saved");
    save_harmonized(&c.pretrain[0], &out).unwrap();
    let back = load_harmonized(&out).unwrap();
    assert_eq!(back.retained(), c.pretrain[0].retained());
    assert_eq!(back.classes, c.pretrain[0].classes);
    assert_eq!(back.n_trials(), c.pretrain[0].n_trials());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_bytes_survive_decode_encode(seed in 0u64..1000, flip in 0usize..4096) {
        let model = mirepnet::nn::ModelState::new(
            mirepnet::train::model_config(&TrainConfig::desk(), 23, 500, vec!["left_hand".into(), "right_hand".into()]),
            seed,
        )
        .unwrap();
        let bytes = encode_checkpoint(&model).unwrap();
        let again = encode_checkpoint(&decode_checkpoint(&bytes).unwrap()).unwrap();
        prop_assert_eq!(&again, &bytes);
        // any single corrupted byte is caught by the checksum or the parser
        let mut bad = bytes.clone();
        let i = flip % bad.len();
        bad[i] ^= 0x5a;
        prop_assert!(decode_checkpoint(&bad).is_err());
    }
}
