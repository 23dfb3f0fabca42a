use std::time::Instant;

use molfuse::dataset::{build_records, prepare, read_dataset, write_dataset, TextInput};
use molfuse::model::Modality;
use molfuse::params::ModelConfig;
use molfuse::pubchem::{build_multimodal_manifest, DiskCache};
use molfuse::qm9::TargetId;
use molfuse::synth::{offline_client, synth_corpus, SynthConfig};
use molfuse::training::{train, TrainConfig};

#[test]
fn synthetic_corpus_trains_end_to_end() {
    let cfg = SynthConfig {
        n_molecules: 300,
        ..SynthConfig::default()
    };
    let molecules = synth_corpus(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let client = offline_client(&molecules, &cfg, DiskCache::open(dir.path()).unwrap());
    let manifest = build_multimodal_manifest(&molecules, &client);
    assert!(!manifest.has_transient());
    assert!(manifest.included.len() > 250, "{}", manifest.included.len());

    let mut buf = Vec::new();
    write_dataset(&build_records(&molecules, &manifest), &mut buf).unwrap();
    let entries = read_dataset(std::str::from_utf8(&buf).unwrap()).unwrap();
    let model_cfg = ModelConfig::tiny();
    let prepared = prepare(&entries, &model_cfg.rbf, TextInput::Featurizer).unwrap();

    for modality in Modality::BOTH {
        let t0 = Instant::now();
        let out = train(
            &TrainConfig {
                epochs: 5,
                batch_size: 32,
                learning_rate: 3e-3,
                target: TargetId::Homo,
                modality,
                ..TrainConfig::default()
            },
            &model_cfg,
            &prepared.samples,
        )
        .unwrap();
        eprintln!("{modality}: mae {} in {:?}", out.mean_mae, t0.elapsed());
        assert!(out.mean_mae.is_finite());
    }
}
