use super::*;
use crate::corpus::{generate_synthetic_corpus, GeneratorSpec};
use crate::model::EventInput;
use crate::visualtext::Stretch;
use proptest::prelude::*;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        cell_h: 8,
        cell_w: 8,
        conv_channels: 2,
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        ffn_hidden: 8,
        dur_hidden: 8,
        n_mels: 6,
        ..ModelConfig::default()
    }
}

fn tiny_dsp() -> DspConfig {
    DspConfig {
        frame_length: 256,
        hop: 128,
        n_mels: 6,
        griffin_lim_iters: 4,
        ..DspConfig::new(8000)
    }
}

fn corpus(per_class: usize) -> (tempfile::TempDir, CorpusManifest) {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_synthetic_corpus(&GeneratorSpec::desk(per_class), 11, dir.path()).unwrap();
    (dir, m)
}

fn items(m: &CorpusManifest, model: &ModelConfig, cfg: &TrainConfig) -> Vec<TrainingItem> {
    let mut model = model.clone();
    model.n_labels = m.labels().len();
    prepare_dataset(m, &model, &tiny_dsp(), cfg, &m.labels()).unwrap()
}

#[test]
fn masked_loss_matches_hand_computation() {
    let pred = Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 100.0, 100.0]);
    let target = Tensor::from_vec(3, 2, vec![0.0, 2.0, 1.0, 4.0, 0.0, 0.0]);
    let mask = [true, true, false];
    let l = compute_loss(&pred, &target, &[0.5, 1.0, 9.0], &[0.0, 0.0, 0.0], Some(&mask), Some(&mask)).unwrap();
    assert_eq!(l.mel_mse, (1.0 + 0.0 + 4.0 + 0.0) / 4.0);
    assert_eq!(l.duration_mse, (0.25 + 1.0) / 2.0);
    assert_eq!(l.total, 1.25 + 0.625);
    let all = compute_loss(&pred, &target, &[1.0], &[1.0], None, None).unwrap();
    assert_eq!(all.mel_mse, (1.0 + 4.0 + 2.0 * 10000.0) / 6.0);
    assert!(compute_loss(&pred, &Tensor::zeros(2, 2), &[], &[], None, None).is_err());
}

#[test]
fn preparation_produces_consistent_items() {
    let (_d, m) = corpus(1);
    for stretch in [StretchMode::None, StretchMode::Duration] {
        let cfg = TrainConfig { stretch, ..TrainConfig::default() };
        for it in items(&m, &tiny_model(), &cfg) {
            assert_eq!(it.durations.len(), it.tokens.len(), "{}", it.id);
            assert_eq!(it.durations.iter().sum::<usize>(), it.target_mel.rows());
            assert_eq!(it.target_mel.cols(), 6);
        }
    }
    let cfg = TrainConfig {
        event_source: EventSource::ToyImageEmbedder,
        ..TrainConfig::default()
    };
    let it = &items(&m, &tiny_model(), &cfg)[0];
    assert!(matches!(&it.event, EventInput::Feature(v) if v.len() == 256));
}

#[test]
fn missing_alignment_is_a_data_error_naming_the_record() {
    let (_d, mut m) = corpus(1);
    m.records[2].alignment_path = None;
    let id = m.records[2].id.clone();
    let cfg = TrainConfig::default();
    let mut model = tiny_model();
    model.n_labels = 4;
    match prepare_dataset(&m, &model, &tiny_dsp(), &cfg, &m.labels()) {
        Err(TrainError::Data(msg)) => assert!(msg.contains(&id), "{msg}"),
        other => panic!("expected a data error, got {other:?}"),
    }
}

#[test]
fn batch_loss_is_the_padded_masked_mean() {
    let (_d, m) = corpus(1);
    let cfg = TrainConfig::default();
    let mut model = tiny_model();
    model.n_labels = 4;
    let all = items(&m, &model, &cfg);
    let (a, b) = (&all[0], &all[1]);
    let params = ModelParams::init(&model, 2).unwrap();
    let (loss, _) = batch_gradients(&params, &model, &[a, b]).unwrap();

    // Oracle: pad both predictions to a common length and mask.
    let ia = crate::model::infer(&params, &model, &a.tokens, &a.event, Some(&a.durations)).unwrap();
    let ib = crate::model::infer(&params, &model, &b.tokens, &b.event, Some(&b.durations)).unwrap();
    let t_max = a.target_mel.rows().max(b.target_mel.rows());
    let n_max = a.tokens.len().max(b.tokens.len());
    let mut pred = Tensor::zeros(2 * t_max, 6);
    let mut target = Tensor::zeros(2 * t_max, 6);
    let mut fmask = vec![false; 2 * t_max];
    let (mut pd, mut td, mut tmask) = (vec![0.0; 2 * n_max], vec![0.0; 2 * n_max], vec![false; 2 * n_max]);
    for (k, (it, inf)) in [(a, &ia), (b, &ib)].into_iter().enumerate() {
        for t in 0..it.target_mel.rows() {
            pred.row_mut(k * t_max + t).copy_from_slice(inf.mel.row(t));
            target.row_mut(k * t_max + t).copy_from_slice(it.target_mel.row(t));
            fmask[k * t_max + t] = true;
        }
        let logd = log_duration_targets(&it.durations);
        for i in 0..it.tokens.len() {
            pd[k * n_max + i] = inf.log_durations[i];
            td[k * n_max + i] = logd[i];
            tmask[k * n_max + i] = true;
        }
    }
    let oracle = compute_loss(&pred, &target, &pd, &td, Some(&fmask), Some(&tmask)).unwrap();
    assert!((loss.mel_mse - oracle.mel_mse).abs() < 1e-5 * oracle.mel_mse.max(1.0));
    assert!((loss.duration_mse - oracle.duration_mse).abs() < 1e-5 * oracle.duration_mse.max(1.0));

    // Batched inference equals independent forwards.
    let again = crate::model::infer(&params, &model, &a.tokens, &a.event, Some(&a.durations)).unwrap();
    assert_eq!(again, ia);
}

#[test]
fn zero_learning_rate_leaves_parameters_bitwise_unchanged() {
    let model = tiny_model();
    let mut p = ModelParams::init(&model, 1).unwrap();
    let before = p.clone();
    let grads: Vec<Tensor<f32>> = p.tensors().iter().map(|t| t.map(|v| v + 0.3)).collect();
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: 0.0,
            ..TrainConfig::default().adam()
        },
        &p,
    );
    adam.step(&mut p, &grads);
    adam.step(&mut p, &grads);
    assert_eq!(p, before);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let model = tiny_model();
    let mut p = ModelParams::init(&model, 1).unwrap();
    let before = p.get("mel.b").unwrap().clone();
    let grads: Vec<Tensor<f32>> = p.tensors().iter().map(|t| Tensor::filled(t.rows(), t.cols(), -2.0)).collect();
    let mut adam = Adam::new(TrainConfig::default().adam(), &p);
    adam.step(&mut p, &grads);
    for (a, b) in p.get("mel.b").unwrap().data().iter().zip(before.data()) {
        assert!((a - b - 0.001).abs() < 1e-7);
    }
}

proptest! {
    #[test]
    fn clipped_norm_never_exceeds_the_limit(
        values in proptest::collection::vec(-1e3f32..1e3, 1..64),
        split in 0usize..64,
        limit in 1e-3f64..10.0,
    ) {
        let k = split.min(values.len());
        let mut grads = vec![
            Tensor::from_vec(1, k, values[..k].to_vec()),
            Tensor::from_vec(1, values.len() - k, values[k..].to_vec()),
        ];
        let before = global_norm(&grads);
        let reported = clip_gradients(&mut grads, limit);
        prop_assert_eq!(reported, before);
        prop_assert!(global_norm(&grads) <= limit + 1e-9);
        if before <= limit {
            prop_assert_eq!(global_norm(&grads), before);
        }
    }

    #[test]
    fn holdout_split_keeps_variants_together(n in 1usize..20, frac in 0.0f64..0.9, seed in 0u64..100) {
        let mk = |id: String| TrainingItem {
            id,
            label: "x".into(),
            tokens: vec![],
            durations: vec![],
            target_mel: Tensor::zeros(0, 0),
            event: EventInput::Null,
        };
        let mut all = Vec::new();
        for i in 0..n {
            all.push(mk(format!("r{i}")));
            all.push(mk(format!("r{i}#w2")));
        }
        let (tr, va) = split_holdout(all, frac, seed);
        prop_assert_eq!(tr.len() + va.len(), 2 * n);
        prop_assert!(!tr.is_empty());
        for v in &va {
            let base = v.id.split('#').next().unwrap();
            prop_assert!(tr.iter().all(|t| t.id.split('#').next().unwrap() != base));
        }
    }
}

#[test]
fn gradients_match_central_differences() {
    let (_d, m) = corpus(1);
    let mut model = tiny_model();
    model.n_labels = 4;
    let all = items(&m, &model, &TrainConfig::default());
    let item = all.iter().min_by_key(|i| i.target_mel.rows()).unwrap();
    let params = ModelParams::init(&model, 5).unwrap();
    let report = gradient_check(&params, &model, item, 100, 1e-4, 3).unwrap();
    assert_eq!(report.checked, 100);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn single_record_is_memorised() {
    let (_d, m) = corpus(1);
    let one = CorpusManifest::from_records(
        vec![m.records[0].clone()],
        [(m.records[0].id.clone(), m.duration_sec(&m.records[0].id).unwrap())].into_iter().collect(),
        m.sample_rate,
        m.root.clone(),
    )
    .unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 1,
        learning_rate: 0.005,
        val_fraction: 0.0,
        ..TrainConfig::default()
    };
    let out = train(&one, &tiny_model(), &tiny_dsp(), &cfg, &TrainOutputs::default()).unwrap();
    assert_eq!(out.metrics.len(), 201);
    let first = out.metrics[0].train.mel_mse;
    let last = out.metrics[200].train.mel_mse;
    assert!(last < 0.1 * first, "mel mse {first} -> {last}");
}

#[test]
fn training_is_deterministic_and_writes_artifacts() {
    let (_d, m) = corpus(1);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 2,
        val_fraction: 0.25,
        ..TrainConfig::default()
    };
    let out_dir = tempfile::tempdir().unwrap();
    let outputs = TrainOutputs {
        dir: Some(out_dir.path().to_path_buf()),
    };
    let a = train(&m, &tiny_model(), &tiny_dsp(), &cfg, &outputs).unwrap();
    let b = train(&m, &tiny_model(), &tiny_dsp(), &cfg, &TrainOutputs::default()).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.metrics, b.metrics);
    let csv = std::fs::read_to_string(out_dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,"));
    let last = Checkpoint::load(&out_dir.path().join("last.ckpt")).unwrap();
    assert_eq!(last, a.checkpoint);
    assert_eq!(last.header.epoch, 2);
    assert_eq!(last.header.labels, m.filter_by_confidence(cfg.min_confidence).labels());

    let s = synthesize(&a.checkpoint, "kaan", Stretch::None, &EventChoice::Label("bell".into()), true).unwrap();
    assert_eq!(s.durations.len(), 4);
    assert_eq!(s.mel.n_frames(), s.durations.iter().sum::<usize>());
    assert!(s.wave.unwrap().samples.iter().all(|v| v.is_finite()));
    assert!(synthesize(&a.checkpoint, "kaan", Stretch::None, &EventChoice::Label("cat".into()), false).is_err());
}
