use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use onoma_bench::{desk_corpus, test_tone};
use onoma_core::dsp::{griffin_lim, mel_spectrogram, DspConfig};
use onoma_core::model::{infer, EventInput, ModelConfig, ModelParams};
use onoma_core::train::{batch_gradients, prepare_dataset, TrainConfig};
use onoma_core::visualtext::{render_visual_text, slice_into_tokens, stretch_by_ratio, ProceduralGlyphs};

fn dsp(c: &mut Criterion) {
    let paper = DspConfig::new(22050);
    let desk = DspConfig::desk(8000);
    let tone = test_tone(22050);
    c.bench_function("mel_1s_22k", |b| b.iter(|| mel_spectrogram(black_box(&tone.samples), &paper).unwrap()));
    let mel = mel_spectrogram(&test_tone(8000).samples, &desk).unwrap();
    c.bench_function("griffin_lim_1s_desk_16it", |b| b.iter(|| griffin_lim(black_box(&mel), 16)));
}

fn visual(c: &mut Criterion) {
    let glyphs = ProceduralGlyphs::default();
    c.bench_function("render_stretch_slice", |b| {
        b.iter(|| {
            let v = render_visual_text(black_box("kaaaan"), &glyphs, (24, 24)).unwrap();
            let v = stretch_by_ratio(&v, 1.5).unwrap();
            slice_into_tokens(&v, 24)
        })
    });
}

fn model(c: &mut Criterion) {
    let (_dir, m) = desk_corpus(2);
    let mut config = ModelConfig::desk();
    config.n_labels = m.labels().len();
    let items = prepare_dataset(&m, &config, &DspConfig::desk(8000), &TrainConfig::default(), &m.labels()).unwrap();
    let params = ModelParams::init(&config, 0).unwrap();
    let item = &items[0];
    c.bench_function("forward_desk", |b| {
        b.iter(|| infer(&params, &config, black_box(&item.tokens), &EventInput::Label(0), None).unwrap())
    });
    let batch: Vec<_> = items.iter().take(8).collect();
    c.bench_function("train_step_desk_batch8", |b| b.iter(|| batch_gradients(&params, &config, black_box(&batch)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = dsp, visual, model
}
criterion_main!(benches);
