use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lungsed::audio::{synthesize_recording, Scenario, Task};
use lungsed::features::{FeatureExtractor, FeatureWindow};
use lungsed::model::{init_params, ModelConfig};
use lungsed::tensor::Tape;
use lungsed::train::{adam_step, AdamState, LabelledRecording};

fn recording(seconds: f64) -> lungsed::audio::AnnotatedRecording {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    synthesize_recording(3, &Scenario::for_corpus(&mut rng, seconds)).unwrap()
}

fn featurize(c: &mut Criterion) {
    let rec = recording(15.0);
    let extractor = FeatureExtractor::new(Default::default()).unwrap();
    c.bench_function("featurize 15 s recording", |b| {
        b.iter(|| extractor.featurize_clip(&rec.clip, &rec.id).unwrap())
    });
}

fn forward(c: &mut Criterion) {
    let rec = recording(15.0);
    let extractor = FeatureExtractor::new(Default::default()).unwrap();
    let windows = extractor.featurize_clip(&rec.clip, &rec.id).unwrap();
    let batch = FeatureWindow::batch(&windows).unwrap();
    let model = init_params(&ModelConfig::default()).unwrap();
    c.bench_function("forward 29 windows, default model", |b| b.iter(|| model.forward(&batch).unwrap()));
}

fn train_step(c: &mut Criterion) {
    let rec = recording(20.0);
    let extractor = FeatureExtractor::new(Default::default()).unwrap();
    let set = LabelledRecording::from_recording(&rec, &extractor, Task::Inhalation).unwrap();
    let batch = FeatureWindow::batch(&set.windows[..32]).unwrap();
    let labels: Vec<f64> = set.labels[..32].iter().map(|&l| f64::from(l)).collect();
    let mut model = init_params(&ModelConfig::default()).unwrap();
    let mut state = AdamState::new(model.named_tensors().into_iter().map(|(_, t)| t));
    c.bench_function("adam step on 32 windows, default model", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let x = tape.constant(batch.clone());
            let trace = bound.forward(&mut tape, &[x]).unwrap();
            let loss = tape.bce(trace.prob, &labels).unwrap();
            let total = tape.sum_all(loss).unwrap();
            let mean = tape.scale(total, 1.0 / labels.len() as f64).unwrap();
            tape.backward(mean).unwrap();
            let grads: Vec<_> = bound.params().iter().map(|&v| tape.grad(v).unwrap()).collect();
            let mut params = model.tensors_mut();
            adam_step(&mut params, &grads, &mut state, 1e-3).unwrap();
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = featurize, forward, train_step
}
criterion_main!(benches);
