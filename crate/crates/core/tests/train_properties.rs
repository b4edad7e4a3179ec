use lungsed::audio::{EventInterval, Label, Task};
use lungsed::features::FeatureWindow;
use lungsed::model::ModelConfig;
use lungsed::tensor::Tensor;
use lungsed::train::{adam_step, train, validate, AdamState, LabelledRecording, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FRAMES: usize = 20;

/// Positives carry a raised band in columns 40..46; negatives do not.
fn separable_recording(n: usize, seed: u64) -> LabelledRecording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut windows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = u8::from(i % 2 == 0);
        let data = (0..FRAMES * 65)
            .map(|j| {
                let col = j % 65;
                let base = rng.gen_range(0.0..0.5);
                if label == 1 && (40..46).contains(&col) {
                    base + 0.5
                } else {
                    base
                }
            })
            .collect();
        windows.push(FeatureWindow::new(data, FRAMES, i as f64 * 0.5, "sep").unwrap());
        labels.push(label);
    }
    LabelledRecording {
        id: format!("sep{seed}"),
        duration_s: (n + 1) as f64 * 0.5,
        win_s: 1.0,
        hop_s: 0.5,
        windows,
        labels,
        events: vec![EventInterval::new(0.0, 1.0, Label::Inhalation).unwrap()],
    }
}

fn small_model() -> ModelConfig {
    ModelConfig {
        filters: 8,
        classifier_hidden: vec![8, 1],
        ..ModelConfig::default()
    }
}

#[test]
fn memorizes_64_separable_windows() {
    let tr = separable_recording(64, 1);
    let va = separable_recording(8, 2);
    let cfg = TrainConfig {
        epochs: 200,
        lr: 1e-3,
        batch_size: 64,
        augment_enabled: false,
        ..TrainConfig::default()
    };
    let mut losses = Vec::new();
    train(&small_model(), &[tr], &[va], &cfg, |e| losses.push(e.train_loss)).unwrap();
    assert_eq!(losses.len(), 200);
    let last = *losses.last().unwrap();
    assert!(last < 0.05, "final loss {last}");
    // full-batch steps: strictly lower over every 20-epoch span until converged
    for i in 0..losses.len() - 20 {
        if losses[i] >= 0.05 {
            assert!(losses[i + 20] < losses[i], "epoch {} -> {}", i + 1, i + 21);
        }
    }
    let rises = losses.windows(2).filter(|w| w[1] > w[0] && w[0] >= 0.05).count();
    assert_eq!(rises, 0, "per-epoch loss rose before convergence");
}

#[test]
fn adam_trajectories_ignore_parameter_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut a = Tensor::new(vec![2, 3], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let mut b = Tensor::from_vec((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let (mut a2, mut b2) = (a.clone(), b.clone());
    let mut s1 = AdamState::new([&a, &b]);
    let mut s2 = AdamState::new([&b2, &a2]);
    for _ in 0..25 {
        let ga = Tensor::new(vec![2, 3], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let gb = Tensor::from_vec((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        adam_step(&mut [&mut a, &mut b], &[ga.clone(), gb.clone()], &mut s1, 0.01).unwrap();
        adam_step(&mut [&mut b2, &mut a2], &[gb, ga], &mut s2, 0.01).unwrap();
    }
    assert_eq!((a, b), (a2, b2));
}

#[test]
fn validation_is_augmentation_free_and_repeatable() {
    let tr = separable_recording(16, 3);
    let va = separable_recording(8, 4);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        ..TrainConfig::desk_scale()
    };
    let (model, hist) = train(&small_model(), &[tr], &[va.clone()], &cfg, |_| {}).unwrap();
    let v1 = validate(&model, &[va.clone()], Task::Inhalation).unwrap();
    let v2 = validate(&model, &[va], Task::Inhalation).unwrap();
    assert_eq!(v1, v2);
    let kept = &hist.epochs[hist.selected_epoch - 1];
    assert_eq!(kept.val_loss, v1.loss);
    assert!(hist.epochs.iter().all(|e| e.val_f1 <= kept.val_f1));
}

#[test]
fn non_binary_labels_rejected() {
    let mut tr = separable_recording(4, 5);
    tr.labels[2] = 2;
    let va = separable_recording(4, 6);
    assert!(train(&small_model(), &[tr], &[va], &TrainConfig::desk_scale(), |_| {}).is_err());
}
