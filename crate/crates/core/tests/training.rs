use relpos_core::autodiff::Tensor;
use relpos_core::data::{gen_quadrant, Dataset, LabeledImage, SyntheticSpec};
use relpos_core::relpos::{PositionalConfig, PositionalMode};
use relpos_core::trainer::{train, TrainConfig, Trainer};
use relpos_core::vit::ModelConfig;

fn small(mode: PositionalMode, classes: usize) -> ModelConfig {
    ModelConfig {
        image_side: 8,
        embed_dim: 16,
        heads: 2,
        blocks: 1,
        classes,
        positional: PositionalConfig {
            mode,
            ..PositionalConfig::default()
        },
        ..ModelConfig::default()
    }
}

/// Every 2x2 patch carries one of two diagonal patterns, plus a little
/// deterministic jitter; the pattern is the label.
fn diagonals(count: usize) -> Dataset {
    let examples = (0..count)
        .map(|k| {
            let label = k % 2;
            let mut pixels = Tensor::zeros(&[8, 8, 1]);
            for (i, v) in pixels.data_mut().iter_mut().enumerate() {
                let on_main = (i / 8) % 2 == i % 2;
                let jitter = ((i * 31 + k * 17) % 11) as f64 / 100.0;
                *v = if on_main == (label == 0) { 0.9 + jitter } else { jitter };
            }
            LabeledImage { pixels, label }
        })
        .collect();
    Dataset { examples, classes: 2 }
}

#[test]
fn separable_task_is_learned() {
    let ds = diagonals(64);
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 16,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train(&small(PositionalMode::Cre, 2), &cfg, &ds, &ds).unwrap();
    let last = out.metrics.last().unwrap();
    assert_eq!(out.metrics.len(), 50);
    assert!(last.train_top1 > 0.95, "train top-1 {}", last.train_top1);
}

#[test]
fn full_batch_loss_never_increases() {
    let ds = diagonals(16);
    let all: Vec<usize> = (0..ds.len()).collect();
    let (images, labels) = ds.batch(&all).unwrap();
    for mode in PositionalMode::ALL {
        let mut trainer = Trainer::new(
            small(mode, 2),
            TrainConfig {
                seed: 5,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let losses: Vec<f64> = (0..21)
            .map(|_| trainer.step(&images, &labels, 1e-3).unwrap().loss)
            .collect();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0], "{mode}: loss rose from {} to {}", w[0], w[1]);
        }
        assert!(losses[20] < losses[0], "{mode}: no progress");
    }
}

#[test]
fn relation_core_moves_during_training() {
    let ds = gen_quadrant(&SyntheticSpec {
        count: 16,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let all: Vec<usize> = (0..ds.len()).collect();
    let (images, labels) = ds.batch(&all).unwrap();
    for mode in [PositionalMode::Sre, PositionalMode::Cre, PositionalMode::CrePlusPe] {
        let mut trainer = Trainer::new(small(mode, 4), TrainConfig::default()).unwrap();
        let before = trainer.params.relation_core.clone().unwrap();
        trainer.step(&images, &labels, 1e-3).unwrap();
        let after = trainer.params.relation_core.as_ref().unwrap();
        assert!(before.max_abs_diff(after) > 0.0, "{mode}");
    }
}
