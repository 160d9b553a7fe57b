use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use promix::config::RunConfig;
use promix::datagen::{BatchSource, DatasetBundle};
use promix::evalkit::test_accuracy;
use promix::modelkit::{ModelSpec, PeerPair};
use promix::parallel;
use promix::selector::build_partition;
use promix::trainer::load_data;

struct Fixture {
    cfg: RunConfig,
    train: DatasetBundle,
    test: DatasetBundle,
    pair: PeerPair,
}

fn fixture() -> Fixture {
    let mut cfg = RunConfig::desk();
    cfg.synth_train_per_class = 100;
    cfg.subset_per_class = 100;
    cfg.synth_test_per_class = 50;
    let (train, test) = load_data(&cfg).unwrap();
    let spec = ModelSpec { input: train.image_dims(), num_classes: train.num_classes(), backbone: cfg.backbone_spec().unwrap() };
    let pair = PeerPair::new(spec, cfg.seed, cfg.momentum, cfg.weight_decay).unwrap();
    Fixture { cfg, train, test, pair }
}

/// Runs `f` once on the rayon pool and once pinned to the calling thread.
fn both<F: Fn()>(c: &mut Criterion, group: &str, f: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function(BenchmarkId::from_parameter("parallel"), |b| b.iter(&f));
    g.bench_function(BenchmarkId::from_parameter("sequential"), |b| b.iter(|| parallel::sequential(&f)));
    g.finish();
}

fn augmentation(c: &mut Criterion) {
    let fx = fixture();
    let policy = fx.cfg.augmentation_policy().unwrap();
    let data = fx.train.train_view();
    let source = BatchSource { images: data.images, policy: &policy, seed: fx.cfg.seed, tag: 0 };
    let ids: Vec<usize> = (0..fx.cfg.batch_size).collect();
    let labels = vec![0; ids.len()];
    both(c, "augment_batch", || {
        black_box(source.build(&ids, &labels, 0, 0));
    });
}

fn selection(c: &mut Criterion) {
    let fx = fixture();
    let policy = fx.cfg.augmentation_policy().unwrap();
    let filter = fx.cfg.filter();
    both(c, "select_partition", || {
        black_box(build_partition(&fx.pair, fx.train.train_view(), &policy, fx.cfg.seed, &filter, 0).unwrap());
    });
}

fn evaluation(c: &mut Criterion) {
    let fx = fixture();
    both(c, "test_accuracy", || {
        black_box(test_accuracy(&fx.pair, &fx.test, fx.cfg.batch_size).unwrap());
    });
}

criterion_group!(benches, augmentation, selection, evaluation);
criterion_main!(benches);
