//! Sequential vs rayon execution of the hot paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use smd_core::data::{render_split, split_configs, SceneConfig, Split, StereoSample};
use smd_core::field::HeadKind;
use smd_core::infer::{infer_grid, InferOptions};
use smd_core::model::SmdModel;
use smd_core::train::{TrainConfig, Trainer};
use smd_core::ExecMode;

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn scenes(n: usize) -> Vec<StereoSample> {
    let cfg = SceneConfig {
        width: 64,
        height: 64,
        d_lo: 1.0,
        d_hi: 10.0,
        d_max: 12.0,
        ..SceneConfig::default()
    };
    render_split(&split_configs(&cfg, 3, Split::Train, n), ExecMode::Sequential).unwrap()
}

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model.backbone.base_channels = 8;
    cfg.model.width_factor = 0.125;
    cfg.points = 1024;
    cfg.crop = 48;
    cfg
}

fn bench_render(c: &mut Criterion) {
    let cfg = SceneConfig::default();
    let configs = split_configs(&cfg, 1, Split::Train, 8);
    let mut g = c.benchmark_group("render_8_scenes");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| render_split(&configs, mode).unwrap()));
    }
    g.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let data = scenes(4);
    let mut g = c.benchmark_group("train_step");
    g.sample_size(10);
    for (name, mode) in MODES {
        let mut t = Trainer::new(small_config()).unwrap();
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| t.step(&data, mode).unwrap()));
    }
    g.finish();
}

fn bench_infer(c: &mut Criterion) {
    let data = scenes(1);
    let input = data[0].input();
    let model = SmdModel::new(&small_config().model, 0);
    let opts = InferOptions {
        uncertainty: true,
        ..InferOptions::default()
    };
    assert_eq!(model.kind, HeadKind::Bimodal);
    let mut g = c.benchmark_group("infer_2x_with_entropy");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| infer_grid(&model, &input, 128, 128, opts, mode).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_render, bench_train_step, bench_infer);
criterion_main!(benches);
