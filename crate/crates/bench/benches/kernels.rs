use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use salnet_bench::{map_and_mask, random};
use salnet_core::eval::{pr_curve, precision_recall};
use salnet_core::tensor::{conv2d, transpose_conv2d, BatchNormMode, Conv2dSpec, TransposeConv2dSpec};
use salnet_core::train::compute_gradients;
use salnet_core::{build_model, ModelConfig, Tensor};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d_3x3");
    for (ch, side) in [(16, 56), (64, 28), (128, 14)] {
        let x = random([1, ch, side, side], 1);
        let k = random([ch, ch, 3, 3], 2);
        let b = Tensor::zeros([ch, 1, 1, 1]);
        g.throughput(Throughput::Elements((ch * ch * 9 * side * side) as u64));
        g.bench_with_input(BenchmarkId::from_parameter(format!("{ch}x{side}")), &(), |bch, _| {
            bch.iter(|| conv2d(&x, &k, &b, Conv2dSpec::same3x3()).unwrap())
        });
    }
    g.finish();
}

fn tconv(c: &mut Criterion) {
    let x = random([1, 64, 28, 28], 3);
    let k = random([64, 32, 2, 2], 4);
    let b = Tensor::zeros([32, 1, 1, 1]);
    c.bench_function("transpose_conv2d_64to32_28", |bch| {
        bch.iter(|| transpose_conv2d(&x, &k, &b, TransposeConv2dSpec::default()).unwrap())
    });
}

fn tiny_model(c: &mut Criterion) {
    let (model, mut params) = build_model(ModelConfig::tiny(), 0).unwrap();
    let x = random([2, 3, 64, 64], 5);
    let y = Tensor::from_fn([2, 1, 64, 64], |_, _, r, q| ((r / 16 + q / 16) % 2) as f32);
    c.bench_function("tiny_forward_2x64", |bch| bch.iter(|| model.forward(&params, &x, BatchNormMode::Infer).unwrap()));
    c.bench_function("tiny_train_gradients_2x64", |bch| {
        bch.iter(|| compute_gradients(&model, &mut params, &x, &y).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let (s, g) = map_and_mask(224, 224, 6);
    let m = salnet_core::eval::binarize(&s, 0.5);
    c.bench_function("precision_recall_224", |bch| bch.iter(|| precision_recall(&m, &g).unwrap()));
    c.bench_function("pr_curve_224_256pts", |bch| bch.iter(|| pr_curve(&s, &g, 256).unwrap()));
}

criterion_group!(benches, conv, tconv, tiny_model, metrics);
criterion_main!(benches);
