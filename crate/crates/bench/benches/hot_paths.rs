use candle_core::{DType, Device, Tensor};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tagpaint_core::blocks::BlockKind;
use tagpaint_core::imaging::GrayImage;
use tagpaint_core::lineart::{xdog, XdogParams};
use tagpaint_core::nets::{tag_batch, Model, NetworkConfig};
use tagpaint_core::nn::conv2d;
use tagpaint_core::{TagKind, TagVocabulary};

fn noise(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn bench_conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    // Dense 3x3 and the grouped 3x3 used inside residual blocks.
    for (name, groups) in [("dense", 1usize), ("grouped8", 8)] {
        let x = noise(1, &[8, 64, 32, 32]);
        let w = noise(2, &[64, 64 / groups, 3, 3]);
        g.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| conv2d(&x, &w, None, 1, 1, groups).unwrap())
        });
    }
    g.finish();
}

fn bench_generator(c: &mut Criterion) {
    let vocab = TagVocabulary::sprite_default();
    let tags: Vec<_> = [["blue_hair", "red_eyes"], ["black_hair", "navy_shirt"]]
        .iter()
        .map(|n| vocab.encode(n, TagKind::Cvt).unwrap())
        .collect();
    let cvt = tag_batch(&tags.iter().collect::<Vec<_>>(), DType::F32, &Device::Cpu).unwrap();
    let mut g = c.benchmark_group("generator");
    g.sample_size(10);
    for kind in [BlockKind::Resnext, BlockKind::Secat] {
        let m = Model::new(NetworkConfig::toy(&vocab, kind), 0, DType::F32).unwrap();
        let size = m.config.image_size;
        let x = noise(3, &[2, 1, size, size]);
        g.bench_function(BenchmarkId::new("forward_toy", kind.to_string()), |b| {
            b.iter(|| m.generator.forward(&x, &cvt).unwrap())
        });
    }
    g.finish();
}

fn bench_xdog(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = GrayImage::new(256, 256, (0..256 * 256).map(|_| rng.random::<f32>()).collect()).unwrap();
    let p = XdogParams::sprite_default(256);
    c.bench_function("xdog_256", |b| b.iter(|| xdog(&img, &p).unwrap()));
}

criterion_group!(benches, bench_conv, bench_generator, bench_xdog);
criterion_main!(benches);
