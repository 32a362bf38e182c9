use criterion::{black_box, criterion_group, criterion_main, Criterion};
use gramdex::barcode::{binarize, gram, Extractor, FeatureMatrix};
use gramdex::tensor::{conv2d, ConvLayerWeights, Tensor};
use gramdex::{LayerCombo, VggPrefixModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = Tensor::new(64, 75, 75, (0..64 * 75 * 75).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let kernel = (0..128 * 64 * 9).map(|_| rng.gen_range(-0.1..0.1)).collect();
    let w = ConvLayerWeights::new("conv2_1", [128, 64, 3, 3], kernel, vec![0.0; 128]).unwrap();
    c.bench_function("conv2d_64to128_75x75", |b| b.iter(|| conv2d(black_box(&input), &w).unwrap()));
}

fn gram_and_binarize(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data: Vec<f32> = (0..64 * 150 * 150).map(|_| rng.gen_range(0.0..4.0)).collect();
    let f = FeatureMatrix::new(64, 150 * 150, &data).unwrap();
    c.bench_function("gram_conv1_1_150x150", |b| b.iter(|| gram(black_box(&f)).unwrap()));

    let v: Vec<f32> = (0..305_888).map(|_| rng.gen()).collect();
    c.bench_function("binarize_305888", |b| b.iter(|| binarize(black_box(&v)).unwrap()));
}

fn full_barcode(c: &mut Criterion) {
    let model = VggPrefixModel::synthetic(0);
    let image = image::RgbImage::from_fn(150, 150, |x, y| image::Rgb([(x * 7) as u8, (y * 3) as u8, (x ^ y) as u8]));
    let combo: LayerCombo = "1,2,3,4,5".parse().unwrap();
    let mut group = c.benchmark_group("barcode");
    group.sample_size(10);
    group.bench_function("all_layers_150x150", |b| {
        b.iter(|| Extractor::new(&model).barcode(black_box(&image), &combo).unwrap())
    });
    group.finish();
}

criterion_group!(benches, conv, gram_and_binarize, full_barcode);
criterion_main!(benches);
