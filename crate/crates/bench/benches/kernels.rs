use criterion::{black_box, criterion_group, criterion_main, Criterion};
use voxelrec::datagen::{make_dataset, DataConfig, Family};
use voxelrec::mesh::marching_cubes;
use voxelrec::model::{Model, NetworkConfig};
use voxelrec::nn::{conv2d, conv3d};
use voxelrec::stn::{affine_grid, bilinear_sample};
use voxelrec::train::{Trainer, TrainConfig};
use voxelrec::Tape;
use voxelrec_bench::{images, random};

fn conv(c: &mut Criterion) {
    let x = random(&[10, 32, 16, 16], 1);
    let w = random(&[64, 32, 5, 5], 2);
    let b = random(&[64], 3);
    c.bench_function("conv2d 10x32x16x16 -> 64, 5x5", |bench| {
        bench.iter(|| {
            let tape = Tape::new();
            let y = conv2d(tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()), 1, 2).unwrap();
            black_box(y.value());
        })
    });

    let x = random(&[10, 16, 16, 16, 16], 4);
    let w = random(&[8, 16, 3, 3, 3], 5);
    let b = random(&[8], 6);
    c.bench_function("conv3d 10x16x16^3 -> 8, 3x3x3 forward+backward", |bench| {
        bench.iter(|| {
            let tape = Tape::new();
            let wv = tape.param(w.clone());
            let y = conv3d(tape.constant(x.clone()), wv, tape.constant(b.clone()), 1, 1).unwrap();
            black_box(tape.backward(y.sum()).unwrap());
        })
    });
}

fn sampler(c: &mut Criterion) {
    let x = random(&[10, 32, 32, 32], 7);
    let theta = random(&[10, 6], 8);
    c.bench_function("affine grid + bilinear sample 10x32x32x32 -> 16x16", |bench| {
        bench.iter(|| {
            let tape = Tape::new();
            let g = affine_grid(tape.constant(theta.clone()), 16, 16).unwrap();
            black_box(bilinear_sample(tape.constant(x.clone()), g).unwrap().value());
        })
    });
}

fn model(c: &mut Criterion) {
    let cfg = NetworkConfig::faces_32();
    let model = Model::build(&cfg).unwrap();
    let batch = images(10, 9);
    c.bench_function("faces_32 predict 10 volumes", |bench| {
        bench.iter(|| black_box(model.predict_volumes(&batch).unwrap()))
    });

    let data = make_dataset(&DataConfig::new(Family::Head, 1, 32, 0)).unwrap();
    let idx: Vec<usize> = (0..10).collect();
    let (imgs, vols) = (data.images(&idx).unwrap(), data.volumes(&idx).unwrap());
    let mut trainer = Trainer::new(model.clone(), TrainConfig::default()).unwrap();
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("faces_32 volume step, batch 10", |bench| {
        bench.iter(|| black_box(trainer.volume_step(&imgs, &vols).unwrap()))
    });
    group.finish();
}

fn mesh(c: &mut Criterion) {
    let data = make_dataset(&DataConfig::new(Family::Head, 1, 32, 0)).unwrap();
    let grid = data.examples[0].volume.clone();
    c.bench_function("marching cubes 32^3 head", |bench| bench.iter(|| black_box(marching_cubes(&grid, 0.5))));
}

criterion_group!(benches, conv, sampler, model, mesh);
criterion_main!(benches);
