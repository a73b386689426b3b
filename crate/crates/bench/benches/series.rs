use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use subspace_uq::model::{make_model, sample_noise, spectral_norm};
use subspace_uq::series::{eval_s_k, eval_s_k_by_enumeration, series_apply};
use subspace_uq::{Dims, NoiseSpec, SymmetricDilation};

fn setup(d: usize) -> (SymmetricDilation, DMatrix<f64>) {
    let dims = Dims::new(d, d, 3).unwrap();
    let model = make_model(dims, &[8.0, 4.0, 2.0], 1).unwrap();
    let mut z = sample_noise(dims, NoiseSpec::new(1, 0));
    z *= 0.1 * model.lambda_r() / spectral_norm(&z).unwrap();
    (SymmetricDilation::from_model(&model), z)
}

fn s_k(c: &mut Criterion) {
    let (dil, z) = setup(20);
    let mut g = c.benchmark_group("s_k");
    for k in [2, 4, 6] {
        g.bench_with_input(BenchmarkId::new("dynamic", k), &k, |b, &k| {
            b.iter(|| eval_s_k(&dil, &z, k).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("enumeration", k), &k, |b, &k| {
            b.iter(|| eval_s_k_by_enumeration(&dil, &z, k).unwrap())
        });
    }
    g.finish();
}

fn thin_block(c: &mut Criterion) {
    let mut g = c.benchmark_group("series_apply_theta");
    for d in [50, 200] {
        let (dil, z) = setup(d);
        let theta = dil.theta();
        g.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| series_apply(&dil, &z, 8, &theta).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, s_k, thin_block);
criterion_main!(benches);
