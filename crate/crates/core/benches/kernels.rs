use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use styleweave::kernels::conv2d;
use styleweave::panorama::{knit_panorama, PanoramaPlan};
use styleweave::{exec, sample_latents, Generator, GeneratorConfig};

fn random(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Runs `f` once through the rayon pool and once inside a sequential scope.
fn both<F: Fn() + Copy>(c: &mut Criterion, group: &str, f: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(20);
    g.bench_function(BenchmarkId::new("parallel", ""), |b| b.iter(f));
    g.bench_function(BenchmarkId::new("sequential", ""), |b| {
        b.iter(|| exec::sequential(f))
    });
    g.finish();
}

fn conv(c: &mut Criterion) {
    let (cin, cout, h) = (64, 64, 16);
    let input = random(cin * h * h, 1);
    let weight = random(cout * cin * 9, 2);
    let input = &input;
    let weight = &weight;
    both(c, "conv2d_64x64_16px", move || {
        std::hint::black_box(conv2d(input, cin, h, h, weight, cout, 3));
    });
}

fn synthesis(c: &mut Criterion) {
    let gen = Generator::new(GeneratorConfig::desk(1)).unwrap();
    let stack = gen.expand_to_stack(&gen.map_latent(&sample_latents(2, 1, 64)[0], 1.0).unwrap());
    let (gen, stack) = (&gen, &stack);
    both(c, "desk_render", move || {
        std::hint::black_box(gen.render(stack).unwrap());
    });
}

fn panorama(c: &mut Criterion) {
    let gen = Generator::new(GeneratorConfig::desk(1)).unwrap();
    let latents = gen.map_latents(&sample_latents(3, 5, 64), 1.0).unwrap();
    let plan = PanoramaPlan::new(&gen, latents, 0.5, 0.0).unwrap();
    let (gen, plan) = (&gen, &plan);
    both(c, "panorama_5", move || {
        std::hint::black_box(knit_panorama(gen, plan).unwrap());
    });
}

criterion_group!(benches, conv, synthesis, panorama);
criterion_main!(benches);
