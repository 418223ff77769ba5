// Sequential vs data-parallel timings for the hot paths. Build with
// `--no-default-features` to measure the pure sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dense_ddu::gda::{FitAccumulator, FitOptions, GdaModel};
use dense_ddu::measures::{mutual_information, predictive_entropy, SoftmaxStack};
use dense_ddu::parallel::{current_threads, map_slice, with_workers};
use dense_ddu::synth::{generate_image, SynthImage, SynthSpec};
use dense_ddu::{FeatureMap, LabelMap};

fn spec() -> SynthSpec {
    let mut s = SynthSpec::isotropic(8, 32, 4.0, 1.0, 17);
    s.height = 96;
    s.width = 96;
    s.num_images = 8;
    s
}

fn worker_counts() -> Vec<usize> {
    let all = with_workers(None, current_threads);
    if all > 1 {
        vec![1, all]
    } else {
        vec![1]
    }
}

fn images(spec: &SynthSpec) -> Vec<SynthImage> {
    (0..spec.num_images).map(|n| generate_image(spec, n).unwrap()).collect()
}

fn fit(spec: &SynthSpec, data: &[(FeatureMap, LabelMap)]) -> GdaModel {
    let leaves = map_slice(data, |(f, l)| FitAccumulator::from_image(spec.num_classes, f, l).unwrap());
    let mut acc = FitAccumulator::new(spec.num_classes, spec.feature_dim, spec.ignore_id);
    for leaf in &leaves {
        acc = acc.merge(leaf).unwrap();
    }
    acc.finalize(&FitOptions::default()).unwrap()
}

fn bench(c: &mut Criterion) {
    let spec = spec();
    let imgs = images(&spec);
    let data: Vec<(FeatureMap, LabelMap)> = imgs.iter().map(|i| (i.features.clone(), i.labels.clone())).collect();
    let model = fit(&spec, &data);
    let stack = {
        let i = &imgs[0];
        let one = SoftmaxStack::from_logits(spec.height, spec.width, spec.num_classes, &i.logits).unwrap();
        let mut probs = Vec::new();
        for _ in 0..5 {
            probs.extend_from_slice(one.probs());
        }
        SoftmaxStack::new(5, spec.height, spec.width, spec.num_classes, probs).unwrap()
    };

    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    for w in worker_counts() {
        g.bench_with_input(BenchmarkId::new("fit_accumulate", w), &w, |b, &w| {
            b.iter(|| with_workers(Some(w), || fit(&spec, &data)))
        });
        g.bench_with_input(BenchmarkId::new("log_density", w), &w, |b, &w| {
            b.iter(|| with_workers(Some(w), || model.log_density(&data[0].0).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("predictive_entropy", w), &w, |b, &w| {
            b.iter(|| with_workers(Some(w), || predictive_entropy(&stack).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("mutual_information", w), &w, |b, &w| {
            b.iter(|| with_workers(Some(w), || mutual_information(&stack).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("synth_image", w), &w, |b, &w| {
            b.iter(|| with_workers(Some(w), || generate_image(&spec, 3).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
