use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use occbound::benchmark::{evaluate, MatchParams};
use occbound::losses::MultiTaskParams;
use occbound::synth::{generate_scenes, SceneSpec};
use occbound::thinning::{nms_thin_batch, NmsParams};
use occbound::trainer::{batch_gradient, init_params, predict};
use occbound::Execution;

const MODES: [(Execution, &str); 2] = [(Execution::Sequential, "sequential"), (Execution::Parallel, "parallel")];

fn spec() -> SceneSpec {
    SceneSpec { seed: 77, ..SceneSpec::default() }
}

fn benches(c: &mut Criterion) {
    let scenes = generate_scenes(32, &spec(), Execution::Sequential).unwrap();
    let net = init_params(3);
    let preds: Vec<_> = scenes.iter().map(|s| predict(&net, &s.image)).collect();
    let probs: Vec<_> = preds.iter().map(|(p, _)| p.clone()).collect();
    let gts: Vec<_> = scenes.iter().map(|s| s.gt.clone()).collect();
    let crops: Vec<_> = scenes.iter().take(8).map(|s| (s.image.clone(), s.gt.clone())).collect();
    let (match_params, nms, loss) = (MatchParams::default(), NmsParams::default(), MultiTaskParams::default());

    let mut g = c.benchmark_group("execution");
    g.sample_size(10);
    for (exec, name) in MODES {
        g.bench_function(BenchmarkId::new("evaluate", name), |b| {
            b.iter(|| evaluate(&preds, &gts, &match_params, exec).unwrap())
        });
        g.bench_function(BenchmarkId::new("nms_thin_batch", name), |b| {
            b.iter(|| nms_thin_batch(&probs, &nms, exec).unwrap())
        });
        g.bench_function(BenchmarkId::new("generate_scenes", name), |b| {
            b.iter(|| generate_scenes(32, &spec(), exec).unwrap())
        });
        g.bench_function(BenchmarkId::new("batch_gradient", name), |b| {
            b.iter(|| batch_gradient(&net, &crops, &loss, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(parallel, benches);
criterion_main!(parallel);
