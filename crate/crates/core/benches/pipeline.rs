//! Parallel vs sequential: feature extraction and GBT training.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use geoact::features::{FeaturePipeline, FeatureSpec};
use geoact::geodesy::EarthModel;
use geoact::grid::GridSystem;
use geoact::models::{GbtModel, GbtParams};
use geoact::par;
use geoact::synth::{default_cities, synth_datasets, SynthConfig};

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", false), ("sequential", true)]
}

fn bench(c: &mut Criterion) {
    let cfg = SynthConfig {
        checkins: 5000,
        venues: 800,
        users: 200,
        ..SynthConfig::default()
    };
    let d = synth_datasets(&default_cities()[..1], &cfg, 7, 0.2).unwrap().remove(0);
    let spec = FeatureSpec::default();
    let grids = GridSystem::default();
    let train = d.train();

    let mut g = c.benchmark_group("features");
    g.sample_size(10);
    for (name, seq) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_sequential(seq);
            b.iter(|| {
                let p = FeaturePipeline::fit(&spec, &train, d.city.center, EarthModel::default(), &grids).unwrap();
                p.transform(&train).unwrap()
            })
        });
    }
    g.finish();

    let pipe = FeaturePipeline::fit(&spec, &train, d.city.center, EarthModel::default(), &grids).unwrap();
    let m = pipe.transform(&train).unwrap();
    let params = GbtParams {
        num_round: 10,
        ..GbtParams::default()
    };
    let mut g = c.benchmark_group("gbt_fit");
    g.sample_size(10);
    for (name, seq) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_sequential(seq);
            b.iter(|| GbtModel::fit(&params, &m.x, &m.y, 1).unwrap())
        });
    }
    g.finish();
    par::set_sequential(false);
}

criterion_group!(benches, bench);
criterion_main!(benches);
