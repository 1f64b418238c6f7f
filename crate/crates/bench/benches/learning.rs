use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rcd_bench::{movie_data, random_truth};
use rcd_core::ci::RegressionCi;
use rcd_core::{parse_variable, rcd_learn, AggSet, CiBackend, CiQuery, LearnConfig, OracleCi, RegressionParams};

fn bench_agg_build(c: &mut Criterion) {
    let mut group = c.benchmark_group("agg_build");
    for (entities, deps) in [(2, 5), (3, 10), (4, 15)] {
        let truth = random_truth(entities, deps);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{entities}e_{deps}d")), &truth, |b, m| {
            b.iter(|| AggSet::from_model(m, 8).unwrap());
        });
    }
    group.finish();
}

fn bench_oracle_learn(c: &mut Criterion) {
    let mut group = c.benchmark_group("oracle_learn");
    for (entities, deps) in [(1, 5), (2, 5), (3, 10), (4, 15)] {
        let truth = random_truth(entities, deps);
        let oracle = OracleCi::new(&truth, 8).unwrap();
        group.bench_function(format!("{entities}e_{deps}d"), |b| {
            b.iter(|| rcd_learn(truth.schema_arc().clone(), &oracle, &LearnConfig::default()).unwrap());
        });
    }
    group.finish();
}

fn bench_regression_ci(c: &mut Criterion) {
    let (m, skel) = movie_data(2000, 7);
    let s = m.schema();
    let q = CiQuery::new(
        parse_variable(s, "[MOVIE, STARS-IN, ACTOR].Popularity").unwrap(),
        parse_variable(s, "[MOVIE].Success").unwrap(),
        vec![parse_variable(s, "[MOVIE, STARS-IN, ACTOR, STARS-IN, MOVIE].Success").unwrap()],
    )
    .unwrap();
    // a fresh backend per iteration so the column cache starts cold
    c.bench_function("regression_ci_movie_2000", |b| {
        b.iter(|| RegressionCi::new(skel.clone(), RegressionParams::default()).independent(&q).unwrap());
    });
}

criterion_group!(benches, bench_agg_build, bench_oracle_learn, bench_regression_ci);
criterion_main!(benches);
