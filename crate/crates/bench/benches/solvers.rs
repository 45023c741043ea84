use criterion::{criterion_group, criterion_main, Criterion};
use xlayer::backhaul::{solve_flow_lp, solve_nmaxmin, AdmmSettings, NMaxMinConfig};
use xlayer::clustering::{solve_sparse_wmmse, ClusterConfig};
use xlayer::stochastic::{run_stochastic, StochasticConfig};
use xlayer::wmmse::{home_links, solve_wmmse, SolveOptions, StopRule};
use xlayer::UtilityConfig;
use xlayer_bench::{desk, hex_ibc, partial_csi, wired};

fn wmmse(c: &mut Criterion) {
    let inst = hex_ibc(0);
    let opts = SolveOptions { stop: StopRule::fixed(10), ..Default::default() };
    c.bench_function("wmmse_hex21_10_iters", |b| {
        b.iter(|| solve_wmmse(&inst, home_links(&inst), None, &opts).unwrap())
    });
    let cfg = ClusterConfig { lambda: 0.05, ..Default::default() };
    c.bench_function("sparse_wmmse_hex21_10_iters", |b| {
        b.iter(|| solve_sparse_wmmse(&inst, &cfg, &UtilityConfig::sum_rate(), StopRule::fixed(10), 0).unwrap())
    });
}

fn backhaul(c: &mut Criterion) {
    let mut group = c.benchmark_group("backhaul");
    group.sample_size(10);
    let g = wired(10, 60, 200);
    group.bench_function("flow_lp_10x60x200", |b| b.iter(|| solve_flow_lp(&g, &[], &AdmmSettings::default()).unwrap()));
    let d = desk(0);
    let cfg = NMaxMinConfig { max_outer: 2, ..Default::default() };
    group.bench_function("nmaxmin_desk_2_outer", |b| b.iter(|| solve_nmaxmin(&d, &cfg).unwrap()));
    group.finish();
}

fn stochastic(c: &mut Criterion) {
    let (inst, table) = partial_csi(0);
    let cfg = StochasticConfig { iterations: 10, eval_samples: 10, ..Default::default() };
    let mut group = c.benchmark_group("stochastic");
    group.sample_size(10);
    group.bench_function("stochastic_wmmse_10_iters", |b| b.iter(|| run_stochastic(&inst, &table, &cfg, 0).unwrap()));
    group.finish();
}

criterion_group!(benches, wmmse, backhaul, stochastic);
criterion_main!(benches);
