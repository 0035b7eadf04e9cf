use fiberdd::engine::{
    build_assoc_taskgraph, build_linear_taskgraph, build_reduce_taskgraph, processing_order_experiment, run_taskgraph,
    NodeKind, ProcessingOrder,
};
use fiberdd::refsim::dense_run;
use fiberdd::{
    build_grover, random_circuit, simulate, CacheScope, Circuit, EngineConfig, Kind, OracleSpec, Package, Strategy,
    TableScope,
};

const SCOPES: [CacheScope; 3] = [CacheScope::None, CacheScope::Local, CacheScope::Global];

fn max_err(pkg: &Package, c: &Circuit, cfg: &EngineConfig) -> f64 {
    let input = pkg.vector_dd_from_basis(c.n, 0).unwrap();
    let (out, _) = simulate(pkg, c, input, cfg).unwrap();
    let got = pkg.reconstruct(out, c.n, Kind::Vector).unwrap();
    let want = dense_run(c, 0).unwrap();
    got.max_diff(&want.amps)
}

#[test]
fn all_strategies_match_dense_on_random_circuits() {
    for seed in 0..3 {
        let c = random_circuit(6, 60, seed).unwrap();
        for strategy in Strategy::ALL {
            for scope in SCOPES {
                for workers in [1, 2, 4] {
                    let pkg = Package::new();
                    let cfg = EngineConfig::new(strategy, workers).with_cache(scope);
                    let err = max_err(&pkg, &c, &cfg);
                    assert!(err <= 1e-9, "{strategy} {scope:?} w={workers} seed={seed}: {err}");
                }
            }
        }
    }
}

#[test]
fn grover_agrees_across_strategies() {
    let c = build_grover(5, OracleSpec { marked: 19 }).unwrap();
    let want = dense_run(&c, 0).unwrap().probability(19);
    for strategy in Strategy::ALL {
        let pkg = Package::new();
        let input = pkg.vector_dd_from_basis(5, 0).unwrap();
        let (out, _) = simulate(&pkg, &c, input, &EngineConfig::new(strategy, 4)).unwrap();
        let p = pkg.amplitude(out, 5, 19).unwrap().norm_sqr();
        assert!((p - want).abs() <= 1e-9, "{strategy}: {p} vs {want}");
    }
}

#[test]
fn empty_circuit_returns_input() {
    let pkg = Package::new();
    let input = pkg.vector_dd_from_basis(3, 5).unwrap();
    for strategy in Strategy::ALL {
        let (out, m) = simulate(&pkg, &Circuit::new(3), input, &EngineConfig::new(strategy, 2)).unwrap();
        assert_eq!(out, input);
        assert!(m.wall_time.as_nanos() > 0);
    }
}

#[test]
fn sequential_metrics() {
    let pkg = Package::new();
    let c = random_circuit(5, 40, 1).unwrap();
    let input = pkg.vector_dd_from_basis(5, 0).unwrap();
    let (_, m) = simulate(&pkg, &c, input, &EngineConfig::new(Strategy::Sequential, 8)).unwrap();
    assert_eq!(m.idle_fraction, vec![0.0]);
    let cfg = EngineConfig::new(Strategy::InnerFibers, 2).with_cache(CacheScope::None);
    let (_, m) = simulate(&pkg, &c, input, &cfg).unwrap();
    assert_eq!((m.cache.lookups(), m.cache.hits()), (0, 0));
    assert!(m.idle_fraction.iter().all(|f| (0.0..=1.0).contains(f)));
}

#[test]
fn spawn_threshold_above_n_spawns_nothing() {
    let c = random_circuit(6, 30, 4).unwrap();
    for strategy in [Strategy::InnerThreads, Strategy::InnerFibers] {
        let pkg = Package::new();
        let mut cfg = EngineConfig::new(strategy, 4);
        cfg.spawn_threshold = Some(7);
        let input = pkg.vector_dd_from_basis(6, 0).unwrap();
        let (_, m) = simulate(&pkg, &c, input, &cfg).unwrap();
        assert_eq!(m.spawned_tasks, 0);
        assert!(max_err(&pkg, &c, &cfg) <= 1e-9);
    }
}

#[test]
fn spawned_tasks_do_not_grow_with_threshold() {
    let c = random_circuit(8, 40, 9).unwrap();
    for strategy in [Strategy::InnerThreads, Strategy::InnerFibers] {
        let mut last = u64::MAX;
        for t in 0..=9 {
            let pkg = Package::new();
            let mut cfg = EngineConfig::new(strategy, 2).with_cache(CacheScope::None);
            cfg.spawn_threshold = Some(t);
            let input = pkg.vector_dd_from_basis(8, 0).unwrap();
            let (_, m) = simulate(&pkg, &c, input, &cfg).unwrap();
            assert!(m.spawned_tasks <= last, "{strategy} t={t}: {} > {last}", m.spawned_tasks);
            last = m.spawned_tasks;
        }
    }
}

#[test]
fn per_worker_tables_need_experiment_mode() {
    let pkg = Package::new();
    let c = random_circuit(4, 10, 0).unwrap();
    let input = pkg.vector_dd_from_basis(4, 0).unwrap();
    let mut cfg = EngineConfig::new(Strategy::InnerFibers, 2);
    cfg.unique_scope = TableScope::PerWorker;
    assert!(simulate(&pkg, &c, input, &cfg).is_err());
    cfg.experiment_mode = true;
    assert!(max_err(&pkg, &c, &cfg) <= 1e-9);
}

#[test]
fn graphs_match_dense() {
    let c = random_circuit(5, 24, 2).unwrap();
    let want = dense_run(&c, 0).unwrap();
    let graphs = [
        build_linear_taskgraph(24),
        build_assoc_taskgraph(24, 3),
        build_reduce_taskgraph(24, 5, 2).unwrap(),
    ];
    for g in &graphs {
        let pkg = Package::new();
        let input = pkg.vector_dd_from_basis(5, 0).unwrap();
        let (out, _, trace) = run_taskgraph(&pkg, &c, g, input, &EngineConfig::new(Strategy::OuterAssoc, 3)).unwrap();
        assert!(trace.executions.iter().all(|&e| e == 1));
        assert!(trace.barriers_respected(g));
        let got = pkg.reconstruct(out, 5, Kind::Vector).unwrap();
        assert!(got.max_diff(&want.amps) <= 1e-9);
    }
}

#[test]
fn reduce_barriers_hold_under_load() {
    let c = random_circuit(7, 64, 3).unwrap();
    let g = build_reduce_taskgraph(64, 8, 4).unwrap();
    assert_eq!(g.count(NodeKind::Reduce), 8);
    let pkg = Package::new();
    let input = pkg.vector_dd_from_basis(7, 0).unwrap();
    let (_, _, trace) = run_taskgraph(&pkg, &c, &g, input, &EngineConfig::new(Strategy::OuterReduce, 4)).unwrap();
    assert!(trace.barriers_respected(&g));
    assert!(trace.executions.iter().all(|&e| e == 1));
}

#[test]
fn processing_orders_agree() {
    let c = build_grover(6, OracleSpec { marked: 5 }).unwrap();
    let mut probs = Vec::new();
    for order in [ProcessingOrder::Sequential, ProcessingOrder::Random] {
        let pkg = Package::new();
        let input = pkg.vector_dd_from_basis(6, 0).unwrap();
        let (out, _) = processing_order_experiment(&pkg, &c, input, 4, order, 11, &EngineConfig::default()).unwrap();
        probs.push(pkg.amplitude(out, 6, 5).unwrap().norm_sqr());
    }
    assert!((probs[0] - probs[1]).abs() <= 1e-9);
}

#[test]
fn timeout_is_reported() {
    let pkg = Package::new();
    let c = random_circuit(16, 400, 5).unwrap();
    let input = pkg.vector_dd_from_basis(16, 0).unwrap();
    let mut cfg = EngineConfig::new(Strategy::Sequential, 1);
    cfg.timeout = Some(std::time::Duration::from_millis(1));
    assert!(matches!(simulate(&pkg, &c, input, &cfg), Err(fiberdd::DdError::Timeout)));
    // the package stays usable
    let small = random_circuit(4, 10, 0).unwrap();
    assert!(max_err(&pkg, &small, &EngineConfig::default()) <= 1e-9);
}
