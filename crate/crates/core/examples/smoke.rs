use edgekd::sim::{run_simulation, ScenarioConfig, Variant};
use std::time::Instant;

fn main() {
    let variant = std::env::args().nth(1).unwrap_or_else(|| "CPP".into());
    let variant = Variant::parse(&variant).unwrap();
    let mut cfg = ScenarioConfig::for_variant(variant);
    cfg.master_seed = 1;
    let t0 = Instant::now();
    let out = run_simulation(&cfg).unwrap();
    println!("variant={} elapsed={:?}", variant, t0.elapsed());
    for r in &out.records {
        println!(
            "round {} test={:.4} train={:.4} edge={:?} cons={:?} transfer={:?} mem={}",
            r.round, r.core_test_acc, r.core_train_acc,
            r.edge_test_acc.map(|v| (v * 1e4).round() / 1e4),
            r.consensus_current.map(|v| (v * 1e4).round() / 1e4),
            r.transfer_score.map(|v| (v * 1e4).round() / 1e4),
            r.memory_size
        );
    }
    println!("counters: {:?}", out.counters);
    println!("violations: {}", out.audit.core_edge_violations().len());
}
