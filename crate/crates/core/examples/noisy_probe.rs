use edgekd::sim::{run_simulation, ScenarioConfig, Variant};

fn main() {
    let variant = Variant::CPP;
    for seed in 1..=5u64 {
        let mut clean = ScenarioConfig::for_variant(variant);
        if let Ok(lr) = std::env::var("DLR") { clean.distill_schedule.base_lr = lr.parse().unwrap(); }
        if let Ok(ep) = std::env::var("DEP") {
            let ep: usize = ep.parse().unwrap();
            clean.distill_schedule.epochs = ep;
            clean.distill_schedule.decay_milestones = vec![ep / 2, ep * 3 / 4];
        }
        clean.partition.seed = 4242 + seed;
        clean.master_seed = seed;
        let clean_out = run_simulation(&clean).unwrap();

        let mut noisy = clean.clone();
        noisy.noise.p = 1.0;
        noisy.noise.noisy_edge_ids = [4usize, 7].into_iter().collect();
        let noisy_out = run_simulation(&noisy).unwrap();

        let ct: Vec<f64> = clean_out.records.iter().map(|r| r.core_test_acc).collect();
        let nt: Vec<f64> = noisy_out.records.iter().map(|r| r.core_test_acc).collect();
        let ctr: Vec<f64> = clean_out.records.iter().map(|r| r.core_train_acc).collect();
        let ntr: Vec<f64> = noisy_out.records.iter().map(|r| r.core_train_acc).collect();
        let flags: Vec<usize> = noisy_out.records.iter().filter(|r| r.spike_flag).map(|r| r.round).collect();
        println!("seed {seed}");
        println!("  clean test {:?}", ct.iter().map(|v| (v*1000.).round()/1000.).collect::<Vec<_>>());
        println!("  noisy test {:?}", nt.iter().map(|v| (v*1000.).round()/1000.).collect::<Vec<_>>());
        println!("  clean train{:?}", ctr.iter().map(|v| (v*1000.).round()/1000.).collect::<Vec<_>>());
        println!("  noisy train{:?}", ntr.iter().map(|v| (v*1000.).round()/1000.).collect::<Vec<_>>());
        println!("  spike flags at rounds {:?}", flags);
    }
}
