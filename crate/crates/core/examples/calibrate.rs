use edgekd::sim::{run_simulation, ScenarioConfig, Variant};

fn mean(v: &[f64]) -> f64 { v.iter().sum::<f64>() / v.len() as f64 }
fn std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

fn main() {
    let seeds: Vec<u64> = vec![1, 2, 3, 4, 5];
    let t0 = std::time::Instant::now();
    for variant in Variant::ALL {
        let mut finals = Vec::new();
        let mut cons: Vec<Vec<f64>> = vec![Vec::new(); 9];
        let mut trans: Vec<Vec<f64>> = vec![Vec::new(); 9];
        let mut test: Vec<Vec<f64>> = vec![Vec::new(); 10];
        for &seed in &seeds {
            let mut cfg = ScenarioConfig::for_variant(variant);
            cfg.partition.seed = 4242 + seed;
            cfg.master_seed = seed;
            let out = run_simulation(&cfg).unwrap();
            finals.push(out.records.last().unwrap().core_test_acc);
            for r in &out.records {
                test[r.round].push(r.core_test_acc);
                if r.round >= 1 {
                    if let Some(c) = r.consensus_current { cons[r.round - 1].push(c); }
                    if let Some(tr) = r.transfer_score { trans[r.round - 1].push(tr); }
                }
            }
        }
        let trans_m: Vec<String> = trans.iter().map(|v| format!("{:+.3}", mean(v))).collect();
        let test_m: Vec<String> = test.iter().map(|v| format!("{:.3}", mean(v))).collect();
        let cons_m: Vec<String> = cons.iter().map(|v| format!("{:.3}", mean(v))).collect();
        println!(
            "{:5} final={:.4} ±{:.4}\n      test {}\n      cons {}\n      tran {}",
            variant.to_string(), mean(&finals), std(&finals), test_m.join(" "), cons_m.join(" "), trans_m.join(" ")
        );
    }
    println!("elapsed {:?}", t0.elapsed());
}
