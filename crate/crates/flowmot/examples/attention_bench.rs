//! Dense-masked vs block-structured attention: numerical agreement,
//! multiply-add accounting across block layouts, and training-step
//! throughput for both variants.

use flowmot::bench::{
    attention_madds_block, attention_madds_dense, bench_forward_backward, BenchConfig,
};
use flowmot::model::BlockMaskSpec;

fn main() {
    println!("multiply-add accounting (head_dim 32):");
    println!("{:>22} {:>12} {:>12} {:>8}", "spec (obs,1,T)", "dense", "block", "saved");
    for (obs, t) in [(64usize, 16usize), (64, 50), (16, 50), (4, 100), (100, 4)] {
        let spec = BlockMaskSpec::new(obs, 1, t);
        let dense = attention_madds_dense(&spec, 32);
        let block = attention_madds_block(&spec, 32);
        println!(
            "{:>22} {:>12} {:>12} {:>7.1}%",
            format!("({obs},1,{t})"),
            dense,
            block,
            100.0 * (1.0 - block as f64 / dense as f64)
        );
        assert!(block <= dense);
    }

    println!("\nrunning forward+backward benchmark at desk scale...");
    let report = bench_forward_backward(&BenchConfig::default()).unwrap();
    print!("{}", report.to_table());
    assert!(report.max_abs_deviation < 1e-10);
    assert!(report.final_loss_abs_diff < 1e-8);

    println!("replica mode (4 independent workers):");
    let mut cfg = BenchConfig::default();
    cfg.replicas = 4;
    cfg.measured_iters = 2;
    let report = bench_forward_backward(&cfg).unwrap();
    let r = report.replicas.unwrap();
    for (i, rate) in r.per_replica_samples_per_second.iter().enumerate() {
        println!("  replica {i}: {rate:.2} samples/s");
    }
    println!("  aggregate: {:.2} samples/s", r.aggregate_samples_per_second);
}
