//! Times a single simulation replicate: `cargo run --example replicate -- n m`.

use std::time::Instant;

use opcov::quadrature::QuadratureRule;
use opcov::simulate::{run_replicate, SimConfig};

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let cfg = SimConfig {
        n: args.first().copied().unwrap_or(200),
        m: args.get(1).copied().unwrap_or(5),
        ..SimConfig::default()
    };
    let rule = QuadratureRule::default();
    let start = Instant::now();
    for rec in run_replicate(&cfg, args.get(2).copied().unwrap_or(0), &rule) {
        println!(
            "{:<10} ise={:?} rank={:?} lambda={:?} iters={:?} {:?}",
            rec.method.name(),
            rec.ise,
            rec.rank,
            rec.lambda,
            rec.iterations,
            rec.error
        );
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
}
