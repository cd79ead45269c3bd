use berw::walk::{berw_run, WalkConfig};
use std::time::Instant;

fn main() {
    for seed in 0..3 {
        let t0 = Instant::now();
        let run = berw_run(&WalkConfig::new(seed, 10_000_000)).unwrap();
        println!("seed {seed}: R = {} in {:?}", run.series.last().range, t0.elapsed());
    }
}
