use crc_bounds::restrictions::RestrictionSpec;
use crc_bounds::table::pwid_example;
use crc_bounds::tib::{TestConfig, TibEngine};

fn main() {
    let spec = RestrictionSpec::highest_order(0.4).unwrap();
    // accept-at-infinity frequency across seeds and B
    for b in [2000usize, 8000, 20000] {
        let mut accepted = 0;
        let n_seeds = if b >= 20000 { 6 } else { 12 };
        for seed in 0..n_seeds {
            let cfg = TestConfig { bootstrap: b, seed, truncate_at_observed: true, ..Default::default() };
            let engine = TibEngine::new(&[pwid_example()], &spec, &cfg).unwrap();
            let out = engine.test_at(9.9e7).unwrap();
            if !out.rejected { accepted += 1; }
            if seed < 6 && b == 2000 {
                println!("  B={b} seed={seed}: T={:.4} tau={:.4} rej={}", out.t_n, out.tau_hat, out.rejected);
            }
        }
        println!("B={b}: accepted at ~delta for {accepted}/{n_seeds} seeds");
    }
}
