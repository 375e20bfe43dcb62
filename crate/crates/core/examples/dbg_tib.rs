use crc_bounds::restrictions::RestrictionSpec;
use crc_bounds::table::pwid_example;
use crc_bounds::tib::{invert_ci, TestConfig, TibEngine};

fn main() {
    let spec = RestrictionSpec::highest_order(0.4).unwrap();
    let cfg = TestConfig { bootstrap: 1000, seed: 2, truncate_at_observed: true, ..Default::default() };
    let engine = TibEngine::new(&[pwid_example()], &spec, &cfg).unwrap();
    for m in [350.0, 400.0, 700.0, 900.0, 2000.0, 1e5, 1e6, 1e7, 5e7, 99999999.0, 1e8] {
        let out = engine.test_at(m).unwrap();
        println!("M={m:>12}: T={:+.4} tau={:+.4} step1={} rejected={}", out.t_n, out.tau_hat, out.step1_all_negative, out.rejected);
    }
    let ci = invert_ci(&spec, &[pwid_example()], &cfg).unwrap();
    println!("ci: lo={:?} hi={:?} inf={} empty={} holes={}", ci.interval_lo, ci.interval_hi, ci.infinite_upper, ci.empty, ci.diagnostics.non_interval);
    println!("evaluated pts: {}", ci.diagnostics.evaluated.len());
    let mut last_acc = None; let mut first_rej_after = None;
    let mut pts: Vec<(f64,bool)> = ci.diagnostics.evaluated.iter().map(|g| (g.m, g.accepted)).collect();
    pts.sort_by(|a,b| a.0.partial_cmp(&b.0).unwrap());
    for (m, a) in &pts {
        if *a { last_acc = Some(*m); } else if last_acc.is_some() && first_rej_after.is_none() && *m > last_acc.unwrap() { first_rej_after = Some(*m); }
    }
    println!("last accepted {:?}, first rejected after {:?}", last_acc, first_rej_after);
    for (m, a) in pts.iter().rev().take(12) { println!("  {m} {a}"); }
}
