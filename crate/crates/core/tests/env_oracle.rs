use std::time::Instant;

use lauerl::agent::train::{evaluate, worker_threads};
use lauerl::agent::{OraclePolicy, Policy, RandomPolicy};
use lauerl::env::{EnvConfig, EpisodeRecord};
use lauerl::geometry::CrystalSystem;

#[test]
fn oracle_solves_every_episode() {
    let t = Instant::now();
    let cfg = EnvConfig::fixed(CrystalSystem::Cubic);
    let bound = (cfg.initial_range_deg / cfg.action_scale_deg).ceil() as usize + 2;
    let stats = evaluate(&OraclePolicy, &cfg, 1000, 3, worker_threads()).unwrap();
    let longest = stats.records.iter().map(EpisodeRecord::len).max().unwrap();
    println!(
        "oracle: success {:.3}, mean length {:.2}, longest {longest} (bound {bound}), {:.0} s",
        stats.success_rate,
        stats.mean_length,
        t.elapsed().as_secs_f64()
    );
    assert_eq!(stats.success_rate, 1.0);
    assert!(stats.mean_length <= bound as f64);
    assert!(longest <= bound);
    assert!(t.elapsed().as_secs() < 300);
}

/// Rewards recomputed from the logged distances alone.
fn check_rewards(rec: &EpisodeRecord, tolerance: f64) -> usize {
    let d0 = rec.steps[0].distance_deg;
    let mut bad = 0;
    for w in rec.steps.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        let success = cur.distance_deg <= tolerance;
        let shaped = 100.0 * (prev.distance_deg - cur.distance_deg) / (d0 * (cur.t as f64).sqrt());
        let r = cur.reward.unwrap();
        bad += ((r - shaped - if success { 100.0 } else { 0.0 }).abs() > 1e-9) as usize;
    }
    bad
}

#[test]
fn logged_rewards_follow_formula() {
    let cfg = EnvConfig::fixed(CrystalSystem::Cubic);
    let policies: [(&dyn Policy, &str); 2] = [(&OraclePolicy, "oracle"), (&RandomPolicy, "random")];
    for (policy, name) in policies {
        let stats = evaluate(policy, &cfg, 50, 11, worker_threads()).unwrap();
        let bad: usize = stats.records.iter().map(|r| check_rewards(r, cfg.tolerance_deg)).sum();
        let steps: usize = stats.records.iter().map(EpisodeRecord::len).sum();
        println!("{name}: {bad} reward mismatches over {steps} steps");
        assert_eq!(bad, 0);
        for (rec, &ok) in stats.records.iter().zip(&stats.successes) {
            assert_eq!(ok, rec.steps.last().unwrap().distance_deg <= cfg.tolerance_deg);
            assert!(rec.len() <= cfg.max_steps);
        }
    }
}
