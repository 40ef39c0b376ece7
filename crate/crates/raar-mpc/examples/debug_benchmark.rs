use raar_mpc::simulator::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let delta: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);

    let mut cfg = with_total_steps(make_dcdc_benchmark(delta).unwrap(), steps).unwrap();
    cfg.seed = seed;
    let t0 = std::time::Instant::now();
    let log = run(&cfg).unwrap();
    let dt = t0.elapsed();
    let m = metrics(&log, default_burn_in(steps), &cfg.schedule).unwrap();
    println!(
        "steps={steps} delta={delta} seed={seed}: risk={:.4} cost={:.3} per_epoch={:?} fallback={} slack_steps={} [{:.1}s]",
        m.empirical_risk,
        m.avg_cost,
        m.per_epoch_risk.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        m.fallback_steps,
        m.slack_steps,
        dt.as_secs_f64()
    );
    // Trace summary: beta and s_max over time (every 10% of the run).
    let stride = (steps / 10).max(1) as usize;
    for (i, r) in log.steps.iter().enumerate() {
        if i % stride == 0 {
            println!(
                "  t={:6} x1={:+.3} beta={:.4} slack={:.4} scale={} h={:+.4}",
                r.t, r.x[0], r.beta, r.slack, r.epoch_scale, r.h_val
            );
        }
    }
    for (i, c) in log.cycles.iter().enumerate() {
        if i % (log.cycles.len() / 10).max(1) == 0 {
            println!(
                "  cycle t={:6} s_max={:.4} gmax={:.3} n={} lml={:.1}",
                c.update_step, c.s_max, c.gamma_max, c.train_size, c.gp_lml
            );
        }
    }
}
