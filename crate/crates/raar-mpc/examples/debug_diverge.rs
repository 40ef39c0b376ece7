use raar_mpc::simulator::*;
fn main() {
    let mut cfg = with_total_steps(make_dcdc_benchmark(0.1).unwrap(), 3000).unwrap();
    cfg.seed = 1;
    // Truncate the run progressively to find the divergence onset.
    for steps in [200u64, 400, 600, 800, 1000, 1200] {
        let c2 = with_total_steps(cfg.clone(), steps).unwrap();
        match run(&c2) {
            Ok(log) => {
                let worst = log.steps.iter().map(|r| r.x[0].abs().max(r.x[1].abs())).fold(0.0, f64::max);
                let last = log.steps.last().unwrap();
                println!(
                    "steps={steps}: |x|max={worst:.3} x_end=({:+.3},{:+.3}) beta_end={:.3} slack_end={:.3} fallbacks={}",
                    last.x[0], last.x[1], last.beta, last.slack,
                    log.steps.iter().filter(|r| r.fallback).count()
                );
                if worst > 5.0 {
                    for r in log.steps.iter().filter(|r| r.x[0].abs().max(r.x[1].abs()) > 2.0).take(10) {
                        println!("   t={} x=({:+.3},{:+.3}) u={:+.3} slack={:.3} beta={:.3} fb={}", r.t, r.x[0], r.x[1], r.u[0], r.slack, r.beta, r.fallback as u8);
                    }
                    break;
                }
            }
            Err(e) => {
                println!("steps={steps}: ERROR {e}");
                break;
            }
        }
    }
}
