// Inspect plan structure during a short benchmark run.
use raar_mpc::simulator::*;
fn main() {
    let mut cfg = with_total_steps(make_dcdc_benchmark(0.1).unwrap(), 400).unwrap();
    cfg.seed = 1;
    let log = run(&cfg).unwrap();
    for r in log.steps.iter().step_by(40) {
        println!(
            "t={:3} x=({:+.3},{:+.3}) u={:+.3} beta={:.3} slack={:.4} h={:+.3}",
            r.t, r.x[0], r.x[1], r.u[0], r.beta, r.slack, r.h_val
        );
    }
    println!("cycles:");
    for c in &log.cycles {
        println!("  t={:3} s_max={:.3} gmax={:.3}", c.update_step, c.s_max, c.gamma_max);
    }
}
