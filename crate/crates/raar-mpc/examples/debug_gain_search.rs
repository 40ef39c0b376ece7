// Search LQR error-weight designs for a certified ancillary gain whose
// 10-step error envelope in the chance channel is smallest.
use raar_mpc::criticality::{simulate_error, UncertaintyScenario};
use raar_mpc::qp::QpStatus;
use raar_mpc::system::{sample_matrices_uniform, IntervalBox, UncertainLinearSystem};
use raar_mpc::tube::{design_ancillary, MpcConfig, MpcPlan, TerminalMode, TighteningMode};
use raar_mpc::{Mat, Vec64};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() {
    let a = Mat::from_row_slice(2, 2, &[1.0, 0.0075, -0.143, 0.996]);
    let b = Mat::from_row_slice(2, 1, &[4.798, 0.115]);
    let g = Mat::identity(2, 2);
    let support = IntervalBox::symmetric(Vec64::from_element(2, 0.14)).unwrap();
    let sys = UncertainLinearSystem::new(a.clone(), b.clone(), g, 0.05, support).unwrap();

    let w = 0.0875f64;
    for (q1, q2, r) in [
        (1.0, 10.0, 1.0),   // cost weights (current)
        (1.0, 1.0, 1.0),
        (10.0, 1.0, 1.0),
        (1.0, 1.0, 0.1),
        (1.0, 5.0, 0.1),
        (1.0, 0.3, 1.0),
        (5.0, 1.0, 5.0),
        (1.0, 2.0, 10.0),
        (0.1, 1.0, 1.0),
        (1.0, 20.0, 0.01),
    ] {
        let cfg = MpcConfig {
            horizon_n: 10,
            q_mat: Mat::from_partial_diagonal(2, 2, &[q1, q2]),
            r_mat: Mat::from_element(1, 1, r),
            p_mat: Mat::identity(2, 2),
            rho_slack: 1e6,
            tightening_mode: TighteningMode::ExactSupport,
            terminal_mode: TerminalMode::CostOnly,
            input_tightening_cap_frac: 0.9,
            ancillary_q: None,
            ancillary_r: None,
        };
        match design_ancillary(&sys, &cfg) {
            Err(e) => println!("q=({q1},{q2}) r={r}: cert FAILED ({e})"),
            Ok(anc) => {
                let a_cl = &a + &b * &anc.k_e;
                let mut rng = ChaCha12Rng::seed_from_u64(3);
                let plan = MpcPlan {
                    z_seq: vec![Vec64::from_column_slice(&[-0.3, 3.0]); 11],
                    v_seq: vec![Vec64::zeros(1); 10],
                    slack: 0.0,
                    qp_status: QpStatus::Solved,
                    fallback: false,
                };
                let mut s1step: f64 = 0.0;
                let mut s0: f64 = 0.0;
                let mut s1: f64 = 0.0;
                for _ in 0..200 {
                    let d_seq = (0..10).map(|_| Vec64::from_fn(2, |_, _| rng.gen_range(-w..w))).collect();
                    let ab_seq = (0..10).map(|_| sample_matrices_uniform(&sys, &mut rng)).collect();
                    let zeta = UncertaintyScenario { d_seq, ab_seq };
                    let traj = simulate_error(&zeta, &plan, &anc, &sys).unwrap();
                    s1step = s1step.max(traj[1][0].abs());
                    for e in &traj[..10] {
                        s0 = s0.max(e[0].abs());
                        s1 = s1.max(e[1].abs());
                    }
                }
                println!(
                    "q=({q1},{q2}) r={r}: K=[{:+.3},{:+.3}] acl01={:+.3} alpha={:.3} s1step={:.3} s0={:.3} s1={:.3} |K|1={:.3}",
                    anc.k_e[(0, 0)], anc.k_e[(0, 1)], a_cl[(0, 1)], anc.alpha_e, s1step, s0, s1,
                    anc.k_e[(0,0)].abs() + anc.k_e[(0,1)].abs()
                );
            }
        }
    }
}
