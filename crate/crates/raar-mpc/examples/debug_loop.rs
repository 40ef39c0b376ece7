// Stationary-envelope analysis: for a constant hover plan at (z1, z2) and
// candidate half-width w, what error envelope does the LPES see, and where
// does the x2-equilibrium fixed point land?
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
    let cfg = MpcConfig {
        horizon_n: 10,
        q_mat: Mat::from_partial_diagonal(2, 2, &[1.0, 10.0]),
        r_mat: Mat::identity(1, 1),
        p_mat: Mat::identity(2, 2),
        rho_slack: 1e6,
        tightening_mode: TighteningMode::ExactSupport,
        terminal_mode: TerminalMode::CostOnly,
        input_tightening_cap_frac: 0.9,
        ancillary_q: None,
        ancillary_r: None,
    };
    let anc = design_ancillary(&sys, &cfg).unwrap();
    println!("K_e = [{:.3}, {:.3}] alpha={:.3}", anc.k_e[(0,0)], anc.k_e[(0,1)], anc.alpha_e);
    let mut rng = ChaCha12Rng::seed_from_u64(7);

    // envelope of |e1_k|, |e2_k| over 200 scenarios for a constant plan.
    let mut envelope = |z1: f64, z2: f64, w: f64| -> (f64, f64, f64) {
        let z = Vec64::from_column_slice(&[z1, z2]);
        let v = Vec64::zeros(1);
        let plan = MpcPlan {
            z_seq: vec![z.clone(); 11],
            v_seq: vec![v.clone(); 10],
            slack: 0.0,
            qp_status: QpStatus::Solved,
            fallback: false,
        };
        let mut s0_step1: f64 = 0.0;
        let mut s0: f64 = 0.0;
        let mut s1: f64 = 0.0;
        for _ in 0..200 {
            let d_seq = (0..10)
                .map(|_| Vec64::from_fn(2, |_, _| rng.gen_range(-w..w)))
                .collect();
            let ab_seq = (0..10).map(|_| sample_matrices_uniform(&sys, &mut rng)).collect();
            let zeta = UncertaintyScenario { d_seq, ab_seq };
            let traj = simulate_error(&zeta, &plan, &anc, &sys).unwrap();
            s0_step1 = s0_step1.max(traj[1][0].abs());
            for e in &traj[..10] {
                s0 = s0.max(e[0].abs());
                s1 = s1.max(e[1].abs());
            }
        }
        (s0_step1, s0, s1)
    };

    for w in [0.0875f64, 0.14, 0.22, 0.35, 0.44] {
        println!("\nw = {w}");
        for x2 in [0.0f64, 1.0, 3.0, 10.0, 40.0] {
            let z1 = -0.3;
            let (s1step, s0, s1) = envelope(z1, x2, w);
            println!(
                "  z=({z1},{x2:5.1}): s1_step1={s1step:.3} sـmax0={s0:.3} s_max1={s1:.3} -> hover={:.3} x2eq={:.1}",
                s1step + 0.05,
                34.2 * (s1step + 0.05)
            );
        }
    }
}
