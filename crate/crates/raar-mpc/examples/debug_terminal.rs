fn main() {
    use raar_mpc::lp::{self, LpOutcome};
    use raar_mpc::qp::QpSettings;
    use raar_mpc::risk_engine::LpesSupport;
    use raar_mpc::system::{IntervalBox, PolytopeConstraint, UncertainLinearSystem};
    use raar_mpc::tube::*;
    use raar_mpc::{Mat, Vec64};

    let a = Mat::from_row_slice(2, 2, &[1.0, 0.0075, -0.143, 0.996]);
    let b = Mat::from_row_slice(2, 1, &[4.798, 0.115]);
    let g = Mat::identity(2, 2);
    let support = IntervalBox::symmetric(Vec64::from_element(2, 0.14)).unwrap();
    let sys = UncertainLinearSystem::new(a.clone(), b.clone(), g, 0.05, support).unwrap();
    let q = Mat::from_partial_diagonal(2, 2, &[1.0, 10.0]);
    let r = Mat::identity(1, 1);
    let p = raar_mpc::riccati::solve_dare(&a, &b, &q, &r, 1e-13, 100_000).unwrap();
    let cfg = MpcConfig {
        horizon_n: 10,
        q_mat: q.clone(),
        r_mat: r.clone(),
        p_mat: p,
        rho_slack: 1e6,
        tightening_mode: TighteningMode::ExactSupport,
        terminal_mode: TerminalMode::CostOnly,
        input_tightening_cap_frac: 0.9,
        ancillary_q: None,
        ancillary_r: None,
    };
    let x_con =
        PolytopeConstraint::new(Mat::from_row_slice(1, 2, &[1.0, 0.0]), Vec64::zeros(1)).unwrap();
    let u_con = PolytopeConstraint::symmetric_box(&Vec64::from_element(1, 0.2)).unwrap();
    let anc = design_ancillary(&sys, &cfg).unwrap();
    println!("K_e = {:?}", anc.k_e.as_slice());
    println!("alpha_e = {}", anc.alpha_e);
    let a_cl = &a + &b * &anc.k_e;
    println!("A_cl = {:?}", a_cl.as_slice());
    let eig = a_cl.complex_eigenvalues();
    println!("A_cl eigs = {:?}", eig.as_slice());
    println!("P_e = {:?}", anc.p_e.as_slice());

    let term = design_terminal(&sys, &cfg, &anc, &x_con, &u_con, 0.05).unwrap();
    println!("terminal rows = {}", term.x_f.n_rows());
    for i in 0..term.x_f.n_rows().min(30) {
        println!(
            "  row {i}: [{:+.4}, {:+.4}] <= {:.4}",
            term.x_f.c_mat()[(i, 0)],
            term.x_f.c_mat()[(i, 1)],
            term.x_f.c_vec()[i]
        );
    }
    // How much x2 can the terminal set hold at x1 = -0.1?
    for x1 in [-0.05f64, -0.1, -0.2, -0.5] {
        // max x2 s.t. terminal rows + x1 fixed: add rows x1 <= x1, -x1 <= -x1.
        let mut gmat = term.x_f.c_mat().clone_owned();
        let mut h = term.x_f.c_vec().clone_owned();
        let nr = gmat.nrows();
        gmat = gmat.insert_row(nr, 0.0);
        gmat[(nr, 0)] = 1.0;
        h = h.insert_row(nr, x1);
        let nr2 = gmat.nrows();
        gmat = gmat.insert_row(nr2, 0.0);
        gmat[(nr2, 0)] = -1.0;
        h = h.insert_row(nr2, -x1);
        match lp::maximize(&Vec64::from_column_slice(&[0.0, 1.0]), &gmat, &h).unwrap() {
            LpOutcome::Optimal { value, .. } => println!("max x2 in X_f at x1={x1}: {value:.4}"),
            other => println!("max x2 at x1={x1}: {other:?}"),
        }
    }

    // Slack at a sweep of states.
    let mut mpc = TubeMpc::new(
        &sys,
        cfg,
        anc,
        term,
        x_con,
        u_con,
        QpSettings::default(),
    )
    .unwrap();
    let lpes = LpesSupport::zeros(10, 2);
    for x1 in [-0.1f64, -0.2, -0.3, -0.5, -1.0] {
        let x = Vec64::from_column_slice(&[x1, 0.0]);
        let plan = mpc.build_and_solve(&x, &lpes, 0.05, None).unwrap();
        println!(
            "x1={x1}: slack={:.5} zN=({:+.4},{:+.4}) v0={:+.4} status={:?}",
            plan.slack,
            plan.z_seq[10][0],
            plan.z_seq[10][1],
            plan.v_seq[0][0],
            plan.qp_status
        );
    }
}
