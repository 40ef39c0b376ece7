fn main() {
    use raar_mpc::criticality;
    use raar_mpc::qp::QpStatus;
    use raar_mpc::risk_engine::*;
    use raar_mpc::system::{DisturbanceSchedule, IntervalBox, UncertainLinearSystem};
    use raar_mpc::tube::{design_ancillary, MpcConfig, MpcPlan, TerminalMode, TighteningMode};
    use raar_mpc::{Mat, Vec64};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    let a = Mat::from_row_slice(2, 2, &[1.0, 0.0075, -0.143, 0.996]);
    let b = Mat::from_row_slice(2, 1, &[4.798, 0.115]);
    let g = Mat::identity(2, 2);
    let support = IntervalBox::symmetric(Vec64::from_element(2, 0.14)).unwrap();
    let sys = UncertainLinearSystem::new(a, b, g, 0.05, support).unwrap();
    let sched = DisturbanceSchedule::stationary(sys.d_support().clone());
    let cfg = MpcConfig {
        horizon_n: 10,
        q_mat: Mat::from_partial_diagonal(2, 2, &[1.0, 10.0]),
        r_mat: Mat::identity(1, 1),
        p_mat: Mat::identity(2, 2),
        rho_slack: 1e6,
        tightening_mode: TighteningMode::PaperL1,
        terminal_mode: TerminalMode::CostOnly,
        input_tightening_cap_frac: 0.9,
        ancillary_q: None,
        ancillary_r: None,
    };
    let anc = design_ancillary(&sys, &cfg).unwrap();
    let plan = MpcPlan {
        z_seq: vec![Vec64::zeros(2); 11],
        v_seq: vec![Vec64::zeros(1); 10],
        slack: 0.0,
        qp_status: QpStatus::Solved,
        fallback: false,
    };

    for (label, n_seed, cycles, kappa) in [
        ("train500/5cyc/k2.0", 0usize, 5u64, 2.0f64),
        ("seed50/5cyc/k2.0", 50usize, 5u64, 2.0f64),
        ("seed50/5cyc/k0.0", 50, 5, 0.0),
        ("seed50/5cyc/k1.0", 50, 5, 1.0),
        ("seed50/10cyc/k2.0", 50, 10, 2.0),
        ("seed50/15cyc/k2.0", 50, 15, 2.0),
        ("seed50/20cyc/k2.0", 50, 20, 2.0),
        ("seed100/5cyc/k2.0", 100, 5, 2.0),
    ] {
        let trials = 20;
        let mut hits = 0;
        for seed in 0..trials {
            // n_seed == 0 encodes the "train at the default candidate pool
            // of 500, compare on 50" variant.
            let train_pool = if n_seed == 0 { 500 } else { 50 };
            let seed_n = if n_seed == 0 { 50 } else { n_seed };
            let mut engine = RiskEngine::new(
                RiskEngineConfig {
                    n_cand: train_pool,
                    k_crit: 10,
                    n_seed_train: seed_n,
                    kappa_ucb: kappa,
                    ..Default::default()
                },
                &sys,
            )
            .unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(5000 + seed);
            engine.bootstrap(&sys, &sched, &plan, &anc, &mut rng).unwrap();
            for c in 0..cycles {
                engine.update_lpes(&plan, &sys, &sched, &anc, c, &mut rng).unwrap();
            }
            let cands = engine.generate_candidates(&sys, &sched, 10, 50, &mut rng);
            let tg: Vec<f64> = cands
                .iter()
                .map(|z| criticality::criticality(z, &plan, &anc, &sys).unwrap())
                .collect();
            let argmax = tg
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .unwrap()
                .0;
            let model = engine.model().unwrap();
            let mut scored: Vec<(usize, f64)> = cands
                .iter()
                .enumerate()
                .map(|(i, z)| {
                    let f = engine.extractor().extract(z).unwrap();
                    (i, pce(model, &f, kappa))
                })
                .collect();
            scored.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
            if scored.iter().take(10).any(|&(i, _)| i == argmax) {
                hits += 1;
            }
        }
        println!("{label}: containment {hits}/{trials}");
    }
}
