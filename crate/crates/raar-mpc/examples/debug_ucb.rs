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

    let mut engine = RiskEngine::new(
        RiskEngineConfig { n_cand: 50, k_crit: 10, n_seed_train: 30, ..Default::default() },
        &sys,
    )
    .unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(1001);
    engine.bootstrap(&sys, &sched, &plan, &anc, &mut rng).unwrap();
    for cycle in 0..5 {
        let (_, d) = engine.update_lpes(&plan, &sys, &sched, &anc, cycle, &mut rng).unwrap();
        println!(
            "cycle {cycle}: n={} lml={:.2} gammas(sel) max={:.4}",
            d.train_size,
            d.gp_lml,
            d.selected_gammas.iter().cloned().fold(f64::MIN, f64::max)
        );
    }
    let model = engine.model().unwrap();
    println!("hyper: sf2={:.4} sn2={:.6}", model.hyper().signal_var, model.hyper().noise_var);
    let ls = &model.hyper().length_scales;
    let mut ls_sorted: Vec<(usize, f64)> = ls.iter().cloned().enumerate().collect();
    ls_sorted.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());
    println!("smallest length-scales (most relevant dims): {:?}", &ls_sorted[..6]);

    // Fresh pool: compare PCE ranking with true gamma.
    let cands = engine.generate_candidates(&sys, &sched, 10, 50, &mut rng);
    let mut rows = Vec::new();
    for (i, z) in cands.iter().enumerate() {
        let f = engine.extractor().extract(z).unwrap();
        let (mu, var) = model.predict(&f);
        let gamma = criticality::criticality(z, &plan, &anc, &sys).unwrap();
        rows.push((i, gamma, mu, var.sqrt()));
    }
    let mut by_gamma = rows.clone();
    by_gamma.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    println!("\ntop-10 by TRUE gamma:");
    for r in by_gamma.iter().take(10) {
        println!("  idx {:2} gamma {:+.4} mu {:+.4} sd {:.4} pce {:+.4}", r.0, r.1, r.2, r.3, r.2 + 2.0 * r.3);
    }
    let mut by_pce = rows.clone();
    by_pce.sort_by(|a, b| (b.2 + 2.0 * b.3).partial_cmp(&(a.2 + 2.0 * a.3)).unwrap());
    println!("top-10 by PCE:");
    for r in by_pce.iter().take(10) {
        println!("  idx {:2} gamma {:+.4} mu {:+.4} sd {:.4} pce {:+.4}", r.0, r.1, r.2, r.3, r.2 + 2.0 * r.3);
    }
    // Rank correlation (Spearman-ish via Pearson on ranks).
    let n = rows.len() as f64;
    let rank = |v: &[(usize, f64, f64, f64)], key: &dyn Fn(&(usize, f64, f64, f64)) -> f64| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| key(&v[i]).partial_cmp(&key(&v[j])).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let rg = rank(&rows, &|r| r.1);
    let rp = rank(&rows, &|r| r.2 + 2.0 * r.3);
    let mean = (n - 1.0) / 2.0;
    let mut num = 0.0;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for i in 0..rows.len() {
        num += (rg[i] - mean) * (rp[i] - mean);
        d1 += (rg[i] - mean).powi(2);
        d2 += (rp[i] - mean).powi(2);
    }
    println!("\nrank correlation gamma vs PCE: {:.3}", num / (d1.sqrt() * d2.sqrt()));

    // Manual smooth-hyper experiment: fit the same training set with
    // distance-aware length-scales and check the ranking quality.
    use raar_mpc::gp;
    let model_raw = engine.model().unwrap();
    let d_f = model_raw.x_train().ncols() as f64;
    let y_ms = model_raw.y_train().iter().map(|v| v * v).sum::<f64>()
        / model_raw.y_train().len() as f64;
    for (ls, sn_frac) in [(d_f.sqrt(), 0.1), (d_f.sqrt(), 0.3), (2.0 * d_f.sqrt(), 0.1), (3.0, 0.1)] {
        let hyper = gp::GpHyperparams {
            signal_var: y_ms,
            length_scales: Vec64::from_element(d_f as usize, ls),
            noise_var: sn_frac * y_ms,
        };
        let m2 = gp::fit(model_raw.x_train().clone(), model_raw.y_train().clone(), hyper).unwrap();
        let mut rows2 = Vec::new();
        for (i, z) in cands.iter().enumerate() {
            let f = engine.extractor().extract(z).unwrap();
            let (mu, var) = m2.predict(&f);
            let gamma = criticality::criticality(z, &plan, &anc, &sys).unwrap();
            rows2.push((i, gamma, mu, var.sqrt()));
        }
        let rg2 = rank(&rows2, &|r| r.1);
        let rp2 = rank(&rows2, &|r| r.2 + 2.0 * r.3);
        let mut num2 = 0.0;
        let mut e1 = 0.0;
        let mut e2 = 0.0;
        for i in 0..rows2.len() {
            num2 += (rg2[i] - mean) * (rp2[i] - mean);
            e1 += (rg2[i] - mean).powi(2);
            e2 += (rp2[i] - mean).powi(2);
        }
        println!(
            "manual l={ls:.1} sn={:.2}*ms: lml={:.1} rank-corr={:.3}",
            sn_frac,
            m2.log_marginal_likelihood(),
            num2 / (e1.sqrt() * e2.sqrt())
        );
    }
}
