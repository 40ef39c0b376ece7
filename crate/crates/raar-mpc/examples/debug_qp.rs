fn main() {
    use raar_mpc::qp::*;
    use raar_mpc::{Mat, Vec64};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    let n = 6; let m = 10;
    let mker = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let p = &mker * mker.transpose() + Mat::identity(n, n) * 0.1;
    let q = Vec64::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let a = Mat::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let z0 = Vec64::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
    let az0 = &a * &z0;
    let l = Vec64::from_fn(m, |i, _| az0[i] - rng.gen_range(0.3..1.5));
    let u = Vec64::from_fn(m, |i, _| az0[i] + rng.gen_range(0.3..1.5));
    let prob = QpProblem::new(p, q, a, l, u).unwrap();
    for (ea, mi) in [(1e-6, 2000usize), (1e-8, 20000)] {
        let s = QpSettings { eps_abs: ea, eps_rel: ea, max_iter: mi, ..Default::default() };
        let sol = solve(&prob, &s).unwrap();
        println!("eps={ea}: status={:?} iters={} rp={:.3e} rd={:.3e}", sol.status, sol.iterations, sol.primal_residual, sol.dual_residual);
    }
}
