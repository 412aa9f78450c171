mod common;

use common::*;
use specfuse_core::optics::Arm;

fn instances() -> Vec<((usize, usize, usize), usize, usize)> {
    let mut out = Vec::new();
    for &(m, n, l) in &[(1, 1, 1), (2, 2, 1), (2, 4, 2), (4, 4, 2), (4, 4, 4), (4, 8, 8), (8, 8, 4), (8, 4, 2), (2, 2, 8), (4, 2, 16)] {
        for d_s in [1, 2, 4] {
            for d_l in [1, 2, 4] {
                if m % d_s == 0 && n % d_s == 0 && l % d_l == 0 && m * n * l <= 256 {
                    out.push(((m, n, l), d_s, d_l));
                }
            }
        }
    }
    out
}

#[test]
fn forward_and_adjoint_match_dense_matrices() {
    let mut checked = 0;
    for (k, (dims, d_s, d_l)) in instances().into_iter().enumerate() {
        for dispersion in [false, true] {
            let op = random_operator(dims, d_s, d_l, 1.0, dispersion, 10 + k as u64);
            let x = random_cube(dims, k as u64, 0.0, 1.0);
            let (ac, am) = (dense_cassi(&op), dense_mcfa(&op));
            assert!(max_abs(op.cassi_forward(&x).unwrap().data(), &ac.apply(x.data())) <= 1e-6);
            assert!(max_abs(op.mcfa_forward(&x).unwrap().data(), &am.apply(x.data())) <= 1e-6);
            let yc = random_measurement(Arm::Cassi, op.cassi_shape(), 100 + k as u64);
            let ym = random_measurement(Arm::Mcfa, op.mcfa_shape(), 200 + k as u64);
            assert!(max_abs(op.cassi_adjoint(&yc).unwrap().data(), &ac.apply_t(yc.data())) <= 1e-6);
            assert!(max_abs(op.mcfa_adjoint(&ym).unwrap().data(), &am.apply_t(ym.data())) <= 1e-6);
            checked += 1;
        }
    }
    assert!(checked >= 30, "only {checked} instances");
}

#[test]
fn aperture_gradients_match_finite_differences() {
    let dims = (4, 4, 2);
    let op = random_operator(dims, 2, 1, 1.0, true, 5);
    let x = random_cube(dims, 6, 0.0, 1.0);
    let yc = random_measurement(Arm::Cassi, op.cassi_shape(), 7);
    let ym = random_measurement(Arm::Mcfa, op.mcfa_shape(), 8);
    let objective = |o: &specfuse_core::optics::FusionOperator| {
        let (gc, gm) = o.forward(&x).unwrap();
        gc.dot(&yc) + gm.dot(&ym)
    };
    let (wc, wm) = op.aperture_gradients(&x, &yc, &ym).unwrap();
    let h = 1e-6;
    for k in 0..wc.len() {
        let mut p = op.clone();
        p.update_apertures(|c, _| c.weights_mut()[k] += h);
        let mut q = op.clone();
        q.update_apertures(|c, _| c.weights_mut()[k] -= h);
        let fd = (objective(&p) - objective(&q)) / (2.0 * h);
        assert!(rel_err(fd, wc[k], 1e-6) <= 1e-6, "cassi {k}: fd={fd} an={}", wc[k]);
    }
    for k in 0..wm.len() {
        let mut p = op.clone();
        p.update_apertures(|_, m| m.weights_mut()[k] += h);
        let mut q = op.clone();
        q.update_apertures(|_, m| m.weights_mut()[k] -= h);
        let fd = (objective(&p) - objective(&q)) / (2.0 * h);
        assert!(rel_err(fd, wm[k], 1e-6) <= 1e-6, "mcfa {k}: fd={fd} an={}", wm[k]);
    }
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
    #[test]
    fn adjoint_identity_holds(seed in 0u64..10_000, pick in 0usize..1000, dispersion: bool) {
        let inst = instances();
        let (dims, d_s, d_l) = inst[pick % inst.len()];
        let op = random_operator(dims, d_s, d_l, 3.0, dispersion, seed);
        let x = random_cube(dims, seed + 1, -1.0, 1.0);
        let yc = random_measurement(Arm::Cassi, op.cassi_shape(), seed + 2);
        let ym = random_measurement(Arm::Mcfa, op.mcfa_shape(), seed + 3);
        let lhs = op.cassi_forward(&x).unwrap().dot(&yc) + op.mcfa_forward(&x).unwrap().dot(&ym);
        let rhs = x.dot(&op.cassi_adjoint(&yc).unwrap()) + x.dot(&op.mcfa_adjoint(&ym).unwrap());
        proptest::prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn forward_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let dims = (4, 4, 4);
        let op = random_operator(dims, 2, 2, 1.0, true, seed);
        let x = random_cube(dims, seed + 1, -1.0, 1.0);
        let y = random_cube(dims, seed + 2, -1.0, 1.0);
        let mut combo = x.scaled(a);
        combo.axpy(b, &y);
        let lhs = op.cassi_forward(&combo).unwrap();
        let mut rhs = op.cassi_forward(&x).unwrap().scaled(a);
        rhs.axpy(b, &op.cassi_forward(&y).unwrap());
        proptest::prop_assert!(max_abs(lhs.data(), rhs.data()) <= 1e-10);
    }
}
