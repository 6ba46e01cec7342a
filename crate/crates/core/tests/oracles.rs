//! Factored production paths against dense Kronecker-form operators.

mod common;

use common::*;
use dfrc_waveform::ci::{build_ci_set, CiConstraintSet};
use dfrc_waveform::costs::{beam_gain, beam_pattern_mse, space_time_correlation, BpForm};
use dfrc_waveform::mm::{solve_subpulse_dual, DualTolerances, MajorizerKind, MmOperator};
use dfrc_waveform::scenario::{
    shift_columns, BeamPatternSpec, CommsConfig, WaveformBlock, Weights,
};
use dfrc_waveform::Complex64 as C64;

fn block(n: usize, l: usize, data: Vec<C64>) -> WaveformBlock {
    WaveformBlock::new(n, l, data).unwrap()
}

#[test]
fn space_time_correlation_matches_d_operator() {
    let t = Toy::new(3, 5, 5, 10.0, Weights::new(1.0, 1.0, 1.0));
    let mut r = rng(11);
    for _ in 0..5 {
        let x = rand_complex(&mut r, 15);
        let xb = block(3, 5, x.clone());
        for &q in &t.angles {
            for &qp in &t.angles {
                let (aq, aqp) = (steer(&t.geometry, q), steer(&t.geometry, qp));
                for tau in -4..=4 {
                    let chi = space_time_correlation(&xb, &t.geometry, q, qp, tau).unwrap();
                    let dense = form(&x, &d_operator(5, tau, &aq, &aqp), &x).norm_sqr();
                    assert!(rel(chi, dense) < 1e-10, "tau {tau}: {chi} vs {dense}");
                }
            }
        }
    }
}

#[test]
fn shift_columns_matches_shift_matrix_product() {
    let mut r = rng(3);
    let x = rand_complex(&mut r, 8);
    let xb = block(2, 4, x.clone());
    for tau in -3..=3 {
        let xm = CMat::from_column_slice(2, 4, &x);
        let want = xm * shift_matrix(4, tau);
        let got = shift_columns(&xb, tau);
        assert!(vec_rel(got.as_slice(), want.as_slice()) < 1e-15 || want.iter().all(|z| *z == ZERO));
    }
}

#[test]
fn beam_gain_is_a_matrix_quadratic_form() {
    let t = Toy::new(4, 8, 4, 15.0, Weights::new(1.0, 0.0, 0.0));
    let d = t.dense();
    let mut r = rng(5);
    let x = rand_complex(&mut r, 32);
    let xb = block(4, 8, x.clone());
    for (u, &th) in t.spec.angle_grid_deg.iter().enumerate() {
        let g = beam_gain(&xb, &t.geometry, th).unwrap();
        assert!(rel(g, form(&x, &d.a_grid[u], &x).re) < 1e-12);
    }
}

#[test]
fn beam_pattern_forms_agree_with_b_u() {
    let t = Toy::new(4, 4, 2, 18.0, Weights::new(1.0, 0.0, 0.0));
    assert_eq!(t.spec.len(), 11);
    let d = t.dense();
    for seed in 0..10 {
        let mut r = rng(seed);
        let x = rand_complex(&mut r, 16);
        let xb = block(4, 4, x.clone());
        let direct = beam_pattern_mse(&xb, &t.geometry, &t.spec, BpForm::Direct).unwrap();
        let bu = beam_pattern_mse(&xb, &t.geometry, &t.spec, BpForm::Bu).unwrap();
        let dense: f64 = d.b.iter().map(|b| form(&x, b, &x).norm_sqr()).sum();
        assert!(rel(direct, bu) < 1e-9);
        assert!(rel(direct, dense) < 1e-9);
    }
}

#[test]
fn objective_matches_dense_quartic() {
    let t = Toy::new(3, 6, 4, 10.0, Weights::new(1.0, 4.0, 4.0));
    let obj = t.objective();
    let d = t.dense();
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let x = rand_complex(&mut r, 18);
        let v = rand_complex(&mut r, 18);
        assert!(rel(obj.value(&x), d.g(&x)) < 1e-10);
        assert!(rel(obj.evaluate_bilinear(&x, &v).total, d.g_bilinear(&x, &v)) < 1e-10);
        assert!(rel(obj.evaluate_bilinear(&x, &x).total, obj.value(&x)) < 1e-12);
        assert_eq!(obj.evaluate_bilinear(&x, &vec![ZERO; 18]).total, 0.0);
    }
}

#[test]
fn bilinear_gradients_match_dense_chain_rule() {
    let t = Toy::new(2, 8, 4, 12.0, Weights::new(1.0, 4.0, 4.0));
    let obj = t.objective();
    let d = t.dense();
    let mut r = rng(9);
    let x = rand_complex(&mut r, 16);
    let v = rand_complex(&mut r, 16);
    let mut gx = vec![ZERO; 16];
    let mut gv = vec![ZERO; 16];
    for (w, m) in &d.terms {
        let c = form(&x, m, &v);
        for (g, mv) in gx.iter_mut().zip(matvec(m, &v)) {
            *g += mv * c.conj() * (2.0 * w);
        }
        for (g, mx) in gv.iter_mut().zip(matvec(&m.adjoint(), &x)) {
            *g += mx * c * (2.0 * w);
        }
    }
    assert!(vec_rel(&obj.grad_x(&x, &v), &gx) < 1e-9);
    assert!(vec_rel(&obj.grad_v(&x, &v), &gv) < 1e-9);
}

#[test]
fn isl_gradient_fft_path_matches_direct_sum() {
    let t = Toy::new(2, 8, 4, 30.0, Weights::new(0.0, 1.0, 1.0));
    let obj = t.objective();
    let d = t.dense();
    let mut r = rng(21);
    let x = rand_complex(&mut r, 16);
    let v = rand_complex(&mut r, 16);
    let mut gx = vec![ZERO; 16];
    for (w, m) in &d.terms {
        let c = form(&x, m, &v);
        for (g, mv) in gx.iter_mut().zip(matvec(m, &v)) {
            *g += mv * c.conj() * (2.0 * w);
        }
    }
    assert!(vec_rel(&obj.grad_x(&x, &v), &gx) < 1e-9);
}

#[test]
fn full_gradient_is_sum_of_block_gradients() {
    let t = Toy::new(3, 5, 3, 10.0, Weights::new(1.0, 4.0, 4.0));
    let obj = t.objective();
    let mut r = rng(4);
    let x = rand_complex(&mut r, 15);
    let fd = fd_grad(|y| obj.value(y), &x, 1e-6);
    let g = obj.grad(&x);
    assert!(vec_rel(&g, &fd) < 1e-6);
    let sum: Vec<C64> = obj.grad_x(&x, &x).iter().zip(obj.grad_v(&x, &x)).map(|(a, b)| a + b).collect();
    assert!(vec_rel(&sum, &g) < 1e-12);
}

#[test]
fn phi_beam_only_matches_b_u_sum() {
    let geometry = dfrc_waveform::scenario::ArrayGeometry::half_wavelength(2, 2).unwrap();
    let spec = BeamPatternSpec::new(vec![-40.0, 0.0, 40.0], vec![1.0, 0.0, 1.0]).unwrap();
    let t = Toy {
        geometry,
        spec,
        angles: vec![-40.0, 40.0],
        max_lag: 2,
        weights: Weights::new(1.0, 0.0, 0.0),
        block_len: 2,
    };
    let d = t.dense();
    let op = MmOperator::new(t.objective(), MajorizerKind::Proposed);
    let mut r = rng(8);
    let xt = rand_unit(&mut r, 4);
    let probe = rand_complex(&mut r, 4);
    let phi = op.phi_at(&xt);
    let dense = d.phi(&xt);
    assert!(vec_rel(&phi.matvec(&probe), &matvec(&dense, &probe)) < 1e-10);
    // without the E correction the Phi_1 part is sum_u conj(x^H B_u x) B_u
    let mut phi1 = CMat::zeros(4, 4);
    for b in &d.b {
        phi1 += b * form(&xt, b, &xt).conj();
    }
    let e_part = &dense * C64::new(0.5, 0.0) - &phi1;
    let want = -d.e_matrix().component_mul(&outer(&xt, &xt));
    assert!((e_part - want).norm() < 1e-10 * phi1.norm().max(1.0));
}

#[test]
fn phi_matvec_matches_dense_lemma_form() {
    for seed in 0..5 {
        let t = Toy::new(2, 3, 3, 20.0, Weights::new(1.0, 4.0, 4.0));
        let d = t.dense();
        let op = MmOperator::new(t.objective(), MajorizerKind::Proposed);
        let mut r = rng(40 + seed);
        let xt = rand_unit(&mut r, 6);
        let probe = rand_complex(&mut r, 6);
        let phi = op.phi_at(&xt);
        let dense = d.phi(&xt);
        assert!((phi.to_dense() - &dense).norm() < 1e-9 * dense.norm());
        assert!(vec_rel(&phi.matvec(&probe), &matvec(&dense, &probe)) < 1e-9);
        let rows: Vec<f64> = (0..6).map(|i| dense.row(i).iter().map(|z| z.norm()).sum()).collect();
        for (a, b) in phi.row_abs_sums().iter().zip(&rows) {
            assert!(rel(*a, *b) < 1e-9);
        }
    }
}

#[test]
fn zero_weights_give_zero_phi() {
    let t = Toy::new(2, 3, 2, 20.0, Weights::new(0.0, 0.0, 0.0));
    let op = MmOperator::new(t.objective(), MajorizerKind::Proposed);
    let mut r = rng(1);
    let xt = rand_unit(&mut r, 6);
    let p = rand_complex(&mut r, 6);
    assert!(op.phi_at(&xt).matvec(&p).iter().all(|z| z.norm() == 0.0));
}

#[test]
fn quadratic_majorizer_dominates_on_unit_circle() {
    let t = Toy::new(2, 3, 3, 20.0, Weights::new(1.0, 4.0, 4.0));
    let d = t.dense();
    let mut r = rng(77);
    let xt = rand_unit(&mut r, 6);
    let phi = d.phi(&xt);
    let c = d.g(&xt) - form(&xt, &phi, &xt).re;
    for _ in 0..500 {
        let x = rand_unit(&mut r, 6);
        let bound = form(&x, &phi, &x).re + c;
        assert!(bound >= d.g(&x) - 1e-8 * d.g(&x).max(1.0));
    }
}

#[test]
fn linear_surrogate_is_tangent_and_dominates() {
    for kind in [MajorizerKind::Proposed, MajorizerKind::LambdaMax] {
        let t = Toy::new(3, 6, 4, 10.0, Weights::new(1.0, 4.0, 4.0));
        let obj = t.objective();
        let op = MmOperator::new(obj.clone(), kind);
        let mut r = rng(12);
        let xt = rand_unit(&mut r, 18);
        let lin = op.majorize(&xt);
        let g0 = obj.value(&xt);
        assert!((lin.surrogate(&xt) - g0).abs() <= 1e-6 * g0);
        for _ in 0..1000 {
            let x = rand_unit(&mut r, 18);
            assert!(lin.surrogate(&x) >= obj.value(&x) - 1e-7 * g0.max(1.0), "{kind:?}");
        }
    }
}

#[test]
fn ci_rows_match_stacked_matrix() {
    let comms = CommsConfig::random(2, 4, 3, 4, 6.0, 0.01, 13).unwrap();
    let set = build_ci_set(&comms, 1.0, 4, 3).unwrap();
    let mut r = rng(13);
    let x = rand_complex(&mut r, 12);
    let rows = 3 * set.per_subpulse();
    // block-diagonal H~ with rows h^_{l,m}^H acting on subpulse l
    let h = CMat::from_fn(rows, 12, |row, col| {
        let (l, m) = (row / set.per_subpulse(), row % set.per_subpulse());
        if col / 4 == l {
            set.rotated_channel(l, m)[col % 4].conj()
        } else {
            ZERO
        }
    });
    let want = matvec(&h, &x);
    assert!(vec_rel(&set.apply(&x), &want) < 1e-12);
    let rep = set.margins(&block(4, 3, x)).unwrap();
    let th = set.stacked_thresholds();
    for (i, w) in want.iter().enumerate() {
        let got = rep.margins[i / set.per_subpulse()][i % set.per_subpulse()];
        assert!((got - (w.re - th[i])).abs() < 1e-12 * (1.0 + w.re.abs()));
    }
    let sv = h.singular_values().max();
    assert!(rel(set.spectral_norm(), sv) < 1e-10);
}

/// Exact when the dual solve converges. With both half-planes active the
/// phase-only problem can have a duality gap; the solve then reports
/// non-convergence and must still return a feasible point no better than
/// the dual bound allows.
#[test]
fn dual_solve_matches_phase_grid_search() {
    let grid = 128usize;
    let step = std::f64::consts::TAU / grid as f64;
    let mut exact = 0;
    for seed in 0..20u64 {
        let comms = CommsConfig::random(1, 2, 1, 4, 0.0, 0.01, seed % 6).unwrap();
        let set: CiConstraintSet = build_ci_set(&comms, 1.0, 2, 1).unwrap();
        let mut r = rng(500 + seed);
        let d = rand_complex(&mut r, 2);
        let hs = set.subpulse_channels(0);
        let gam = set.thresholds();
        let sol = solve_subpulse_dual(d.as_slice(), hs, gam, &[0.0, 0.0], &[C64::new(1.0, 0.0); 2], DualTolerances::default())
            .unwrap();
        let cost = |x: &[C64]| -> f64 { d.iter().zip(x).map(|(a, b)| (a.conj() * b).re).sum() };
        let mut best = f64::INFINITY;
        for i in 0..grid {
            for j in 0..grid {
                let x = [C64::from_polar(1.0, i as f64 * step), C64::from_polar(1.0, j as f64 * step)];
                let feasible = (0..2).all(|m| {
                    let h = &hs[m * 2..(m + 1) * 2];
                    h.iter().zip(&x).map(|(a, b)| (a.conj() * b).re).sum::<f64>() >= gam[m]
                });
                if feasible {
                    best = best.min(cost(&x));
                }
            }
        }
        assert!(best.is_finite(), "seed {seed}: empty feasible grid");
        assert!(sol.max_violation <= 1e-4, "seed {seed}: violation {}", sol.max_violation);
        let got = cost(&sol.x);
        // dual value at the returned multipliers lower-bounds the optimum
        let z: Vec<C64> = (0..2).map(|i| -d[i] + hs[i] * sol.nu[0] + hs[2 + i] * sol.nu[1]).collect();
        let dual = sol.nu[0] * gam[0] + sol.nu[1] * gam[1] - z.iter().map(|v| v.norm()).sum::<f64>();
        assert!(got >= dual - 1e-9, "seed {seed}");
        if sol.converged {
            exact += 1;
            let lip: f64 = d.iter().map(|z| z.norm()).sum::<f64>() * step;
            assert!((got - best).abs() <= lip, "seed {seed}: dual {got} vs grid {best}");
        }
    }
    assert!(exact >= 10, "only {exact} of 20 dual solves converged");
}
