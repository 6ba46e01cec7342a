mod common;

use common::*;
use dfrc_waveform::ci::{build_ci_set, initialize_waveform, CiConstraintSet};
use dfrc_waveform::ladmm::{
    augmented_lagrangian, run_ladmm, update_multipliers, update_x, LadmmParams, LadmmState, LadmmStatus,
};
use dfrc_waveform::mm::{run_mm, MajorizerKind, MmOperator, MmParams};
use dfrc_waveform::scenario::{CommsConfig, WaveformBlock, Weights};

fn small_problem(seed: u64) -> (Toy, CiConstraintSet, WaveformBlock) {
    let t = Toy::new(4, 8, 4, 2.0, Weights::new(1.0, 4.0, 4.0));
    let comms = CommsConfig::random(1, 4, 8, 4, 3.0, 0.01, seed).unwrap();
    let ci = build_ci_set(&comms, 1.0, 4, 8).unwrap();
    let init = initialize_waveform(&ci, 4, 8, seed).unwrap();
    (t, ci, init.block)
}

#[test]
fn mm_with_zero_weights_and_no_users_stops_after_one_pass() {
    let t = Toy::new(3, 5, 3, 10.0, Weights::new(0.0, 0.0, 0.0));
    let x = WaveformBlock::random_unit_modulus(3, 5, 9);
    let op = MmOperator::new(t.objective(), MajorizerKind::Proposed);
    let res = run_mm(&x, &op, &CiConstraintSet::empty(3, 5), &MmParams::default()).unwrap();
    assert!(res.converged);
    assert_eq!(res.iterations, 1);
    assert_eq!(res.final_objective(), 0.0);
    assert!(vec_rel(res.block.as_slice(), x.as_slice()) < 1e-12);
}

#[test]
fn ladmm_with_zero_weights_and_no_users_returns_the_input() {
    let t = Toy::new(3, 5, 3, 10.0, Weights::new(0.0, 0.0, 0.0));
    let x = WaveformBlock::random_unit_modulus(3, 5, 4);
    let res = run_ladmm(&x, &t.objective(), &CiConstraintSet::empty(3, 5), &LadmmParams::default()).unwrap();
    assert_eq!(res.status, LadmmStatus::Converged);
    assert_eq!(res.iterations(), 0);
    assert!(vec_rel(res.block.as_slice(), x.as_slice()) < 1e-12);
}

#[test]
fn mm_small_instance_descends_and_certifies() {
    for seed in 0..3 {
        let (t, ci, x0) = small_problem(seed);
        for kind in [MajorizerKind::Proposed, MajorizerKind::LambdaMax] {
            let op = MmOperator::new(t.objective(), kind);
            let params = MmParams {
                max_iter: 300,
                majorizer: kind,
                ..MmParams::default()
            };
            let res = run_mm(&x0, &op, &ci, &params).unwrap();
            let h = &res.state.objective_history;
            for w in h.windows(2) {
                assert!(w[1] <= w[0] + 1e-8 * w[0].abs().max(1.0), "seed {seed}: {} -> {}", w[0], w[1]);
            }
            assert!(h.last().unwrap() < &h[0]);
            assert!(res.block.is_constant_modulus(1.0, 1e-12));
            assert!(res.margins.max_violation() <= 1e-4, "seed {seed}: {}", res.margins.max_violation());
            assert!(res.slackness <= 1e-3, "seed {seed}: {}", res.slackness);
        }
    }
}

#[test]
fn mm_serial_and_parallel_agree() {
    let (t, ci, x0) = small_problem(5);
    let op = MmOperator::new(t.objective(), MajorizerKind::Proposed);
    let base = MmParams {
        max_iter: 50,
        ..MmParams::default()
    };
    let a = run_mm(&x0, &op, &ci, &base).unwrap();
    let b = run_mm(&x0, &op, &ci, &MmParams { parallel: false, ..base }).unwrap();
    assert_eq!(a.state.x, b.state.x);
    assert_eq!(a.state.objective_history, b.state.objective_history);
}

#[test]
fn x_step_is_a_gradient_step_of_the_lagrangian() {
    let (t, ci, x0) = small_problem(1);
    let obj = t.objective();
    let params = LadmmParams::default();
    let mut r = rng(11);
    let mut st = LadmmState::init(x0.as_slice(), &ci, 5e5, 5e5);
    st.v = rand_complex(&mut r, 32);
    st.eta1 = rand_complex(&mut r, 32).iter().map(|z| z * 0.01).collect();
    let before = st.x.clone();
    let g = dfrc_waveform::ladmm::grad_x(&obj, &ci, &params, &st);
    update_x(&obj, &ci, &params, &mut st).unwrap();
    for i in 0..32 {
        assert!((st.x[i] - (before[i] - g[i] / st.mu_x)).norm() < 1e-12);
    }
}

#[test]
fn multipliers_accumulate_the_residuals() {
    let (_, ci, x0) = small_problem(2);
    let mut r = rng(3);
    let mut st = LadmmState::init(x0.as_slice(), &ci, 1.0, 1.0);
    st.v = rand_complex(&mut r, 32);
    st.u = rand_unit(&mut r, 32);
    st.z = rand_complex(&mut r, st.z.len());
    let (eta1, eta2, rho) = (st.eta1.clone(), st.eta2.clone(), st.rho.clone());
    let hx = ci.apply(&st.x);
    let (r1, r2, r3) = update_multipliers(&ci, &mut st);
    let mut s1 = 0.0;
    let mut s3 = 0.0;
    for i in 0..32 {
        let d = st.x[i] - st.v[i];
        assert!((st.eta1[i] - eta1[i] - d).norm() < 1e-14);
        assert!((st.eta2[i] - eta2[i] - (st.u[i] - st.v[i])).norm() < 1e-14);
        s1 += d.norm_sqr();
    }
    for i in 0..hx.len() {
        let d = st.z[i] - hx[i];
        assert!((st.rho[i] - rho[i] - d).norm() < 1e-14);
        s3 += d.norm_sqr();
    }
    assert!((r1 - s1.sqrt()).abs() < 1e-12);
    assert!((r3 - s3.sqrt()).abs() < 1e-12);
    assert!(r2 > 0.0);
}

#[test]
fn ladmm_small_instance_is_feasible_and_close_to_mm() {
    for seed in 0..3 {
        let (t, ci, x0) = small_problem(seed);
        let obj = t.objective();
        let res = run_ladmm(&x0, &obj, &ci, &LadmmParams::default()).unwrap();
        assert!(res.block.is_constant_modulus(1.0, 1e-12));
        assert!(res.margins.max_violation() < 1e-3, "seed {seed}: {}", res.margins.max_violation());
        assert!(res.trace.iter().all(|r| r.objective.is_finite()));
        let g_ladmm = obj.value(res.block.as_slice());
        assert!(g_ladmm < obj.value(x0.as_slice()), "seed {seed}");
        let op = MmOperator::new(obj.clone(), MajorizerKind::Proposed);
        let mm = run_mm(&x0, &op, &ci, &MmParams::default()).unwrap();
        let gap_db = 10.0 * (g_ladmm / mm.final_objective()).log10();
        assert!(gap_db < 3.0, "seed {seed}: {gap_db} dB");
    }
}

#[test]
fn lagrangian_is_the_biconvex_cost_at_consensus() {
    let (t, ci, x0) = small_problem(4);
    let obj = t.objective();
    let params = LadmmParams::default();
    let st = LadmmState::init(x0.as_slice(), &ci, 1.0, 1.0);
    // z = Re{H~ x} leaves only the imaginary part in the CI penalty
    let hx = ci.apply(x0.as_slice());
    let ci_pen: f64 = hx.iter().map(|c| c.im * c.im).sum::<f64>() * 0.5 * params.mu3;
    let expect = obj.value(x0.as_slice()) + ci_pen;
    assert!(rel(augmented_lagrangian(&obj, &ci, &params, &st), expect) < 1e-10);
}
