//! Linearized ADMM on the biconvex split.
//!
//! The quartic objective is written as `g(x, v)` with the consensus
//! constraint `x = v`; `u = v` carries the unit-modulus constraint and
//! `z = H~ x` the constructive-interference half-planes. The scaled augmented
//! Lagrangian is
//!
//! ```text
//! g(x, v) + mu1/2 ||x - v + eta1||^2 + mu2/2 ||u - v + eta2||^2
//!         + mu3/2 ||z - H~ x + rho||^2
//! ```
//!
//! `x` and `v` take one proximal-gradient step each, `z` and `u` are exact
//! projections and the multipliers follow scaled dual ascent.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ci::{CiConstraintSet, MarginReport};
use crate::costs::RadarObjective;
use crate::error::{check_len, domain, Result};
use crate::scenario::{inner, unit_phase, WaveformBlock};
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const DIVERGENCE_LIMIT: f64 = 1e12;
const POWER_ITERS: usize = 30;
/// Iterations between penalty-growth checks.
const ADAPT_EVERY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadmmParams {
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    /// Proximal weights; estimated from curvature when absent.
    pub mu_x: Option<f64>,
    pub mu_v: Option<f64>,
    pub eps1: f64,
    /// Scaled primal residual required alongside the objective test.
    pub residual_tol: f64,
    pub max_iter: usize,
    /// Factor applied to all penalties when the primal residual stalls;
    /// 1 keeps them fixed.
    pub penalty_growth: f64,
    /// Penalties never exceed this multiple of their initial values.
    pub max_penalty_ratio: f64,
    /// Extra margin added to every CI threshold in the `z` projection, so the
    /// phase-projected output keeps the original constraints.
    pub ci_margin: f64,
    /// Wall-clock budget in seconds; the run stops unconverged when exceeded.
    pub time_limit_s: Option<f64>,
}

impl Default for LadmmParams {
    fn default() -> Self {
        Self {
            mu1: 1e4,
            mu2: 1e4,
            mu3: 1e4,
            mu_x: None,
            mu_v: None,
            eps1: 1e-4,
            residual_tol: 1e-3,
            max_iter: 20_000,
            penalty_growth: 2.0,
            max_penalty_ratio: 100.0,
            ci_margin: 1e-2,
            time_limit_s: None,
        }
    }
}

impl LadmmParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(self.mu1) && ok(self.mu2) && ok(self.mu3)) {
            return domain("LADMM penalties must be positive");
        }
        if self.mu_x.is_some_and(|v| !ok(v)) || self.mu_v.is_some_and(|v| !ok(v)) {
            return domain("LADMM step weights must be positive");
        }
        if !(self.penalty_growth >= 1.0 && self.penalty_growth.is_finite()) {
            return domain("LADMM penalty growth must be at least 1");
        }
        if !(self.max_penalty_ratio >= 1.0) || !(self.ci_margin >= 0.0) {
            return domain("LADMM penalty ratio must be at least 1 and the CI margin nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadmmState {
    pub x: Vec<C64>,
    pub v: Vec<C64>,
    pub u: Vec<C64>,
    /// `z_{l,m}`, aligned with [`CiConstraintSet::apply`].
    pub z: Vec<C64>,
    pub rho: Vec<C64>,
    pub eta1: Vec<C64>,
    pub eta2: Vec<C64>,
    pub mu_x: f64,
    pub mu_v: f64,
    pub iter: usize,
}

impl LadmmState {
    /// `v = u = x`, zero multipliers and `z = Re{H~ x}`.
    pub fn init(x: &[C64], ci: &CiConstraintSet, mu_x: f64, mu_v: f64) -> Self {
        let z = ci.apply(x).into_iter().map(|c| C64::new(c.re, 0.0)).collect::<Vec<_>>();
        let len = x.len();
        Self {
            x: x.to_vec(),
            v: x.to_vec(),
            u: x.iter().map(|&c| phase_or_one(c)).collect(),
            rho: vec![ZERO; z.len()],
            z,
            eta1: vec![ZERO; len],
            eta2: vec![ZERO; len],
            mu_x,
            mu_v,
            iter: 0,
        }
    }
}

fn phase_or_one(z: C64) -> C64 {
    unit_phase(z).unwrap_or(C64::new(1.0, 0.0))
}

fn norm_sq(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn diff_norm(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// Weighted biconvex cost `g(x, v)`.
pub fn biconvex_cost(obj: &RadarObjective, x: &[C64], v: &[C64]) -> f64 {
    obj.evaluate_bilinear(x, v).total
}

/// Scaled augmented Lagrangian.
pub fn augmented_lagrangian(
    obj: &RadarObjective,
    ci: &CiConstraintSet,
    params: &LadmmParams,
    st: &LadmmState,
) -> f64 {
    biconvex_cost(obj, &st.x, &st.v) + penalty_value(ci, params, st)
}

fn penalty_value(ci: &CiConstraintSet, params: &LadmmParams, st: &LadmmState) -> f64 {
    let t1: f64 = (0..st.x.len())
        .map(|i| (st.x[i] - st.v[i] + st.eta1[i]).norm_sqr())
        .sum();
    let t2: f64 = (0..st.x.len())
        .map(|i| (st.u[i] - st.v[i] + st.eta2[i]).norm_sqr())
        .sum();
    let hx = ci.apply(&st.x);
    let t3: f64 = (0..hx.len()).map(|i| (st.z[i] - hx[i] + st.rho[i]).norm_sqr()).sum();
    0.5 * (params.mu1 * t1 + params.mu2 * t2 + params.mu3 * t3)
}

/// `2 dL/dx*` at the current state.
pub fn grad_x(obj: &RadarObjective, ci: &CiConstraintSet, params: &LadmmParams, st: &LadmmState) -> Vec<C64> {
    let mut g = obj.grad_x(&st.x, &st.v);
    add_penalty_grad_x(ci, params, st, &mut g);
    g
}

fn add_penalty_grad_x(ci: &CiConstraintSet, params: &LadmmParams, st: &LadmmState, g: &mut [C64]) {
    for i in 0..g.len() {
        g[i] += (st.x[i] - st.v[i] + st.eta1[i]) * params.mu1;
    }
    if !ci.is_empty() {
        let hx = ci.apply(&st.x);
        let r: Vec<C64> = (0..hx.len()).map(|i| (hx[i] - st.z[i] - st.rho[i]) * params.mu3).collect();
        for (gi, a) in g.iter_mut().zip(ci.apply_adjoint(&r)) {
            *gi += a;
        }
    }
}

/// `2 dL/dv*` at the current state.
pub fn grad_v(obj: &RadarObjective, params: &LadmmParams, st: &LadmmState) -> Vec<C64> {
    let mut g = obj.grad_v(&st.x, &st.v);
    add_penalty_grad_v(params, st, &mut g);
    g
}

fn add_penalty_grad_v(params: &LadmmParams, st: &LadmmState, g: &mut [C64]) {
    for i in 0..g.len() {
        g[i] -= (st.x[i] - st.v[i] + st.eta1[i]) * params.mu1;
        g[i] -= (st.u[i] - st.v[i] + st.eta2[i]) * params.mu2;
    }
}

fn check_grad(g: &[C64], what: &str, iter: usize) -> Result<()> {
    if g.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return domain(format!("non-finite {what} gradient at iteration {iter}"));
    }
    Ok(())
}

/// One proximal-gradient step on `x`.
pub fn update_x(obj: &RadarObjective, ci: &CiConstraintSet, params: &LadmmParams, st: &mut LadmmState) -> Result<()> {
    let g = grad_x(obj, ci, params, st);
    check_grad(&g, "x", st.iter)?;
    let s = 1.0 / st.mu_x;
    st.x.iter_mut().zip(&g).for_each(|(x, g)| *x -= g * s);
    Ok(())
}

/// One proximal-gradient step on `v`, taken at the already-updated `x`.
pub fn update_v(obj: &RadarObjective, params: &LadmmParams, st: &mut LadmmState) -> Result<()> {
    let g = grad_v(obj, params, st);
    check_grad(&g, "v", st.iter)?;
    let s = 1.0 / st.mu_v;
    st.v.iter_mut().zip(&g).for_each(|(v, g)| *v -= g * s);
    Ok(())
}

/// Projection of `c` onto `Re{z} >= gamma`.
pub fn project_half_plane(c: C64, gamma: f64) -> C64 {
    if c.re >= gamma {
        c
    } else {
        C64::new(gamma, c.im)
    }
}

/// `z = P(H~ x - rho)` onto `Re{z} >= Gamma~ + margin`.
pub fn update_z(ci: &CiConstraintSet, st: &mut LadmmState, margin: f64) {
    if ci.is_empty() {
        return;
    }
    let hx = ci.apply(&st.x);
    let gam = ci.stacked_thresholds();
    for i in 0..hx.len() {
        st.z[i] = project_half_plane(hx[i] - st.rho[i], gam[i] + margin);
    }
}

pub fn update_u(st: &mut LadmmState) {
    for i in 0..st.u.len() {
        st.u[i] = phase_or_one(st.v[i] - st.eta2[i]);
    }
}

/// Residual norms `(||x - v||, ||u - v||, ||z - H~ x||)` used by the ascent.
pub fn update_multipliers(ci: &CiConstraintSet, st: &mut LadmmState) -> (f64, f64, f64) {
    let mut r1 = 0.0;
    let mut r2 = 0.0;
    for i in 0..st.x.len() {
        let a = st.x[i] - st.v[i];
        let b = st.u[i] - st.v[i];
        st.eta1[i] += a;
        st.eta2[i] += b;
        r1 += a.norm_sqr();
        r2 += b.norm_sqr();
    }
    let mut r3 = 0.0;
    if !ci.is_empty() {
        let hx = ci.apply(&st.x);
        for i in 0..hx.len() {
            let c = st.z[i] - hx[i];
            st.rho[i] += c;
            r3 += c.norm_sqr();
        }
    }
    (r1.sqrt(), r2.sqrt(), r3.sqrt())
}

/// Largest eigenvalue of the `x`-Hessian of `g(., v)` (real sense), by power
/// iteration on gradient differences.
pub fn curvature_x(obj: &RadarObjective, v: &[C64], seed_vec: &[C64]) -> f64 {
    let zero = vec![ZERO; v.len()];
    let base = obj.grad_x(&zero, v);
    power(|p| {
        let mut g = obj.grad_x(p, v);
        g.iter_mut().zip(&base).for_each(|(a, b)| *a -= b);
        g
    }, seed_vec)
}

/// Same for the `v`-Hessian of `g(x, .)`.
pub fn curvature_v(obj: &RadarObjective, x: &[C64], seed_vec: &[C64]) -> f64 {
    let zero = vec![ZERO; x.len()];
    let base = obj.grad_v(x, &zero);
    power(|p| {
        let mut g = obj.grad_v(x, p);
        g.iter_mut().zip(&base).for_each(|(a, b)| *a -= b);
        g
    }, seed_vec)
}

fn power(op: impl Fn(&[C64]) -> Vec<C64>, start: &[C64]) -> f64 {
    let mut v = start.to_vec();
    let mut n = norm_sq(&v).sqrt();
    if n == 0.0 {
        v = vec![C64::new(1.0, 0.0); start.len()];
        n = norm_sq(&v).sqrt();
    }
    v.iter_mut().for_each(|z| *z /= n);
    let mut lam = 0.0;
    for _ in 0..POWER_ITERS {
        let mut w = op(&v);
        lam = inner(&v, &w).re;
        let nw = norm_sq(&w).sqrt();
        if nw == 0.0 {
            return 0.0;
        }
        w.iter_mut().for_each(|z| *z /= nw);
        v = w;
        lam = lam.max(nw);
    }
    lam
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadmmRecord {
    pub iteration: usize,
    /// `g(x)` on the raw iterate.
    pub objective: f64,
    /// `g` on the phase-projected iterate.
    pub objective_projected: f64,
    pub res_xv: f64,
    pub res_uv: f64,
    pub res_z: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LadmmStatus {
    Converged,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadmmResult {
    /// Phase-projected output.
    pub block: WaveformBlock,
    pub state: LadmmState,
    pub trace: Vec<LadmmRecord>,
    pub status: LadmmStatus,
    pub margins: MarginReport,
}

impl LadmmResult {
    pub fn converged(&self) -> bool {
        self.status == LadmmStatus::Converged
    }

    pub fn iterations(&self) -> usize {
        self.state.iter
    }
}

/// Multiplies every penalty by the growth factor, rescales the scaled
/// multipliers so the unscaled duals are unchanged, and widens the step
/// weights by the added penalty curvature.
fn grow_penalties(params: &mut LadmmParams, initial: &LadmmParams, st: &mut LadmmState, sig2: f64) {
    let f = params.penalty_growth;
    if f <= 1.0 || params.mu1 * f > initial.mu1 * initial.max_penalty_ratio {
        return;
    }
    st.mu_x += (f - 1.0) * (params.mu1 + params.mu3 * sig2);
    st.mu_v += (f - 1.0) * (params.mu1 + params.mu2);
    params.mu1 *= f;
    params.mu2 *= f;
    params.mu3 *= f;
    let inv = 1.0 / f;
    st.eta1.iter_mut().for_each(|z| *z *= inv);
    st.eta2.iter_mut().for_each(|z| *z *= inv);
    st.rho.iter_mut().for_each(|z| *z *= inv);
}

/// Main iteration. Step weights start at `mu + mu3 ||H~||^2 + curvature` and
/// double whenever the augmented Lagrangian fails to decrease on a block
/// step. Every few iterations, if the scaled primal residual is above
/// `residual_tol` and has not fallen by a tenth since the last check, all
/// penalties grow by `penalty_growth`, up to `max_penalty_ratio` times their
/// initial values.
pub fn run_ladmm(
    initial: &WaveformBlock,
    obj: &RadarObjective,
    ci: &CiConstraintSet,
    params: &LadmmParams,
) -> Result<LadmmResult> {
    params.validate()?;
    let base = *params;
    let mut p = *params;
    let params = &mut p;
    let n = obj.n_tx;
    let l = obj.block_len;
    check_len("waveform rows", n, initial.n_tx())?;
    check_len("waveform columns", l, initial.block_len())?;
    let x0 = initial.as_slice();
    let start = Instant::now();

    let sig2 = ci.spectral_norm().powi(2);
    let mu_x = params
        .mu_x
        .unwrap_or_else(|| params.mu1 + params.mu3 * sig2 + curvature_x(obj, x0, x0));
    let mu_v = params
        .mu_v
        .unwrap_or_else(|| params.mu1 + params.mu2 + curvature_v(obj, x0, x0));
    let mut st = LadmmState::init(x0, ci, mu_x, mu_v);

    let g0 = obj.value(x0);
    let mut trace = vec![LadmmRecord {
        iteration: 0,
        objective: g0,
        objective_projected: g0,
        res_xv: 0.0,
        res_uv: diff_norm(&st.u, &st.v),
        res_z: 0.0,
        wall_ms: 0.0,
    }];
    let scale = ((n * l) as f64).sqrt();
    let mut last_check = f64::INFINITY;
    let mut g_prev = g0;
    let mut px = obj.projected(x0);
    let mut pv = px.clone();
    let mut status = LadmmStatus::MaxIterations;

    if obj.weights().is_zero() && ci.is_empty() {
        status = LadmmStatus::Converged;
    }
    while status == LadmmStatus::MaxIterations && st.iter < params.max_iter {
        if params.time_limit_s.is_some_and(|t| start.elapsed().as_secs_f64() > t) {
            break;
        }
        st.iter += 1;

        // x-step with backtracking on the augmented Lagrangian; projections
        // of x and v are cached between steps
        let before = obj.evaluate_projected(&px, &pv).total + penalty_value(ci, params, &st);
        let mut gx = obj.grad_x_projected(&st.x, &px, &pv);
        add_penalty_grad_x(ci, params, &st, &mut gx);
        check_grad(&gx, "x", st.iter)?;
        let x_old = st.x.clone();
        let before = loop {
            let s = 1.0 / st.mu_x;
            for i in 0..st.x.len() {
                st.x[i] = x_old[i] - gx[i] * s;
            }
            let trial = obj.projected(&st.x);
            let after = obj.evaluate_projected(&trial, &pv).total + penalty_value(ci, params, &st);
            if after <= before + 1e-12 * before.abs() || st.mu_x > 1e15 {
                px = trial;
                break after;
            }
            st.mu_x *= 2.0;
        };

        let mut gv = obj.grad_v_projected(&px, &pv);
        add_penalty_grad_v(params, &st, &mut gv);
        check_grad(&gv, "v", st.iter)?;
        let v_old = st.v.clone();
        loop {
            let s = 1.0 / st.mu_v;
            for i in 0..st.v.len() {
                st.v[i] = v_old[i] - gv[i] * s;
            }
            let trial = obj.projected(&st.v);
            let after = obj.evaluate_projected(&px, &trial).total + penalty_value(ci, params, &st);
            if after <= before + 1e-12 * before.abs() || st.mu_v > 1e15 {
                pv = trial;
                break;
            }
            st.mu_v *= 2.0;
        }

        update_z(ci, &mut st, params.ci_margin);
        update_u(&mut st);
        let (r1, r2, r3) = update_multipliers(ci, &mut st);

        let g = obj.evaluate_projected(&px, &px).total;
        let xp: Vec<C64> = st.x.iter().map(|&c| phase_or_one(c)).collect();
        let gp = obj.value(&xp);
        trace.push(LadmmRecord {
            iteration: st.iter,
            objective: g,
            objective_projected: gp,
            res_xv: r1,
            res_uv: r2,
            res_z: r3,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if !g.is_finite() || g > DIVERGENCE_LIMIT * g0.max(1.0) || r1.max(r2).max(r3) > DIVERGENCE_LIMIT {
            status = LadmmStatus::Diverged;
            break;
        }
        let rel = if g_prev == 0.0 {
            if g == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (g - g_prev).abs() / g_prev.abs()
        };
        g_prev = g;
        let resid = r1.max(r2).max(r3) / scale;
        let small = resid <= params.residual_tol;
        let feasible = ci.is_empty() || ci.margins_slice(&xp).min_margin >= 0.0;
        if rel <= params.eps1 && small && feasible {
            status = LadmmStatus::Converged;
        } else if st.iter % ADAPT_EVERY == 0 {
            // grow on a stalled residual, or when consensus is reached but the
            // projected iterate still misses a constraint
            if (!small && resid > 0.9 * last_check) || (small && !feasible) {
                grow_penalties(params, &base, &mut st, sig2);
            }
            last_check = resid;
        }
    }

    let out: Vec<C64> = st.x.iter().map(|&c| phase_or_one(c)).collect();
    let margins = ci.margins_slice(&out);
    Ok(LadmmResult {
        block: WaveformBlock::new(n, l, out)?,
        state: st,
        trace,
        status,
        margins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn half_plane_projection() {
        assert_eq!(project_half_plane(C64::new(3.0, 1.0), 1.0), C64::new(3.0, 1.0));
        assert_eq!(project_half_plane(C64::new(0.2, 0.5), 1.0), C64::new(1.0, 0.5));
    }

    #[test]
    fn u_update_phase() {
        let ci = CiConstraintSet::empty(1, 3);
        let mut st = LadmmState::init(&[C64::new(1.0, 0.0); 3], &ci, 1.0, 1.0);
        st.v = vec![C64::new(2.0, 2.0), C64::from_polar(1.0, 0.3), C64::new(0.0, 0.0)];
        update_u(&mut st);
        assert!((st.u[0] - C64::from_polar(1.0, PI / 4.0)).norm() < 1e-15);
        assert!((st.u[1] - C64::from_polar(1.0, 0.3)).norm() < 1e-15);
        assert_eq!(st.u[2], C64::new(1.0, 0.0));
    }

    #[test]
    fn multipliers_step_by_residual() {
        let ci = CiConstraintSet::empty(2, 1);
        let x = [C64::new(1.0, 0.0), C64::new(0.0, 1.0)];
        let mut st = LadmmState::init(&x, &ci, 1.0, 1.0);
        let (a, b, c) = update_multipliers(&ci, &mut st);
        assert_eq!((a, b, c), (0.0, 0.0, 0.0));
        assert!(st.eta1.iter().all(|z| *z == ZERO));
        st.v[0] = C64::new(0.5, 0.0);
        update_multipliers(&ci, &mut st);
        assert_eq!(st.eta1[0], C64::new(0.5, 0.0));
    }
}
