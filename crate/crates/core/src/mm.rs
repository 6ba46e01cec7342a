//! Majorization-minimization with a diagonal majorizer.
//!
//! Each quartic term `w |x^H M x|^2` of the objective is majorized on the
//! unit-modulus set by a quadratic `x^H Phi x`, and the quadratic in turn by a
//! linear function `Re{d^H x}` using the row-absolute-sum diagonal of `Phi`.
//! The linear subproblem splits over subpulses; each one is solved through
//! its Lagrange dual by coordinate bisection.
//!
//! `Phi` is block-banded over subpulses: the block `(i, i + s)` is nonzero
//! only for `|s| < P`, is independent of `i` except for a rank-one Hadamard
//! correction, and is assembled from `N_T x N_T` pieces.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ci::{CiConstraintSet, MarginReport};
use crate::costs::{CostBreakdown, RadarObjective};
use crate::error::{check_len, domain, Error, Result};
use crate::scenario::{inner, unit_phase, WaveformBlock};
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MajorizerKind {
    /// `diag(|Q| 1)` at both majorization levels.
    Proposed,
    /// `lambda_max(Q) I` at both majorization levels.
    LambdaMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmParams {
    /// Relative dual-objective change that ends the coordinate sweeps.
    pub eps2: f64,
    /// Primal feasibility and complementary-slackness tolerance.
    pub eps3: f64,
    /// Relative objective change that ends the outer loop.
    pub eps4: f64,
    pub max_iter: usize,
    pub max_sweeps: usize,
    pub majorizer: MajorizerKind,
    pub parallel: bool,
    /// Wall-clock budget in seconds; the run stops unconverged when exceeded.
    pub time_limit_s: Option<f64>,
}

impl Default for MmParams {
    fn default() -> Self {
        Self {
            eps2: 1e-4,
            eps3: 1e-4,
            eps4: 3e-6,
            max_iter: 5000,
            max_sweeps: 200,
            majorizer: MajorizerKind::Proposed,
            parallel: true,
            time_limit_s: None,
        }
    }
}

/// Row-absolute-sum diagonal `diag(|Q| 1)` of a Hermitian matrix.
pub fn diagonal_majorizer(q: &DMatrix<C64>) -> Result<Vec<f64>> {
    let n = q.nrows();
    if q.ncols() != n {
        return domain("majorizer input must be square");
    }
    let scale = q.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    for i in 0..n {
        for j in i..n {
            if (q[(i, j)] - q[(j, i)].conj()).norm() > 1e-10 * scale {
                return domain("majorizer input is not Hermitian");
            }
        }
    }
    Ok((0..n).map(|i| q.row(i).iter().map(|z| z.norm()).sum()).collect())
}

/// Largest eigenvalue of a Hermitian matrix.
pub fn lambda_max(q: &DMatrix<C64>) -> f64 {
    q.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `x`-independent structure of the majorizer for one scenario.
#[derive(Debug, Clone)]
pub struct MmOperator {
    obj: RadarObjective,
    kind: MajorizerKind,
    /// Band half-width (`P - 1` when an ISL weight is active, else 0).
    hw: usize,
    /// `2 (L - |s|) e_s`, where `e_s` holds the row-abs-sums of the lag-`s`
    /// slice of the fourth-order operator, per lag `s = -hw..=hw`.
    e_scaled: Vec<Vec<f64>>,
    /// `2 max_s (L - |s|) lambda_max(Psi_s)`.
    lambda_psi2: f64,
    sim_s: Vec<C64>,
    sim_f: Vec<C64>,
}

impl MmOperator {
    pub fn new(obj: RadarObjective, kind: MajorizerKind) -> Self {
        let n = obj.n_tx;
        let l = obj.block_len;
        let w = obj.weights;
        let hw = if w.w_ac > 0.0 || w.w_cc > 0.0 { obj.max_lag - 1 } else { 0 };
        let mut e_scaled = Vec::with_capacity(2 * hw + 1);
        let mut lambda_psi2: f64 = 0.0;
        for s in -(hw as isize)..=(hw as isize) {
            let psi = psi_slice(&obj, s);
            let factor = 2.0 * (l as f64 - s.unsigned_abs() as f64);
            let e: Vec<f64> = (0..n * n)
                .map(|r| psi.row(r).iter().map(|z| z.norm()).sum::<f64>() * factor)
                .collect();
            e_scaled.push(e);
            if kind == MajorizerKind::LambdaMax {
                lambda_psi2 = lambda_psi2.max(factor * lambda_max(&psi));
            }
        }
        let sim_s = obj.sim_matrix();
        let sim_f = obj.sim_linear();
        Self {
            obj,
            kind,
            hw,
            e_scaled,
            lambda_psi2,
            sim_s,
            sim_f,
        }
    }

    pub fn objective(&self) -> &RadarObjective {
        &self.obj
    }

    pub fn kind(&self) -> MajorizerKind {
        self.kind
    }

    /// Quadratic majorizer matrix `Phi` anchored at `x_t`.
    pub fn phi_at(&self, x_t: &[C64]) -> PhiOperator {
        let obj = &self.obj;
        let n = obj.n_tx;
        let l = obj.block_len;
        let w = obj.weights;
        let hw = self.hw;
        let mut band = vec![vec![ZERO; n * n]; 2 * hw + 1];

        if w.w_bp > 0.0 {
            // C1 = -sum_u beta_u a_u a_u^H with beta_u = alpha G_d,u - G_u
            let xg = obj.project_grid(x_t);
            let (c, alpha) = obj.cross_gains(&xg, &xg);
            let b0 = &mut band[hw];
            for u in 0..obj.grid_len() {
                let beta = (alpha * obj.desired[u] - c[u]).re;
                let a = obj.grid_steer(u);
                let coef = -2.0 * w.w_bp * beta;
                add_outer_real(b0, a, a, coef);
            }
        }
        let pairs = obj.isl_pairs();
        if !pairs.is_empty() {
            let xs = obj.project_targets(x_t);
            let spec: Vec<Vec<C64>> = xs.iter().map(|s| obj.engine.spectrum(s)).collect();
            for pr in &pairs {
                let mut r = obj.engine.cross_lags_spec(&spec[pr.qp], &spec[pr.q]);
                obj.mask(&mut r, pr.skip_zero);
                let aq = &obj.targets[pr.q];
                let aqp = &obj.targets[pr.qp];
                for s in -(hw as isize)..=(hw as isize) {
                    let tau = -s;
                    let rho = r[(tau + l as isize - 1) as usize];
                    if rho == ZERO {
                        continue;
                    }
                    // block (i, i + s) gains 2 w conj(rho(-s)) a_q' a_q^H
                    add_outer(&mut band[(s + hw as isize) as usize], aqp, aq, rho.conj() * (2.0 * pr.weight));
                }
            }
        }
        if w.w_sim > 0.0 {
            for (b, s) in band[hw].iter_mut().zip(&self.sim_s) {
                *b += s * w.w_sim;
            }
        }
        let (e_band, rank_one) = match self.kind {
            MajorizerKind::Proposed => (Some(self.e_scaled.clone()), 0.0),
            MajorizerKind::LambdaMax => (None, self.lambda_psi2),
        };
        PhiOperator {
            n,
            l,
            hw,
            band,
            e_band,
            rank_one,
            anchor: x_t.to_vec(),
        }
    }

    /// Linear surrogate `Re{d^H x} + c` at `x_t`.
    pub fn majorize(&self, x_t: &[C64]) -> MajorizerLinear {
        let phi = self.phi_at(x_t);
        let px = phi.matvec(x_t);
        let w_sim = self.obj.weights.w_sim;
        let diag: Vec<f64> = match self.kind {
            MajorizerKind::Proposed => phi.row_abs_sums(),
            MajorizerKind::LambdaMax => vec![phi.lambda_max_estimate(); x_t.len()],
        };
        let d: Vec<C64> = (0..x_t.len())
            .map(|i| (px[i] - x_t[i] * diag[i]) * 2.0 - self.sim_f[i] * (2.0 * w_sim))
            .collect();
        let g = self.obj.value(x_t);
        let lin = re_inner(&d, x_t);
        MajorizerLinear {
            d,
            anchor: x_t.to_vec(),
            constant: g - lin,
        }
    }
}

/// Lag-`s` slice `Psi_s = sum_k w_k vec(m_k) vec(m_k)^H` (`N^2 x N^2`) over
/// the quartic terms whose operators occupy block offset `s`.
pub(crate) fn psi_slice(obj: &RadarObjective, s: isize) -> DMatrix<C64> {
    let n = obj.n_tx;
    let n2 = n * n;
    let mut psi = DMatrix::<C64>::zeros(n2, n2);
    let mut add = |m: &[C64], wt: f64| {
        for r in 0..n2 {
            let mr = m[r] * wt;
            if mr == ZERO {
                continue;
            }
            for c in 0..n2 {
                psi[(r, c)] += mr * m[c].conj();
            }
        }
    };
    let w = obj.weights;
    if s == 0 && w.w_bp > 0.0 {
        let mut rmat = vec![ZERO; n2];
        for u in 0..obj.grid_len() {
            let gd = obj.desired[u];
            if gd != 0.0 {
                let a = obj.grid_steer(u);
                add_outer_real(&mut rmat, a, a, gd);
            }
        }
        for u in 0..obj.grid_len() {
            let a = obj.grid_steer(u);
            let mut b: Vec<C64> = rmat.iter().map(|z| z * (obj.desired[u] / obj.desired_sq)).collect();
            add_outer_real(&mut b, a, a, -1.0);
            add(&b, w.w_bp);
        }
    }
    let tau = -s;
    if tau.unsigned_abs() < obj.max_lag {
        for pr in obj.isl_pairs() {
            if pr.skip_zero && tau == 0 {
                continue;
            }
            let mut m = vec![ZERO; n2];
            add_outer(&mut m, &obj.targets[pr.qp], &obj.targets[pr.q], C64::new(1.0, 0.0));
            add(&m, pr.weight);
        }
    }
    psi
}

fn add_outer(m: &mut [C64], a: &[C64], b: &[C64], c: C64) {
    let n = a.len();
    for i in 0..n {
        let ai = a[i] * c;
        for j in 0..n {
            m[i * n + j] += ai * b[j].conj();
        }
    }
}

fn add_outer_real(m: &mut [C64], a: &[C64], b: &[C64], c: f64) {
    add_outer(m, a, b, C64::new(c, 0.0))
}

fn re_inner(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// Matrix-free quadratic majorizer `Phi` at an anchor.
#[derive(Debug, Clone)]
pub struct PhiOperator {
    n: usize,
    l: usize,
    hw: usize,
    band: Vec<Vec<C64>>,
    e_band: Option<Vec<Vec<f64>>>,
    rank_one: f64,
    anchor: Vec<C64>,
}

impl PhiOperator {
    pub fn dim(&self) -> usize {
        self.n * self.l
    }

    /// Entry at row `(i, a)` and column `(j, b)`, `i, j` subpulses.
    pub fn entry(&self, i: usize, a: usize, j: usize, b: usize) -> C64 {
        let n = self.n;
        let s = j as isize - i as isize;
        let xa = self.anchor[i * n + a];
        let xb = self.anchor[j * n + b].conj();
        let mut v = -(xa * xb) * self.rank_one;
        if s.unsigned_abs() <= self.hw {
            let k = (s + self.hw as isize) as usize;
            v += self.band[k][a * n + b];
            if let Some(e) = &self.e_band {
                v -= xa * xb * e[k][a * n + b];
            }
        }
        v
    }

    /// Dense copy; small sizes only.
    pub fn to_dense(&self) -> DMatrix<C64> {
        let (n, l) = (self.n, self.l);
        DMatrix::from_fn(n * l, n * l, |r, c| self.entry(r / n, r % n, c / n, c % n))
    }

    pub fn matvec(&self, p: &[C64]) -> Vec<C64> {
        let (n, l) = (self.n, self.l);
        let mut out = vec![ZERO; n * l];
        for i in 0..l {
            let xi = &self.anchor[i * n..(i + 1) * n];
            let oi = &mut out[i * n..(i + 1) * n];
            for s in -(self.hw as isize)..=(self.hw as isize) {
                let j = i as isize + s;
                if j < 0 || j >= l as isize {
                    continue;
                }
                let j = j as usize;
                let k = (s + self.hw as isize) as usize;
                let blk = &self.band[k];
                let pj = &p[j * n..(j + 1) * n];
                let xj = &self.anchor[j * n..(j + 1) * n];
                for a in 0..n {
                    let mut acc = ZERO;
                    for b in 0..n {
                        acc += blk[a * n + b] * pj[b];
                    }
                    if let Some(e) = &self.e_band {
                        let ek = &e[k];
                        let mut h = ZERO;
                        for b in 0..n {
                            h += xj[b].conj() * pj[b] * ek[a * n + b];
                        }
                        acc -= xi[a] * h;
                    }
                    oi[a] += acc;
                }
            }
        }
        if self.rank_one != 0.0 {
            let c = inner(&self.anchor, p) * self.rank_one;
            for (o, x) in out.iter_mut().zip(&self.anchor) {
                *o -= x * c;
            }
        }
        out
    }

    /// Exact row-absolute-sums of `Phi` (banded variant only).
    pub fn row_abs_sums(&self) -> Vec<f64> {
        let (n, l) = (self.n, self.l);
        let mut out = vec![0.0; n * l];
        for i in 0..l {
            for s in -(self.hw as isize)..=(self.hw as isize) {
                let j = i as isize + s;
                if j < 0 || j >= l as isize {
                    continue;
                }
                let j = j as usize;
                let k = (s + self.hw as isize) as usize;
                for a in 0..n {
                    let xa = self.anchor[i * n + a];
                    let mut acc = 0.0;
                    for b in 0..n {
                        let mut v = self.band[k][a * n + b];
                        if let Some(e) = &self.e_band {
                            v -= xa * self.anchor[j * n + b].conj() * e[k][a * n + b];
                        }
                        acc += v.norm();
                    }
                    out[i * n + a] += acc;
                }
            }
        }
        if self.rank_one != 0.0 {
            // triangle-inequality bound; exact only without the band part
            let total: f64 = self.anchor.iter().map(|z| z.norm()).sum();
            for (o, x) in out.iter_mut().zip(&self.anchor) {
                *o += self.rank_one * x.norm() * total;
            }
        }
        out
    }

    /// `lambda_max(Phi)` by shifted power iteration with a residual margin.
    pub fn lambda_max_estimate(&self) -> f64 {
        let shift = self.gershgorin_radius();
        if shift == 0.0 {
            return 0.0;
        }
        let mut v: Vec<C64> = self.anchor.clone();
        normalize(&mut v);
        let mut lam = 0.0;
        for _ in 0..100 {
            let mut w = self.matvec(&v);
            lam = inner(&v, &w).re;
            for (wi, vi) in w.iter_mut().zip(&v) {
                *wi += vi * shift;
            }
            if normalize(&mut w) == 0.0 {
                break;
            }
            v = w;
        }
        let w = self.matvec(&v);
        lam = lam.max(inner(&v, &w).re);
        let resid: f64 = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| (wi - vi * lam).norm_sqr())
            .sum::<f64>()
            .sqrt();
        lam + resid
    }

    fn gershgorin_radius(&self) -> f64 {
        let (n, l) = (self.n, self.l);
        let mut best: f64 = 0.0;
        let total: f64 = self.anchor.iter().map(|z| z.norm()).sum();
        for i in 0..l {
            for a in 0..n {
                let mut acc = 0.0;
                for s in -(self.hw as isize)..=(self.hw as isize) {
                    let j = i as isize + s;
                    if j < 0 || j >= l as isize {
                        continue;
                    }
                    let k = (s + self.hw as isize) as usize;
                    for b in 0..n {
                        acc += self.band[k][a * n + b].norm();
                        if let Some(e) = &self.e_band {
                            acc += e[k][a * n + b];
                        }
                    }
                }
                acc += self.rank_one * self.anchor[i * n + a].norm() * total;
                best = best.max(acc);
            }
        }
        best
    }
}

fn normalize(v: &mut [C64]) -> f64 {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|z| *z /= n);
    }
    n
}

/// `d` and the tracked constant of the linear surrogate at an anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct MajorizerLinear {
    pub d: Vec<C64>,
    pub anchor: Vec<C64>,
    pub constant: f64,
}

impl MajorizerLinear {
    pub fn surrogate(&self, x: &[C64]) -> f64 {
        re_inner(&self.d, x) + self.constant
    }

    pub fn subpulse(&self, l: usize, n_tx: usize) -> &[C64] {
        &self.d[l * n_tx..(l + 1) * n_tx]
    }
}

pub fn assemble_phi_times(op: &MmOperator, x_t: &[C64], probe: &[C64]) -> Vec<C64> {
    op.phi_at(x_t).matvec(probe)
}

pub fn majorize_to_linear(op: &MmOperator, x_t: &[C64]) -> MajorizerLinear {
    op.majorize(x_t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub x: Vec<C64>,
    pub nu: Vec<f64>,
    /// Largest `h_m = Gamma~_m - Re{h^_m^H x}`; positive means violated.
    pub max_violation: f64,
    /// Largest `|nu_m h_m|`.
    pub slackness: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Some constraint cannot be met for any multiplier.
    pub unreachable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualTolerances {
    pub eps2: f64,
    pub eps3: f64,
    pub eps: f64,
    pub max_sweeps: usize,
}

impl Default for DualTolerances {
    fn default() -> Self {
        Self {
            eps2: 1e-4,
            eps3: 1e-4,
            eps: 1e-9,
            max_sweeps: 200,
        }
    }
}

/// Bisection target on `h`: stop once `-H_TOL < h <= 0`.
const H_TOL: f64 = 1e-9;
const MAX_BISECT: usize = 200;

struct DualCtx<'a> {
    d: &'a [C64],
    hs: &'a [C64],
    gammas: &'a [f64],
    fallback: &'a [C64],
    n: usize,
}

impl DualCtx<'_> {
    fn h(&self, m: usize) -> &[C64] {
        &self.hs[m * self.n..(m + 1) * self.n]
    }

    fn z(&self, nu: &[f64]) -> Vec<C64> {
        let mut z: Vec<C64> = self.d.iter().map(|v| -v).collect();
        for (m, &v) in nu.iter().enumerate() {
            if v != 0.0 {
                for (zi, hi) in z.iter_mut().zip(self.h(m)) {
                    *zi += hi * v;
                }
            }
        }
        z
    }

    fn phase(&self, z: &[C64]) -> Vec<C64> {
        let scale = z.iter().map(|v| v.norm()).fold(0.0, f64::max);
        z.iter()
            .zip(self.fallback)
            .map(|(v, f)| {
                if v.norm() <= 1e-14 * scale.max(1e-300) {
                    *f
                } else {
                    unit_phase(*v).unwrap_or(*f)
                }
            })
            .collect()
    }

    fn viol(&self, m: usize, x: &[C64]) -> f64 {
        self.gammas[m] - inner(self.h(m), x).re
    }

    fn dual_value(&self, nu: &[f64]) -> f64 {
        let z = self.z(nu);
        nu.iter().zip(self.gammas).map(|(v, g)| v * g).sum::<f64>() - z.iter().map(|v| v.norm()).sum::<f64>()
    }

    /// `h_m` as a function of `nu_m` with the other multipliers fixed.
    fn h_along(&self, m: usize, z_rest: &[C64], nu_m: f64) -> f64 {
        let z: Vec<C64> = z_rest.iter().zip(self.h(m)).map(|(a, b)| a + b * nu_m).collect();
        self.viol(m, &self.phase(&z))
    }
}

/// Solves `min Re{d^H x}` over unit-modulus `x` subject to
/// `Re{h^_m^H x} >= Gamma~_m` through its dual. `nu` is the warm start and
/// `fallback` supplies entries where the phase is undefined.
pub fn solve_subpulse_dual(
    d: &[C64],
    hs: &[C64],
    gammas: &[f64],
    nu_start: &[f64],
    fallback: &[C64],
    tol: DualTolerances,
) -> Result<DualSolution> {
    let n = d.len();
    let mm = gammas.len();
    check_len("rotated channels", mm * n, hs.len())?;
    check_len("warm-start multipliers", mm, nu_start.len())?;
    check_len("fallback entries", n, fallback.len())?;
    if d.iter().chain(hs).any(|z| !z.re.is_finite() || !z.im.is_finite()) || gammas.iter().any(|g| !g.is_finite()) {
        return domain("non-finite input to the subpulse dual solve");
    }
    let ctx = DualCtx { d, hs, gammas, fallback, n };
    let mut nu: Vec<f64> = nu_start.iter().map(|v| v.max(0.0)).collect();
    if mm == 0 {
        let x = ctx.phase(&ctx.z(&nu));
        return Ok(DualSolution {
            x,
            nu,
            max_violation: f64::NEG_INFINITY,
            slackness: 0.0,
            sweeps: 0,
            converged: true,
            unreachable: false,
        });
    }
    let reach: Vec<bool> = (0..mm)
        .map(|m| gammas[m] - ctx.h(m).iter().map(|z| z.norm()).sum::<f64>() < -tol.eps)
        .collect();
    let unreachable = reach.iter().any(|r| !r);

    let mut dual_prev = ctx.dual_value(&nu);
    let mut sweeps = 0;
    let mut converged = false;
    let status = |nu: &[f64]| {
        let x = ctx.phase(&ctx.z(nu));
        let mut mv = f64::NEG_INFINITY;
        let mut cs: f64 = 0.0;
        for m in 0..mm {
            let h = ctx.viol(m, &x);
            mv = mv.max(h);
            cs = cs.max((nu[m] * h).abs());
        }
        (x, mv, cs)
    };
    let (mut x, mut mv, mut cs) = status(&nu);
    if mv <= tol.eps3 && cs <= tol.eps3 && nu.iter().all(|&v| v == 0.0) {
        converged = true;
    }
    while !converged && sweeps < tol.max_sweeps {
        sweeps += 1;
        for m in 0..mm {
            let mut rest = nu.clone();
            rest[m] = 0.0;
            let z_rest = ctx.z(&rest);
            if ctx.h_along(m, &z_rest, 0.0) <= 0.0 {
                nu[m] = 0.0;
                continue;
            }
            if !reach[m] {
                continue;
            }
            nu[m] = bisect(|v| ctx.h_along(m, &z_rest, v));
        }
        let dual = ctx.dual_value(&nu);
        (x, mv, cs) = status(&nu);
        let rel = (dual - dual_prev).abs() / dual_prev.abs().max(1e-300);
        dual_prev = dual;
        if rel < tol.eps2 && mv <= tol.eps3 && cs <= tol.eps3 {
            converged = true;
        }
    }
    Ok(DualSolution {
        x,
        nu,
        max_violation: mv,
        slackness: cs,
        sweeps,
        converged,
        unreachable,
    })
}

/// Smallest-found `nu >= 0` with `h(nu) <= 0`, approaching the root from above.
fn bisect(h: impl Fn(f64) -> f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut h_hi = h(hi);
    let mut grow = 0;
    while h_hi > 0.0 {
        lo = hi;
        hi *= 2.0;
        h_hi = h(hi);
        grow += 1;
        if grow > 200 || !hi.is_finite() {
            return lo;
        }
    }
    if h_hi > -H_TOL {
        return hi;
    }
    for _ in 0..MAX_BISECT {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let hm = h(mid);
        if hm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
            if hm > -H_TOL {
                break;
            }
        }
    }
    hi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub costs: CostBreakdown,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmState {
    pub x: Vec<C64>,
    /// `duals[l][m]`.
    pub duals: Vec<Vec<f64>>,
    pub objective_history: Vec<f64>,
    pub records: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmResult {
    pub block: WaveformBlock,
    pub state: MmState,
    pub iterations: usize,
    pub converged: bool,
    pub margins: MarginReport,
    /// Largest `|nu h|` over all subpulses at the final iterate.
    pub slackness: f64,
}

impl MmResult {
    pub fn final_objective(&self) -> f64 {
        *self.state.objective_history.last().unwrap_or(&0.0)
    }
}

/// Monotone MM outer loop. `ci` may be empty (radar-only).
pub fn run_mm(initial: &WaveformBlock, op: &MmOperator, ci: &CiConstraintSet, params: &MmParams) -> Result<MmResult> {
    let obj = op.objective();
    let n = obj.n_tx;
    let l = obj.block_len;
    check_len("waveform rows", n, initial.n_tx())?;
    check_len("waveform columns", l, initial.block_len())?;
    if !ci.is_empty() {
        check_len("constraint set rows", n, ci.n_tx())?;
        check_len("constraint set columns", l, ci.block_len())?;
    }
    let mm = ci.per_subpulse();
    let tol = DualTolerances {
        eps2: params.eps2,
        eps3: params.eps3,
        eps: 1e-9,
        max_sweeps: params.max_sweeps,
    };
    let start = Instant::now();
    let mut x = initial.project_unit_modulus().into_vec();
    let mut duals = vec![vec![0.0; mm]; l];
    let c0 = obj.evaluate(&x);
    let mut history = vec![c0.total];
    let mut records = vec![IterationRecord {
        iteration: 0,
        costs: c0,
        wall_ms: 0.0,
    }];
    let mut converged = false;
    let mut iterations = 0;
    let mut slackness = 0.0;
    let gammas = ci.thresholds().to_vec();

    while iterations < params.max_iter {
        if params.time_limit_s.is_some_and(|t| start.elapsed().as_secs_f64() > t) {
            break;
        }
        let g_prev = *history.last().unwrap();
        if g_prev == 0.0 && iterations > 0 {
            converged = true;
            break;
        }
        iterations += 1;
        let lin = op.majorize(&x);
        let solve = |li: usize, nu0: &[f64]| -> Result<(Vec<C64>, Vec<f64>, f64)> {
            let xl = &x[li * n..(li + 1) * n];
            let dl = lin.subpulse(li, n);
            let hs: &[C64] = if mm > 0 { ci.subpulse_channels(li) } else { &[] };
            let sol = solve_subpulse_dual(dl, hs, &gammas, nu0, xl, tol)?;
            let viol_old = max_violation(hs, &gammas, xl, n);
            let feas_old = viol_old <= params.eps3;
            let feas_new = sol.max_violation <= params.eps3;
            let cost_new = re_inner(dl, &sol.x);
            let cost_old = re_inner(dl, xl);
            let take_new = if feas_new {
                !feas_old || cost_new <= cost_old
            } else {
                !feas_old && sol.max_violation <= viol_old
            };
            if take_new {
                Ok((sol.x, sol.nu, sol.slackness))
            } else {
                let cs = slack_at(hs, &gammas, xl, &sol.nu, n);
                Ok((xl.to_vec(), sol.nu, cs))
            }
        };
        let results: Vec<Result<(Vec<C64>, Vec<f64>, f64)>> = if params.parallel {
            (0..l).into_par_iter().map(|li| solve(li, &duals[li])).collect()
        } else {
            (0..l).map(|li| solve(li, &duals[li])).collect()
        };
        let mut x_new = vec![ZERO; n * l];
        slackness = 0.0f64;
        for (li, r) in results.into_iter().enumerate() {
            let (xl, nu, cs) = r?;
            x_new[li * n..(li + 1) * n].copy_from_slice(&xl);
            duals[li] = nu;
            slackness = slackness.max(cs);
        }
        let costs = obj.evaluate(&x_new);
        if !costs.total.is_finite() {
            return Err(Error::Diverged {
                iteration: iterations,
                reason: "non-finite objective".into(),
            });
        }
        x = x_new;
        history.push(costs.total);
        records.push(IterationRecord {
            iteration: iterations,
            costs,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        let g = costs.total;
        let rel = if g_prev == 0.0 {
            if g == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (g - g_prev).abs() / g_prev.abs()
        };
        if rel <= params.eps4 {
            converged = true;
            break;
        }
    }
    let block = WaveformBlock::new(n, l, x.clone())?;
    let margins = ci.margins_slice(&x);
    Ok(MmResult {
        block,
        state: MmState {
            x,
            duals,
            objective_history: history,
            records,
        },
        iterations,
        converged,
        margins,
        slackness,
    })
}

fn max_violation(hs: &[C64], gammas: &[f64], x: &[C64], n: usize) -> f64 {
    gammas
        .iter()
        .enumerate()
        .map(|(m, g)| g - inner(&hs[m * n..(m + 1) * n], x).re)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn slack_at(hs: &[C64], gammas: &[f64], x: &[C64], nu: &[f64], n: usize) -> f64 {
    gammas
        .iter()
        .enumerate()
        .map(|(m, g)| (nu[m] * (g - inner(&hs[m * n..(m + 1) * n], x).re)).abs())
        .fold(0.0, f64::max)
}
