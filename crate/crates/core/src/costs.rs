//! Radar cost functions: beam-pattern MSE, auto/cross-correlation ISL and
//! angular similarity.
//!
//! Everything is evaluated in the beam domain: a block `X` is first projected
//! onto a steering vector (`a^H X`, a length-`L` sequence) and lag products are
//! taken with zero-padded FFTs. Kronecker-structured operators are never formed.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, domain, Result};
use crate::lags::LagEngine;
use crate::scenario::{
    inner, steering_vector, ArrayGeometry, ArraySide, BeamPatternSpec, RadarScene, WaveformBlock, Weights,
};
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub bp: f64,
    pub ac: f64,
    pub cc: f64,
    pub sim: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationProfile {
    pub lags: Vec<isize>,
    pub values: Vec<f64>,
}

/// Cached projections of one vector; see [`RadarObjective::projected`].
#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    /// `U x L` row-major.
    grid: Vec<C64>,
    /// Beam-domain sequences at the target angles.
    beams: Vec<Vec<C64>>,
    spectra: Vec<Vec<C64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpForm {
    /// Least-squares fit `sum_u |alpha G_d,u - G_u|^2` with the optimal scale.
    Direct,
    /// `sum_u |x^H B_u x|^2` built from per-subpulse `N_T x N_T` blocks.
    Bu,
}

/// `G(X, theta) = ||a^H X||^2`.
pub fn beam_gain(x: &WaveformBlock, geometry: &ArrayGeometry, angle_deg: f64) -> Result<f64> {
    check_len("waveform rows", geometry.n_tx, x.n_tx())?;
    let a = steering_vector(geometry, angle_deg, ArraySide::Transmit)?;
    Ok(norm_sq(&x.project(&a)))
}

fn norm_sq(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn gains_on_grid(x: &WaveformBlock, geometry: &ArrayGeometry, spec: &BeamPatternSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    spec.angle_grid_deg
        .iter()
        .map(|&th| beam_gain(x, geometry, th))
        .collect()
}

fn alpha_from_gains(gains: &[f64], desired: &[f64]) -> f64 {
    let s: f64 = desired.iter().map(|g| g * g).sum();
    let num: f64 = desired.iter().zip(gains).map(|(d, g)| d * g).sum();
    (num / s).max(0.0)
}

/// Optimal nonnegative scale `alpha = sum G_d,u G_u / sum G_d,u^2`.
pub fn optimal_alpha(x: &WaveformBlock, geometry: &ArrayGeometry, spec: &BeamPatternSpec) -> Result<f64> {
    let gains = gains_on_grid(x, geometry, spec)?;
    Ok(alpha_from_gains(&gains, &spec.desired_gain))
}

pub fn beam_pattern_mse(
    x: &WaveformBlock,
    geometry: &ArrayGeometry,
    spec: &BeamPatternSpec,
    form: BpForm,
) -> Result<f64> {
    match form {
        BpForm::Direct => {
            let gains = gains_on_grid(x, geometry, spec)?;
            let alpha = alpha_from_gains(&gains, &spec.desired_gain);
            Ok(spec
                .desired_gain
                .iter()
                .zip(&gains)
                .map(|(d, g)| (alpha * d - g).powi(2))
                .sum())
        }
        BpForm::Bu => {
            spec.validate()?;
            check_len("waveform rows", geometry.n_tx, x.n_tx())?;
            let n = geometry.n_tx;
            let steer: Vec<Vec<C64>> = spec
                .angle_grid_deg
                .iter()
                .map(|&th| steering_vector(geometry, th, ArraySide::Transmit))
                .collect::<Result<_>>()?;
            let s: f64 = spec.desired_gain.iter().map(|g| g * g).sum();
            // R = sum_u G_d,u a_u a_u^H
            let mut r = vec![ZERO; n * n];
            for (a, &gd) in steer.iter().zip(&spec.desired_gain) {
                if gd != 0.0 {
                    add_outer(&mut r, a, a, C64::new(gd, 0.0));
                }
            }
            let mut total = 0.0;
            for (a, &gd) in steer.iter().zip(&spec.desired_gain) {
                let mut b: Vec<C64> = r.iter().map(|z| z * (gd / s)).collect();
                add_outer(&mut b, a, a, C64::new(-1.0, 0.0));
                let t: C64 = x.columns().map(|col| quad_form(&b, col, col)).sum();
                total += t.norm_sqr();
            }
            Ok(total)
        }
    }
}

/// `m += c a b^H` for row-major `n x n` `m`.
fn add_outer(m: &mut [C64], a: &[C64], b: &[C64], c: C64) {
    let n = a.len();
    for i in 0..n {
        let ai = a[i] * c;
        for j in 0..n {
            m[i * n + j] += ai * b[j].conj();
        }
    }
}

/// `x^H M y` for row-major square `M`.
fn quad_form(m: &[C64], x: &[C64], y: &[C64]) -> C64 {
    let n = x.len();
    let mut acc = ZERO;
    for i in 0..n {
        let mut row = ZERO;
        for j in 0..n {
            row += m[i * n + j] * y[j];
        }
        acc += x[i].conj() * row;
    }
    acc
}

/// `chi_{tau,q,q'} = |a_q^H X J_tau X^H a_q'|^2`.
pub fn space_time_correlation(
    x: &WaveformBlock,
    geometry: &ArrayGeometry,
    angle_q: f64,
    angle_qp: f64,
    lag: isize,
) -> Result<f64> {
    check_len("waveform rows", geometry.n_tx, x.n_tx())?;
    let l = x.block_len() as isize;
    if lag.abs() >= l {
        return domain(format!("lag {lag} outside [-{}, {}]", l - 1, l - 1));
    }
    let sq = x.project(&steering_vector(geometry, angle_q, ArraySide::Transmit)?);
    let sqp = x.project(&steering_vector(geometry, angle_qp, ArraySide::Transmit)?);
    let r: C64 = (0..l)
        .filter(|i| (0..l).contains(&(i - lag)))
        .map(|i| sqp[i as usize].conj() * sq[(i - lag) as usize])
        .sum();
    Ok(r.norm_sqr())
}

/// `chi_{tau,q,q'}` for every lag `-(L-1)..=(L-1)`.
pub fn correlation_profile(
    x: &WaveformBlock,
    geometry: &ArrayGeometry,
    angle_q: f64,
    angle_qp: f64,
) -> Result<CorrelationProfile> {
    check_len("waveform rows", geometry.n_tx, x.n_tx())?;
    let l = x.block_len();
    let eng = LagEngine::new(l);
    let sq = x.project(&steering_vector(geometry, angle_q, ArraySide::Transmit)?);
    let sqp = x.project(&steering_vector(geometry, angle_qp, ArraySide::Transmit)?);
    let r = eng.cross_lags(&sqp, &sq);
    let li = l as isize;
    Ok(CorrelationProfile {
        lags: (-(li - 1)..li).collect(),
        values: r.iter().map(|z| z.norm_sqr()).collect(),
    })
}

fn target_sequences(x: &WaveformBlock, geometry: &ArrayGeometry, angles: &[f64]) -> Result<Vec<Vec<C64>>> {
    check_len("waveform rows", geometry.n_tx, x.n_tx())?;
    angles
        .iter()
        .map(|&th| Ok(x.project(&steering_vector(geometry, th, ArraySide::Transmit)?)))
        .collect()
}

fn check_lag_window(max_lag: usize, block_len: usize) -> Result<()> {
    if max_lag == 0 || max_lag > block_len {
        return domain(format!("max lag {max_lag} must lie in [1, {block_len}]"));
    }
    Ok(())
}

/// `sum_q sum_{0 < |tau| < P} chi_{tau,q,q}`.
pub fn autocorrelation_isl(x: &WaveformBlock, geometry: &ArrayGeometry, angles: &[f64], max_lag: usize) -> Result<f64> {
    check_lag_window(max_lag, x.block_len())?;
    let seqs = target_sequences(x, geometry, angles)?;
    let eng = LagEngine::new(x.block_len());
    Ok(seqs
        .iter()
        .map(|s| windowed_energy(&eng.cross_lags(s, s), max_lag, true))
        .sum())
}

/// Peak-normalized variant `sum_q sum_{0 < |tau| < P} chi_{tau,q,q} / chi_{0,q,q}`,
/// insensitive to how much power the beam puts toward each angle.
pub fn normalized_autocorrelation_isl(
    x: &WaveformBlock,
    geometry: &ArrayGeometry,
    angles: &[f64],
    max_lag: usize,
) -> Result<f64> {
    check_lag_window(max_lag, x.block_len())?;
    let seqs = target_sequences(x, geometry, angles)?;
    let eng = LagEngine::new(x.block_len());
    let l = x.block_len();
    let mut total = 0.0;
    for s in &seqs {
        let r = eng.cross_lags(s, s);
        let peak = r[l - 1].norm_sqr();
        if peak == 0.0 {
            return domain("zero radiated energy toward a target angle");
        }
        total += windowed_energy(&r, max_lag, true) / peak;
    }
    Ok(total)
}

/// `sum_{q != q'} sum_{|tau| < P} chi_{tau,q,q'}` over ordered pairs.
pub fn crosscorrelation_isl(x: &WaveformBlock, geometry: &ArrayGeometry, angles: &[f64], max_lag: usize) -> Result<f64> {
    check_lag_window(max_lag, x.block_len())?;
    let seqs = target_sequences(x, geometry, angles)?;
    let eng = LagEngine::new(x.block_len());
    let mut total = 0.0;
    for (q, sq) in seqs.iter().enumerate() {
        for (qp, sqp) in seqs.iter().enumerate() {
            if q != qp {
                total += windowed_energy(&eng.cross_lags(sqp, sq), max_lag, false);
            }
        }
    }
    Ok(total)
}

fn windowed_energy(r: &[C64], max_lag: usize, skip_zero: bool) -> f64 {
    let l = (r.len() + 1) / 2;
    let p = max_lag.min(l) as isize;
    (-(p - 1)..p)
        .filter(|&t| !(skip_zero && t == 0))
        .map(|t| r[(t + l as isize - 1) as usize].norm_sqr())
        .sum()
}

/// Chirp reference `x_ref[l] = exp(j pi l^2 / L)`, `l = 0..L-1`.
pub fn lfm_reference(block_len: usize) -> Vec<C64> {
    (0..block_len)
        .map(|l| C64::from_polar(1.0, PI * (l * l) as f64 / block_len as f64))
        .collect()
}

/// `sum_q ||X^H a_q - x_ref||^2`.
pub fn angular_similarity(
    x: &WaveformBlock,
    geometry: &ArrayGeometry,
    angles: &[f64],
    reference: &[C64],
) -> Result<f64> {
    check_len("reference length", x.block_len(), reference.len())?;
    let seqs = target_sequences(x, geometry, angles)?;
    Ok(seqs
        .iter()
        .map(|s| s.iter().zip(reference).map(|(a, r)| (a.conj() - r).norm_sqr()).sum::<f64>())
        .sum())
}

/// Distinct object angles in first-seen order. Objects sharing a bearing
/// radiate the same beam-domain sequence, so only one copy enters the costs.
pub fn distinct_angles(scene: &RadarScene) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for o in &scene.objects {
        if !out.iter().any(|a| (a - o.angle_deg).abs() < 1e-9) {
            out.push(o.angle_deg);
        }
    }
    out
}

/// Weighted objective on the given block.
pub fn total_objective(
    x: &WaveformBlock,
    geometry: &ArrayGeometry,
    spec: &BeamPatternSpec,
    scene: &RadarScene,
    weights: &Weights,
) -> Result<CostBreakdown> {
    let obj = RadarObjective::from_scene(geometry, spec, scene, *weights, x.block_len())?;
    check_len("waveform rows", geometry.n_tx, x.n_tx())?;
    Ok(obj.evaluate(x.as_slice()))
}

/// Ordered angle pair `(q, q')` entering an ISL term.
#[derive(Debug, Clone, Copy)]
pub(crate) struct IslPair {
    pub q: usize,
    pub qp: usize,
    pub weight: f64,
    pub skip_zero: bool,
}

/// Precomputed steering data for repeated evaluation of the objective and
/// its bilinear split on vectorized blocks `x = vec(X)`.
#[derive(Debug, Clone)]
pub struct RadarObjective {
    pub(crate) n_tx: usize,
    pub(crate) block_len: usize,
    pub(crate) max_lag: usize,
    pub(crate) weights: Weights,
    /// Grid steering vectors, `U x N_T` row-major.
    pub(crate) grid: Vec<C64>,
    pub(crate) desired: Vec<f64>,
    pub(crate) desired_sq: f64,
    pub(crate) targets: Vec<Vec<C64>>,
    pub(crate) target_angles: Vec<f64>,
    pub(crate) sim_ref: Vec<C64>,
    pub(crate) engine: LagEngine,
}

impl RadarObjective {
    pub fn new(
        geometry: &ArrayGeometry,
        spec: &BeamPatternSpec,
        target_angles: &[f64],
        max_lag: usize,
        weights: Weights,
        block_len: usize,
    ) -> Result<Self> {
        geometry.validate()?;
        spec.validate()?;
        weights.validate()?;
        check_lag_window(max_lag, block_len)?;
        let n = geometry.n_tx;
        let mut grid = Vec::with_capacity(spec.len() * n);
        for &th in &spec.angle_grid_deg {
            grid.extend(steering_vector(geometry, th, ArraySide::Transmit)?);
        }
        let targets = target_angles
            .iter()
            .map(|&th| steering_vector(geometry, th, ArraySide::Transmit))
            .collect::<Result<_>>()?;
        Ok(Self {
            n_tx: n,
            block_len,
            max_lag,
            weights,
            grid,
            desired: spec.desired_gain.clone(),
            desired_sq: spec.desired_gain.iter().map(|g| g * g).sum(),
            targets,
            target_angles: target_angles.to_vec(),
            sim_ref: lfm_reference(block_len),
            engine: LagEngine::new(block_len),
        })
    }

    pub fn from_scene(
        geometry: &ArrayGeometry,
        spec: &BeamPatternSpec,
        scene: &RadarScene,
        weights: Weights,
        block_len: usize,
    ) -> Result<Self> {
        scene.validate(block_len)?;
        Self::new(geometry, spec, &distinct_angles(scene), scene.max_lag, weights, block_len)
    }

    pub fn weights(&self) -> Weights {
        self.weights
    }

    pub fn with_weights(&self, weights: Weights) -> Self {
        let mut o = self.clone();
        o.weights = weights;
        o
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn target_angles(&self) -> &[f64] {
        &self.target_angles
    }

    pub fn grid_len(&self) -> usize {
        self.desired.len()
    }

    pub(crate) fn grid_steer(&self, u: usize) -> &[C64] {
        &self.grid[u * self.n_tx..(u + 1) * self.n_tx]
    }

    /// `a^H x_l` for every subpulse.
    pub(crate) fn project(&self, a: &[C64], x: &[C64]) -> Vec<C64> {
        x.chunks_exact(self.n_tx).map(|col| inner(a, col)).collect()
    }

    pub(crate) fn project_targets(&self, x: &[C64]) -> Vec<Vec<C64>> {
        self.targets.iter().map(|a| self.project(a, x)).collect()
    }

    /// Grid projections, `U x L` row-major.
    pub(crate) fn project_grid(&self, x: &[C64]) -> Vec<C64> {
        let (n, l) = (self.n_tx, self.block_len);
        let u_len = self.desired.len();
        let mut out = vec![ZERO; u_len * l];
        for u in 0..u_len {
            let a = self.grid_steer(u);
            for (li, col) in x.chunks_exact(n).enumerate() {
                out[u * l + li] = inner(a, col);
            }
        }
        out
    }

    /// Ordered pairs with their ISL weights; zero-weight families are dropped.
    pub(crate) fn isl_pairs(&self) -> Vec<IslPair> {
        let qn = self.targets.len();
        let mut out = Vec::new();
        for q in 0..qn {
            for qp in 0..qn {
                let (weight, skip_zero) = if q == qp {
                    (self.weights.w_ac, true)
                } else {
                    (self.weights.w_cc, false)
                };
                if weight > 0.0 {
                    out.push(IslPair { q, qp, weight, skip_zero });
                }
            }
        }
        out
    }

    /// Zeroes lags outside the suppression window (and lag 0 if requested).
    pub(crate) fn mask(&self, r: &mut [C64], skip_zero: bool) {
        let l = self.block_len as isize;
        let p = self.max_lag as isize;
        for (i, z) in r.iter_mut().enumerate() {
            let tau = i as isize - (l - 1);
            if tau.abs() >= p || (skip_zero && tau == 0) {
                *z = ZERO;
            }
        }
    }

    /// Complex cross-gains `c_u = sum_l conj(x~_u[l]) v~_u[l]` and the
    /// matching scale `alpha = sum_u G_d,u c_u / S`.
    pub(crate) fn cross_gains(&self, xg: &[C64], vg: &[C64]) -> (Vec<C64>, C64) {
        let l = self.block_len;
        let c: Vec<C64> = (0..self.desired.len())
            .map(|u| inner(&xg[u * l..(u + 1) * l], &vg[u * l..(u + 1) * l]))
            .collect();
        let alpha: C64 = c
            .iter()
            .zip(&self.desired)
            .map(|(c, d)| c * *d)
            .sum::<C64>()
            / self.desired_sq;
        (c, alpha)
    }

    fn bp_value(&self, xg: &[C64], vg: &[C64]) -> f64 {
        let (c, alpha) = self.cross_gains(xg, vg);
        c.iter()
            .zip(&self.desired)
            .map(|(c, d)| (alpha * *d - c).norm_sqr())
            .sum()
    }

    /// Grid and target projections of `x` plus target spectra, shared by
    /// every value and gradient evaluated at the same vector.
    pub fn projected(&self, x: &[C64]) -> Projected {
        let beams = self.project_targets(x);
        let spectra = beams.iter().map(|s| self.engine.spectrum(s)).collect();
        Projected {
            grid: self.project_grid(x),
            beams,
            spectra,
        }
    }

    fn isl_values(&self, px: &Projected, pv: &Projected) -> (f64, f64) {
        let qn = self.targets.len();
        let mut ac = 0.0;
        let mut cc = 0.0;
        for q in 0..qn {
            for qp in 0..qn {
                let r = self.engine.cross_lags_spec(&px.spectra[qp], &pv.spectra[q]);
                if q == qp {
                    ac += windowed_energy(&r, self.max_lag, true);
                } else {
                    cc += windowed_energy(&r, self.max_lag, false);
                }
            }
        }
        (ac, cc)
    }

    fn sim_value(&self, xs: &[Vec<C64>]) -> f64 {
        xs.iter()
            .map(|s| {
                s.iter()
                    .zip(&self.sim_ref)
                    .map(|(a, r)| (a.conj() - r).norm_sqr())
                    .sum::<f64>()
            })
            .sum()
    }

    fn combine(&self, bp: f64, ac: f64, cc: f64, sim: f64) -> CostBreakdown {
        let w = &self.weights;
        CostBreakdown {
            bp,
            ac,
            cc,
            sim,
            total: w.w_bp * bp + w.w_ac * ac + w.w_cc * cc + w.w_sim * sim,
        }
    }

    /// All cost components at `x = vec(X)`.
    pub fn evaluate(&self, x: &[C64]) -> CostBreakdown {
        let px = self.projected(x);
        self.evaluate_projected(&px, &px)
    }

    /// Weighted objective only.
    pub fn value(&self, x: &[C64]) -> f64 {
        self.evaluate(x).total
    }

    /// Bilinear split `g(x, v)`: each quartic term `|x^H M x|^2` becomes
    /// `|x^H M v|^2`. The similarity term, already quadratic, is taken at `x`.
    pub fn evaluate_bilinear(&self, x: &[C64], v: &[C64]) -> CostBreakdown {
        self.evaluate_projected(&self.projected(x), &self.projected(v))
    }

    /// [`Self::evaluate_bilinear`] from cached projections.
    pub fn evaluate_projected(&self, px: &Projected, pv: &Projected) -> CostBreakdown {
        let bp = self.bp_value(&px.grid, &pv.grid);
        let (ac, cc) = self.isl_values(px, pv);
        self.combine(bp, ac, cc, self.sim_value(&px.beams))
    }

    /// `sum_u f_u a_u p~_u[l]` per subpulse, given grid projections `pg`.
    fn grid_synthesize(&self, f: &[C64], pg: &[C64], out: &mut [C64]) {
        let (n, l) = (self.n_tx, self.block_len);
        for (u, &fu) in f.iter().enumerate() {
            if fu == ZERO {
                continue;
            }
            let a = self.grid_steer(u);
            for li in 0..l {
                let s = fu * pg[u * l + li];
                let col = &mut out[li * n..(li + 1) * n];
                for (o, ai) in col.iter_mut().zip(a) {
                    *o += ai * s;
                }
            }
        }
    }

    /// Gradient `2 dg/dx*` of the bilinear objective with `v` fixed. The scale
    /// `alpha` enters as a constant, which is exact here because its own
    /// derivative term cancels.
    pub fn grad_x(&self, x: &[C64], v: &[C64]) -> Vec<C64> {
        self.grad_x_projected(x, &self.projected(x), &self.projected(v))
    }

    /// [`Self::grad_x`] from cached projections of `x` and `v`.
    pub fn grad_x_projected(&self, x: &[C64], px: &Projected, pv: &Projected) -> Vec<C64> {
        let mut g = vec![ZERO; x.len()];
        let w = self.weights;
        if w.w_bp > 0.0 {
            let (c, alpha) = self.cross_gains(&px.grid, &pv.grid);
            let f: Vec<C64> = c
                .iter()
                .zip(&self.desired)
                .map(|(c, d)| (c - alpha * *d).conj() * (2.0 * w.w_bp))
                .collect();
            self.grid_synthesize(&f, &pv.grid, &mut g);
        }
        for pr in &self.isl_pairs() {
            let mut r = self.engine.cross_lags_spec(&px.spectra[pr.qp], &pv.spectra[pr.q]);
            self.mask(&mut r, pr.skip_zero);
            let c: Vec<C64> = r.iter().map(|z| z.conj() * (2.0 * pr.weight)).collect();
            let s = self.engine.convolve_spec(&self.engine.lag_spectrum(&c), &pv.spectra[pr.q]);
            self.add_steered(&mut g, &self.targets[pr.qp], &s);
        }
        if w.w_sim > 0.0 {
            self.add_sim_grad(x, &mut g);
        }
        g
    }

    /// Gradient `2 dg/dv*` of the bilinear objective with `x` fixed.
    pub fn grad_v(&self, x: &[C64], v: &[C64]) -> Vec<C64> {
        self.grad_v_projected(&self.projected(x), &self.projected(v))
    }

    /// [`Self::grad_v`] from cached projections of `x` and `v`.
    pub fn grad_v_projected(&self, px: &Projected, pv: &Projected) -> Vec<C64> {
        let mut g = vec![ZERO; self.n_tx * self.block_len];
        let w = self.weights;
        if w.w_bp > 0.0 {
            let (c, alpha) = self.cross_gains(&px.grid, &pv.grid);
            let f: Vec<C64> = c
                .iter()
                .zip(&self.desired)
                .map(|(c, d)| (c - alpha * *d) * (2.0 * w.w_bp))
                .collect();
            self.grid_synthesize(&f, &px.grid, &mut g);
        }
        for pr in &self.isl_pairs() {
            let mut r = self.engine.cross_lags_spec(&px.spectra[pr.qp], &pv.spectra[pr.q]);
            self.mask(&mut r, pr.skip_zero);
            let c: Vec<C64> = r.iter().map(|z| z * (2.0 * pr.weight)).collect();
            let s = self.engine.correlate(&c, &px.beams[pr.qp]);
            self.add_steered(&mut g, &self.targets[pr.q], &s);
        }
        g
    }

    /// Gradient of the single-variable objective `g(x)`.
    pub fn grad(&self, x: &[C64]) -> Vec<C64> {
        let px = self.projected(x);
        let mut g = self.grad_x_projected(x, &px, &px);
        // the similarity term lives in grad_x only, so it is counted once
        for (a, b) in g.iter_mut().zip(self.grad_v_projected(&px, &px)) {
            *a += b;
        }
        g
    }

    /// `out[:, l] += a * s[l]`.
    pub(crate) fn add_steered(&self, out: &mut [C64], a: &[C64], s: &[C64]) {
        let n = self.n_tx;
        for (li, &sl) in s.iter().enumerate() {
            for (o, ai) in out[li * n..(li + 1) * n].iter_mut().zip(a) {
                *o += ai * sl;
            }
        }
    }

    /// `S_sim = sum_q a_q a_q^H`, row-major.
    pub(crate) fn sim_matrix(&self) -> Vec<C64> {
        let n = self.n_tx;
        let mut s = vec![ZERO; n * n];
        for a in &self.targets {
            add_outer(&mut s, a, a, C64::new(1.0, 0.0));
        }
        s
    }

    /// Linear term `f_l = sum_q a_q conj(x_ref[l])` of the similarity cost.
    pub(crate) fn sim_linear(&self) -> Vec<C64> {
        let n = self.n_tx;
        let asum: Vec<C64> = (0..n).map(|i| self.targets.iter().map(|a| a[i]).sum()).collect();
        let mut f = vec![ZERO; n * self.block_len];
        for (li, r) in self.sim_ref.iter().enumerate() {
            for i in 0..n {
                f[li * n + i] = asum[i] * r.conj();
            }
        }
        f
    }

    fn add_sim_grad(&self, x: &[C64], g: &mut [C64]) {
        let n = self.n_tx;
        let s = self.sim_matrix();
        let f = self.sim_linear();
        let ws = 2.0 * self.weights.w_sim;
        for (li, col) in x.chunks_exact(n).enumerate() {
            for i in 0..n {
                let mut acc = ZERO;
                for j in 0..n {
                    acc += s[i * n + j] * col[j];
                }
                g[li * n + i] += (acc - f[li * n + i]) * ws;
            }
        }
    }
}
