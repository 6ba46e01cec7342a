//! Constructive-interference constraints and the feasible starting point.
//!
//! For user `k` and subpulse `l` the noiseless received symbol, rotated back by
//! the intended PSK phase, must lie in a sector of half-angle `Lambda` beyond
//! the SNR point `sigma sqrt(gamma_k)`. Each sector is the intersection of two
//! half-spaces `Re{h^_{l,m}^H x_l} >= Gamma~_m`, so a block carries `2 K L`
//! linear constraints on the unit-modulus vector `x`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, domain, Result};
use crate::scenario::{inner, seeded_rng, unit_phase, CommsConfig, WaveformBlock};
use crate::C64;

use rand::Rng;

/// Absolute margin tolerance for declaring a block feasible.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SectorSide {
    /// Rotation `sin Lambda + j cos Lambda` on `h^H` (odd index, 1-based).
    Lower,
    /// Rotation `sin Lambda - j cos Lambda` on `h^H` (even index, 1-based).
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiConstraintSet {
    n_tx: usize,
    block_len: usize,
    n_users: usize,
    /// `h^_{l,m}` stored at `((l * 2K) + m) * N_T`.
    rotated: Vec<C64>,
    /// `Gamma~_m`, `m = 0..2K`.
    thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    /// `margins[l][m] = Re{h^_{l,m}^H x_l} - Gamma~_m`.
    pub margins: Vec<Vec<f64>>,
    pub min_margin: f64,
    pub feasible: bool,
}

impl MarginReport {
    pub fn max_violation(&self) -> f64 {
        (-self.min_margin).max(0.0)
    }
}

impl CiConstraintSet {
    pub fn build(comms: &CommsConfig, total_power: f64, n_tx: usize, block_len: usize) -> Result<Self> {
        if !(total_power > 0.0) {
            return domain("transmit power must be positive");
        }
        comms.validate(n_tx, block_len)?;
        let k = comms.n_users();
        if k == 0 {
            return Ok(Self::empty(n_tx, block_len));
        }
        let lam = comms.ci_half_angle;
        let (sl, cl) = lam.sin_cos();
        // rotations applied to h (conjugates of the ones acting on h^H)
        let rot_lower = C64::new(sl, -cl);
        let rot_upper = C64::new(sl, cl);
        let sigma = comms.noise_var.sqrt();
        let scale = (n_tx as f64 / total_power).sqrt();
        let thresholds = (0..2 * k)
            .map(|m| scale * sigma * comms.snr_thresholds[m / 2].sqrt() * sl)
            .collect();
        let mut rotated = Vec::with_capacity(block_len * 2 * k * n_tx);
        for l in 0..block_len {
            for (kk, h) in comms.channels.iter().enumerate() {
                let s = comms.symbols[l][kk];
                let ph = unit_phase(s).unwrap_or(C64::new(1.0, 0.0));
                for rot in [rot_lower, rot_upper] {
                    let c = ph * rot;
                    rotated.extend(h.iter().map(|z| z * c));
                }
            }
        }
        Ok(Self {
            n_tx,
            block_len,
            n_users: k,
            rotated,
            thresholds,
        })
    }

    pub fn empty(n_tx: usize, block_len: usize) -> Self {
        Self {
            n_tx,
            block_len,
            n_users: 0,
            rotated: Vec::new(),
            thresholds: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n_users == 0
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// Constraints per subpulse (`2K`).
    pub fn per_subpulse(&self) -> usize {
        2 * self.n_users
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// `(user, side)` for a 0-based constraint index.
    pub fn index_map(&self, m: usize) -> (usize, SectorSide) {
        let side = if m % 2 == 0 { SectorSide::Lower } else { SectorSide::Upper };
        (m / 2, side)
    }

    pub fn rotated_channel(&self, subpulse: usize, m: usize) -> &[C64] {
        let start = (subpulse * self.per_subpulse() + m) * self.n_tx;
        &self.rotated[start..start + self.n_tx]
    }

    /// All `2K` rotated channels for one subpulse, concatenated.
    pub fn subpulse_channels(&self, subpulse: usize) -> &[C64] {
        let w = self.per_subpulse() * self.n_tx;
        &self.rotated[subpulse * w..(subpulse + 1) * w]
    }

    /// `H~ x` as complex values, `l`-major.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let n = self.n_tx;
        let mut out = Vec::with_capacity(self.block_len * self.per_subpulse());
        for (l, col) in x.chunks_exact(n).enumerate() {
            for m in 0..self.per_subpulse() {
                out.push(inner(self.rotated_channel(l, m), col));
            }
        }
        out
    }

    /// `H~^H y`.
    pub fn apply_adjoint(&self, y: &[C64]) -> Vec<C64> {
        let n = self.n_tx;
        let mm = self.per_subpulse();
        let mut out = vec![C64::new(0.0, 0.0); n * self.block_len];
        if mm == 0 {
            return out;
        }
        for l in 0..self.block_len {
            let col = &mut out[l * n..(l + 1) * n];
            for m in 0..mm {
                let c = y[l * mm + m];
                for (o, h) in col.iter_mut().zip(self.rotated_channel(l, m)) {
                    *o += h * c;
                }
            }
        }
        out
    }

    /// Thresholds repeated per subpulse, aligned with [`Self::apply`].
    pub fn stacked_thresholds(&self) -> Vec<f64> {
        (0..self.block_len).flat_map(|_| self.thresholds.iter().copied()).collect()
    }

    /// Largest singular value of `H~`; exact via the per-subpulse Gram blocks.
    pub fn spectral_norm(&self) -> f64 {
        let mm = self.per_subpulse();
        if mm == 0 {
            return 0.0;
        }
        let mut best: f64 = 0.0;
        for l in 0..self.block_len {
            let gram = nalgebra::DMatrix::<C64>::from_fn(mm, mm, |i, j| {
                inner(self.rotated_channel(l, i), self.rotated_channel(l, j))
            });
            let ev = gram.symmetric_eigenvalues();
            best = best.max(ev.iter().cloned().fold(0.0, f64::max));
        }
        best.sqrt()
    }

    pub fn margins(&self, x: &WaveformBlock) -> Result<MarginReport> {
        check_len("waveform rows", self.n_tx, x.n_tx())?;
        check_len("waveform columns", self.block_len, x.block_len())?;
        Ok(self.margins_slice(x.as_slice()))
    }

    pub(crate) fn margins_slice(&self, x: &[C64]) -> MarginReport {
        let mm = self.per_subpulse();
        let margins: Vec<Vec<f64>> = x
            .chunks_exact(self.n_tx)
            .enumerate()
            .map(|(l, col)| {
                (0..mm)
                    .map(|m| inner(self.rotated_channel(l, m), col).re - self.thresholds[m])
                    .collect()
            })
            .collect();
        let min_margin = margins
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let min_margin = if mm == 0 { 0.0 } else { min_margin };
        MarginReport {
            margins,
            min_margin,
            feasible: min_margin >= -FEASIBILITY_TOL,
        }
    }
}

pub fn build_ci_set(comms: &CommsConfig, total_power: f64, n_tx: usize, block_len: usize) -> Result<CiConstraintSet> {
    CiConstraintSet::build(comms, total_power, n_tx, block_len)
}

pub fn ci_margins(x: &WaveformBlock, set: &CiConstraintSet) -> Result<MarginReport> {
    set.margins(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitResult {
    pub block: WaveformBlock,
    /// Smallest constraint margin after phase projection.
    pub min_margin: f64,
    pub feasible: bool,
    pub report: MarginReport,
}

const INIT_ITERS: usize = 2000;
const POLISH_ITERS: usize = 500;

/// Max-min margin start point: per subpulse, projected subgradient ascent on
/// `min_m Re{h^_m^H x} - Gamma~_m` over the box `|x_n| <= 1`, then phase
/// projection followed by a short ascent on the unit circle. The best
/// iterate by min-margin is kept at every stage.
pub fn initialize_waveform(set: &CiConstraintSet, n_tx: usize, block_len: usize, seed: u64) -> Result<InitResult> {
    if set.is_empty() {
        let block = WaveformBlock::random_unit_modulus(n_tx, block_len, seed);
        let report = set.margins_slice(block.as_slice());
        return Ok(InitResult {
            block,
            min_margin: 0.0,
            feasible: true,
            report,
        });
    }
    check_len("constraint set rows", n_tx, set.n_tx())?;
    check_len("constraint set columns", block_len, set.block_len())?;
    let mut rng = seeded_rng(seed);
    let mut block = WaveformBlock::zeros(n_tx, block_len);
    for l in 0..block_len {
        let jitter: Vec<f64> = (0..n_tx).map(|_| rng.random_range(-0.05..0.05)).collect();
        let col = maxmin_subpulse(set, l, &jitter);
        block.column_mut(l).copy_from_slice(&col);
    }
    let report = set.margins_slice(block.as_slice());
    Ok(InitResult {
        min_margin: report.min_margin,
        feasible: report.feasible,
        block,
        report,
    })
}

fn subpulse_margin(set: &CiConstraintSet, l: usize, x: &[C64]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for m in 0..set.per_subpulse() {
        let v = inner(set.rotated_channel(l, m), x).re - set.thresholds[m];
        if v < best.0 {
            best = (v, m);
        }
    }
    best
}

fn maxmin_subpulse(set: &CiConstraintSet, l: usize, jitter: &[f64]) -> Vec<C64> {
    let n = set.n_tx();
    let mm = set.per_subpulse();
    let mut sum = vec![C64::new(0.0, 0.0); n];
    for m in 0..mm {
        let h = set.rotated_channel(l, m);
        let nrm = h.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
        for (s, z) in sum.iter_mut().zip(h) {
            *s += z / nrm;
        }
    }
    let mut x: Vec<C64> = sum
        .iter()
        .zip(jitter)
        .map(|(z, j)| unit_phase(*z).unwrap_or(C64::new(1.0, 0.0)) * C64::from_polar(1.0, *j))
        .collect();

    let ascend = |x: &mut Vec<C64>, iters: usize, project: fn(C64) -> C64| -> Vec<C64> {
        let mut best = x.clone();
        let mut best_val = subpulse_margin(set, l, x).0;
        for t in 1..=iters {
            let (_, m) = subpulse_margin(set, l, x);
            let h = set.rotated_channel(l, m);
            let nrm = h.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
            let step = 0.5 / (t as f64).sqrt();
            for (xi, hi) in x.iter_mut().zip(h) {
                *xi = project(*xi + hi * (step / nrm));
            }
            let v = subpulse_margin(set, l, x).0;
            if v > best_val {
                best_val = v;
                best.copy_from_slice(x);
            }
        }
        best
    };

    let boxed = ascend(&mut x, INIT_ITERS, project_disc);
    let mut circ: Vec<C64> = boxed
        .iter()
        .map(|z| unit_phase(*z).unwrap_or(C64::new(1.0, 0.0)))
        .collect();
    let start = circ.clone();
    let polished = ascend(&mut circ, POLISH_ITERS, project_circle);
    if subpulse_margin(set, l, &polished).0 >= subpulse_margin(set, l, &start).0 {
        polished
    } else {
        start
    }
}

fn project_disc(z: C64) -> C64 {
    let r = z.norm();
    if r > 1.0 {
        z / r
    } else {
        z
    }
}

fn project_circle(z: C64) -> C64 {
    unit_phase(z).unwrap_or(C64::new(1.0, 0.0))
}
