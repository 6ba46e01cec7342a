//! Arrays, scenes, channels, symbols and the waveform container.
//!
//! Angles follow the broadside convention: `0` deg is broadside and the valid
//! range is `[-90, 90]` deg. A grid angle `phi` in `[0, 180]` deg maps to
//! `phi - 90` (see [`grid_to_broadside`]).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, domain, Result};
use crate::C64;

const ANGLE_EPS_DEG: f64 = 1e-9;

/// Deterministic RNG used by every seeded routine in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Unit-modulus phase of `z`, or `None` when `z` is (numerically) zero.
#[inline]
pub fn unit_phase(z: C64) -> Option<C64> {
    let r = z.norm();
    if r > 1e-300 && r.is_finite() {
        Some(z / r)
    } else {
        None
    }
}

/// Maps an angle on a `[0, 180]` deg grid to the broadside convention.
pub fn grid_to_broadside(phi_deg: f64) -> f64 {
    phi_deg - 90.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_tx: usize,
    pub n_rx: usize,
    #[serde(default = "default_spacing")]
    pub spacing_wavelengths: f64,
}

fn default_spacing() -> f64 {
    0.5
}

impl ArrayGeometry {
    pub fn new(n_tx: usize, n_rx: usize, spacing_wavelengths: f64) -> Result<Self> {
        let g = Self {
            n_tx,
            n_rx,
            spacing_wavelengths,
        };
        g.validate()?;
        Ok(g)
    }

    /// Half-wavelength ULA on both sides.
    pub fn half_wavelength(n_tx: usize, n_rx: usize) -> Result<Self> {
        Self::new(n_tx, n_rx, 0.5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx == 0 {
            return domain("array needs at least one transmit and one receive element");
        }
        if !(self.spacing_wavelengths > 0.0 && self.spacing_wavelengths.is_finite()) {
            return domain("element spacing must be positive");
        }
        Ok(())
    }

    pub fn len(&self, side: ArraySide) -> usize {
        match side {
            ArraySide::Transmit => self.n_tx,
            ArraySide::Receive => self.n_rx,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArraySide {
    Transmit,
    Receive,
}

/// ULA steering vector `a(theta)_n = exp(j 2 pi d n sin(theta))`, `n = 0..N-1`.
pub fn steering_vector(geometry: &ArrayGeometry, angle_deg: f64, side: ArraySide) -> Result<Vec<C64>> {
    geometry.validate()?;
    if !(angle_deg.is_finite() && (-90.0 - ANGLE_EPS_DEG..=90.0 + ANGLE_EPS_DEG).contains(&angle_deg)) {
        return domain(format!("angle {angle_deg} deg outside [-90, 90]"));
    }
    Ok(ula_steering(
        geometry.len(side),
        geometry.spacing_wavelengths,
        angle_deg,
    ))
}

/// Unchecked steering vector used on hot paths.
pub(crate) fn ula_steering(n: usize, spacing: f64, angle_deg: f64) -> Vec<C64> {
    let k = 2.0 * PI * spacing * angle_deg.to_radians().sin();
    (0..n).map(|i| C64::from_polar(1.0, k * i as f64)).collect()
}

/// Complex `N_T x L` transmit block stored column-major (`x = vec(X)`).
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformBlock {
    n_tx: usize,
    block_len: usize,
    data: Vec<C64>,
}

impl WaveformBlock {
    pub fn new(n_tx: usize, block_len: usize, data: Vec<C64>) -> Result<Self> {
        if n_tx == 0 || block_len == 0 {
            return domain("waveform dimensions must be nonzero");
        }
        check_len("waveform entries", n_tx * block_len, data.len())?;
        Ok(Self {
            n_tx,
            block_len,
            data,
        })
    }

    pub fn zeros(n_tx: usize, block_len: usize) -> Self {
        Self {
            n_tx,
            block_len,
            data: vec![C64::new(0.0, 0.0); n_tx * block_len],
        }
    }

    /// Builds `X` from `f(antenna, subpulse)`.
    pub fn from_fn(n_tx: usize, block_len: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(n_tx * block_len);
        for l in 0..block_len {
            for n in 0..n_tx {
                data.push(f(n, l));
            }
        }
        Self {
            n_tx,
            block_len,
            data,
        }
    }

    /// Uniformly random unit-modulus phases.
    pub fn random_unit_modulus(n_tx: usize, block_len: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        Self::from_fn(n_tx, block_len, |_, _| {
            C64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))
        })
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// `vec(X)`.
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn get(&self, antenna: usize, subpulse: usize) -> C64 {
        self.data[subpulse * self.n_tx + antenna]
    }

    pub fn column(&self, subpulse: usize) -> &[C64] {
        &self.data[subpulse * self.n_tx..(subpulse + 1) * self.n_tx]
    }

    pub fn column_mut(&mut self, subpulse: usize) -> &mut [C64] {
        &mut self.data[subpulse * self.n_tx..(subpulse + 1) * self.n_tx]
    }

    pub fn columns(&self) -> std::slice::ChunksExact<'_, C64> {
        self.data.chunks_exact(self.n_tx)
    }

    /// True when every entry has modulus `modulus` within `tol`.
    pub fn is_constant_modulus(&self, modulus: f64, tol: f64) -> bool {
        self.data.iter().all(|z| (z.norm() - modulus).abs() <= tol)
    }

    /// Entrywise phase projection onto the unit circle; zero entries map to 1.
    pub fn project_unit_modulus(&self) -> Self {
        Self {
            n_tx: self.n_tx,
            block_len: self.block_len,
            data: self
                .data
                .iter()
                .map(|&z| unit_phase(z).unwrap_or(C64::new(1.0, 0.0)))
                .collect(),
        }
    }

    /// Physical block with per-entry modulus `sqrt(P_T / N_T)`.
    pub fn scaled_to_power(&self, total_power: f64) -> Self {
        let s = (total_power / self.n_tx as f64).sqrt();
        self.scaled(C64::new(s, 0.0))
    }

    pub fn scaled(&self, c: C64) -> Self {
        Self {
            n_tx: self.n_tx,
            block_len: self.block_len,
            data: self.data.iter().map(|&z| z * c).collect(),
        }
    }

    /// Beam-domain sequence `a^H X` (length `L`).
    pub fn project(&self, steering: &[C64]) -> Vec<C64> {
        self.columns().map(|col| inner(steering, col)).collect()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// `a^H b`.
#[inline]
pub(crate) fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// `X J_tau` without forming `J_tau`: column `j` of the output is column
/// `j - tau` of the input when that index is valid, else zero.
pub fn shift_columns(x: &WaveformBlock, lag: isize) -> WaveformBlock {
    let l = x.block_len as isize;
    let mut out = WaveformBlock::zeros(x.n_tx, x.block_len);
    if lag.abs() >= l {
        return out;
    }
    for j in 0..l {
        let src = j - lag;
        if (0..l).contains(&src) {
            out.column_mut(j as usize)
                .copy_from_slice(x.column(src as usize));
        }
    }
    out
}

/// Shifts a length-`L` row sequence the same way as [`shift_columns`].
pub fn shift_sequence(seq: &[C64], lag: isize) -> Vec<C64> {
    let l = seq.len() as isize;
    (0..l)
        .map(|j| {
            let src = j - lag;
            if (0..l).contains(&src) {
                seq[src as usize]
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarObject {
    pub angle_deg: f64,
    pub range_bin: usize,
    pub amplitude: C64,
}

/// Targets and clutter as seen by the receiver. Object 0 is the reference
/// (its delay defines zero shift) and, by convention, the target of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarScene {
    pub objects: Vec<RadarObject>,
    pub max_lag: usize,
    pub noise_var: f64,
}

impl RadarScene {
    pub fn validate(&self, block_len: usize) -> Result<()> {
        if self.max_lag == 0 || self.max_lag > block_len {
            return domain(format!(
                "max_lag {} must lie in [1, {block_len}]",
                self.max_lag
            ));
        }
        for o in &self.objects {
            if o.range_bin >= block_len {
                return domain(format!(
                    "range bin {} outside [0, {}]",
                    o.range_bin,
                    block_len - 1
                ));
            }
            if !(-90.0..=90.0).contains(&o.angle_deg) {
                return domain(format!("object angle {} outside [-90, 90]", o.angle_deg));
            }
        }
        if !(self.noise_var >= 0.0) {
            return domain("radar noise variance must be nonnegative");
        }
        Ok(())
    }

    pub fn reference_bin(&self) -> usize {
        self.objects.first().map_or(0, |o| o.range_bin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamPatternSpec {
    pub angle_grid_deg: Vec<f64>,
    pub desired_gain: Vec<f64>,
}

impl BeamPatternSpec {
    pub fn new(angle_grid_deg: Vec<f64>, desired_gain: Vec<f64>) -> Result<Self> {
        let s = Self {
            angle_grid_deg,
            desired_gain,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        check_len(
            "desired gain length",
            self.angle_grid_deg.len(),
            self.desired_gain.len(),
        )?;
        if self.angle_grid_deg.is_empty() {
            return domain("empty angle grid");
        }
        if self.angle_grid_deg.windows(2).any(|w| w[1] <= w[0]) {
            return domain("angle grid must be strictly increasing");
        }
        if self.desired_gain.iter().any(|&g| !(g >= 0.0)) {
            return domain("desired gain must be nonnegative");
        }
        if self.desired_gain.iter().map(|g| g * g).sum::<f64>() <= 0.0 {
            return domain("desired beam pattern is identically zero");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.angle_grid_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angle_grid_deg.is_empty()
    }
}

/// Uniform grid `start, start + step, ...` up to `stop` inclusive.
pub fn uniform_grid(start_deg: f64, stop_deg: f64, step_deg: f64) -> Vec<f64> {
    let n = ((stop_deg - start_deg) / step_deg + 1e-9).floor() as usize + 1;
    (0..n).map(|i| start_deg + step_deg * i as f64).collect()
}

/// Rectangular desired pattern: 1 within `target +- width/2`, else 0.
pub fn desired_rect_beam_pattern(
    target_angles_deg: &[f64],
    beam_width_deg: f64,
    grid_deg: &[f64],
) -> Result<BeamPatternSpec> {
    if grid_deg.is_empty() {
        return domain("empty angle grid");
    }
    let half = beam_width_deg / 2.0;
    let desired = grid_deg
        .iter()
        .map(|&th| {
            let inside = target_angles_deg
                .iter()
                .any(|&t| th >= t - half - ANGLE_EPS_DEG && th <= t + half + ANGLE_EPS_DEG);
            if inside {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    BeamPatternSpec::new(grid_deg.to_vec(), desired)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommsConfig {
    /// One length-`N_T` channel per user.
    pub channels: Vec<Vec<C64>>,
    /// `symbols[l][k]`, unit modulus.
    pub symbols: Vec<Vec<C64>>,
    pub noise_var: f64,
    /// Linear SNR thresholds per user.
    pub snr_thresholds: Vec<f64>,
    pub psk_order: usize,
    /// CI region half-angle in radians.
    pub ci_half_angle: f64,
}

impl CommsConfig {
    /// Radar-only: no users, no constraints.
    pub fn none() -> Self {
        Self {
            channels: Vec::new(),
            symbols: Vec::new(),
            noise_var: 0.0,
            snr_thresholds: Vec::new(),
            psk_order: 4,
            ci_half_angle: PI / 4.0,
        }
    }

    /// Seeded Rayleigh channels and PSK symbols with a common SNR threshold.
    /// The CI half-angle is set to `pi / M`.
    pub fn random(
        n_users: usize,
        n_tx: usize,
        block_len: usize,
        psk_order: usize,
        snr_db: f64,
        noise_var: f64,
        seed: u64,
    ) -> Result<Self> {
        let channels = generate_rayleigh_channels(seed, n_users, n_tx);
        let symbols = draw_psk_symbols(seed.wrapping_add(0x9e37_79b9_7f4a_7c15), block_len, n_users, psk_order)?;
        let cfg = Self {
            channels,
            symbols,
            noise_var,
            snr_thresholds: vec![10f64.powf(snr_db / 10.0); n_users],
            psk_order,
            ci_half_angle: PI / psk_order as f64,
        };
        cfg.validate(n_tx, block_len)?;
        Ok(cfg)
    }

    pub fn n_users(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self, n_tx: usize, block_len: usize) -> Result<()> {
        let k = self.channels.len();
        if k == 0 {
            return Ok(());
        }
        for h in &self.channels {
            check_len("channel length", n_tx, h.len())?;
        }
        check_len("SNR thresholds", k, self.snr_thresholds.len())?;
        check_len("symbol rows", block_len, self.symbols.len())?;
        for row in &self.symbols {
            check_len("symbols per subpulse", k, row.len())?;
            if row.iter().any(|s| (s.norm() - 1.0).abs() > 1e-9) {
                return domain("PSK symbols must be unit modulus");
            }
        }
        if self.snr_thresholds.iter().any(|&g| !(g > 0.0)) {
            return domain("SNR thresholds must be positive");
        }
        if !(self.ci_half_angle > 0.0 && self.ci_half_angle < PI / 2.0) {
            return domain("CI half-angle must lie in (0, pi/2)");
        }
        if self.psk_order < 2 {
            return domain("PSK order must be at least 2");
        }
        if !(self.noise_var >= 0.0) {
            return domain("noise variance must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_bp: f64,
    pub w_ac: f64,
    pub w_cc: f64,
    #[serde(default)]
    pub w_sim: f64,
}

impl Weights {
    pub fn new(w_bp: f64, w_ac: f64, w_cc: f64) -> Self {
        Self {
            w_bp,
            w_ac,
            w_cc,
            w_sim: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.w_bp, self.w_ac, self.w_cc, self.w_sim]
            .iter()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return domain("weights must be finite and nonnegative");
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.w_bp == 0.0 && self.w_ac == 0.0 && self.w_cc == 0.0 && self.w_sim == 0.0
    }
}

/// `K` channels with i.i.d. `CN(0, 1)` entries.
pub fn generate_rayleigh_channels(seed: u64, n_users: usize, n_tx: usize) -> Vec<Vec<C64>> {
    let mut rng = seeded_rng(seed);
    (0..n_users)
        .map(|_| (0..n_tx).map(|_| complex_gaussian(&mut rng, 1.0)).collect())
        .collect()
}

/// Circularly-symmetric complex Gaussian with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

/// `symbols[l][k] = exp(j (2 pi m / M + pi / M))` with uniform `m`.
pub fn draw_psk_symbols(seed: u64, block_len: usize, n_users: usize, order: usize) -> Result<Vec<Vec<C64>>> {
    if order < 2 {
        return domain("PSK order must be at least 2");
    }
    let mut rng = seeded_rng(seed);
    Ok((0..block_len)
        .map(|_| {
            (0..n_users)
                .map(|_| psk_point(rng.random_range(0..order), order))
                .collect()
        })
        .collect())
}

pub fn psk_point(index: usize, order: usize) -> C64 {
    let m = order as f64;
    C64::from_polar(1.0, 2.0 * PI * index as f64 / m + PI / m)
}
