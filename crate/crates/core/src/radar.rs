//! Receive-side evaluation: echo synthesis, Capon angle-range imaging,
//! CA-CFAR detection and target SINR.
//!
//! Range bins are relative to the first scene object: an object at bin `tau`
//! returns the transmit block shifted by `tau - tau_ref` subpulses.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, domain, Result};
use crate::lags::LagEngine;
use crate::scenario::{
    complex_gaussian, inner, seeded_rng, shift_sequence, ula_steering, ArrayGeometry, RadarScene, WaveformBlock,
};
use crate::C64;

use rand::Rng;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// `N_R x L` echo matrix, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoBlock {
    pub n_rx: usize,
    pub block_len: usize,
    pub data: Vec<C64>,
    pub seed: u64,
}

impl EchoBlock {
    pub fn column(&self, l: usize) -> &[C64] {
        &self.data[l * self.n_rx..(l + 1) * self.n_rx]
    }

    /// `w^H Z`.
    pub fn beamform(&self, w: &[C64]) -> Vec<C64> {
        self.data.chunks_exact(self.n_rx).map(|c| inner(w, c)).collect()
    }
}

fn tx_steer(g: &ArrayGeometry, angle: f64) -> Vec<C64> {
    ula_steering(g.n_tx, g.spacing_wavelengths, angle)
}

fn rx_steer(g: &ArrayGeometry, angle: f64) -> Vec<C64> {
    ula_steering(g.n_rx, g.spacing_wavelengths, angle)
}

/// `Z = sum_q kappa_q b(theta_q) a^H(theta_q) X J_{tau_q - tau_ref} + W`.
pub fn synthesize_echo(x: &WaveformBlock, scene: &RadarScene, geometry: &ArrayGeometry, seed: u64) -> Result<EchoBlock> {
    geometry.validate()?;
    check_len("waveform rows", geometry.n_tx, x.n_tx())?;
    scene.validate(x.block_len())?;
    let mut rng = seeded_rng(seed);
    Ok(echo_with(x, scene, geometry, &mut rng, seed))
}

fn echo_with<R: Rng>(x: &WaveformBlock, scene: &RadarScene, geometry: &ArrayGeometry, rng: &mut R, seed: u64) -> EchoBlock {
    let nr = geometry.n_rx;
    let l = x.block_len();
    let tref = scene.reference_bin() as isize;
    let mut data = vec![ZERO; nr * l];
    for o in &scene.objects {
        if o.amplitude == ZERO {
            continue;
        }
        let s = shift_sequence(&x.project(&tx_steer(geometry, o.angle_deg)), o.range_bin as isize - tref);
        let b = rx_steer(geometry, o.angle_deg);
        for (li, sl) in s.iter().enumerate() {
            let c = o.amplitude * sl;
            for (d, bi) in data[li * nr..(li + 1) * nr].iter_mut().zip(&b) {
                *d += bi * c;
            }
        }
    }
    if scene.noise_var > 0.0 {
        for d in data.iter_mut() {
            *d += complex_gaussian(rng, scene.noise_var);
        }
    }
    EchoBlock {
        n_rx: nr,
        block_len: l,
        data,
        seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaponImage {
    pub angles_deg: Vec<f64>,
    pub range_bins: Vec<usize>,
    /// `amplitude_db[a * range_bins.len() + r]`, maximum exactly 0 dB.
    pub amplitude_db: Vec<f64>,
}

impl CaponImage {
    pub fn at(&self, angle_idx: usize, range_idx: usize) -> f64 {
        self.amplitude_db[angle_idx * self.range_bins.len() + range_idx]
    }

    /// `(angle_idx, range_idx)` of the global maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let nr = self.range_bins.len();
        let (i, _) = self
            .amplitude_db
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        (i / nr, i % nr)
    }

    pub fn angle_index(&self, angle: f64) -> Option<usize> {
        self.angles_deg.iter().position(|a| (a - angle).abs() < 1e-9)
    }
}

pub const CAPON_LOADING: f64 = 1e-3;

/// Spatial Capon beamformer followed by a temporal matched filter per cell,
/// averaged over echo realizations. The covariance uses every echo column of
/// every realization.
pub fn capon_image(
    echoes: &[EchoBlock],
    x: &WaveformBlock,
    geometry: &ArrayGeometry,
    angles_deg: &[f64],
    range_bins: &[usize],
    reference_bin: usize,
) -> Result<CaponImage> {
    if echoes.is_empty() {
        return domain("Capon imaging needs at least one echo block");
    }
    check_len("waveform rows", geometry.n_tx, x.n_tx())?;
    let nr = geometry.n_rx;
    let l = x.block_len();
    for e in echoes {
        check_len("echo rows", nr, e.n_rx)?;
        check_len("echo columns", l, e.block_len)?;
    }
    let mut r = DMatrix::<C64>::zeros(nr, nr);
    let mut count = 0usize;
    for e in echoes {
        for li in 0..l {
            let c = DVector::from_column_slice(e.column(li));
            r += &c * c.adjoint();
            count += 1;
        }
    }
    r /= C64::new(count as f64, 0.0);
    let tr = r.trace().re;
    let load = CAPON_LOADING * tr.max(1e-300) / nr as f64;
    for i in 0..nr {
        r[(i, i)] += C64::new(load, 0.0);
    }
    let rinv = r
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| r.clone().try_inverse())
        .ok_or_else(|| crate::Error::Domain("sample covariance not invertible".into()))?;

    let eng = LagEngine::new(l);
    let tref = reference_bin as isize;
    let rows: Vec<Vec<f64>> = angles_deg
        .par_iter()
        .map(|&th| {
            let b = DVector::from_vec(rx_steer(geometry, th));
            let rb = &rinv * &b;
            let denom = b.adjoint() * &rb;
            let w: Vec<C64> = rb.iter().map(|z| z / denom[(0, 0)].conj()).collect();
            let s0 = x.project(&tx_steer(geometry, th));
            let mut acc = vec![0.0; range_bins.len()];
            let s0_hat = eng.spectrum(&s0);
            for e in echoes {
                let y = e.beamform(&w);
                let r = eng.cross_lags_spec(&eng.spectrum(&y), &s0_hat);
                for (k, &rb) in range_bins.iter().enumerate() {
                    let delta = rb as isize - tref;
                    if delta.unsigned_abs() >= l {
                        continue;
                    }
                    let energy: f64 = shift_sequence(&s0, delta).iter().map(|z| z.norm_sqr()).sum();
                    if energy > 0.0 {
                        acc[k] += r[(delta + l as isize - 1) as usize].norm() / energy;
                    }
                }
            }
            acc.iter().map(|v| v / echoes.len() as f64).collect()
        })
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let mx = flat.iter().cloned().fold(0.0, f64::max);
    let amplitude_db = flat
        .iter()
        .map(|&v| if mx > 0.0 { 20.0 * (v / mx).max(1e-300).log10() } else { 0.0 })
        .collect();
    Ok(CaponImage {
        angles_deg: angles_deg.to_vec(),
        range_bins: range_bins.to_vec(),
        amplitude_db,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfarConfig {
    pub n_train: usize,
    pub n_guard: usize,
    pub p_fa: f64,
}

impl Default for CfarConfig {
    fn default() -> Self {
        Self {
            n_train: 4,
            n_guard: 2,
            p_fa: 1e-2,
        }
    }
}

impl CfarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return domain("CFAR needs at least one training cell per side");
        }
        if !(self.p_fa > 0.0 && self.p_fa < 1.0) {
            return domain("CFAR false-alarm rate must lie in (0, 1)");
        }
        Ok(())
    }
}

/// CA-CFAR scale `T = n (P_fa^{-1/n} - 1)` for `n` averaged cells.
pub fn cfar_threshold_factor(n_cells: usize, p_fa: f64) -> f64 {
    let n = n_cells as f64;
    n * (p_fa.powf(-1.0 / n) - 1.0)
}

/// Decision for one cell. Cells whose two-sided window does not fit take all
/// `2 n_train` training cells from the side that does.
pub fn cfar_detect_cell(powers: &[f64], idx: usize, cfg: &CfarConfig) -> bool {
    let n = powers.len();
    let span = cfg.n_train + cfg.n_guard;
    let left_ok = idx >= span;
    let right_ok = idx + span < n;
    let mut sum = 0.0;
    let mut cnt = 0usize;
    let mut take = |range: std::ops::Range<usize>| {
        for j in range {
            sum += powers[j];
            cnt += 1;
        }
    };
    if left_ok && right_ok {
        take(idx - span..idx - cfg.n_guard);
        take(idx + cfg.n_guard + 1..idx + span + 1);
    } else if right_ok {
        let lo = idx + cfg.n_guard + 1;
        take(lo..(lo + 2 * cfg.n_train).min(n));
    } else if left_ok {
        let hi = idx - cfg.n_guard;
        take(hi.saturating_sub(2 * cfg.n_train)..hi);
    }
    if cnt == 0 {
        return false;
    }
    let t = cfar_threshold_factor(cnt, cfg.p_fa);
    powers[idx] > t * sum / cnt as f64
}

pub fn cfar_detect(powers: &[f64], cfg: &CfarConfig) -> Result<Vec<bool>> {
    cfg.validate()?;
    if powers.len() <= 2 * (cfg.n_train + cfg.n_guard) + 1 {
        return domain(format!(
            "profile of {} cells too short for the CFAR window",
            powers.len()
        ));
    }
    Ok((0..powers.len()).map(|i| cfar_detect_cell(powers, i, cfg)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdPoint {
    pub rcs_dbsm: f64,
    pub pd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials: usize,
}

/// 95% Wilson score interval.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    // rounding can leave the bounds a hair inside p at 0 or 1
    ((centre - half).clamp(0.0, p), (centre + half).clamp(p, 1.0))
}

/// Matched-filter power profile at `angle` after conventional receive
/// beamforming, normalized so noise has the same level in every bin.
pub fn range_profile(echo: &EchoBlock, x: &WaveformBlock, geometry: &ArrayGeometry, angle: f64, reference_bin: usize) -> Vec<f64> {
    let l = x.block_len();
    let b = rx_steer(geometry, angle);
    let y = echo.beamform(&b);
    let s0 = x.project(&tx_steer(geometry, angle));
    let tref = reference_bin as isize;
    (0..l)
        .map(|bin| {
            let s = shift_sequence(&s0, bin as isize - tref);
            let e: f64 = s.iter().map(|z| z.norm_sqr()).sum();
            if e > 0.0 {
                inner(&s, &y).norm_sqr() / e
            } else {
                0.0
            }
        })
        .collect()
}

/// Monte-Carlo detection probability of object 0 versus its RCS. Every
/// object is rescaled so object 0 has modulus `10^(rcs/20)` while the RCS
/// gaps of the scene are kept; phases are uniform and independent per trial.
pub fn detection_probability(
    x: &WaveformBlock,
    scene: &RadarScene,
    geometry: &ArrayGeometry,
    rcs_dbsm: &[f64],
    cfg: &CfarConfig,
    n_trials: usize,
    seed: u64,
) -> Result<Vec<PdPoint>> {
    cfg.validate()?;
    scene.validate(x.block_len())?;
    check_len("waveform rows", geometry.n_tx, x.n_tx())?;
    if scene.objects.is_empty() {
        return domain("detection needs a target object");
    }
    let target = scene.objects[0];
    if target.amplitude.norm() == 0.0 {
        return domain("target amplitude must be nonzero to fix the RCS gaps");
    }
    let tref = scene.reference_bin();
    rcs_dbsm
        .iter()
        .enumerate()
        .map(|(ri, &rcs)| {
            let gain = 10f64.powf(rcs / 20.0) / target.amplitude.norm();
            let hits: usize = (0..n_trials)
                .into_par_iter()
                .map(|t| {
                    let trial_seed = seed
                        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                        .wrapping_add((ri as u64) << 32)
                        .wrapping_add(t as u64);
                    let mut rng = seeded_rng(trial_seed);
                    let mut sc = scene.clone();
                    for o in sc.objects.iter_mut() {
                        o.amplitude = C64::from_polar(gain * o.amplitude.norm(), rng.random_range(0.0..std::f64::consts::TAU));
                    }
                    let echo = echo_with(x, &sc, geometry, &mut rng, trial_seed);
                    let prof = range_profile(&echo, x, geometry, target.angle_deg, tref);
                    usize::from(cfar_detect_cell(&prof, target.range_bin, cfg))
                })
                .sum();
            let (lo, hi) = wilson_interval(hits, n_trials);
            Ok(PdPoint {
                rcs_dbsm: rcs,
                pd: hits as f64 / n_trials.max(1) as f64,
                ci_low: lo,
                ci_high: hi,
                trials: n_trials,
            })
        })
        .collect()
}

/// Target SINR in dB after receive beamforming `b(theta_1)` and temporal
/// matched filtering with `a^H(theta_1) X`. Clutter terms add incoherently.
pub fn target_sinr(x: &WaveformBlock, scene: &RadarScene, geometry: &ArrayGeometry) -> Result<f64> {
    scene.validate(x.block_len())?;
    check_len("waveform rows", geometry.n_tx, x.n_tx())?;
    if scene.objects.is_empty() {
        return domain("SINR needs a target object");
    }
    let t = scene.objects[0];
    let b1 = rx_steer(geometry, t.angle_deg);
    let s = x.project(&tx_steer(geometry, t.angle_deg));
    let es: f64 = s.iter().map(|z| z.norm_sqr()).sum();
    let nr = geometry.n_rx as f64;
    let signal = t.amplitude.norm_sqr() * nr * nr * es * es;
    let mut interference = scene.noise_var * nr * es;
    for o in &scene.objects[1..] {
        let bq = rx_steer(geometry, o.angle_deg);
        let gain = inner(&b1, &bq).norm_sqr();
        let sq = shift_sequence(&x.project(&tx_steer(geometry, o.angle_deg)), o.range_bin as isize - t.range_bin as isize);
        interference += o.amplitude.norm_sqr() * gain * inner(&s, &sq).norm_sqr();
    }
    if interference <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / interference).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::RadarObject;

    fn scene_one(angle: f64, bin: usize, amp: f64, noise: f64) -> RadarScene {
        RadarScene {
            objects: vec![RadarObject {
                angle_deg: angle,
                range_bin: bin,
                amplitude: C64::new(amp, 0.0),
            }],
            max_lag: 4,
            noise_var: noise,
        }
    }

    #[test]
    fn threshold_factor_closed_form() {
        let t = cfar_threshold_factor(8, 1e-2);
        assert!((t - 6.226235).abs() < 1e-5, "{t}");
    }

    #[test]
    fn flat_profile_has_no_detections() {
        let p = vec![3.0; 40];
        assert!(cfar_detect(&p, &CfarConfig::default()).unwrap().iter().all(|d| !d));
        assert!(cfar_detect(&p[..12], &CfarConfig::default()).is_err());
    }

    #[test]
    fn noiseless_single_object_echo() {
        let g = ArrayGeometry::half_wavelength(4, 3).unwrap();
        let x = WaveformBlock::random_unit_modulus(4, 6, 2);
        let e = synthesize_echo(&x, &scene_one(20.0, 3, 1.0, 0.0), &g, 0).unwrap();
        let b = rx_steer(&g, 20.0);
        let s = x.project(&tx_steer(&g, 20.0));
        for l in 0..6 {
            for r in 0..3 {
                assert!((e.column(l)[r] - b[r] * s[l]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn wilson_bounds_contain_estimate() {
        let (lo, hi) = wilson_interval(45, 100);
        assert!(lo < 0.45 && hi > 0.45);
        assert_eq!(wilson_interval(0, 0), (0.0, 1.0));
    }

    #[test]
    fn sinr_without_clutter() {
        let g = ArrayGeometry::half_wavelength(4, 4).unwrap();
        let x = WaveformBlock::random_unit_modulus(4, 8, 1);
        let sc = scene_one(10.0, 2, 2.0, 0.5);
        let s = x.project(&tx_steer(&g, 10.0));
        let es: f64 = s.iter().map(|z| z.norm_sqr()).sum();
        let expect = 10.0 * (4.0 * 4.0 * es / 0.5).log10();
        assert!((target_sinr(&x, &sc, &g).unwrap() - expect).abs() < 1e-9);
    }
}
