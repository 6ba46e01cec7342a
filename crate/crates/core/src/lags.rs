//! Zero-padded FFT correlation and convolution of length-`L` sequences.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::C64;

/// Lag-domain values `c(tau)` for `tau = -(L-1)..=(L-1)`, stored at `tau + L - 1`.
pub type LagVec = Vec<C64>;

#[derive(Clone)]
pub struct LagEngine {
    len: usize,
    nfft: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LagEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LagEngine")
            .field("len", &self.len)
            .field("nfft", &self.nfft)
            .finish()
    }
}

impl LagEngine {
    pub fn new(len: usize) -> Self {
        let nfft = (2 * len).next_power_of_two().max(2);
        let mut planner = FftPlanner::new();
        Self {
            len,
            nfft,
            fwd: planner.plan_fft_forward(nfft),
            inv: planner.plan_fft_inverse(nfft),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Zero-padded forward transform of a length-`L` sequence.
    pub fn spectrum(&self, seq: &[C64]) -> Vec<C64> {
        debug_assert_eq!(seq.len(), self.len);
        let mut buf = vec![C64::new(0.0, 0.0); self.nfft];
        buf[..self.len].copy_from_slice(seq);
        self.fwd.process(&mut buf);
        buf
    }

    /// Spectrum of lag coefficients placed circularly (`tau mod nfft`).
    pub fn lag_spectrum(&self, coeffs: &[C64]) -> Vec<C64> {
        debug_assert_eq!(coeffs.len(), 2 * self.len - 1);
        let mut buf = vec![C64::new(0.0, 0.0); self.nfft];
        let off = self.len as isize - 1;
        for (i, &c) in coeffs.iter().enumerate() {
            let tau = i as isize - off;
            buf[tau.rem_euclid(self.nfft as isize) as usize] = c;
        }
        self.fwd.process(&mut buf);
        buf
    }

    fn inverse(&self, mut buf: Vec<C64>) -> Vec<C64> {
        self.inv.process(&mut buf);
        let s = 1.0 / self.nfft as f64;
        buf.iter_mut().for_each(|z| *z *= s);
        buf
    }

    /// `r(tau) = sum_i conj(p[i]) s[i - tau]` from precomputed spectra.
    pub fn cross_lags_spec(&self, p_hat: &[C64], s_hat: &[C64]) -> LagVec {
        let prod = p_hat.iter().zip(s_hat).map(|(p, s)| p.conj() * s).collect();
        let c = self.inverse(prod);
        let l = self.len as isize;
        (-(l - 1)..l)
            .map(|tau| c[(-tau).rem_euclid(self.nfft as isize) as usize])
            .collect()
    }

    /// `r(tau) = sum_i conj(p[i]) s[i - tau]`.
    pub fn cross_lags(&self, p: &[C64], s: &[C64]) -> LagVec {
        self.cross_lags_spec(&self.spectrum(p), &self.spectrum(s))
    }

    /// `out[i] = sum_tau c(tau) s[i - tau]` from spectra.
    pub fn convolve_spec(&self, c_hat: &[C64], s_hat: &[C64]) -> Vec<C64> {
        let prod = c_hat.iter().zip(s_hat).map(|(c, s)| c * s).collect();
        let mut out = self.inverse(prod);
        out.truncate(self.len);
        out
    }

    /// `out[i] = sum_tau c(tau) s[i - tau]`, `i = 0..L-1`.
    pub fn convolve(&self, coeffs: &[C64], s: &[C64]) -> Vec<C64> {
        self.convolve_spec(&self.lag_spectrum(coeffs), &self.spectrum(s))
    }

    /// `out[k] = sum_tau c(tau) p[k + tau]`, `k = 0..L-1`.
    pub fn correlate(&self, coeffs: &[C64], p: &[C64]) -> Vec<C64> {
        let rev: Vec<C64> = coeffs.iter().rev().copied().collect();
        self.convolve(&rev, p)
    }
}
