//! Shared helpers for the integration tests: seeded random inputs and dense
//! Kronecker-form oracles that are only tractable at toy sizes.

#![allow(dead_code)]

use dfrc_waveform::costs::RadarObjective;
use dfrc_waveform::scenario::{
    seeded_rng, steering_vector, uniform_grid, ArrayGeometry, ArraySide, BeamPatternSpec, Weights,
};
use dfrc_waveform::Complex64 as C64;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type CMat = DMatrix<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

pub fn rng(seed: u64) -> ChaCha8Rng {
    seeded_rng(seed)
}

pub fn rand_complex(rng: &mut impl Rng, n: usize) -> Vec<C64> {
    (0..n)
        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

pub fn rand_unit(rng: &mut impl Rng, n: usize) -> Vec<C64> {
    (0..n)
        .map(|_| C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)))
        .collect()
}

pub fn rand_hermitian(rng: &mut impl Rng, n: usize) -> CMat {
    let a = CMat::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    (&a + a.adjoint()) * C64::new(0.5, 0.0)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn vec_rel(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
    num / den
}

/// `a^H b`.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sq(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Small design instance: coarse grid, one beam per target, `(w_bp, w_ac, w_cc)`.
pub struct Toy {
    pub geometry: ArrayGeometry,
    pub spec: BeamPatternSpec,
    pub angles: Vec<f64>,
    pub max_lag: usize,
    pub weights: Weights,
    pub block_len: usize,
}

impl Toy {
    pub fn new(n_tx: usize, block_len: usize, max_lag: usize, grid_step: f64, weights: Weights) -> Self {
        let geometry = ArrayGeometry::half_wavelength(n_tx, n_tx).unwrap();
        let grid = uniform_grid(-90.0, 90.0, grid_step);
        let angles = vec![-30.0, 40.0];
        let spec = dfrc_waveform::scenario::desired_rect_beam_pattern(&angles, 20.0, &grid).unwrap();
        Self {
            geometry,
            spec,
            angles,
            max_lag,
            weights,
            block_len,
        }
    }

    pub fn objective(&self) -> RadarObjective {
        RadarObjective::new(&self.geometry, &self.spec, &self.angles, self.max_lag, self.weights, self.block_len)
            .unwrap()
    }

    pub fn dense(&self) -> Dense {
        Dense::new(self)
    }
}

pub fn steer(g: &ArrayGeometry, angle: f64) -> Vec<C64> {
    steering_vector(g, angle, ArraySide::Transmit).unwrap()
}

pub fn outer(a: &[C64], b: &[C64]) -> CMat {
    CMat::from_fn(a.len(), b.len(), |i, j| a[i] * b[j].conj())
}

/// `[J_tau]_{ij} = 1` iff `j - i = tau`.
pub fn shift_matrix(l: usize, tau: isize) -> CMat {
    CMat::from_fn(l, l, |i, j| {
        if j as isize - i as isize == tau {
            C64::new(1.0, 0.0)
        } else {
            ZERO
        }
    })
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// `x^H M v`.
pub fn form(x: &[C64], m: &CMat, v: &[C64]) -> C64 {
    let vv = CMat::from_column_slice(v.len(), 1, v);
    let mv = m * vv;
    x.iter().zip(mv.iter()).map(|(a, b)| a.conj() * b).sum()
}

pub fn matvec(m: &CMat, v: &[C64]) -> Vec<C64> {
    let vv = CMat::from_column_slice(v.len(), 1, v);
    (m * vv).iter().copied().collect()
}

/// `vec(M)`, column-major.
pub fn vec_of(m: &CMat) -> Vec<C64> {
    m.iter().copied().collect()
}

/// Dense operators of a [`Toy`] instance.
pub struct Dense {
    pub n: usize,
    pub l: usize,
    /// `A(theta_u) = I_L (x) a_u a_u^H` per grid angle.
    pub a_grid: Vec<CMat>,
    pub desired: Vec<f64>,
    /// `B_u` per grid angle.
    pub b: Vec<CMat>,
    /// `(weight, M)` for every quartic term `w |x^H M x|^2`.
    pub terms: Vec<(f64, CMat)>,
}

impl Dense {
    pub fn new(t: &Toy) -> Self {
        let n = t.geometry.n_tx;
        let l = t.block_len;
        let il = identity(l);
        let a_grid: Vec<CMat> = t
            .spec
            .angle_grid_deg
            .iter()
            .map(|&th| {
                let a = steer(&t.geometry, th);
                kron(&il, &outer(&a, &a))
            })
            .collect();
        let desired = t.spec.desired_gain.clone();
        let dsq: f64 = desired.iter().map(|g| g * g).sum();
        let mut mix = CMat::zeros(n * l, n * l);
        for (a, &g) in a_grid.iter().zip(&desired) {
            mix += a * C64::new(g, 0.0);
        }
        let b: Vec<CMat> = a_grid
            .iter()
            .zip(&desired)
            .map(|(a, &g)| &mix * C64::new(g / dsq, 0.0) - a)
            .collect();
        let mut terms: Vec<(f64, CMat)> = Vec::new();
        if t.weights.w_bp > 0.0 {
            terms.extend(b.iter().map(|m| (t.weights.w_bp, m.clone())));
        }
        let steer_t: Vec<Vec<C64>> = t.angles.iter().map(|&a| steer(&t.geometry, a)).collect();
        let p = t.max_lag as isize;
        for (q, aq) in steer_t.iter().enumerate() {
            for (qp, aqp) in steer_t.iter().enumerate() {
                let w = if q == qp { t.weights.w_ac } else { t.weights.w_cc };
                if w == 0.0 {
                    continue;
                }
                for tau in -(p - 1)..p {
                    if q == qp && tau == 0 {
                        continue;
                    }
                    terms.push((w, d_operator(l, tau, aq, aqp)));
                }
            }
        }
        Self {
            n,
            l,
            a_grid,
            desired,
            b,
            terms,
        }
    }

    /// Quartic objective `sum_k w_k |x^H M_k x|^2`.
    pub fn g(&self, x: &[C64]) -> f64 {
        self.g_bilinear(x, x)
    }

    pub fn g_bilinear(&self, x: &[C64], v: &[C64]) -> f64 {
        self.terms.iter().map(|(w, m)| w * form(x, m, v).norm_sqr()).sum()
    }

    pub fn psi(&self) -> CMat {
        let d = self.n * self.l;
        let mut psi = CMat::zeros(d * d, d * d);
        for (w, m) in &self.terms {
            let v = vec_of(m);
            for r in 0..d * d {
                if v[r] == ZERO {
                    continue;
                }
                for c in 0..d * d {
                    psi[(r, c)] += v[r] * v[c].conj() * *w;
                }
            }
        }
        psi
    }

    /// `E = mat(|Psi| 1)`.
    pub fn e_matrix(&self) -> CMat {
        let d = self.n * self.l;
        let psi = self.psi();
        let sums: Vec<f64> = (0..d * d).map(|r| psi.row(r).iter().map(|z| z.norm()).sum()).collect();
        CMat::from_fn(d, d, |r, c| C64::new(sums[r + c * d], 0.0))
    }

    /// `Phi = 2 (sum_k w_k conj(x_t^H M_k x_t) M_k - E . x_t x_t^H)`.
    pub fn phi(&self, x_t: &[C64]) -> CMat {
        let d = self.n * self.l;
        let mut phi = CMat::zeros(d, d);
        for (w, m) in &self.terms {
            let c = form(x_t, m, x_t).conj() * *w;
            phi += m * c;
        }
        let e = self.e_matrix();
        let xx = outer(x_t, x_t);
        phi -= e.component_mul(&xx);
        phi * C64::new(2.0, 0.0)
    }
}

/// `D_{tau,q,q'} = J_{-tau} (x) a_{q'} a_q^H`.
pub fn d_operator(l: usize, tau: isize, aq: &[C64], aqp: &[C64]) -> CMat {
    kron(&shift_matrix(l, -tau), &outer(aqp, aq))
}

/// Central finite-difference Wirtinger gradient `2 df/dx*`.
pub fn fd_grad(f: impl Fn(&[C64]) -> f64, x: &[C64], h: f64) -> Vec<C64> {
    let mut out = Vec::with_capacity(x.len());
    let mut y = x.to_vec();
    for i in 0..x.len() {
        let xi = x[i];
        y[i] = xi + C64::new(h, 0.0);
        let fp = f(&y);
        y[i] = xi - C64::new(h, 0.0);
        let fm = f(&y);
        y[i] = xi + C64::new(0.0, h);
        let gp = f(&y);
        y[i] = xi - C64::new(0.0, h);
        let gm = f(&y);
        y[i] = xi;
        out.push(C64::new((fp - fm) / (2.0 * h), (gp - gm) / (2.0 * h)));
    }
    out
}
