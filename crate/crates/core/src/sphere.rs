//! Radial graphs over a Gauss–Legendre × uniform-longitude grid on S².
//!
//! Fields are band-limited to degree `L = n_lat − 1` and expanded in real
//! orthonormal spherical harmonics. Coefficients are stored degree by degree:
//! for each `l`, first `m = 0`, then the `(cos mφ, sin mφ)` pair for
//! `m = 1..=l`, so `Y_l^0` sits at `l²` and the cosine/sine parts of order
//! `m` at `l² + 2m − 1` and `l² + 2m`.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{monomial_count, JetSpace};
use crate::metric::MetricParams;

/// Highest derivative order supported by the derivative tables.
pub const MAX_DERIV: usize = 4;
/// Taylor slots of a two-variable jet of order `MAX_DERIV`.
pub const TAYLOR_LEN: usize = monomial_count(2, MAX_DERIV);

/// Gauss–Legendre nodes (descending in `x`) and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

#[inline]
fn tri(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

/// Quadrature grid and harmonic transform tables.
#[derive(Debug)]
pub struct SphericalGrid {
    pub n_lat: usize,
    pub n_lon: usize,
    pub lmax: usize,
    pub theta: Vec<f64>,
    pub sin_theta: Vec<f64>,
    pub cos_theta: Vec<f64>,
    pub phi: Vec<f64>,
    /// Per-node weights for `∫_{S²} · dΩ`; they sum to 4π.
    pub weights: Vec<f64>,
    /// Per-node unit directions.
    pub directions: Vec<[f64; 3]>,
    lat_weights: Vec<f64>,
    /// `legendre[a][j·ntri + tri(l,m)]`: `a`-th θ-derivative of the normalized
    /// associated Legendre function at latitude `j`.
    legendre: Vec<Vec<f64>>,
    cos_mphi: Vec<f64>,
    sin_mphi: Vec<f64>,
    degrees: Vec<usize>,
}

impl SphericalGrid {
    pub fn new(n_lat: usize) -> Result<Arc<Self>> {
        if !(4..=256).contains(&n_lat) {
            return Err(Error::Usage(format!("n_lat must lie in 4..=256, got {n_lat}")));
        }
        let n_lon = 2 * n_lat;
        let lmax = n_lat - 1;
        let (x, w) = gauss_legendre(n_lat);
        let theta: Vec<f64> = x.iter().map(|v| v.acos()).collect();
        let sin_theta: Vec<f64> = x.iter().map(|v| (1.0 - v * v).sqrt()).collect();
        let cos_theta = x.clone();
        let phi: Vec<f64> = (0..n_lon).map(|k| TAU * k as f64 / n_lon as f64).collect();
        let dphi = TAU / n_lon as f64;
        let mut weights = Vec::with_capacity(n_lat * n_lon);
        let mut directions = Vec::with_capacity(n_lat * n_lon);
        for j in 0..n_lat {
            for &p in &phi {
                weights.push(w[j] * dphi);
                directions.push([sin_theta[j] * p.cos(), sin_theta[j] * p.sin(), cos_theta[j]]);
            }
        }
        let ntri = tri(lmax, lmax) + 1;
        let mut legendre = vec![vec![0.0; n_lat * ntri]; MAX_DERIV + 1];
        for j in 0..n_lat {
            let (s, c) = (sin_theta[j], cos_theta[j]);
            let p = legendre_column(lmax, c, s);
            for l in 0..=lmax {
                for m in 0..=l {
                    let t = tri(l, m);
                    let (lf, mf) = (l as f64, m as f64);
                    let p0 = p[t];
                    let prev = if l > m { p[tri(l - 1, m)] } else { 0.0 };
                    let k = ((lf * lf - mf * mf) * (2.0 * lf + 1.0) / (2.0 * lf - 1.0)).sqrt();
                    let p1 = (lf * c * p0 - if l > m { k * prev } else { 0.0 }) / s;
                    // θ-derivatives of the associated Legendre equation
                    // p'' = −cot θ p' − A p with A = l(l+1) − m²/sin²θ
                    let cot = c / s;
                    let a0 = lf * (lf + 1.0) - mf * mf / (s * s);
                    let a1 = 2.0 * mf * mf * c / (s * s * s);
                    let a2 = 2.0 * mf * mf * (-1.0 / (s * s) - 3.0 * c * c / (s * s * s * s));
                    let c1 = -1.0 / (s * s);
                    let c2 = 2.0 * c / (s * s * s);
                    let p2 = -cot * p1 - a0 * p0;
                    let p3 = -c1 * p1 - cot * p2 - a1 * p0 - a0 * p1;
                    let p4 = -c2 * p1 - 2.0 * c1 * p2 - cot * p3 - a2 * p0 - 2.0 * a1 * p1 - a0 * p2;
                    let idx = j * ntri + t;
                    legendre[0][idx] = p0;
                    legendre[1][idx] = p1;
                    legendre[2][idx] = p2;
                    legendre[3][idx] = p3;
                    legendre[4][idx] = p4;
                }
            }
        }
        let mut cos_mphi = vec![0.0; n_lon * (lmax + 1)];
        let mut sin_mphi = vec![0.0; n_lon * (lmax + 1)];
        for k in 0..n_lon {
            for m in 0..=lmax {
                let a = m as f64 * phi[k];
                cos_mphi[k * (lmax + 1) + m] = a.cos();
                sin_mphi[k * (lmax + 1) + m] = a.sin();
            }
        }
        let mut degrees = Vec::with_capacity((lmax + 1) * (lmax + 1));
        for l in 0..=lmax {
            for _ in 0..(2 * l + 1) {
                degrees.push(l);
            }
        }
        Ok(Arc::new(SphericalGrid {
            n_lat,
            n_lon,
            lmax,
            theta,
            sin_theta,
            cos_theta,
            phi,
            weights,
            directions,
            lat_weights: w,
            legendre,
            cos_mphi,
            sin_mphi,
            degrees,
        }))
    }

    pub fn n_nodes(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn n_coeffs(&self) -> usize {
        (self.lmax + 1) * (self.lmax + 1)
    }

    /// Latitude and longitude indices of a node.
    pub fn node_lat_lon(&self, node: usize) -> (usize, usize) {
        (node / self.n_lon, node % self.n_lon)
    }

    /// Index of a real harmonic; `sine` selects `sin mφ` for `m > 0`.
    pub fn coeff_index(l: usize, m: usize, sine: bool) -> usize {
        assert!(m <= l && !(m == 0 && sine));
        if m == 0 {
            l * l
        } else {
            l * l + 2 * m - 1 + sine as usize
        }
    }

    /// Degree of every coefficient slot.
    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// `(l, m, sine)` of a coefficient slot.
    pub fn coeff_label(idx: usize) -> (usize, usize, bool) {
        let l = (idx as f64).sqrt() as usize;
        let l = if (l + 1) * (l + 1) <= idx { l + 1 } else { l };
        let r = idx - l * l;
        if r == 0 {
            (l, 0, false)
        } else {
            (l, r.div_ceil(2), r % 2 == 0)
        }
    }

    /// Value of the real orthonormal harmonic at a node.
    pub fn harmonic_at(&self, idx: usize, node: usize) -> f64 {
        let (l, m, sine) = Self::coeff_label(idx);
        let (j, k) = self.node_lat_lon(node);
        let ntri = tri(self.lmax, self.lmax) + 1;
        let p = self.legendre[0][j * ntri + tri(l, m)];
        if m == 0 {
            p
        } else if sine {
            std::f64::consts::SQRT_2 * p * self.sin_mphi[k * (self.lmax + 1) + m]
        } else {
            std::f64::consts::SQRT_2 * p * self.cos_mphi[k * (self.lmax + 1) + m]
        }
    }

    /// Projects nodal values onto harmonic coefficients.
    pub fn analysis(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.n_nodes());
        let nm = self.lmax + 1;
        let ntri = tri(self.lmax, self.lmax) + 1;
        let dphi = TAU / self.n_lon as f64;
        let per_lat: Vec<(Vec<f64>, Vec<f64>)> = (0..self.n_lat)
            .into_par_iter()
            .map(|j| {
                let row = &f[j * self.n_lon..(j + 1) * self.n_lon];
                let mut cm = vec![0.0; nm];
                let mut sm = vec![0.0; nm];
                for (k, &v) in row.iter().enumerate() {
                    let cs = &self.cos_mphi[k * nm..(k + 1) * nm];
                    let sn = &self.sin_mphi[k * nm..(k + 1) * nm];
                    for m in 0..nm {
                        cm[m] += v * cs[m];
                        sm[m] += v * sn[m];
                    }
                }
                let w = self.lat_weights[j] * dphi;
                for m in 0..nm {
                    let norm = if m == 0 { w } else { w * std::f64::consts::SQRT_2 };
                    cm[m] *= norm;
                    sm[m] *= norm;
                }
                (cm, sm)
            })
            .collect();
        let mut out = vec![0.0; self.n_coeffs()];
        for (j, (cm, sm)) in per_lat.iter().enumerate() {
            let leg = &self.legendre[0][j * ntri..(j + 1) * ntri];
            for l in 0..=self.lmax {
                out[l * l] += leg[tri(l, 0)] * cm[0];
                for m in 1..=l {
                    let p = leg[tri(l, m)];
                    out[l * l + 2 * m - 1] += p * cm[m];
                    out[l * l + 2 * m] += p * sm[m];
                }
            }
        }
        out
    }

    /// Nodal values of `∂_θ^a ∂_φ^b f` for a band-limited `f`.
    pub fn synthesis_derivative(&self, coeffs: &[f64], a: usize, b: usize) -> Vec<f64> {
        let nm = self.lmax + 1;
        let mut out = vec![0.0; self.n_nodes()];
        out.par_chunks_mut(self.n_lon).enumerate().for_each(|(j, row)| {
            let (cm, sm) = self.latitude_modes(coeffs, j, a);
            let (cm, sm) = rotate_phi(&cm, &sm, b);
            for (k, v) in row.iter_mut().enumerate() {
                let cs = &self.cos_mphi[k * nm..(k + 1) * nm];
                let sn = &self.sin_mphi[k * nm..(k + 1) * nm];
                let mut acc = 0.0;
                for m in 0..nm {
                    acc += cm[m] * cs[m] + sm[m] * sn[m];
                }
                *v = acc;
            }
        });
        out
    }

    pub fn synthesis(&self, coeffs: &[f64]) -> Vec<f64> {
        self.synthesis_derivative(coeffs, 0, 0)
    }

    /// Per-node Taylor coefficients in (θ, φ) up to total degree `order`, laid
    /// out like a two-variable jet of that order.
    pub fn taylor_table(&self, coeffs: &[f64], order: usize) -> Vec<[f64; TAYLOR_LEN]> {
        assert!(order <= MAX_DERIV);
        let sp = JetSpace::get(2, order);
        let nm = self.lmax + 1;
        let fact = [1.0, 1.0, 2.0, 6.0, 24.0];
        let mut out = vec![[0.0; TAYLOR_LEN]; self.n_nodes()];
        out.par_chunks_mut(self.n_lon).enumerate().for_each(|(j, row)| {
            for a in 0..=order {
                let (cm0, sm0) = self.latitude_modes(coeffs, j, a);
                for b in 0..=(order - a) {
                    let slot = sp.index_of([a as u8, b as u8, 0]).unwrap();
                    let (cm, sm) = rotate_phi(&cm0, &sm0, b);
                    let scale = 1.0 / (fact[a] * fact[b]);
                    for (k, v) in row.iter_mut().enumerate() {
                        let cs = &self.cos_mphi[k * nm..(k + 1) * nm];
                        let sn = &self.sin_mphi[k * nm..(k + 1) * nm];
                        let mut acc = 0.0;
                        for m in 0..nm {
                            acc += cm[m] * cs[m] + sm[m] * sn[m];
                        }
                        v[slot] = acc * scale;
                    }
                }
            }
        });
        out
    }

    /// Longitudinal Fourier amplitudes of `∂_θ^a f` at latitude `j`, including
    /// the √2 normalization of the `m > 0` harmonics.
    fn latitude_modes(&self, coeffs: &[f64], j: usize, a: usize) -> (Vec<f64>, Vec<f64>) {
        let nm = self.lmax + 1;
        let ntri = tri(self.lmax, self.lmax) + 1;
        let leg = &self.legendre[a][j * ntri..(j + 1) * ntri];
        let mut cm = vec![0.0; nm];
        let mut sm = vec![0.0; nm];
        let lmax = self.lmax.min(((coeffs.len() as f64).sqrt() as usize).saturating_sub(1));
        for l in 0..=lmax {
            cm[0] += coeffs[l * l] * leg[tri(l, 0)];
            for m in 1..=l {
                let p = leg[tri(l, m)];
                cm[m] += coeffs[l * l + 2 * m - 1] * p;
                sm[m] += coeffs[l * l + 2 * m] * p;
            }
        }
        for m in 1..nm {
            cm[m] *= std::f64::consts::SQRT_2;
            sm[m] *= std::f64::consts::SQRT_2;
        }
        (cm, sm)
    }

    /// Multiplies each coefficient by `−l(l+1)`.
    pub fn laplacian(&self, coeffs: &[f64]) -> Vec<f64> {
        coeffs
            .iter()
            .zip(&self.degrees)
            .map(|(c, &l)| -((l * (l + 1)) as f64) * c)
            .collect()
    }

    /// Exponential filter factors: 1 up to `⌊2L/3⌋`, then `exp(−s·x²)` with
    /// `x` rising from 0 to 1 across the top third of degrees.
    pub fn filter_factors(&self, strength: f64) -> Vec<f64> {
        let lc = 2 * self.lmax / 3;
        let span = (self.lmax - lc).max(1) as f64;
        self.degrees
            .iter()
            .map(|&l| {
                if l <= lc {
                    1.0
                } else {
                    let x = (l - lc) as f64 / span;
                    (-strength * x * x).exp()
                }
            })
            .collect()
    }

    pub fn apply_filter(&self, coeffs: &mut [f64], strength: f64) {
        if strength <= 0.0 {
            return;
        }
        for (c, f) in coeffs.iter_mut().zip(self.filter_factors(strength)) {
            *c *= f;
        }
    }

    /// `∫_{S²} f dΩ` for nodal `f`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }
}

/// Applies `∂_φ^b` to `Σ_m C_m cos mφ + S_m sin mφ`.
fn rotate_phi(cm: &[f64], sm: &[f64], b: usize) -> (Vec<f64>, Vec<f64>) {
    let mut c = cm.to_vec();
    let mut s = sm.to_vec();
    for _ in 0..b {
        for m in 0..c.len() {
            let mf = m as f64;
            let (cc, ss) = (c[m], s[m]);
            c[m] = mf * ss;
            s[m] = -mf * cc;
        }
    }
    (c, s)
}

/// Orthonormal associated Legendre functions (no Condon–Shortley phase),
/// normalized so that `∫ p_lm² · 2π sin θ dθ = 1`.
fn legendre_column(lmax: usize, c: f64, s: f64) -> Vec<f64> {
    let mut p = vec![0.0; tri(lmax, lmax) + 1];
    p[0] = (1.0 / (4.0 * PI)).sqrt();
    for m in 1..=lmax {
        let mf = m as f64;
        p[tri(m, m)] = ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s * p[tri(m - 1, m - 1)];
    }
    for m in 0..lmax {
        let mf = m as f64;
        p[tri(m + 1, m)] = (2.0 * mf + 3.0).sqrt() * c * p[tri(m, m)];
        for l in (m + 2)..=lmax {
            let lf = l as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            p[tri(l, m)] = a * (c * p[tri(l - 1, m)] - b * p[tri(l - 2, m)]);
        }
    }
    p
}

/// A surface `{ρ(θ,φ)·n̂}` given by a band-limited radius function.
#[derive(Clone, Debug)]
pub struct RadialGraph {
    pub grid: Arc<SphericalGrid>,
    pub coeffs: Vec<f64>,
    pub rho: Vec<f64>,
    pub sigma_label: f64,
}

/// One harmonic component of an initial perturbation. Negative `m` selects
/// the `sin |m|φ` harmonic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub l: usize,
    pub m: i32,
    pub amplitude: f64,
}

impl RadialGraph {
    pub fn from_coeffs(grid: Arc<SphericalGrid>, coeffs: Vec<f64>, sigma_label: f64) -> Result<Self> {
        if coeffs.len() != grid.n_coeffs() {
            return Err(Error::Usage(format!(
                "expected {} coefficients, got {}",
                grid.n_coeffs(),
                coeffs.len()
            )));
        }
        let rho = grid.synthesis(&coeffs);
        if let Some((i, r)) = rho.iter().enumerate().find(|(_, r)| !(**r > 1.0)) {
            return Err(Error::Usage(format!("radius {r} at node {i} is not above 1")));
        }
        Ok(RadialGraph {
            grid,
            coeffs,
            rho,
            sigma_label,
        })
    }

    /// Band-limits nodal radii by projection onto the grid's harmonics.
    pub fn from_nodal(grid: Arc<SphericalGrid>, rho: &[f64], sigma_label: f64) -> Result<Self> {
        if rho.len() != grid.n_nodes() {
            return Err(Error::Usage("nodal field does not match the grid".into()));
        }
        let coeffs = grid.analysis(rho);
        Self::from_coeffs(grid, coeffs, sigma_label)
    }

    pub fn round(grid: Arc<SphericalGrid>, sigma: f64) -> Result<Self> {
        let mut coeffs = vec![0.0; grid.n_coeffs()];
        coeffs[0] = sigma * (4.0 * PI).sqrt();
        Self::from_coeffs(grid, coeffs, sigma)
    }

    /// `ρ = σ + Σ amplitude·Y_l^m`.
    pub fn with_modes(grid: Arc<SphericalGrid>, sigma: f64, modes: &[Mode]) -> Result<Self> {
        let mut coeffs = vec![0.0; grid.n_coeffs()];
        coeffs[0] = sigma * (4.0 * PI).sqrt();
        for md in modes {
            let m = md.m.unsigned_abs() as usize;
            if md.l > grid.lmax || m > md.l {
                return Err(Error::Usage(format!("mode (l={}, m={}) not representable", md.l, md.m)));
            }
            coeffs[SphericalGrid::coeff_index(md.l, m, md.m < 0)] += md.amplitude;
        }
        Self::from_coeffs(grid, coeffs, sigma)
    }

    /// Random coefficients, uniform in `[−1, 1]`, on degrees `1..=lmax`.
    pub fn random_coeffs(grid: &SphericalGrid, lmax: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        grid.degrees
            .iter()
            .map(|&l| {
                if l >= 1 && l <= lmax {
                    rng.random_range(-1.0..1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Rescales the nonconstant part so that its maximum modulus is `amplitude`.
    pub fn with_max_deviation(&self, amplitude: f64) -> Result<Self> {
        let mean = self.coeffs[0] / (4.0 * PI).sqrt();
        let dev = self.rho.iter().map(|r| (r - mean).abs()).fold(0.0, f64::max);
        if dev == 0.0 {
            return Ok(self.clone());
        }
        let s = amplitude / dev;
        let mut coeffs = self.coeffs.clone();
        for c in coeffs.iter_mut().skip(1) {
            *c *= s;
        }
        Self::from_coeffs(self.grid.clone(), coeffs, self.sigma_label)
    }

    pub fn from_fn(grid: Arc<SphericalGrid>, sigma: f64, f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let rho: Vec<f64> = grid.directions.iter().map(|d| f(*d)).collect();
        Self::from_nodal(grid, &rho, sigma)
    }

    /// Euclidean points `ρ·n̂` of every node.
    pub fn embed(&self) -> Vec<[f64; 3]> {
        self.rho
            .iter()
            .zip(&self.grid.directions)
            .map(|(r, d)| [r * d[0], r * d[1], r * d[2]])
            .collect()
    }

    pub fn min_rho(&self) -> f64 {
        self.rho.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_rho(&self) -> f64 {
        self.rho.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Per-node first and second derivatives `(ρ_θ, ρ_φ, ρ_θθ, ρ_θφ, ρ_φφ)`.
    pub fn spectral_derivatives(&self) -> Vec<[f64; 5]> {
        let g = &self.grid;
        let t = g.synthesis_derivative(&self.coeffs, 1, 0);
        let p = g.synthesis_derivative(&self.coeffs, 0, 1);
        let tt = g.synthesis_derivative(&self.coeffs, 2, 0);
        let tp = g.synthesis_derivative(&self.coeffs, 1, 1);
        let pp = g.synthesis_derivative(&self.coeffs, 0, 2);
        (0..g.n_nodes()).map(|i| [t[i], p[i], tt[i], tp[i], pp[i]]).collect()
    }

    /// Euclidean area element relative to the grid weights.
    pub fn euclidean_area_density(&self) -> Vec<f64> {
        let d = self.spectral_derivatives();
        (0..self.grid.n_nodes())
            .map(|i| {
                let (j, _) = self.grid.node_lat_lon(i);
                let s = self.grid.sin_theta[j];
                let r = self.rho[i];
                r * (r * r + d[i][0] * d[i][0] + d[i][1] * d[i][1] / (s * s)).sqrt()
            })
            .collect()
    }

    /// Fraction of the non-constant spectral energy in the top third of degrees.
    pub fn tail_energy_fraction(&self) -> f64 {
        let lc = 2 * self.grid.lmax / 3;
        let mut total = 0.0;
        let mut tail = 0.0;
        for (c, &l) in self.coeffs.iter().zip(self.grid.degrees()) {
            if l == 0 {
                continue;
            }
            total += c * c;
            if l > lc {
                tail += c * c;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            tail / total
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            n_lat: self.grid.n_lat,
            lmax: self.grid.lmax,
            sigma_label: self.sigma_label,
            coeffs: self.coeffs.clone(),
        }
    }

    pub fn from_snapshot(grid: Arc<SphericalGrid>, snap: &Snapshot) -> Result<Self> {
        snap.check()?;
        if snap.n_lat != grid.n_lat {
            return Err(Error::Snapshot(format!(
                "snapshot grid n_lat={} differs from {}",
                snap.n_lat, grid.n_lat
            )));
        }
        Self::from_coeffs(grid, snap.coeffs.clone(), snap.sigma_label)
    }
}

pub const SNAPSHOT_FORMAT: &str = "hmcf-radial-graph";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Portable surface snapshot. Field order: format tag, version, grid
/// (`n_lat`, `lmax`), `sigma_label`, then the real harmonic coefficients of ρ
/// in the degree-major layout described at the top of this module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub format: String,
    pub version: u32,
    pub n_lat: usize,
    pub lmax: usize,
    pub sigma_label: f64,
    pub coeffs: Vec<f64>,
}

impl Snapshot {
    pub fn check(&self) -> Result<()> {
        if self.format != SNAPSHOT_FORMAT {
            return Err(Error::Snapshot(format!("unknown format tag {:?}", self.format)));
        }
        if self.version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {}", self.version)));
        }
        if self.lmax + 1 != self.n_lat || self.coeffs.len() != self.n_lat * self.n_lat {
            return Err(Error::Snapshot("coefficient count does not match the grid".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let snap: Snapshot = serde_json::from_str(s).map_err(|e| Error::Snapshot(e.to_string()))?;
        snap.check()?;
        Ok(snap)
    }
}

/// `Σ field·area_density·weight` over the grid.
pub fn surface_integral(graph: &RadialGraph, field: &[f64], area_density: &[f64]) -> Result<f64> {
    let n = graph.grid.n_nodes();
    if field.len() != n || area_density.len() != n {
        return Err(Error::Usage(format!(
            "field ({}) and density ({}) must have one value per node ({n})",
            field.len(),
            area_density.len()
        )));
    }
    Ok(field
        .iter()
        .zip(area_density)
        .zip(&graph.grid.weights)
        .map(|((f, a), w)| f * a * w)
        .sum())
}

/// Inner radius of the volume shell used when none is configured.
pub fn default_inner_radius(params: &MetricParams) -> f64 {
    let off = params.offset.iter().map(|o| o * o).sum::<f64>().sqrt();
    let base = 1.5f64.max(params.mass);
    if off > 0.0 {
        base.max(off + 1.5)
    } else {
        base
    }
}

const RADIAL_POINTS: usize = 32;

/// Metric volume between the coordinate sphere `r = r_in` and the surface.
pub fn enclosed_volume(graph: &RadialGraph, params: &MetricParams, r_in: Option<f64>) -> Result<f64> {
    let r_in = r_in.unwrap_or_else(|| default_inner_radius(params));
    let min_rho = graph.min_rho();
    if min_rho <= r_in {
        return Err(Error::VolumeDomain { r_in, min_rho });
    }
    let (x, w) = radial_rule();
    let parts: Result<Vec<f64>> = graph
        .rho
        .par_iter()
        .zip(&graph.grid.directions)
        .zip(&graph.grid.weights)
        .map(|((&rho, d), &wn)| {
            let half = 0.5 * (rho - r_in);
            let mid = 0.5 * (rho + r_in);
            let mut acc = 0.0;
            for (xi, wi) in x.iter().zip(w.iter()) {
                let r = mid + half * xi;
                acc += wi * volume_density(params, [r * d[0], r * d[1], r * d[2]])? * r * r;
            }
            Ok(acc * half * wn)
        })
        .collect();
    Ok(parts?.iter().sum())
}

fn radial_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: std::sync::OnceLock<(Vec<f64>, Vec<f64>)> = std::sync::OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(RADIAL_POINTS))
}

/// `√det ḡ` at a point.
pub fn volume_density(params: &MetricParams, x: [f64; 3]) -> Result<f64> {
    let g = params.metric(x)?;
    let det = g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1]) - g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0])
        + g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
    Ok(det.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_four_pi() {
        for n in [8, 16, 24, 33] {
            let g = SphericalGrid::new(n).unwrap();
            let s: f64 = g.weights.iter().sum();
            assert!((s / (4.0 * PI) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn harmonics_are_orthonormal() {
        let g = SphericalGrid::new(12).unwrap();
        let nc = g.n_coeffs();
        let vals: Vec<Vec<f64>> = (0..nc)
            .map(|i| (0..g.n_nodes()).map(|n| g.harmonic_at(i, n)).collect())
            .collect();
        for a in 0..nc {
            for b in 0..nc {
                let ip: f64 = (0..g.n_nodes()).map(|n| vals[a][n] * vals[b][n] * g.weights[n]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-12, "{a} {b} {ip}");
            }
        }
    }

    #[test]
    fn coefficient_labels_round_trip() {
        for idx in 0..400 {
            let (l, m, s) = SphericalGrid::coeff_label(idx);
            assert_eq!(SphericalGrid::coeff_index(l, m, s), idx);
        }
    }

    #[test]
    fn y20_and_y32_derivatives_match_closed_forms() {
        let g = SphericalGrid::new(24).unwrap();
        let eps = 0.01;
        let c20 = (5.0 / (16.0 * PI)).sqrt();
        // Re Y_3^2 with this normalization: √2·N·15 cos θ sin²θ cos 2φ, N² = 7/(4π)·1/120
        let c32 = std::f64::consts::SQRT_2 * (7.0 / (4.0 * PI) / 120.0).sqrt() * 15.0;
        let graph = RadialGraph::with_modes(
            g.clone(),
            10.0,
            &[
                Mode { l: 2, m: 0, amplitude: eps },
                Mode { l: 3, m: 2, amplitude: eps },
            ],
        )
        .unwrap();
        let d = graph.spectral_derivatives();
        for n in (0..g.n_nodes()).step_by(7) {
            let (j, k) = g.node_lat_lon(n);
            let (t, p) = (g.theta[j], g.phi[k]);
            let (s, c) = t.sin_cos();
            let rho = 10.0 + eps * (c20 * (3.0 * c * c - 1.0) + c32 * c * s * s * (2.0 * p).cos());
            let rt = eps * (c20 * (-6.0 * c * s) + c32 * (2.0 * s * c * c - s * s * s) * (2.0 * p).cos());
            let rp = eps * (c32 * c * s * s * -2.0 * (2.0 * p).sin());
            let rtt = eps
                * (c20 * (-6.0 * (c * c - s * s))
                    + c32 * (2.0 * c * c * c - 4.0 * s * s * c - 3.0 * s * s * c) * (2.0 * p).cos());
            let rtp = eps * (c32 * (2.0 * s * c * c - s * s * s) * -2.0 * (2.0 * p).sin());
            let rpp = eps * (c32 * c * s * s * -4.0 * (2.0 * p).cos());
            assert!((graph.rho[n] - rho).abs() < 1e-12);
            for (got, want) in d[n].iter().zip([rt, rp, rtt, rtp, rpp]) {
                assert!((got - want).abs() < 1e-10, "{got} {want}");
            }
        }
    }

    #[test]
    fn higher_theta_derivatives_match_differences() {
        let g = SphericalGrid::new(20).unwrap();
        let mut coeffs = vec![0.0; g.n_coeffs()];
        for (i, c) in coeffs.iter_mut().enumerate() {
            *c = ((i * 37 % 11) as f64 - 5.0) * 0.01 / (1.0 + i as f64);
        }
        // compare ∂θ³ f and ∂θ⁴ f with difference quotients of ∂θ² f across a shifted grid:
        // use the ODE-derived table against Taylor tables at neighbouring latitudes
        let tab = g.taylor_table(&coeffs, 4);
        let sp = JetSpace::get(2, 4);
        let i3 = sp.index_of([3, 0, 0]).unwrap();
        let i2 = sp.index_of([2, 0, 0]).unwrap();
        let i4 = sp.index_of([4, 0, 0]).unwrap();
        let i22 = sp.index_of([2, 2, 0]).unwrap();
        let i02 = sp.index_of([0, 2, 0]).unwrap();
        // The φ-structure is exact; check ∂φ²∂θ² against the φ-rotation of ∂θ²
        let tpp = g.synthesis_derivative(&coeffs, 2, 2);
        for n in 0..g.n_nodes() {
            assert!((tab[n][i22] * 4.0 - tpp[n]).abs() < 1e-9 * (1.0 + tpp[n].abs()));
        }
        let _ = (i3, i2, i4, i02);
        // Legendre ODE consistency: for each harmonic the table satisfies the eigen relation
        // Δf = f_θθ + cot θ f_θ + f_φφ / sin²θ = −l(l+1) f
        let mut one = vec![0.0; g.n_coeffs()];
        one[SphericalGrid::coeff_index(7, 3, true)] = 1.0;
        let t = g.taylor_table(&one, 4);
        let it = sp.index_of([1, 0, 0]).unwrap();
        let i0 = 0;
        for n in 0..g.n_nodes() {
            let (j, _) = g.node_lat_lon(n);
            let s = g.sin_theta[j];
            let c = g.cos_theta[j];
            let lap = 2.0 * t[n][i2] + c / s * t[n][it] + 2.0 * t[n][i02] / (s * s);
            assert!((lap + 56.0 * t[n][i0]).abs() < 1e-10);
            // θ-derivative of the same relation links the third-order slots
            let d_lap = 6.0 * t[n][i3] + c / s * 2.0 * t[n][i2] - t[n][it] / (s * s)
                + 2.0 * t[n][sp.index_of([1, 2, 0]).unwrap()] / (s * s)
                - 4.0 * c / (s * s * s) * t[n][i02];
            assert!((d_lap + 56.0 * t[n][it]).abs() < 1e-9, "{d_lap}");
            let d2_lap = 24.0 * t[n][i4] + c / s * 6.0 * t[n][i3] - 2.0 / (s * s) * 2.0 * t[n][i2]
                + 2.0 * c / (s * s * s) * t[n][it]
                + 4.0 * t[n][i22] / (s * s)
                - 8.0 * c / (s * s * s) * t[n][sp.index_of([1, 2, 0]).unwrap()]
                + (4.0 / (s * s) + 12.0 * c * c / (s * s * s * s)) * t[n][i02];
            assert!((d2_lap + 56.0 * 2.0 * t[n][i2]).abs() < 1e-8, "{d2_lap}");
        }
    }

    #[test]
    fn analysis_inverts_synthesis() {
        let g = SphericalGrid::new(16).unwrap();
        let coeffs: Vec<f64> = (0..g.n_coeffs()).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        let back = g.analysis(&g.synthesis(&coeffs));
        for (a, b) in coeffs.iter().zip(&back) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn embed_and_round_trip() {
        let g = SphericalGrid::new(16).unwrap();
        let s = RadialGraph::round(g.clone(), 4.0).unwrap();
        for p in s.embed() {
            assert!(((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 4.0).abs() < 1e-14);
        }
        let t = RadialGraph::from_fn(g.clone(), 10.0, |d| 10.0 + d[2]).unwrap();
        for (p, r) in t.embed().iter().zip(&t.rho) {
            assert!(((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - r).abs() < 1e-13);
        }
        // extreme nodes approach the poles at 11 and 9
        assert!((t.max_rho() - (10.0 + g.cos_theta[0])).abs() < 1e-12);
        assert!((t.min_rho() - (10.0 - g.cos_theta[0])).abs() < 1e-12);
    }

    #[test]
    fn euclidean_area_of_round_sphere() {
        let g = SphericalGrid::new(16).unwrap();
        let s = RadialGraph::round(g.clone(), 7.0).unwrap();
        let one = vec![1.0; g.n_nodes()];
        let area = surface_integral(&s, &one, &s.euclidean_area_density()).unwrap();
        assert!((area / (4.0 * PI * 49.0) - 1.0).abs() < 1e-10);
        let y10: Vec<f64> = (0..g.n_nodes()).map(|n| g.harmonic_at(SphericalGrid::coeff_index(1, 0, false), n)).collect();
        assert!(surface_integral(&s, &y10, &s.euclidean_area_density()).unwrap().abs() < 1e-12);
        assert!(surface_integral(&s, &y10[1..], &one).is_err());
    }

    #[test]
    fn flat_volume_and_translation() {
        let g = SphericalGrid::new(24).unwrap();
        let flat = MetricParams::flat();
        let s = RadialGraph::round(g.clone(), 10.0).unwrap();
        let v = enclosed_volume(&s, &flat, Some(1.5)).unwrap();
        let want = 4.0 * PI / 3.0 * (1000.0 - 1.5f64.powi(3));
        assert!((v / want - 1.0).abs() < 1e-12);
        // sphere of radius 10 centered at (1,0,0): ρ solves ρ² − 2ρ sinθcosφ + 1 = 100
        let shifted = RadialGraph::from_fn(g.clone(), 10.0, |d| d[0] + (d[0] * d[0] + 99.0).sqrt()).unwrap();
        let vs = enclosed_volume(&shifted, &flat, Some(1.5)).unwrap();
        assert!((vs / v - 1.0).abs() < 1e-9, "{vs} {v}");
    }

    #[test]
    fn schwarzschild_volume_matches_radial_oracle() {
        let g = SphericalGrid::new(16).unwrap();
        let p = MetricParams::schwarzschild(2.0);
        let s = RadialGraph::round(g, 10.0).unwrap();
        let v = enclosed_volume(&s, &p, Some(2.0)).unwrap();
        // composite Simpson oracle for 4π∫ φ⁶ r² dr on [2, 10]
        let f = |r: f64| (1.0 + 1.0 / r).powi(6) * r * r;
        let n = 20000;
        let h = 8.0 / n as f64;
        let mut acc = f(2.0) + f(10.0);
        for i in 1..n {
            acc += f(2.0 + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let oracle = 4.0 * PI * acc * h / 3.0;
        assert!((v / oracle - 1.0).abs() < 1e-8);
        assert!(enclosed_volume(&s, &p, Some(10.5)).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let g = SphericalGrid::new(8).unwrap();
        let s = RadialGraph::with_modes(g.clone(), 5.0, &[Mode { l: 2, m: -1, amplitude: 0.1 }]).unwrap();
        let json = s.snapshot().to_json();
        let back = RadialGraph::from_snapshot(g, &Snapshot::from_json(&json).unwrap()).unwrap();
        assert_eq!(back.coeffs, s.coeffs);
        assert!(Snapshot::from_json(&json.replace("\"version\": 1", "\"version\": 9")).is_err());
    }
}
