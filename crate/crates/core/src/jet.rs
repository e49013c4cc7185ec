//! Truncated multivariate Taylor polynomials.
//!
//! A `Jet<N>` stores the Taylor coefficients of a smooth function of up to three
//! variables around a base point, truncated at a fixed total degree. Arithmetic
//! follows the usual truncated power series rules, so derivatives of arbitrary
//! algebraic expressions come out exactly (to round-off) instead of by finite
//! differences.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::sync::OnceLock;

pub const MAX_VARS: usize = 3;
pub const MAX_ORDER: usize = 4;

/// Monomial layout for a given number of variables and truncation order.
#[derive(Debug)]
pub struct JetSpace {
    pub nvars: usize,
    pub order: usize,
    pub len: usize,
    exps: Vec<[u8; MAX_VARS]>,
    degree: Vec<u8>,
    /// (i, j, k): coefficient i times coefficient j contributes to k.
    products: Vec<(u16, u16, u16)>,
    /// For each variable, (source, target, factor) of the partial derivative.
    derivs: [Vec<(u16, u16, f64)>; MAX_VARS],
    /// For each monomial, a variable and the index of the monomial divided by it.
    parent: Vec<(u8, u16)>,
}

#[allow(clippy::declare_interior_mutable_const)]
const EMPTY: OnceLock<JetSpace> = OnceLock::new();
#[allow(clippy::declare_interior_mutable_const)]
const ROW: [OnceLock<JetSpace>; MAX_ORDER + 1] = [EMPTY; MAX_ORDER + 1];
static SPACES: [[OnceLock<JetSpace>; MAX_ORDER + 1]; MAX_VARS + 1] = [ROW; MAX_VARS + 1];

/// Number of monomials of total degree at most `order` in `nvars` variables.
pub const fn monomial_count(nvars: usize, order: usize) -> usize {
    let mut num = 1;
    let mut den = 1;
    let mut i = 1;
    while i <= nvars {
        num *= order + i;
        den *= i;
        i += 1;
    }
    num / den
}

impl JetSpace {
    pub fn get(nvars: usize, order: usize) -> &'static JetSpace {
        assert!((1..=MAX_VARS).contains(&nvars) && order <= MAX_ORDER);
        SPACES[nvars][order].get_or_init(|| JetSpace::build(nvars, order))
    }

    fn build(nvars: usize, order: usize) -> JetSpace {
        let mut exps = Vec::new();
        for d in 0..=order {
            for a in (0..=d).rev() {
                if nvars == 1 {
                    if a == d {
                        exps.push([a as u8, 0, 0]);
                    }
                    continue;
                }
                for b in (0..=d - a).rev() {
                    let c = d - a - b;
                    if nvars == 2 && c != 0 {
                        continue;
                    }
                    exps.push([a as u8, b as u8, c as u8]);
                }
            }
        }
        let len = exps.len();
        debug_assert_eq!(len, monomial_count(nvars, order));
        let degree: Vec<u8> = exps.iter().map(|e| e[0] + e[1] + e[2]).collect();
        let find = |e: [u8; 3]| exps.iter().position(|x| *x == e);
        let mut products = Vec::new();
        for i in 0..len {
            for j in 0..len {
                let e = [
                    exps[i][0] + exps[j][0],
                    exps[i][1] + exps[j][1],
                    exps[i][2] + exps[j][2],
                ];
                if (e[0] + e[1] + e[2]) as usize <= order {
                    products.push((i as u16, j as u16, find(e).unwrap() as u16));
                }
            }
        }
        let mut derivs: [Vec<(u16, u16, f64)>; MAX_VARS] = Default::default();
        for (v, dv) in derivs.iter_mut().enumerate().take(nvars) {
            for (i, e) in exps.iter().enumerate() {
                if e[v] > 0 {
                    let mut t = *e;
                    t[v] -= 1;
                    dv.push((i as u16, find(t).unwrap() as u16, e[v] as f64));
                }
            }
        }
        let parent = exps
            .iter()
            .map(|e| {
                let v = (0..MAX_VARS).find(|&v| e[v] > 0).unwrap_or(0);
                let mut t = *e;
                if t[v] > 0 {
                    t[v] -= 1;
                }
                (v as u8, find(t).unwrap() as u16)
            })
            .collect();
        JetSpace {
            nvars,
            order,
            len,
            exps,
            degree,
            products,
            derivs,
            parent,
        }
    }

    pub fn exponents(&self, idx: usize) -> [u8; 3] {
        self.exps[idx]
    }

    pub fn index_of(&self, e: [u8; 3]) -> Option<usize> {
        self.exps.iter().position(|x| *x == e)
    }
}

/// Truncated Taylor polynomial with `N` coefficient slots.
#[derive(Clone, Copy)]
pub struct Jet<const N: usize> {
    pub c: [f64; N],
    pub space: &'static JetSpace,
}

impl<const N: usize> std::fmt::Debug for Jet<N> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(&self.c[..self.space.len]).finish()
    }
}

impl<const N: usize> Jet<N> {
    pub fn constant(space: &'static JetSpace, v: f64) -> Self {
        assert!(space.len <= N, "jet space needs {} slots, have {}", space.len, N);
        let mut c = [0.0; N];
        c[0] = v;
        Jet { c, space }
    }

    /// The independent variable `var` shifted to `value`.
    pub fn variable(space: &'static JetSpace, var: usize, value: f64) -> Self {
        let mut j = Self::constant(space, value);
        let mut e = [0u8; 3];
        e[var] = 1;
        if space.order >= 1 {
            j.c[space.index_of(e).unwrap()] = 1.0;
        }
        j
    }

    pub fn from_coeffs(space: &'static JetSpace, coeffs: &[f64]) -> Self {
        let mut j = Self::constant(space, 0.0);
        j.c[..space.len].copy_from_slice(&coeffs[..space.len]);
        j
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.c[0]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.space.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn constant_like(&self, v: f64) -> Self {
        Self::constant(self.space, v)
    }

    /// Coefficient of the monomial with exponents `e`.
    pub fn coeff(&self, e: [u8; 3]) -> f64 {
        self.space.index_of(e).map_or(0.0, |i| self.c[i])
    }

    /// Partial derivative `∂^e` at the base point.
    pub fn derivative(&self, e: [u8; 3]) -> f64 {
        let fact = |k: u8| (1..=k as u64).product::<u64>() as f64;
        self.coeff(e) * fact(e[0]) * fact(e[1]) * fact(e[2])
    }

    /// Partial derivative as a jet; the top-degree coefficients become zero
    /// and the result is accurate one order less than `self`.
    pub fn d(&self, var: usize) -> Self {
        let mut out = Self::constant(self.space, 0.0);
        for &(s, t, f) in &self.space.derivs[var] {
            out.c[t as usize] = f * self.c[s as usize];
        }
        out
    }

    /// Drops every coefficient of degree greater than `order`.
    pub fn truncate(&self, order: usize) -> Self {
        let mut out = *self;
        for i in 0..self.space.len {
            if self.space.degree[i] as usize > order {
                out.c[i] = 0.0;
            }
        }
        out
    }

    /// Composition `f(self)` from the Taylor coefficients of `f` at `self.value()`.
    pub fn compose(&self, series: &[f64]) -> Self {
        let mut delta = *self;
        delta.c[0] = 0.0;
        let mut out = Self::constant(self.space, series[0]);
        let mut pw = Self::constant(self.space, 1.0);
        for &a in series.iter().take(self.space.order + 1).skip(1) {
            pw = pw * delta;
            for i in 0..self.space.len {
                out.c[i] += a * pw.c[i];
            }
        }
        out
    }

    pub fn recip(self) -> Self {
        let x = self.c[0];
        let mut s = [0.0; MAX_ORDER + 1];
        let mut t = 1.0 / x;
        for (n, sn) in s.iter_mut().enumerate() {
            *sn = if n % 2 == 0 { t } else { -t };
            t /= x;
        }
        self.compose(&s)
    }

    pub fn powf(self, p: f64) -> Self {
        let x = self.c[0];
        let mut s = [0.0; MAX_ORDER + 1];
        let mut binom = 1.0;
        for (n, sn) in s.iter_mut().enumerate() {
            *sn = binom * x.powf(p - n as f64);
            binom *= (p - n as f64) / (n as f64 + 1.0);
        }
        self.compose(&s)
    }

    pub fn sqrt(self) -> Self {
        self.powf(0.5)
    }

    pub fn powi(self, n: i32) -> Self {
        if n < 0 {
            return self.powi(-n).recip();
        }
        let mut out = self.constant_like(1.0);
        for _ in 0..n {
            out = out * self;
        }
        out
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        let cyc = [s, c, -s, -c];
        let mut series = [0.0; MAX_ORDER + 1];
        let mut fact = 1.0;
        for (n, sn) in series.iter_mut().enumerate() {
            if n > 0 {
                fact *= n as f64;
            }
            *sn = cyc[n % 4] / fact;
        }
        self.compose(&series)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        let cyc = [c, -s, -c, s];
        let mut series = [0.0; MAX_ORDER + 1];
        let mut fact = 1.0;
        for (n, sn) in series.iter_mut().enumerate() {
            if n > 0 {
                fact *= n as f64;
            }
            *sn = cyc[n % 4] / fact;
        }
        self.compose(&series)
    }

    /// Substitutes `vars` (jets in another space, with zero constant term) for
    /// the displacement variables of `self`.
    pub fn substitute<const M: usize>(&self, vars: &[Jet<M>; 3], monomials: &Monomials<M>) -> Jet<M> {
        debug_assert!(vars.iter().all(|v| v.c[0] == 0.0));
        let mut out = Jet::constant(vars[0].space, 0.0);
        let n = self.space.len.min(monomials.m.len());
        for i in 0..n {
            let a = self.c[i];
            if a != 0.0 {
                let m = &monomials.m[i];
                for k in 0..out.space.len {
                    out.c[k] += a * m.c[k];
                }
            }
        }
        out
    }
}

/// Powers of a displacement vector, indexed like the monomials of a source space.
pub struct Monomials<const M: usize> {
    m: Vec<Jet<M>>,
}

impl<const M: usize> Monomials<M> {
    pub fn new(source: &'static JetSpace, vars: &[Jet<M>; 3]) -> Self {
        let mut m: Vec<Jet<M>> = Vec::with_capacity(source.len);
        m.push(Jet::constant(vars[0].space, 1.0));
        for i in 1..source.len {
            let (v, p) = source.parent[i];
            let next = m[p as usize] * vars[v as usize];
            m.push(next);
        }
        Monomials { m }
    }
}

impl<const N: usize> Add for Jet<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        for i in 0..self.space.len {
            self.c[i] += rhs.c[i];
        }
        self
    }
}

impl<const N: usize> Sub for Jet<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        for i in 0..self.space.len {
            self.c[i] -= rhs.c[i];
        }
        self
    }
}

impl<const N: usize> Mul for Jet<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::constant(self.space, 0.0);
        for &(i, j, k) in &self.space.products {
            out.c[k as usize] += self.c[i as usize] * rhs.c[j as usize];
        }
        out
    }
}

impl<const N: usize> Div for Jet<N> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl<const N: usize> Neg for Jet<N> {
    type Output = Self;
    fn neg(mut self) -> Self {
        for i in 0..self.space.len {
            self.c[i] = -self.c[i];
        }
        self
    }
}

impl<const N: usize> Add<f64> for Jet<N> {
    type Output = Self;
    fn add(mut self, rhs: f64) -> Self {
        self.c[0] += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for Jet<N> {
    type Output = Self;
    fn sub(mut self, rhs: f64) -> Self {
        self.c[0] -= rhs;
        self
    }
}

impl<const N: usize> Mul<f64> for Jet<N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, rhs: f64) -> Self {
        for i in 0..self.space.len {
            self.c[i] *= rhs;
        }
        self
    }
}

impl<const N: usize> Div<f64> for Jet<N> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self * (1.0 / rhs)
    }
}

impl<const N: usize> AddAssign for Jet<N> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const N: usize> SubAssign for Jet<N> {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<const N: usize> MulAssign<f64> for Jet<N> {
    fn mul_assign(&mut self, rhs: f64) {
        *self = *self * rhs;
    }
}

/// Arithmetic shared by plain floats and jets so the metric can be written once.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant_like(&self, v: f64) -> Self;
    fn value(&self) -> f64;
    fn sqrt(self) -> Self;
    fn recip(self) -> Self;
    fn powi(self, n: i32) -> Self;
}

impl Scalar for f64 {
    fn constant_like(&self, v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn recip(self) -> Self {
        1.0 / self
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

impl<const N: usize> Scalar for Jet<N> {
    fn constant_like(&self, v: f64) -> Self {
        Jet::constant_like(self, v)
    }
    fn value(&self) -> f64 {
        self.c[0]
    }
    fn sqrt(self) -> Self {
        Jet::sqrt(self)
    }
    fn recip(self) -> Self {
        Jet::recip(self)
    }
    fn powi(self, n: i32) -> Self {
        Jet::powi(self, n)
    }
}

/// Inverse and determinant of a symmetric 3×3 matrix.
pub fn inverse3<T: Scalar>(g: &[[T; 3]; 3]) -> ([[T; 3]; 3], T) {
    let c00 = g[1][1] * g[2][2] - g[1][2] * g[2][1];
    let c01 = g[1][2] * g[2][0] - g[1][0] * g[2][2];
    let c02 = g[1][0] * g[2][1] - g[1][1] * g[2][0];
    let det = g[0][0] * c00 + g[0][1] * c01 + g[0][2] * c02;
    let inv_det = det.recip();
    let c11 = g[0][0] * g[2][2] - g[0][2] * g[2][0];
    let c12 = g[0][2] * g[1][0] - g[0][0] * g[1][2];
    let c22 = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    let a = c00 * inv_det;
    let b = c01 * inv_det;
    let c = c02 * inv_det;
    let d = c11 * inv_det;
    let e = c12 * inv_det;
    let f = c22 * inv_det;
    ([[a, b, c], [b, d, e], [c, e, f]], det)
}

/// Inverse and determinant of a symmetric 2×2 matrix.
pub fn inverse2<T: Scalar>(g: &[[T; 2]; 2]) -> ([[T; 2]; 2], T) {
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    let inv = det.recip();
    (
        [
            [g[1][1] * inv, -(g[0][1] * inv)],
            [-(g[1][0] * inv), g[0][0] * inv],
        ],
        det,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    type J3 = Jet<20>;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn monomial_counts() {
        assert_eq!(monomial_count(3, 3), 20);
        assert_eq!(monomial_count(2, 4), 15);
        assert_eq!(JetSpace::get(2, 4).len, 15);
        assert_eq!(JetSpace::get(3, 4).len, 35);
        assert_eq!(JetSpace::get(1, 4).len, 5);
    }

    #[test]
    fn derivatives_of_rational_function() {
        // f = x / (1 + y²) + z³ at (0.3, 0.7, -0.4)
        let sp = JetSpace::get(3, 3);
        let x = J3::variable(sp, 0, 0.3);
        let y = J3::variable(sp, 1, 0.7);
        let z = J3::variable(sp, 2, -0.4);
        let f = x / (y * y + 1.0) + z * z * z;
        let q = 1.0 + 0.49;
        assert!(close(f.value(), 0.3 / q - 0.064, 1e-15));
        assert!(close(f.derivative([1, 0, 0]), 1.0 / q, 1e-14));
        assert!(close(f.derivative([0, 1, 0]), -0.3 * 2.0 * 0.7 / (q * q), 1e-14));
        assert!(close(f.derivative([0, 0, 2]), 6.0 * -0.4, 1e-14));
        // ∂x∂y f = -2y/q²
        assert!(close(f.derivative([1, 1, 0]), -1.4 / (q * q), 1e-14));
        // ∂y² f = x (6y² - 2)/q³
        assert!(close(f.derivative([0, 2, 0]), 0.3 * (6.0 * 0.49 - 2.0) / q.powi(3), 1e-13));
        assert!(close(f.derivative([0, 0, 3]), 6.0, 1e-14));
    }

    #[test]
    fn elementary_functions_match_closed_forms() {
        let sp = JetSpace::get(1, 4);
        let x = Jet::<5>::variable(sp, 0, 0.8);
        let s = x.sin();
        let c = x.cos();
        let r = x.sqrt();
        for k in 0..=4u8 {
            let ds = match k % 4 {
                0 => 0.8f64.sin(),
                1 => 0.8f64.cos(),
                2 => -0.8f64.sin(),
                _ => -0.8f64.cos(),
            };
            assert!(close(s.derivative([k, 0, 0]), ds, 1e-14));
            let dc = match k % 4 {
                0 => 0.8f64.cos(),
                1 => -0.8f64.sin(),
                2 => -0.8f64.cos(),
                _ => 0.8f64.sin(),
            };
            assert!(close(c.derivative([k, 0, 0]), dc, 1e-14));
        }
        assert!(close(r.derivative([2, 0, 0]), -0.25 * 0.8f64.powf(-1.5), 1e-14));
        assert!(close(r.derivative([4, 0, 0]), -15.0 / 16.0 * 0.8f64.powf(-3.5), 1e-13));
    }

    #[test]
    fn substitution_is_composition() {
        // g(x,y,z) = x y + z², with x = s², y = 1 + t, z = s t → s² + s² t + s² t²
        let s3 = JetSpace::get(3, 3);
        let s2 = JetSpace::get(2, 4);
        let gx = J3::variable(s3, 0, 0.0);
        let gy = J3::variable(s3, 1, 1.0);
        let gz = J3::variable(s3, 2, 0.0);
        let g = gx * gy + gz * gz;
        let s = Jet::<15>::variable(s2, 0, 0.0);
        let t = Jet::<15>::variable(s2, 1, 0.0);
        let vars = [s * s, t, s * t];
        let mono = Monomials::new(s3, &vars);
        let out = g.substitute(&vars, &mono);
        assert!(close(out.coeff([2, 0, 0]), 1.0, 1e-15));
        assert!(close(out.coeff([2, 1, 0]), 1.0, 1e-15));
        assert!(close(out.coeff([2, 2, 0]), 1.0, 1e-15));
        assert!(out.coeff([1, 0, 0]).abs() < 1e-15);
    }

    #[test]
    fn inverse3_matches_nalgebra() {
        let g = [[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 1.1]];
        let (inv, det) = inverse3(&g);
        let m = nalgebra::Matrix3::from_fn(|i, j| g[i][j]);
        let mi = m.try_inverse().unwrap();
        assert!(close(det, m.determinant(), 1e-14));
        for i in 0..3 {
            for j in 0..3 {
                assert!(close(inv[i][j], mi[(i, j)], 1e-14));
            }
        }
    }
}
