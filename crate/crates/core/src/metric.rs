//! Asymptotically Schwarzschild background metrics.
//!
//! The metric is `U⁴ δ + P` in Euclidean coordinates centered at `offset`, with
//! `U = 1 + m/2r` (plus `B·y/r³` for the conformal dipole) and an optional
//! user-supplied decaying perturbation `P`.
//!
//! Curvature convention: `R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z` and
//! `R_abcd = ⟨R(∂_a,∂_b)∂_c, ∂_d⟩`, so a sectional curvature is `R_abba` and
//! `Ric_ad = g^bc R_abcd`. With this choice the Gauss equation reads
//! `R_ijkl = R̄_ijkl + h_il h_jk − h_ik h_jl`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::jet::{inverse3, Jet, JetSpace, Scalar};

pub type Mat3 = [[f64; 3]; 3];
pub type Tensor3 = [[[f64; 3]; 3]; 3];
pub type Tensor4 = [[[[f64; 3]; 3]; 3]; 3];

/// A decaying symmetric perturbation `P(y)` supplied by the caller.
pub trait CustomPerturbation: Send + Sync + fmt::Debug {
    /// `P_αβ` at displacement `y` from the metric center.
    fn eval(&self, y: [f64; 3]) -> Mat3;
    /// Declared bounds `[C₁, C₂, C₃]` with `|∂^l P| ≤ C_{l+1} r^{−l−2}`.
    fn bounds(&self) -> [f64; 3];
}

#[derive(Clone, Debug, Default)]
pub enum Perturbation {
    #[default]
    None,
    /// Adds `B·y/r³` to the conformal factor.
    ConformalDipole { b: [f64; 3] },
    Custom(Arc<dyn CustomPerturbation>),
}

#[derive(Clone, Debug)]
pub struct MetricParams {
    pub mass: f64,
    pub perturbation: Perturbation,
    /// Aggregate decay constant of the perturbation.
    pub c0: f64,
    /// Euclidean position of the metric center.
    pub offset: [f64; 3],
}

impl MetricParams {
    pub fn flat() -> Self {
        Self::schwarzschild(0.0)
    }

    pub fn schwarzschild(mass: f64) -> Self {
        MetricParams {
            mass,
            perturbation: Perturbation::None,
            c0: 0.0,
            offset: [0.0; 3],
        }
    }

    pub fn conformal_dipole(mass: f64, b: [f64; 3]) -> Self {
        let c0 = 4.0 * (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
        MetricParams {
            mass,
            perturbation: Perturbation::ConformalDipole { b },
            c0,
            offset: [0.0; 3],
        }
    }

    pub fn custom(mass: f64, p: Arc<dyn CustomPerturbation>) -> Self {
        let c0 = p.bounds().iter().cloned().fold(0.0, f64::max);
        MetricParams {
            mass,
            perturbation: Perturbation::Custom(p),
            c0,
            offset: [0.0; 3],
        }
    }

    /// The same metric expressed in coordinates translated by `a`.
    pub fn translated(mut self, a: [f64; 3]) -> Self {
        for (o, ai) in self.offset.iter_mut().zip(a) {
            *o += ai;
        }
        self
    }

    pub fn is_flat(&self) -> bool {
        self.mass == 0.0 && matches!(self.perturbation, Perturbation::None)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass >= 0.0) || !self.mass.is_finite() {
            return Err(Error::Usage(format!("mass must be non-negative, got {}", self.mass)));
        }
        if self.offset.iter().any(|o| !o.is_finite()) {
            return Err(Error::Usage("offset must be finite".into()));
        }
        Ok(())
    }

    fn displacement(&self, x: [f64; 3]) -> Result<[f64; 3]> {
        let y = [x[0] - self.offset[0], x[1] - self.offset[1], x[2] - self.offset[2]];
        if y[0] * y[0] + y[1] * y[1] + y[2] * y[2] <= 1.0 {
            return Err(Error::Domain { point: x });
        }
        Ok(y)
    }

    /// Conformal factor `U` at displacement `y` from the center.
    pub fn conformal_factor<T: Scalar>(&self, y: &[T; 3]) -> T {
        let r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
        let r = r2.sqrt();
        let mut u = r.recip() * (0.5 * self.mass) + 1.0;
        if let Perturbation::ConformalDipole { b } = &self.perturbation {
            let by = y[0] * b[0] + y[1] * b[1] + y[2] * b[2];
            u = u + by / (r2 * r);
        }
        u
    }

    /// Metric components at a point.
    pub fn metric(&self, x: [f64; 3]) -> Result<Mat3> {
        let y = self.displacement(x)?;
        let u4 = self.conformal_factor(&y).powi(4);
        let mut g = [[0.0; 3]; 3];
        for (a, row) in g.iter_mut().enumerate() {
            row[a] = u4;
        }
        if let Perturbation::Custom(p) = &self.perturbation {
            let pv = p.eval(y);
            for a in 0..3 {
                for b in 0..3 {
                    g[a][b] += pv[a][b];
                }
            }
        }
        check_positive(&g, x)?;
        Ok(g)
    }

    /// Metric components as Taylor polynomials in the displacement from `x`.
    pub fn metric_jet<const N: usize>(&self, x: [f64; 3], order: usize) -> Result<[[Jet<N>; 3]; 3]> {
        let y0 = self.displacement(x)?;
        let sp = JetSpace::get(3, order);
        let y = [
            Jet::<N>::variable(sp, 0, y0[0]),
            Jet::<N>::variable(sp, 1, y0[1]),
            Jet::<N>::variable(sp, 2, y0[2]),
        ];
        let u4 = self.conformal_factor(&y).powi(4);
        let zero = Jet::<N>::constant(sp, 0.0);
        let mut g = [[zero; 3]; 3];
        for (a, row) in g.iter_mut().enumerate() {
            row[a] = u4;
        }
        if let Perturbation::Custom(p) = &self.perturbation {
            let taylor = fd_taylor(p.as_ref(), y0);
            for a in 0..3 {
                for b in 0..3 {
                    let mut pj = zero;
                    for i in 0..sp.len {
                        let e = sp.exponents(i);
                        let deg = (e[0] + e[1] + e[2]) as usize;
                        if deg <= 2 {
                            pj.c[i] = taylor[a][b][taylor_slot(e)];
                        }
                    }
                    g[a][b] = g[a][b] + pj;
                }
            }
        }
        let gv = g.map(|row| row.map(|j| j.value()));
        check_positive(&gv, x)?;
        Ok(g)
    }

    /// Samples `|∂^l P|·r^{l+2}` for `l ≤ 2` at random points with `r ∈ [r_min, r_max]`
    /// and compares against the declared bounds. Returns the worst ratio of
    /// measured to declared value per order.
    pub fn audit_custom_decay(&self, samples: usize, r_min: f64, r_max: f64, seed: u64) -> Option<[f64; 3]> {
        use rand::{Rng, SeedableRng};
        let Perturbation::Custom(p) = &self.perturbation else {
            return None;
        };
        let bounds = p.bounds();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut worst = [0.0f64; 3];
        for _ in 0..samples {
            let r = rng.random_range(r_min..r_max);
            let z: f64 = rng.random_range(-1.0..1.0);
            let ph: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).sqrt();
            let y = [r * s * ph.cos(), r * s * ph.sin(), r * z];
            let t = fd_taylor(p.as_ref(), y);
            let mut norms = [0.0f64; 3];
            for a in 0..3 {
                for b in 0..3 {
                    norms[0] = norms[0].max(t[a][b][0].abs());
                    for k in 1..4 {
                        norms[1] = norms[1].max(t[a][b][k].abs());
                    }
                    for k in 4..10 {
                        // second-order Taylor slots hold ∂²P/e!; undo the factorial on squares
                        let f = if k < 7 { 2.0 } else { 1.0 };
                        norms[2] = norms[2].max(f * t[a][b][k].abs());
                    }
                }
            }
            for l in 0..3 {
                let scaled = norms[l] * r.powi(l as i32 + 2);
                worst[l] = worst[l].max(scaled / bounds[l].max(f64::MIN_POSITIVE));
            }
        }
        Some(worst)
    }
}

fn check_positive(g: &Mat3, x: [f64; 3]) -> Result<()> {
    let d1 = g[0][0];
    let d2 = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    let (_, d3) = inverse3(g);
    if d1 > 0.0 && d2 > 0.0 && d3 > 0.0 {
        Ok(())
    } else {
        Err(Error::Validity { point: x })
    }
}

/// Slot of a monomial of degree ≤ 2 in the order used by [`fd_taylor`]:
/// 1, x, y, z, x², y², z², xy, xz, yz.
fn taylor_slot(e: [u8; 3]) -> usize {
    match e {
        [0, 0, 0] => 0,
        [1, 0, 0] => 1,
        [0, 1, 0] => 2,
        [0, 0, 1] => 3,
        [2, 0, 0] => 4,
        [0, 2, 0] => 5,
        [0, 0, 2] => 6,
        [1, 1, 0] => 7,
        [1, 0, 1] => 8,
        [0, 1, 1] => 9,
        _ => unreachable!(),
    }
}

/// Second-order Taylor coefficients of a custom perturbation by fourth-order
/// central differences with step `1e−4·r`.
fn fd_taylor(p: &dyn CustomPerturbation, y: [f64; 3]) -> [[[f64; 10]; 3]; 3] {
    let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
    let h = 1e-4 * r;
    let at = |d: [f64; 3]| p.eval([y[0] + d[0] * h, y[1] + d[1] * h, y[2] + d[2] * h]);
    let unit = |i: usize, s: f64| {
        let mut d = [0.0; 3];
        d[i] = s;
        d
    };
    let pair = |i: usize, si: f64, j: usize, sj: f64| {
        let mut d = [0.0; 3];
        d[i] = si;
        d[j] = sj;
        d
    };
    let p0 = at([0.0; 3]);
    let mut out = [[[0.0; 10]; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            out[a][b][0] = p0[a][b];
        }
    }
    for i in 0..3 {
        let f = [at(unit(i, 2.0)), at(unit(i, 1.0)), at(unit(i, -1.0)), at(unit(i, -2.0))];
        for a in 0..3 {
            for b in 0..3 {
                let d1 = (-f[0][a][b] + 8.0 * f[1][a][b] - 8.0 * f[2][a][b] + f[3][a][b]) / (12.0 * h);
                let d2 = (-f[0][a][b] + 16.0 * f[1][a][b] - 30.0 * p0[a][b] + 16.0 * f[2][a][b] - f[3][a][b])
                    / (12.0 * h * h);
                out[a][b][1 + i] = d1;
                out[a][b][4 + i] = 0.5 * d2;
            }
        }
    }
    for (slot, (i, j)) in [(7, (0, 1)), (8, (0, 2)), (9, (1, 2))] {
        let v = |si: f64, sj: f64| at(pair(i, si, j, sj));
        let terms: [(f64, f64, f64); 16] = [
            (8.0, 1.0, -2.0),
            (8.0, 2.0, -1.0),
            (8.0, -2.0, 1.0),
            (8.0, -1.0, 2.0),
            (-8.0, -1.0, -2.0),
            (-8.0, -2.0, -1.0),
            (-8.0, 1.0, 2.0),
            (-8.0, 2.0, 1.0),
            (-1.0, 2.0, -2.0),
            (-1.0, -2.0, 2.0),
            (1.0, -2.0, -2.0),
            (1.0, 2.0, 2.0),
            (64.0, -1.0, -1.0),
            (64.0, 1.0, 1.0),
            (-64.0, 1.0, -1.0),
            (-64.0, -1.0, 1.0),
        ];
        let mut acc = [[0.0; 3]; 3];
        for (w, si, sj) in terms {
            let f = v(si, sj);
            for a in 0..3 {
                for b in 0..3 {
                    acc[a][b] += w * f[a][b];
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                out[a][b][slot] = acc[a][b] / (144.0 * h * h);
            }
        }
    }
    out
}

/// Metric, inverse and Christoffel symbols as Taylor polynomials around a point.
pub struct AmbientTaylor<const N: usize> {
    pub g: [[Jet<N>; 3]; 3],
    pub ginv: [[Jet<N>; 3]; 3],
    /// `gamma[c][a][b] = Γ^c_ab`, accurate one order less than `g`.
    pub gamma: [[[Jet<N>; 3]; 3]; 3],
}

impl<const N: usize> AmbientTaylor<N> {
    pub fn new(params: &MetricParams, x: [f64; 3], order: usize) -> Result<Self> {
        let g = params.metric_jet::<N>(x, order)?;
        let (ginv, _) = inverse3(&g);
        let zero = g[0][0].constant_like(0.0);
        let mut dg = [[[zero; 3]; 3]; 3];
        for c in 0..3 {
            for a in 0..3 {
                for b in a..3 {
                    dg[c][a][b] = g[a][b].d(c);
                    dg[c][b][a] = dg[c][a][b];
                }
            }
        }
        let mut lower = [[[zero; 3]; 3]; 3];
        for d in 0..3 {
            for a in 0..3 {
                for b in a..3 {
                    let v = (dg[a][b][d] + dg[b][a][d] - dg[d][a][b]) * 0.5;
                    lower[d][a][b] = v;
                    lower[d][b][a] = v;
                }
            }
        }
        let mut gamma = [[[zero; 3]; 3]; 3];
        for c in 0..3 {
            for a in 0..3 {
                for b in a..3 {
                    let v = ginv[c][0] * lower[0][a][b] + ginv[c][1] * lower[1][a][b] + ginv[c][2] * lower[2][a][b];
                    gamma[c][a][b] = v;
                    gamma[c][b][a] = v;
                }
            }
        }
        Ok(AmbientTaylor { g, ginv, gamma })
    }

    /// Riemann tensor `R_abcd` as jets, accurate two orders less than `g`.
    pub fn riemann(&self) -> [[[[Jet<N>; 3]; 3]; 3]; 3] {
        let zero = self.g[0][0].constant_like(0.0);
        let gm = &self.gamma;
        let mut q = [[[[zero; 3]; 3]; 3]; 3];
        for e in 0..3 {
            for a in 0..3 {
                for b in (a + 1)..3 {
                    for c in 0..3 {
                        let mut v = gm[e][b][c].d(a) - gm[e][a][c].d(b);
                        for f in 0..3 {
                            v = v + gm[e][a][f] * gm[f][b][c] - gm[e][b][f] * gm[f][a][c];
                        }
                        q[e][a][b][c] = v;
                        q[e][b][a][c] = -v;
                    }
                }
            }
        }
        let mut r = [[[[zero; 3]; 3]; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        r[a][b][c][d] =
                            self.g[d][0] * q[0][a][b][c] + self.g[d][1] * q[1][a][b][c] + self.g[d][2] * q[2][a][b][c];
                    }
                }
            }
        }
        r
    }

    /// Ricci tensor as jets from a Riemann jet tensor.
    pub fn ricci(&self, r: &[[[[Jet<N>; 3]; 3]; 3]; 3]) -> [[Jet<N>; 3]; 3] {
        let zero = self.g[0][0].constant_like(0.0);
        let mut ric = [[zero; 3]; 3];
        for a in 0..3 {
            for d in 0..3 {
                let mut v = zero;
                for b in 0..3 {
                    for c in 0..3 {
                        v = v + self.ginv[b][c] * r[a][b][c][d];
                    }
                }
                ric[a][d] = v;
            }
        }
        ric
    }
}

/// Metric, derivatives, connection and curvature at a point.
#[derive(Clone, Debug)]
pub struct MetricJet {
    pub point: [f64; 3],
    pub g: Mat3,
    pub ginv: Mat3,
    /// `dg[c][a][b] = ∂_c g_ab`.
    pub dg: Tensor3,
    /// `ddg[c][d][a][b] = ∂_c ∂_d g_ab`.
    pub ddg: Tensor4,
    /// `gamma[c][a][b] = Γ^c_ab`.
    pub gamma: Tensor3,
    pub riemann: Tensor4,
    pub ricci: Mat3,
    pub scalar: f64,
    /// `dricci[c][a][b] = ∂_c R_ab`.
    pub dricci: Tensor3,
    pub dscalar: [f64; 3],
    /// `nabla_riemann[e][a][b][c][d] = ∇̄_e R̄_abcd`.
    pub nabla_riemann: [Tensor4; 3],
}

fn unit_exp(a: usize) -> [u8; 3] {
    let mut e = [0u8; 3];
    e[a] = 1;
    e
}

fn pair_exp(a: usize, b: usize) -> [u8; 3] {
    let mut e = [0u8; 3];
    e[a] += 1;
    e[b] += 1;
    e
}

/// Evaluates the metric and its curvature at `point`.
pub fn eval_jet(params: &MetricParams, point: [f64; 3]) -> Result<MetricJet> {
    let amb = AmbientTaylor::<20>::new(params, point, 3)?;
    let rj = amb.riemann();
    Ok(metric_jet_from_taylor(&amb, &rj, point))
}

/// Assembles a [`MetricJet`] from third-order ambient Taylor data.
pub fn metric_jet_from_taylor(
    amb: &AmbientTaylor<20>,
    rj: &[[[[Jet<20>; 3]; 3]; 3]; 3],
    point: [f64; 3],
) -> MetricJet {
    let ricj = amb.ricci(rj);
    let val3 = |t: &[[Jet<20>; 3]; 3]| t.map(|row| row.map(|j| j.value()));
    let g = val3(&amb.g);
    let ginv = val3(&amb.ginv);
    let mut dg = [[[0.0; 3]; 3]; 3];
    let mut ddg = [[[[0.0; 3]; 3]; 3]; 3];
    let mut gamma = [[[0.0; 3]; 3]; 3];
    let mut dricci = [[[0.0; 3]; 3]; 3];
    for c in 0..3 {
        for a in 0..3 {
            for b in 0..3 {
                dg[c][a][b] = amb.g[a][b].derivative(unit_exp(c));
                gamma[c][a][b] = amb.gamma[c][a][b].value();
                dricci[c][a][b] = ricj[a][b].derivative(unit_exp(c));
                for d in 0..3 {
                    ddg[c][d][a][b] = amb.g[a][b].derivative(pair_exp(c, d));
                }
            }
        }
    }
    let mut riemann = [[[[0.0; 3]; 3]; 3]; 3];
    let mut driem = [[[[[0.0; 3]; 3]; 3]; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                for d in 0..3 {
                    riemann[a][b][c][d] = rj[a][b][c][d].value();
                    for e in 0..3 {
                        driem[e][a][b][c][d] = rj[a][b][c][d].derivative(unit_exp(e));
                    }
                }
            }
        }
    }
    let ricci = val3(&ricj);
    let mut scalar = 0.0;
    let mut dscalar = [0.0; 3];
    for a in 0..3 {
        for d in 0..3 {
            scalar += ginv[a][d] * ricci[a][d];
        }
    }
    // ∂_c R = ∂_c(g^{ad}) R_ad + g^{ad} ∂_c R_ad, with ∂g^{-1} = −g^{-1}(∂g)g^{-1}
    for (c, ds) in dscalar.iter_mut().enumerate() {
        let mut v = 0.0;
        for a in 0..3 {
            for d in 0..3 {
                let mut dginv = 0.0;
                for p in 0..3 {
                    for q in 0..3 {
                        dginv -= ginv[a][p] * dg[c][p][q] * ginv[q][d];
                    }
                }
                v += dginv * ricci[a][d] + ginv[a][d] * dricci[c][a][d];
            }
        }
        *ds = v;
    }
    let mut nabla_riemann = [[[[[0.0; 3]; 3]; 3]; 3]; 3];
    for e in 0..3 {
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        let mut v = driem[e][a][b][c][d];
                        for f in 0..3 {
                            v -= gamma[f][e][a] * riemann[f][b][c][d]
                                + gamma[f][e][b] * riemann[a][f][c][d]
                                + gamma[f][e][c] * riemann[a][b][f][d]
                                + gamma[f][e][d] * riemann[a][b][c][f];
                        }
                        nabla_riemann[e][a][b][c][d] = v;
                    }
                }
            }
        }
    }
    MetricJet {
        point,
        g,
        ginv,
        dg,
        ddg,
        gamma,
        riemann,
        ricci,
        scalar,
        dricci,
        dscalar,
        nabla_riemann,
    }
}

/// Riemann tensor rebuilt from Ricci curvature, exact in three dimensions.
pub fn riemann_from_ricci(jet: &MetricJet) -> Tensor4 {
    let g = &jet.g;
    let ric = &jet.ricci;
    let s = jet.scalar;
    let mut out = [[[[0.0; 3]; 3]; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                for d in 0..3 {
                    out[a][b][c][d] = ric[a][d] * g[b][c] - ric[a][c] * g[b][d] - ric[b][d] * g[a][c]
                        + ric[b][c] * g[a][d]
                        + 0.5 * s * (g[a][c] * g[b][d] - g[a][d] * g[b][c]);
                }
            }
        }
    }
    out
}

impl MetricJet {
    /// Largest componentwise `|R − R(Ric)| / (1 + |R|)`.
    pub fn ricci_reconstruction_residual(&self) -> f64 {
        let rr = riemann_from_ricci(self);
        let mut worst = 0.0f64;
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        let x = self.riemann[a][b][c][d];
                        worst = worst.max((x - rr[a][b][c][d]).abs() / (1.0 + x.abs()));
                    }
                }
            }
        }
        worst
    }

    /// Largest violation of the algebraic symmetries of the Riemann tensor.
    pub fn symmetry_residual(&self) -> f64 {
        let r = &self.riemann;
        let mut worst = 0.0f64;
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        let x = r[a][b][c][d];
                        worst = worst
                            .max((x + r[b][a][c][d]).abs())
                            .max((x + r[a][b][d][c]).abs())
                            .max((x - r[c][d][a][b]).abs())
                            .max((x + r[b][c][a][d] + r[c][a][b][d]).abs());
                    }
                }
            }
        }
        worst
    }

    /// `|∇^a Ric_ab − ½ ∂_b R|` maximized over `b`.
    pub fn bianchi_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for b in 0..3 {
            let mut div = 0.0;
            for a in 0..3 {
                for c in 0..3 {
                    // ∇_c Ric_ab
                    let mut nab = self.dricci[c][a][b];
                    for f in 0..3 {
                        nab -= self.gamma[f][c][a] * self.ricci[f][b] + self.gamma[f][c][b] * self.ricci[a][f];
                    }
                    div += self.ginv[a][c] * nab;
                }
            }
            worst = worst.max((div - 0.5 * self.dscalar[b]).abs());
        }
        worst
    }

    /// Norm of the Ricci tensor measured with the metric.
    pub fn ricci_norm(&self) -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        s += self.ginv[a][c] * self.ginv[b][d] * self.ricci[a][b] * self.ricci[c][d];
                    }
                }
            }
        }
        s.sqrt()
    }

    /// `Ric(v, w)` for coordinate vectors.
    pub fn ricci_on(&self, v: [f64; 3], w: [f64; 3]) -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                s += self.ricci[a][b] * v[a] * w[b];
            }
        }
        s
    }

    /// `R(v1, v2, v3, v4)` for coordinate vectors.
    pub fn riemann_on(&self, v: [[f64; 3]; 4]) -> f64 {
        contract4(&self.riemann, v)
    }
}

pub fn contract4(t: &Tensor4, v: [[f64; 3]; 4]) -> f64 {
    let mut s = 0.0;
    for a in 0..3 {
        if v[0][a] == 0.0 {
            continue;
        }
        for b in 0..3 {
            let ab = v[0][a] * v[1][b];
            if ab == 0.0 {
                continue;
            }
            for c in 0..3 {
                let abc = ab * v[2][c];
                for d in 0..3 {
                    s += t[a][b][c][d] * abc * v[3][d];
                }
            }
        }
    }
    s
}

/// Largest `|Ric|·r³` over log-spaced radii and a few directions, for the decay audit.
pub fn ricci_decay_audit(params: &MetricParams, r_min: f64, r_max: f64, samples: usize) -> Result<f64> {
    let dirs = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.57735026918962573, 0.57735026918962573, 0.57735026918962573],
        [0.6, -0.8, 0.0],
    ];
    let mut worst = 0.0f64;
    for i in 0..samples {
        let t = i as f64 / (samples.max(2) - 1) as f64;
        let r = r_min * (r_max / r_min).powf(t);
        for d in dirs {
            let x = [
                params.offset[0] + r * d[0],
                params.offset[1] + r * d[1],
                params.offset[2] + r * d[2],
            ];
            let jet = eval_jet(params, x)?;
            worst = worst.max(jet.ricci_norm() * r.powi(3));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Conformally flat oracle: for `g = φ⁴δ` with harmonic `φ = 1 + m/2r`,
    /// `Ric = −2φ⁻¹∇²φ + 6φ⁻²dφ⊗dφ − 2φ⁻²|dφ|²δ`.
    fn conformal_ricci(m: f64, x: [f64; 3]) -> Mat3 {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let phi = 1.0 + m / (2.0 * r);
        let dphi: Vec<f64> = x.iter().map(|xi| -m * xi / (2.0 * r.powi(3))).collect();
        let mut ric = [[0.0; 3]; 3];
        let grad2: f64 = dphi.iter().map(|d| d * d).sum();
        for a in 0..3 {
            for b in 0..3 {
                let delta = if a == b { 1.0 } else { 0.0 };
                let hess = -m / 2.0 * (delta / r.powi(3) - 3.0 * x[a] * x[b] / r.powi(5));
                ric[a][b] = -2.0 / phi * hess + 6.0 / (phi * phi) * dphi[a] * dphi[b]
                    - 2.0 / (phi * phi) * grad2 * delta;
            }
        }
        ric
    }

    #[test]
    fn flat_space_has_zero_curvature() {
        let j = eval_jet(&MetricParams::flat(), [5.0, 0.0, 0.0]).unwrap();
        assert_eq!(j.g, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(j.riemann.iter().flatten().flatten().flatten().all(|&x| x == 0.0));
        assert_eq!(j.scalar, 0.0);
    }

    #[test]
    fn schwarzschild_is_scalar_flat() {
        let j = eval_jet(&MetricParams::schwarzschild(2.0), [6.0, 8.0, 0.0]).unwrap();
        assert!(j.scalar.abs() < 1e-15, "R = {}", j.scalar);
    }

    #[test]
    fn schwarzschild_ricci_matches_conformal_oracle() {
        let x = [12.0, -9.0, 8.0];
        let j = eval_jet(&MetricParams::schwarzschild(1.0), x).unwrap();
        let oracle = conformal_ricci(1.0, x);
        for a in 0..3 {
            for b in 0..3 {
                assert!((j.ricci[a][b] - oracle[a][b]).abs() < 1e-15, "{a}{b}");
            }
        }
        let r = 17.0;
        let n = [x[0] / r, x[1] / r, x[2] / r];
        // unit radial vector measured with g is n/φ²
        let phi2 = (1.0 + 0.5 / r).powi(2);
        let rr = j.ricci_on(n, n) / (phi2 * phi2);
        let x20 = [20.0, 0.0, 0.0];
        let j20 = eval_jet(&MetricParams::schwarzschild(1.0), x20).unwrap();
        let phi20 = (1.0 + 0.5 / 20.0f64).powi(4);
        let rr20 = j20.ricci_on([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]) / phi20;
        // exact value −2m/R³ with areal radius R = rφ²; leading order −2m/r³
        let areal = 20.0 * (1.0 + 0.5 / 20.0f64).powi(2);
        assert!((rr20 + 2.0 / areal.powi(3)).abs() < 1e-15, "Ric(r,r) = {rr20}");
        assert!((rr20 + 2.5e-4).abs() < 4e-5);
        assert!(rr < 0.0);
    }

    #[test]
    fn reconstruction_and_symmetries() {
        let s = eval_jet(&MetricParams::schwarzschild(1.0), [0.0, 6.0, 8.0]).unwrap();
        assert!(s.ricci_reconstruction_residual() < 1e-14);
        assert!(s.symmetry_residual() < 1e-15);
        assert!(s.bianchi_residual() < 1e-12);
        let d = eval_jet(&MetricParams::conformal_dipole(1.0, [0.5, 0.2, -0.1]), [9.0, 12.0, 0.0]).unwrap();
        assert!(d.ricci_reconstruction_residual() < 1e-12);
        assert!(d.symmetry_residual() < 1e-14);
        assert!(d.bianchi_residual() < 1e-10);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = MetricParams::conformal_dipole(1.5, [0.3, -0.4, 0.2]);
        let x = [4.0, 3.0, -2.0];
        let j = eval_jet(&p, x).unwrap();
        let h = 1e-4;
        for c in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            let jp = eval_jet(&p, xp).unwrap();
            let jm = eval_jet(&p, xm).unwrap();
            for a in 0..3 {
                for b in 0..3 {
                    let fd = (jp.g[a][b] - jm.g[a][b]) / (2.0 * h);
                    assert!((fd - j.dg[c][a][b]).abs() < 1e-8);
                    let fdr = (jp.ricci[a][b] - jm.ricci[a][b]) / (2.0 * h);
                    assert!((fdr - j.dricci[c][a][b]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn domain_error_inside_unit_ball() {
        let p = MetricParams::schwarzschild(1.0).translated([3.0, 0.0, 0.0]);
        assert!(matches!(eval_jet(&p, [3.5, 0.0, 0.0]), Err(Error::Domain { .. })));
        assert!(eval_jet(&p, [0.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn decay_audit_schwarzschild() {
        let worst = ricci_decay_audit(&MetricParams::schwarzschild(1.0), 10.0, 200.0, 12).unwrap();
        assert!(worst <= 8.0, "{worst}");
    }

    #[derive(Debug)]
    struct Quadrupole;

    impl CustomPerturbation for Quadrupole {
        fn eval(&self, y: [f64; 3]) -> Mat3 {
            let r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
            let mut p = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    p[a][b] = 0.2 * y[a] * y[b] / (r2 * r2);
                }
            }
            p
        }
        fn bounds(&self) -> [f64; 3] {
            [0.2, 0.8, 3.0]
        }
    }

    #[test]
    fn custom_perturbation_uses_finite_differences() {
        let p = MetricParams::custom(1.0, Arc::new(Quadrupole));
        let x = [7.0, -3.0, 5.0];
        let j = eval_jet(&p, x).unwrap();
        let h = 1e-5;
        for c in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            let gp = p.metric(xp).unwrap();
            let gm = p.metric(xm).unwrap();
            for a in 0..3 {
                for b in 0..3 {
                    assert!(((gp[a][b] - gm[a][b]) / (2.0 * h) - j.dg[c][a][b]).abs() < 1e-9);
                }
            }
        }
        assert!(j.ricci_reconstruction_residual() < 1e-9);
        let worst = p.audit_custom_decay(50, 5.0, 100.0, 3).unwrap();
        assert!(worst.iter().all(|w| *w <= 1.0), "{worst:?}");
    }
}
