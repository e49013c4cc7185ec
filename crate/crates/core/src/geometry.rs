//! Extrinsic geometry of radial graphs in the ambient metric.
//!
//! Every node is treated independently: the radius function is expanded as a
//! Taylor polynomial in (θ, φ) from its spectral derivatives, the ambient
//! metric is expanded around the node's position, and the two are composed.
//! All surface quantities (induced metric, normal, second fundamental form,
//! Christoffel symbols and their covariant derivatives) then follow from jet
//! arithmetic. Surface index 0 is θ and index 1 is φ.
//!
//! The second fundamental form is `h_ij = −⟨ν, ∇̄_{∂_i}∂_j X⟩` for the outward
//! normal, so round spheres have positive curvature.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{inverse2, Jet, JetSpace, Monomials};
use crate::metric::{AmbientTaylor, MetricParams};
use crate::sphere::{RadialGraph, TAYLOR_LEN};

/// Derivative depth of a geometry evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    /// Fundamental forms and curvatures.
    Curvature,
    /// Adds first covariant derivatives and the Codazzi/Gauss residuals.
    Gradient,
    /// Adds second covariant derivatives, the divergences of F^{kl} and the
    /// Simons residual.
    Full,
}

impl Level {
    fn surface_order(self) -> usize {
        match self {
            Level::Curvature => 2,
            Level::Gradient => 3,
            Level::Full => 4,
        }
    }
}

pub type Mat2 = [[f64; 2]; 2];

/// Pointwise extrinsic data.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct NodeExtrinsic {
    pub point: [f64; 3],
    pub tangents: [[f64; 3]; 2],
    pub g: Mat2,
    pub ginv: Mat2,
    pub h: Mat2,
    /// Outward unit normal (vector components).
    pub nu: [f64; 3],
    /// Lowered normal `ḡ(ν, ·)`.
    pub nu_cov: [f64; 3],
    /// Principal curvatures, `λ₁ ≤ λ₂`.
    pub lambda: [f64; 2],
    pub mean: f64,
    pub gauss_kronecker: f64,
    pub a2: f64,
    pub f: f64,
    pub aring: Mat2,
    pub aring_norm: f64,
    pub area_density: f64,
    /// `ḡ(n̂, ν)` with the Euclidean unit radial vector `n̂`.
    pub radial_dot: f64,
    /// `ḡ(n̂, ν)/|n̂|_ḡ`.
    pub radial_cosine: f64,
}

/// Derivative data and identity residuals at a node.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct NodeDerivatives {
    pub f_kl: Mat2,
    pub f_klpq: [[Mat2; 2]; 2],
    pub grad_f: [f64; 2],
    pub grad_mean: [f64; 2],
    /// `grad_h[k][i][j] = ∇_k h_ij`.
    pub grad_h: [[[f64; 2]; 2]; 2],
    pub grad_aring: [[[f64; 2]; 2]; 2],
    pub grad_aring_norm: f64,
    pub grad_a_norm2: f64,
    pub grad_mean_norm2: f64,
    /// `w_i = R̄_{3lil} = −R̄ic(ν, ∂_i)`.
    pub w: [f64; 2],
    pub w_norm2: f64,
    /// Surface Christoffel symbols `Γ^k_ij`, stored `[k][i][j]`.
    pub christoffel: [[[f64; 2]; 2]; 2],
    pub intrinsic_k: f64,
    pub ambient_sectional: f64,
    pub gauss_residual: f64,
    pub codazzi_residual: f64,
    pub codazzi_scale: f64,
    pub full: Option<FullTerms>,
}

/// Second-derivative quantities available at [`Level::Full`].
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FullTerms {
    pub hess_f: Mat2,
    pub hess_mean: Mat2,
    pub laplace_f: f64,
    pub laplace_mean: f64,
    /// `𝓛F = F^{kl}∇_k∇_l F`.
    pub l_operator_f: f64,
    /// `F^{ij}_{,i}` (a vector, index `j`).
    pub div_f_kl: [f64; 2],
    /// `F^{ij}_{,ij}`.
    pub div2_f_kl: f64,
    /// `F^{kl} R̄_{3k3l}`.
    pub f_r3k3l: f64,
    /// `R̄_{3i3j}`.
    pub r3i3j: Mat2,
    pub ric_nu_nu: f64,
    pub hess_a_norm2: f64,
    pub hess_mean_norm2: f64,
    pub grad_w_norm2: f64,
    pub simons_residual: f64,
    pub simons_scale: f64,
}

#[derive(Clone, Debug)]
pub struct ExtrinsicField {
    pub nodes: Vec<NodeExtrinsic>,
}

#[derive(Clone, Debug)]
pub struct FDerivatives {
    pub level: Level,
    pub nodes: Vec<NodeDerivatives>,
}

/// Combined output of a geometry pass.
#[derive(Clone, Debug)]
pub struct SurfaceGeometry {
    pub level: Level,
    pub ext: ExtrinsicField,
    pub der: Option<FDerivatives>,
}

impl ExtrinsicField {
    pub fn field(&self, f: impl Fn(&NodeExtrinsic) -> f64) -> Vec<f64> {
        self.nodes.iter().map(f).collect()
    }

    pub fn f_values(&self) -> Vec<f64> {
        self.field(|n| n.f)
    }

    pub fn area_density(&self) -> Vec<f64> {
        self.field(|n| n.area_density)
    }

    pub fn max_aring(&self) -> f64 {
        self.nodes.iter().map(|n| n.aring_norm).fold(0.0, f64::max)
    }

    /// `max |F^{kl}h_kl − F|` over nodes, using the closed-form F^{kl}.
    pub fn max_trace_identity_error(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| {
                let fk = f_first_derivative(&n.ginv, &n.h);
                (contract2(&fk, &n.h) - n.f).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `max |F^{kl}h_mk h^m_l − 2F²|` over nodes.
    pub fn max_square_identity_error(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| {
                let fk = f_first_derivative(&n.ginv, &n.h);
                let hh = lower_square(&n.h, &n.ginv);
                (contract2(&fk, &hh) - 2.0 * n.f * n.f).abs()
            })
            .fold(0.0, f64::max)
    }
}

impl FDerivatives {
    pub fn max_grad_aring(&self) -> f64 {
        self.nodes.iter().map(|n| n.grad_aring_norm).fold(0.0, f64::max)
    }
}

/// `F = K/H` from the induced metric inverse and the second fundamental form.
pub fn harmonic_mean_curvature(ginv: &Mat2, h: &Mat2) -> f64 {
    let (hm, k) = mean_and_gauss(ginv, h);
    k / hm
}

fn mean_and_gauss(ginv: &Mat2, h: &Mat2) -> (f64, f64) {
    let w = mixed(ginv, h);
    (w[0][0] + w[1][1], w[0][0] * w[1][1] - w[0][1] * w[1][0])
}

/// Shape operator `W^i_j = g^{ik}h_kj`.
fn mixed(ginv: &Mat2, h: &Mat2) -> Mat2 {
    let mut w = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            w[i][j] = ginv[i][0] * h[0][j] + ginv[i][1] * h[1][j];
        }
    }
    w
}

/// `h^{kl} = g^{ka}g^{lb}h_ab`.
fn raise2(ginv: &Mat2, h: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for k in 0..2 {
        for l in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    out[k][l] += ginv[k][a] * ginv[l][b] * h[a][b];
                }
            }
        }
    }
    out
}

/// `(h g^{-1} h)_ij`.
fn lower_square(h: &Mat2, ginv: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    out[i][j] += h[i][a] * ginv[a][b] * h[b][j];
                }
            }
        }
    }
    out
}

fn contract2(a: &Mat2, b: &Mat2) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

/// `F^{kl} = ∂F/∂h_kl = (1 − K/H²) g^{kl} − h^{kl}/H`.
///
/// This is the Cayley–Hamilton form of the principal-frame expression
/// `diag(λ₂², λ₁²)/(λ₁+λ₂)²`; it is smooth across umbilic points.
pub fn f_first_derivative(ginv: &Mat2, h: &Mat2) -> Mat2 {
    let (hm, k) = mean_and_gauss(ginv, h);
    let hu = raise2(ginv, h);
    let a = 1.0 - k / (hm * hm);
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a * ginv[i][j] - hu[i][j] / hm;
        }
    }
    out
}

/// `F^{kl,pq} = ∂²F/∂h_kl∂h_pq`, stored `[k][l][p][q]`.
pub fn f_second_derivative(ginv: &Mat2, h: &Mat2) -> [[Mat2; 2]; 2] {
    let (hm, k) = mean_and_gauss(ginv, h);
    let hu = raise2(ginv, h);
    let h2 = hm * hm;
    let h3 = h2 * hm;
    let mut out = [[[[0.0; 2]; 2]; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            for p in 0..2 {
                for q in 0..2 {
                    let dk_term = (hm * ginv[p][q] - hu[p][q]) / h2 - 2.0 * k * ginv[p][q] / h3;
                    out[a][b][p][q] = -ginv[a][b] * dk_term
                        - 0.5 * (ginv[a][p] * ginv[b][q] + ginv[a][q] * ginv[b][p]) / hm
                        + hu[a][b] * ginv[p][q] / h2;
                }
            }
        }
    }
    out
}

/// Sorted eigenvalues of the shape operator, with the discriminant clamped at 0.
pub fn principal_curvatures(ginv: &Mat2, h: &Mat2) -> [f64; 2] {
    let w = mixed(ginv, h);
    let hm = w[0][0] + w[1][1];
    let half = 0.5 * (w[0][0] - w[1][1]);
    let disc = (half * half + w[0][1] * w[1][0]).max(0.0).sqrt();
    [0.5 * hm - disc, 0.5 * hm + disc]
}

type J<const N: usize> = Jet<N>;

/// Surface jets shared by all levels.
struct SurfaceJets<const NS: usize> {
    dx: [J<NS>; 3],
    xd: [[J<NS>; 3]; 2],
    g: [[J<NS>; 2]; 2],
    ginv: [[J<NS>; 2]; 2],
    det_g: J<NS>,
    nu: [J<NS>; 3],
    nu_cov: [J<NS>; 3],
    h: [[J<NS>; 2]; 2],
}

fn val2<const N: usize>(m: &[[J<N>; 2]; 2]) -> Mat2 {
    [[m[0][0].value(), m[0][1].value()], [m[1][0].value(), m[1][1].value()]]
}

fn val3v<const N: usize>(v: &[J<N>; 3]) -> [f64; 3] {
    [v[0].value(), v[1].value(), v[2].value()]
}

/// Node-local evaluation context.
struct NodeInput<'a> {
    taylor: &'a [f64; TAYLOR_LEN],
    theta: f64,
    phi: f64,
    sin_theta: f64,
    sigma: f64,
    node: usize,
}

fn surface_jets<const NA: usize, const NS: usize>(
    params: &MetricParams,
    inp: &NodeInput,
    s_order: usize,
) -> Result<(SurfaceJets<NS>, AmbientTaylor<NA>, Monomials<NS>, [f64; 3], [[J<NS>; 3]; 3], [J<NS>; 3])> {
    let sp = JetSpace::get(2, s_order);
    let a_order = s_order - 1;
    let th = J::<NS>::variable(sp, 0, inp.theta);
    let ph = J::<NS>::variable(sp, 1, inp.phi);
    let (st, ct) = (th.sin(), th.cos());
    let (sp_, cp) = (ph.sin(), ph.cos());
    let dir = [st * cp, st * sp_, ct];
    // taylor slots of the order-4 layout coincide with lower orders on the prefix
    let rho = J::<NS>::from_coeffs(sp, &inp.taylor[..sp.len]);
    let x = [rho * dir[0], rho * dir[1], rho * dir[2]];
    let x0 = val3v(&x);
    let mut dx = x;
    for v in dx.iter_mut() {
        v.c[0] = 0.0;
    }
    let amb = AmbientTaylor::<NA>::new(params, x0, a_order)?;
    let mono = Monomials::new(amb.g[0][0].space, &dx);
    let zero = J::<NS>::constant(sp, 0.0);
    let mut gbar = [[zero; 3]; 3];
    let mut gbar_inv = [[zero; 3]; 3];
    for a in 0..3 {
        for b in a..3 {
            gbar[a][b] = amb.g[a][b].substitute(&dx, &mono);
            gbar[b][a] = gbar[a][b];
            gbar_inv[a][b] = amb.ginv[a][b].substitute(&dx, &mono);
            gbar_inv[b][a] = gbar_inv[a][b];
        }
    }
    let mut gam = [[[zero; 3]; 3]; 3];
    for c in 0..3 {
        for a in 0..3 {
            for b in a..3 {
                gam[c][a][b] = amb.gamma[c][a][b].substitute(&dx, &mono);
                gam[c][b][a] = gam[c][a][b];
            }
        }
    }
    let xd = [[x[0].d(0), x[1].d(0), x[2].d(0)], [x[0].d(1), x[1].d(1), x[2].d(1)]];
    let mut g = [[zero; 2]; 2];
    for i in 0..2 {
        for j in i..2 {
            let mut v = zero;
            for a in 0..3 {
                for b in 0..3 {
                    v += xd[i][a] * gbar[a][b] * xd[j][b];
                }
            }
            g[i][j] = v;
            g[j][i] = v;
        }
    }
    let (ginv, det_g) = inverse2(&g);
    let n = [
        xd[0][1] * xd[1][2] - xd[0][2] * xd[1][1],
        xd[0][2] * xd[1][0] - xd[0][0] * xd[1][2],
        xd[0][0] * xd[1][1] - xd[0][1] * xd[1][0],
    ];
    let mut nn = zero;
    for a in 0..3 {
        for b in 0..3 {
            nn += gbar_inv[a][b] * n[a] * n[b];
        }
    }
    let inv_norm = nn.powf(-0.5);
    let nu_cov = [n[0] * inv_norm, n[1] * inv_norm, n[2] * inv_norm];
    let mut nu = [zero; 3];
    for a in 0..3 {
        nu[a] = gbar_inv[a][0] * nu_cov[0] + gbar_inv[a][1] * nu_cov[1] + gbar_inv[a][2] * nu_cov[2];
    }
    let mut h = [[zero; 2]; 2];
    for i in 0..2 {
        for j in i..2 {
            let mut v = zero;
            for c in 0..3 {
                let mut d = xd[i][c].d(j);
                for a in 0..3 {
                    for b in 0..3 {
                        d += gam[c][a][b] * xd[i][a] * xd[j][b];
                    }
                }
                v -= nu_cov[c] * d;
            }
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    let dir0 = [inp.sin_theta * inp.phi.cos(), inp.sin_theta * inp.phi.sin(), inp.theta.cos()];
    Ok((
        SurfaceJets {
            dx,
            xd,
            g,
            ginv,
            det_g,
            nu,
            nu_cov,
            h,
        },
        amb,
        mono,
        dir0,
        gbar,
        dir,
    ))
}

fn extrinsic_from<const NS: usize>(
    sj: &SurfaceJets<NS>,
    gbar: &[[J<NS>; 3]; 3],
    dir0: [f64; 3],
    inp: &NodeInput,
    point: [f64; 3],
) -> Result<NodeExtrinsic> {
    let g = val2(&sj.g);
    let ginv = val2(&sj.ginv);
    let h = val2(&sj.h);
    let (hm, k) = mean_and_gauss(&ginv, &h);
    if !(hm > 1e-6 / inp.sigma) {
        return Err(Error::MeanConvexity { node: inp.node, h: hm });
    }
    let w = mixed(&ginv, &h);
    let a2 = w[0][0] * w[0][0] + w[1][1] * w[1][1] + 2.0 * w[0][1] * w[1][0];
    let f = k / hm;
    if !f.is_finite() {
        return Err(Error::FSingularity { node: inp.node });
    }
    let mut aring = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            aring[i][j] = h[i][j] - 0.5 * hm * g[i][j];
        }
    }
    let aring_norm = contract2(&raise2(&ginv, &aring), &aring).max(0.0).sqrt();
    let nu_cov = val3v(&sj.nu_cov);
    let radial_dot = dir0[0] * nu_cov[0] + dir0[1] * nu_cov[1] + dir0[2] * nu_cov[2];
    let mut nn = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            nn += dir0[a] * gbar[a][b].value() * dir0[b];
        }
    }
    Ok(NodeExtrinsic {
        point,
        tangents: [val3v(&sj.xd[0]), val3v(&sj.xd[1])],
        g,
        ginv,
        h,
        nu: val3v(&sj.nu),
        nu_cov,
        lambda: principal_curvatures(&ginv, &h),
        mean: hm,
        gauss_kronecker: k,
        a2,
        f,
        aring,
        aring_norm,
        area_density: sj.det_g.value().sqrt() / inp.sin_theta,
        radial_dot,
        radial_cosine: radial_dot / nn.sqrt(),
    })
}

/// Surface Christoffel symbols `Γ^k_ij` as jets.
fn christoffel<const NS: usize>(g: &[[J<NS>; 2]; 2], ginv: &[[J<NS>; 2]; 2]) -> [[[J<NS>; 2]; 2]; 2] {
    let zero = g[0][0].constant_like(0.0);
    let mut dg = [[[zero; 2]; 2]; 2];
    for c in 0..2 {
        for a in 0..2 {
            for b in 0..2 {
                dg[c][a][b] = g[a][b].d(c);
            }
        }
    }
    let mut lower = [[[zero; 2]; 2]; 2];
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                lower[k][i][j] = (dg[i][j][k] + dg[j][i][k] - dg[k][i][j]) * 0.5;
            }
        }
    }
    let mut out = [[[zero; 2]; 2]; 2];
    for m in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                out[m][i][j] = ginv[m][0] * lower[0][i][j] + ginv[m][1] * lower[1][i][j];
            }
        }
    }
    out
}

/// `∇_k T_ij` of a symmetric 2-tensor, stored `[k][i][j]`.
fn cov_deriv2<const NS: usize>(t: &[[J<NS>; 2]; 2], gam: &[[[J<NS>; 2]; 2]; 2]) -> [[[J<NS>; 2]; 2]; 2] {
    let zero = t[0][0].constant_like(0.0);
    let mut out = [[[zero; 2]; 2]; 2];
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                let mut v = t[i][j].d(k);
                for m in 0..2 {
                    v -= gam[m][k][i] * t[m][j] + gam[m][k][j] * t[i][m];
                }
                out[k][i][j] = v;
            }
        }
    }
    out
}

/// Hessian `∇_i∇_j u` of a scalar jet.
fn hessian<const NS: usize>(u: &J<NS>, gam: &[[[J<NS>; 2]; 2]; 2]) -> [[J<NS>; 2]; 2] {
    let du = [u.d(0), u.d(1)];
    let zero = u.constant_like(0.0);
    let mut out = [[zero; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = du[i].d(j) - gam[0][i][j] * du[0] - gam[1][i][j] * du[1];
        }
    }
    out
}

fn norm2_3(t: &[[[f64; 2]; 2]; 2], gi: &Mat2) -> f64 {
    let mut s = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                for p in 0..2 {
                    for q in 0..2 {
                        for r in 0..2 {
                            s += gi[a][p] * gi[b][q] * gi[c][r] * t[a][b][c] * t[p][q][r];
                        }
                    }
                }
            }
        }
    }
    s
}

fn norm2_2(t: &Mat2, gi: &Mat2) -> f64 {
    contract2(&raise2(gi, t), t)
}

fn norm2_1(v: &[f64; 2], gi: &Mat2) -> f64 {
    let mut s = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            s += gi[a][b] * v[a] * v[b];
        }
    }
    s
}

fn riemann_frame(r: &[[[[f64; 3]; 3]; 3]; 3], e: &[[f64; 3]; 3]) -> [[[[f64; 3]; 3]; 3]; 3] {
    // contract one slot at a time to keep the cost at 4·3⁵
    let mut t1 = [[[[0.0; 3]; 3]; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                for d in 0..3 {
                    let mut s = 0.0;
                    for x in 0..3 {
                        s += e[a][x] * r[x][b][c][d];
                    }
                    t1[a][b][c][d] = s;
                }
            }
        }
    }
    let mut t2 = [[[[0.0; 3]; 3]; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                for d in 0..3 {
                    let mut s = 0.0;
                    for x in 0..3 {
                        s += e[b][x] * t1[a][x][c][d];
                    }
                    t2[a][b][c][d] = s;
                }
            }
        }
    }
    let mut t3 = [[[[0.0; 3]; 3]; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                for d in 0..3 {
                    let mut s = 0.0;
                    for x in 0..3 {
                        s += e[c][x] * t2[a][b][x][d];
                    }
                    t3[a][b][c][d] = s;
                }
            }
        }
    }
    let mut t4 = [[[[0.0; 3]; 3]; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                for d in 0..3 {
                    let mut s = 0.0;
                    for x in 0..3 {
                        s += e[d][x] * t3[a][b][c][x];
                    }
                    t4[a][b][c][d] = s;
                }
            }
        }
    }
    t4
}

fn derivative_terms<const NA: usize, const NS: usize>(
    sj: &SurfaceJets<NS>,
    amb: &AmbientTaylor<NA>,
    mono: &Monomials<NS>,
    ext: &NodeExtrinsic,
    full: bool,
) -> NodeDerivatives {
    let gi = ext.ginv;
    let gam = christoffel(&sj.g, &sj.ginv);
    let gam_v = gam.map(|a| a.map(|b| b.map(|j| j.value())));
    let zero = sj.g[0][0].constant_like(0.0);

    // mean curvature and F as jets
    let mut hu = [[zero; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            hu[i][j] = sj.ginv[i][0] * sj.h[0][j] + sj.ginv[i][1] * sj.h[1][j];
        }
    }
    let hm = hu[0][0] + hu[1][1];
    let kk = hu[0][0] * hu[1][1] - hu[0][1] * hu[1][0];
    let fj = kk / hm;

    let dh = cov_deriv2(&sj.h, &gam);
    let dh_v = dh.map(|a| a.map(|b| b.map(|j| j.value())));
    let grad_mean = [hm.d(0).value(), hm.d(1).value()];
    let grad_f = [fj.d(0).value(), fj.d(1).value()];
    let mut grad_aring = dh_v;
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                grad_aring[k][i][j] -= 0.5 * grad_mean[k] * ext.g[i][j];
            }
        }
    }

    // ambient curvature on the frame (ν, X_θ, X_φ)
    let rj = amb.riemann();
    let rv = rj.map(|a| a.map(|b| b.map(|c| c.map(|d| d.value()))));
    let frame = [ext.nu, ext.tangents[0], ext.tangents[1]];
    let rf = riemann_frame(&rv, &frame);
    let ric_v = {
        let ric = amb.ricci(&rj);
        ric.map(|r| r.map(|j| j.value()))
    };
    let ric_on = |u: [f64; 3], v: [f64; 3]| {
        let mut s = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                s += ric_v[a][b] * u[a] * v[b];
            }
        }
        s
    };
    let w = [-ric_on(ext.nu, ext.tangents[0]), -ric_on(ext.nu, ext.tangents[1])];

    // Codazzi: ∇_k h_ij − ∇_j h_ik + R̄(ν, ∂_i, ∂_j, ∂_k) = 0
    let mut cod = [[[0.0; 2]; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                cod[i][j][k] = dh_v[k][i][j] - dh_v[j][i][k] + rf[0][i + 1][j + 1][k + 1];
            }
        }
    }
    let mut dh_ijk = [[[0.0; 2]; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                dh_ijk[i][j][k] = dh_v[k][i][j];
            }
        }
    }

    // Gauss: intrinsic curvature from the induced metric
    let det_g = sj.det_g.value();
    let mut r0110 = 0.0;
    for e in 0..2 {
        let mut q = gam[e][1][1].d(0).value() - gam[e][0][1].d(1).value();
        for f in 0..2 {
            q += gam_v[e][0][f] * gam_v[f][1][1] - gam_v[e][1][f] * gam_v[f][0][1];
        }
        r0110 += ext.g[0][e] * q;
    }
    let intrinsic_k = r0110 / det_g;
    let ambient_sectional = rf[1][2][2][1] / det_g;
    let gauss_residual = intrinsic_k - ambient_sectional - ext.gauss_kronecker;

    let f_kl = f_first_derivative(&gi, &ext.h);
    let f_klpq = f_second_derivative(&gi, &ext.h);

    let mut out = NodeDerivatives {
        f_kl,
        f_klpq,
        grad_f,
        grad_mean,
        grad_h: dh_v,
        grad_aring,
        grad_aring_norm: norm2_3(&grad_aring, &gi).max(0.0).sqrt(),
        grad_a_norm2: norm2_3(&dh_v, &gi),
        grad_mean_norm2: norm2_1(&grad_mean, &gi),
        w,
        w_norm2: norm2_1(&w, &gi),
        christoffel: gam_v,
        intrinsic_k,
        ambient_sectional,
        gauss_residual,
        codazzi_residual: norm2_3(&cod, &gi).max(0.0).sqrt(),
        codazzi_scale: norm2_3(&dh_ijk, &gi).max(0.0).sqrt(),
        full: None,
    };
    if !full {
        return out;
    }

    // second derivatives
    let mut ddh = [[[[0.0; 2]; 2]; 2]; 2];
    for l in 0..2 {
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut v = dh[k][i][j].d(l).value();
                    for m in 0..2 {
                        v -= gam_v[m][l][k] * dh_v[m][i][j]
                            + gam_v[m][l][i] * dh_v[k][m][j]
                            + gam_v[m][l][j] * dh_v[k][i][m];
                    }
                    ddh[l][k][i][j] = v;
                }
            }
        }
    }
    let hess_f = val2(&hessian(&fj, &gam));
    let hess_mean = val2(&hessian(&hm, &gam));

    // F^{kl} as jets and its divergences
    let mut h_up = [[zero; 2]; 2];
    for k in 0..2 {
        for l in 0..2 {
            let mut v = zero;
            for a in 0..2 {
                for b in 0..2 {
                    v += sj.ginv[k][a] * sj.ginv[l][b] * sj.h[a][b];
                }
            }
            h_up[k][l] = v;
        }
    }
    let coef = (kk / (hm * hm) - 1.0) * -1.0;
    let inv_h = hm.recip();
    let mut fkl_j = [[zero; 2]; 2];
    for k in 0..2 {
        for l in 0..2 {
            fkl_j[k][l] = coef * sj.ginv[k][l] - h_up[k][l] * inv_h;
        }
    }
    // V^j = ∇_i F^{ij}
    let mut vj = [zero; 2];
    for j in 0..2 {
        let mut v = zero;
        for i in 0..2 {
            v += fkl_j[i][j].d(i);
            for m in 0..2 {
                v += gam[i][i][m] * fkl_j[m][j] + gam[j][i][m] * fkl_j[i][m];
            }
        }
        vj[j] = v;
    }
    let mut div2 = 0.0;
    for j in 0..2 {
        div2 += vj[j].d(j).value();
        for m in 0..2 {
            div2 += gam_v[j][j][m] * vj[m].value();
        }
    }
    let div_f_kl = [vj[0].value(), vj[1].value()];

    // w_i = −R̄ic(ν, X_i) along the surface
    let ric = amb.ricci(&rj);
    let mut ric_s = [[zero; 3]; 3];
    for a in 0..3 {
        for b in a..3 {
            ric_s[a][b] = ric[a][b].substitute(&sj.dx, mono);
            ric_s[b][a] = ric_s[a][b];
        }
    }
    let mut wj = [zero; 2];
    for i in 0..2 {
        let mut v = zero;
        for a in 0..3 {
            for b in 0..3 {
                v -= ric_s[a][b] * sj.nu[a] * sj.xd[i][b];
            }
        }
        wj[i] = v;
    }
    let mut grad_w = [[0.0; 2]; 2];
    for k in 0..2 {
        for i in 0..2 {
            grad_w[k][i] = wj[i].d(k).value() - gam_v[0][k][i] * w[0] - gam_v[1][k][i] * w[1];
        }
    }

    // Simons identity in the coordinate frame
    let h = ext.h;
    let hh = lower_square(&h, &gi);
    let hmix_low = |a: usize, m: usize| h[a][0] * gi[0][m] + h[a][1] * gi[1][m];
    let f_trace = contract2(&f_kl, &h);
    let f_hh = contract2(&f_kl, &hh);
    let r3 = |i: usize, j: usize| rf[0][i + 1][0][j + 1];
    let f_r3k3l = (0..2).map(|k| (0..2).map(|l| f_kl[k][l] * r3(k, l)).sum::<f64>()).sum::<f64>();
    let x = ext.tangents;
    let nr = &dr_frame(amb, &frame, &x, &gam_amb_values(amb));
    let mut residual = [[0.0; 2]; 2];
    let mut scale = 0.0f64;
    let mut lhs_m = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut lhs = 0.0;
            let mut t6 = 0.0;
            let mut t7 = 0.0;
            let mut t8 = 0.0;
            for k in 0..2 {
                for l in 0..2 {
                    let fk = f_kl[k][l];
                    lhs += fk * ddh[l][k][i][j];
                    let mut s = 0.0;
                    for m in 0..2 {
                        s += hmix_low(j, m) * rf[m + 1][k + 1][l + 1][i + 1]
                            + hmix_low(i, m) * rf[m + 1][k + 1][l + 1][j + 1]
                            - 2.0 * hmix_low(k, m) * rf[m + 1][j + 1][i + 1][l + 1];
                    }
                    t6 += fk * s;
                    t7 += fk * (nr[l][0][j + 1][k + 1][i + 1] + nr[i][0][k + 1][l + 1][j + 1]);
                    for p in 0..2 {
                        for q in 0..2 {
                            t8 -= f_klpq[k][l][p][q] * dh_v[i][p][q] * dh_v[j][k][l];
                        }
                    }
                }
            }
            let t1 = hess_f[i][j];
            let t2 = f_trace * hh[i][j];
            let t3 = -f_hh * h[i][j];
            let t4 = -f_trace * r3(i, j);
            let t5 = h[i][j] * f_r3k3l;
            residual[i][j] = lhs - (t1 + t2 + t3 + t4 + t5 + t6 + t7 + t8);
            lhs_m[i][j] = lhs;
            scale = scale
                .max(lhs.abs())
                .max(t1.abs())
                .max(t2.abs())
                .max(t3.abs())
                .max(t6.abs())
                .max(t7.abs())
                .max(t8.abs());
        }
    }
    let _ = lhs_m;
    let scale_norm = scale * (gi[0][0] * gi[1][1]).sqrt().max(gi[0][0]).max(gi[1][1]);
    let mut r3m = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            r3m[i][j] = r3(i, j);
        }
    }
    let ric_nu_nu = ric_on(ext.nu, ext.nu);
    out.full = Some(FullTerms {
        hess_f,
        hess_mean,
        laplace_f: contract2(&gi, &hess_f),
        laplace_mean: contract2(&gi, &hess_mean),
        l_operator_f: contract2(&f_kl, &hess_f),
        div_f_kl,
        div2_f_kl: div2,
        f_r3k3l,
        r3i3j: r3m,
        ric_nu_nu,
        hess_a_norm2: {
            let mut s = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    for c in 0..2 {
                        for d in 0..2 {
                            for p in 0..2 {
                                for q in 0..2 {
                                    for r in 0..2 {
                                        for t in 0..2 {
                                            s += gi[a][p] * gi[b][q] * gi[c][r] * gi[d][t] * ddh[a][b][c][d] * ddh[p][q][r][t];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            s
        },
        hess_mean_norm2: norm2_2(&hess_mean, &gi),
        grad_w_norm2: norm2_2(&grad_w, &gi),
        simons_residual: norm2_2(&residual, &gi).max(0.0).sqrt(),
        simons_scale: scale_norm,
    });
    out
}

fn gam_amb_values<const NA: usize>(amb: &AmbientTaylor<NA>) -> [[[f64; 3]; 3]; 3] {
    amb.gamma.map(|a| a.map(|b| b.map(|j| j.value())))
}

/// `(∇̄_{X_e} R̄)(E_a, E_b, E_c, E_d)` for `e` over the two tangents and the
/// frame `E = (ν, X_θ, X_φ)`.
fn dr_frame<const NA: usize>(
    amb: &AmbientTaylor<NA>,
    frame: &[[f64; 3]; 3],
    x: &[[f64; 3]; 2],
    gamma: &[[[f64; 3]; 3]; 3],
) -> [[[[[f64; 3]; 3]; 3]; 3]; 2] {
    let rj = amb.riemann();
    let rv = rj.map(|a| a.map(|b| b.map(|c| c.map(|d| d.value()))));
    let mut out = [[[[[0.0; 3]; 3]; 3]; 3]; 2];
    for (e, xe) in x.iter().enumerate() {
        // covariant derivative in the direction xe
        let mut nab = [[[[0.0; 3]; 3]; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        let mut v = 0.0;
                        for (q, xq) in xe.iter().enumerate() {
                            if *xq == 0.0 {
                                continue;
                            }
                            let mut dq = rj[a][b][c][d].derivative(unit(q));
                            for f in 0..3 {
                                dq -= gamma[f][q][a] * rv[f][b][c][d]
                                    + gamma[f][q][b] * rv[a][f][c][d]
                                    + gamma[f][q][c] * rv[a][b][f][d]
                                    + gamma[f][q][d] * rv[a][b][c][f];
                            }
                            v += xq * dq;
                        }
                        nab[a][b][c][d] = v;
                    }
                }
            }
        }
        out[e] = riemann_frame(&nab, frame);
    }
    out
}

fn unit(q: usize) -> [u8; 3] {
    let mut e = [0u8; 3];
    e[q] = 1;
    e
}

/// First-order data of a radial deformation `X ↦ X + ε w n̂`, split as
/// `w n̂ = u ν + T` into normal and tangential parts.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RadialVariation {
    pub w: f64,
    /// Normal speed `u = w ḡ(n̂, ν)`.
    pub u: f64,
    pub grad_u: [f64; 2],
    pub hess_u: Mat2,
    /// `T_j = w ḡ(n̂, ∂_j X)`.
    pub t_lower: [f64; 2],
    pub t_upper: [f64; 2],
    /// `∇_i T_j + ∇_j T_i`.
    pub lie_g: Mat2,
    pub div_t: f64,
}

fn radial_variation<const NS: usize>(
    sj: &SurfaceJets<NS>,
    gbar: &[[J<NS>; 3]; 3],
    dir: &[J<NS>; 3],
    w_taylor: &[f64; TAYLOR_LEN],
    ginv: &Mat2,
) -> RadialVariation {
    let sp = sj.g[0][0].space;
    let w = J::<NS>::from_coeffs(sp, &w_taylor[..sp.len]);
    let zero = w.constant_like(0.0);
    let mut rd = zero;
    for a in 0..3 {
        rd += dir[a] * sj.nu_cov[a];
    }
    let u = w * rd;
    let mut dir_low = [zero; 3];
    for b in 0..3 {
        for a in 0..3 {
            dir_low[b] += dir[a] * gbar[a][b];
        }
    }
    let mut t = [zero; 2];
    for j in 0..2 {
        let mut v = zero;
        for b in 0..3 {
            v += dir_low[b] * sj.xd[j][b];
        }
        t[j] = w * v;
    }
    let gam = christoffel(&sj.g, &sj.ginv);
    let mut lie = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut v = t[j].d(i).value() + t[i].d(j).value();
            for m in 0..2 {
                v -= 2.0 * gam[m][i][j].value() * t[m].value();
            }
            lie[i][j] = v;
        }
    }
    let tl = [t[0].value(), t[1].value()];
    let tu = [
        ginv[0][0] * tl[0] + ginv[0][1] * tl[1],
        ginv[1][0] * tl[0] + ginv[1][1] * tl[1],
    ];
    RadialVariation {
        w: w.value(),
        u: u.value(),
        grad_u: [u.d(0).value(), u.d(1).value()],
        hess_u: val2(&hessian(&u, &gam)),
        t_lower: tl,
        t_upper: tu,
        lie_g: lie,
        div_t: 0.5 * contract2(ginv, &lie),
    }
}

type NodeResult = (NodeExtrinsic, Option<NodeDerivatives>, Option<RadialVariation>);

fn evaluate_node<const NA: usize, const NS: usize>(
    params: &MetricParams,
    inp: &NodeInput,
    level: Level,
    w_taylor: Option<&[f64; TAYLOR_LEN]>,
) -> Result<NodeResult> {
    let order = level.surface_order();
    let (sj, amb, mono, dir0, gbar, dir) = surface_jets::<NA, NS>(params, inp, order)?;
    let point = [
        dir0[0] * inp.taylor[0],
        dir0[1] * inp.taylor[0],
        dir0[2] * inp.taylor[0],
    ];
    let ext = extrinsic_from(&sj, &gbar, dir0, inp, point)?;
    let der = match level {
        Level::Curvature => None,
        Level::Gradient => Some(derivative_terms(&sj, &amb, &mono, &ext, false)),
        Level::Full => Some(derivative_terms(&sj, &amb, &mono, &ext, true)),
    };
    let var = w_taylor.map(|wt| radial_variation(&sj, &gbar, &dir, wt, &ext.ginv));
    Ok((ext, der, var))
}

fn evaluate_impl(
    graph: &RadialGraph,
    params: &MetricParams,
    level: Level,
    w_coeffs: Option<&[f64]>,
) -> Result<(SurfaceGeometry, Option<Vec<RadialVariation>>)> {
    let grid = &graph.grid;
    let order = level.surface_order();
    let table = grid.taylor_table(&graph.coeffs, order);
    let w_table = w_coeffs.map(|w| grid.taylor_table(w, order));
    let sigma = graph.sigma_label;
    let results: Result<Vec<NodeResult>> = table
        .par_iter()
        .enumerate()
        .map(|(node, taylor)| {
            let (j, k) = grid.node_lat_lon(node);
            let inp = NodeInput {
                taylor,
                theta: grid.theta[j],
                phi: grid.phi[k],
                sin_theta: grid.sin_theta[j],
                sigma,
                node,
            };
            let wt = w_table.as_ref().map(|t| &t[node]);
            match level {
                Level::Curvature => evaluate_node::<4, 6>(params, &inp, level, wt),
                Level::Gradient => evaluate_node::<10, 10>(params, &inp, level, wt),
                Level::Full => evaluate_node::<20, 15>(params, &inp, level, wt),
            }
        })
        .collect();
    let results = results?;
    let n = results.len();
    let mut ext = Vec::with_capacity(n);
    let mut der = Vec::with_capacity(n);
    let mut var = Vec::with_capacity(n);
    for (e, d, v) in results {
        ext.push(e);
        if let Some(d) = d {
            der.push(d);
        }
        if let Some(v) = v {
            var.push(v);
        }
    }
    let geo = SurfaceGeometry {
        level,
        ext: ExtrinsicField { nodes: ext },
        der: if level == Level::Curvature {
            None
        } else {
            Some(FDerivatives { level, nodes: der })
        },
    };
    Ok((geo, w_coeffs.map(|_| var)))
}

/// Evaluates the geometry of a radial graph at every node.
pub fn evaluate(graph: &RadialGraph, params: &MetricParams, level: Level) -> Result<SurfaceGeometry> {
    Ok(evaluate_impl(graph, params, level, None)?.0)
}

/// Geometry together with the normal/tangential split of the radial field
/// with spectral coefficients `w_coeffs`. Requires [`Level::Gradient`] or
/// finer for a usable Hessian of `u`.
pub fn evaluate_with_variation(
    graph: &RadialGraph,
    params: &MetricParams,
    level: Level,
    w_coeffs: &[f64],
) -> Result<(SurfaceGeometry, Vec<RadialVariation>)> {
    if w_coeffs.len() != graph.coeffs.len() {
        return Err(Error::Usage(format!(
            "variation has {} coefficients, surface has {}",
            w_coeffs.len(),
            graph.coeffs.len()
        )));
    }
    let (geo, var) = evaluate_impl(graph, params, level, Some(w_coeffs))?;
    Ok((geo, var.unwrap_or_default()))
}

/// Fundamental forms, curvatures and F at every node.
pub fn compute_extrinsic(graph: &RadialGraph, params: &MetricParams) -> Result<ExtrinsicField> {
    Ok(evaluate(graph, params, Level::Curvature)?.ext)
}

/// F-derivative tensors, covariant derivatives and identity residuals.
pub fn compute_f_derivatives(graph: &RadialGraph, params: &MetricParams) -> Result<FDerivatives> {
    Ok(evaluate(graph, params, Level::Full)?.der.expect("full level has derivatives"))
}

/// Largest Simons-identity residual norm over the nodes.
pub fn simons_residual(fder: &FDerivatives) -> f64 {
    fder.nodes
        .iter()
        .filter_map(|n| n.full.as_ref().map(|f| f.simons_residual))
        .fold(0.0, f64::max)
}

/// Largest Codazzi residual norm over the nodes.
pub fn codazzi_residual(fder: &FDerivatives) -> f64 {
    fder.nodes.iter().map(|n| n.codazzi_residual).fold(0.0, f64::max)
}

/// Largest Gauss-equation residual over the nodes.
pub fn gauss_residual(fder: &FDerivatives) -> f64 {
    fder.nodes.iter().map(|n| n.gauss_residual.abs()).fold(0.0, f64::max)
}

/// Outcome of the Kato-type gradient inequalities.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KatoReport {
    pub etas: Vec<f64>,
    /// Nodes violating the first-order inequality, per η.
    pub first_order_violations: Vec<Vec<usize>>,
    /// Nodes violating the second-order inequality, per η (empty without full data).
    pub second_order_violations: Vec<Vec<usize>>,
    /// Smallest slack `lhs − rhs` relative to `lhs + |rhs| + tiny`, first order.
    pub min_relative_slack: f64,
    pub holds: bool,
}

/// Checks `|∇^kA|² ≥ (¾−η)|∇^kH|² − (¼η⁻¹−1)|∇^{k−1}w|²` for `k = 1, 2`.
pub fn kato_inequality_check(fder: &FDerivatives) -> KatoReport {
    let etas = vec![0.1, 0.25, 0.5];
    let mut first = vec![Vec::new(); etas.len()];
    let mut second = vec![Vec::new(); etas.len()];
    let mut min_slack = f64::INFINITY;
    for (node, n) in fder.nodes.iter().enumerate() {
        for (e, &eta) in etas.iter().enumerate() {
            let rhs = (0.75 - eta) * n.grad_mean_norm2 - (0.25 / eta - 1.0) * n.w_norm2;
            let lhs = n.grad_a_norm2;
            let tol = 1e-9 * (lhs.abs() + rhs.abs()) + 1e-30;
            if lhs < rhs - tol {
                first[e].push(node);
            }
            min_slack = min_slack.min((lhs - rhs) / (lhs.abs() + rhs.abs() + 1e-300));
            if let Some(f) = &n.full {
                let rhs2 = (0.75 - eta) * f.hess_mean_norm2 - (0.25 / eta - 1.0) * f.grad_w_norm2;
                let tol2 = 1e-6 * (f.hess_a_norm2.abs() + rhs2.abs()) + 1e-30;
                if f.hess_a_norm2 < rhs2 - tol2 {
                    second[e].push(node);
                }
            }
        }
    }
    let holds = first.iter().chain(second.iter()).all(|v| v.is_empty());
    KatoReport {
        etas,
        first_order_violations: first,
        second_order_violations: second,
        min_relative_slack: min_slack,
        holds,
    }
}

/// Per-node diagnostic table: index, λ₁, λ₂, H, F, |Å|, |∇Å|.
pub fn diagnostic_csv(ext: &ExtrinsicField, fder: Option<&FDerivatives>) -> String {
    let mut s = String::from("node,lambda1,lambda2,H,F,aring_norm,grad_aring_norm\n");
    for (i, n) in ext.nodes.iter().enumerate() {
        let ga = fder.map_or(f64::NAN, |d| d.nodes[i].grad_aring_norm);
        s.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            i, n.lambda[0], n.lambda[1], n.mean, n.f, n.aring_norm, ga
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{Mode, SphericalGrid};

    #[test]
    fn closed_form_f_derivatives() {
        let gi = [[1.0, 0.0], [0.0, 1.0]];
        let h = [[1.0, 0.0], [0.0, 3.0]];
        let fk = f_first_derivative(&gi, &h);
        assert!((fk[0][0] - 9.0 / 16.0).abs() < 1e-15);
        assert!((fk[1][1] - 1.0 / 16.0).abs() < 1e-15);
        assert!(fk[0][1].abs() < 1e-15);
        let f = harmonic_mean_curvature(&gi, &h);
        assert!((f - 0.75).abs() < 1e-15);
        let hh = lower_square(&h, &gi);
        assert!((contract2(&fk, &hh) - 1.125).abs() < 1e-15);
        let u = f_first_derivative(&gi, &[[0.3, 0.0], [0.0, 0.3]]);
        assert!((u[0][0] - 0.25).abs() < 1e-15 && (u[1][1] - 0.25).abs() < 1e-15 && u[0][1].abs() < 1e-15);
    }

    #[test]
    fn second_derivative_matches_differences() {
        let gi = [[0.8, 0.1], [0.1, 1.3]];
        let h = [[0.6, 0.2], [0.2, 0.9]];
        let d2 = f_second_derivative(&gi, &h);
        let eps = 1e-6;
        for p in 0..2 {
            for q in 0..2 {
                let mut hp = h;
                let mut hmn = h;
                hp[p][q] += eps;
                hp[q][p] = hp[p][q];
                hmn[p][q] -= eps;
                hmn[q][p] = hmn[p][q];
                let a = f_first_derivative(&gi, &hp);
                let b = f_first_derivative(&gi, &hmn);
                for k in 0..2 {
                    for l in 0..2 {
                        let fd = (a[k][l] - b[k][l]) / (2.0 * eps);
                        let exact = if p == q { d2[k][l][p][q] } else { d2[k][l][p][q] + d2[k][l][q][p] };
                        assert!((fd - exact).abs() < 1e-8, "{k}{l}{p}{q}");
                    }
                }
            }
        }
    }

    #[test]
    fn flat_round_sphere() {
        let grid = SphericalGrid::new(16).unwrap();
        let s = RadialGraph::round(grid, 4.0).unwrap();
        let ext = compute_extrinsic(&s, &MetricParams::flat()).unwrap();
        for n in &ext.nodes {
            assert!((n.lambda[0] - 0.25).abs() < 1e-13 && (n.lambda[1] - 0.25).abs() < 1e-13);
            assert!((n.mean - 0.5).abs() < 1e-13);
            assert!((n.f - 0.125).abs() < 1e-13);
            assert!(n.aring_norm < 1e-13);
        }
    }

    #[test]
    fn schwarzschild_coordinate_sphere() {
        let grid = SphericalGrid::new(16).unwrap();
        let s = RadialGraph::round(grid, 10.0).unwrap();
        let ext = compute_extrinsic(&s, &MetricParams::schwarzschild(2.0)).unwrap();
        let r: f64 = 10.0;
        let hm = 2.0 / r * (1.0 - 1.0 / r) / (1.0 + 1.0 / r).powi(3);
        for n in &ext.nodes {
            assert!((n.mean / hm - 1.0).abs() < 1e-12);
            assert!((n.f / (hm / 4.0) - 1.0).abs() < 1e-12);
            assert!(n.aring_norm <= 1e-10 * n.mean);
        }
    }

    #[test]
    fn identities_on_perturbed_surfaces() {
        for params in [MetricParams::flat(), MetricParams::schwarzschild(1.0), MetricParams::conformal_dipole(1.0, [0.3, 0.1, 0.0])] {
            let grid = SphericalGrid::new(24).unwrap();
            let s = RadialGraph::with_modes(
                grid,
                12.0,
                &[
                    Mode { l: 2, m: 0, amplitude: 0.3 },
                    Mode { l: 3, m: 1, amplitude: 0.2 },
                    Mode { l: 1, m: -1, amplitude: 0.4 },
                ],
            )
            .unwrap();
            let geo = evaluate(&s, &params, Level::Full).unwrap();
            let der = geo.der.unwrap();
            let sim = simons_residual(&der);
            let cod = codazzi_residual(&der);
            let gau = gauss_residual(&der);
            let scale = der.nodes.iter().map(|n| n.full.as_ref().unwrap().simons_scale).fold(0.0, f64::max);
            assert!(sim < 1e-9 * scale.max(1e-6), "simons {sim} scale {scale}");
            assert!(cod < 1e-11, "codazzi {cod}");
            assert!(gau < 1e-11, "gauss {gau}");
            assert!(geo.ext.max_trace_identity_error() < 1e-14);
            assert!(geo.ext.max_square_identity_error() < 1e-14);
            assert!(kato_inequality_check(&der).holds);
        }
    }
}
