//! Linearized harmonic-mean-curvature operator on a surface, its adjoint and
//! symmetrization, and their low spectrum.
//!
//! With `𝓛u = F^{kl}∇_k∇_l u` and `q = 2F² − F^{kl}R̄(ν,∂_k,ν,∂_l)`:
//!
//! * `L u = −(𝓛u + q u)`, the derivative of `F` under the normal variation `uν`;
//! * `L*u = Lu − 2F^{ij}_{,i}u_j − F^{ij}_{,ij}u`, its `L²(dμ)` adjoint;
//! * `S = ½(L + L*) = −∇_i(F^{ij}∇_j ·) − (q + ½F^{ij}_{,ij})`.
//!
//! Spectra are computed by a Galerkin method on the real spherical harmonics
//! of the grid, with the exact metric mass matrix.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{evaluate, evaluate_with_variation, Level, Mat2, SurfaceGeometry};
use crate::metric::MetricParams;
use crate::sphere::RadialGraph;

pub struct OperatorAssembly {
    pub graph: RadialGraph,
    pub geometry: SurfaceGeometry,
    pub f_kl: Vec<Mat2>,
    /// `2F² − F^{kl}R̄_{3k3l}`.
    pub potential: Vec<f64>,
    /// `F^{ij}_{,i}`.
    pub div_f: Vec<[f64; 2]>,
    /// `F^{ij}_{,ij}`.
    pub div2_f: Vec<f64>,
    pub christoffel: Vec<[[[f64; 2]; 2]; 2]>,
    /// `dμ` quadrature weights (area density times grid weight).
    pub dmu: Vec<f64>,
}

impl OperatorAssembly {
    pub fn area(&self) -> f64 {
        self.dmu.iter().sum()
    }

    pub fn n_nodes(&self) -> usize {
        self.dmu.len()
    }

    /// `∫ a b dμ` for nodal fields.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.dmu).map(|((x, y), w)| x * y * w).sum()
    }

    /// Nodal values, gradients and covariant Hessians of a band-limited field.
    fn jets(&self, coeffs: &[f64]) -> (Vec<f64>, Vec<[f64; 2]>, Vec<Mat2>) {
        let grid = &self.graph.grid;
        let u = grid.synthesis(coeffs);
        let ut = grid.synthesis_derivative(coeffs, 1, 0);
        let up = grid.synthesis_derivative(coeffs, 0, 1);
        let utt = grid.synthesis_derivative(coeffs, 2, 0);
        let utp = grid.synthesis_derivative(coeffs, 1, 1);
        let upp = grid.synthesis_derivative(coeffs, 0, 2);
        let mut grad = Vec::with_capacity(u.len());
        let mut hess = Vec::with_capacity(u.len());
        for n in 0..u.len() {
            let d = [ut[n], up[n]];
            let dd = [[utt[n], utp[n]], [utp[n], upp[n]]];
            let g = &self.christoffel[n];
            let mut h = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    h[i][j] = dd[i][j] - g[0][i][j] * d[0] - g[1][i][j] * d[1];
                }
            }
            grad.push(d);
            hess.push(h);
        }
        (u, grad, hess)
    }

    /// `𝓛u = F^{kl}∇_k∇_l u`.
    pub fn apply_lcal(&self, coeffs: &[f64]) -> Vec<f64> {
        let (_, _, hess) = self.jets(coeffs);
        hess.iter().zip(&self.f_kl).map(|(h, f)| contract(f, h)).collect()
    }

    pub fn apply_l(&self, coeffs: &[f64]) -> Vec<f64> {
        let (u, _, hess) = self.jets(coeffs);
        (0..u.len())
            .map(|n| -(contract(&self.f_kl[n], &hess[n]) + self.potential[n] * u[n]))
            .collect()
    }

    pub fn apply_l_star(&self, coeffs: &[f64]) -> Vec<f64> {
        let (u, grad, hess) = self.jets(coeffs);
        (0..u.len())
            .map(|n| {
                let lu = -(contract(&self.f_kl[n], &hess[n]) + self.potential[n] * u[n]);
                let d = &self.div_f[n];
                lu - 2.0 * (d[0] * grad[n][0] + d[1] * grad[n][1]) - self.div2_f[n] * u[n]
            })
            .collect()
    }

    pub fn apply_s(&self, coeffs: &[f64]) -> Vec<f64> {
        let a = self.apply_l(coeffs);
        let b = self.apply_l_star(coeffs);
        a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect()
    }

    /// `∫F^{ij}u_iu_j dμ / ∫u² dμ`.
    pub fn dirichlet_ratio(&self, coeffs: &[f64]) -> f64 {
        let (u, grad, _) = self.jets(coeffs);
        let mut num = 0.0;
        let mut den = 0.0;
        for n in 0..u.len() {
            let f = &self.f_kl[n];
            let g = grad[n];
            num += self.dmu[n] * (f[0][0] * g[0] * g[0] + 2.0 * f[0][1] * g[0] * g[1] + f[1][1] * g[1] * g[1]);
            den += self.dmu[n] * u[n] * u[n];
        }
        num / den
    }
}

fn contract(a: &Mat2, b: &Mat2) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

pub fn assemble(surface: &RadialGraph, params: &MetricParams) -> Result<OperatorAssembly> {
    let geometry = evaluate(surface, params, Level::Full)?;
    let der = geometry.der.as_ref().expect("full level");
    let n = geometry.ext.nodes.len();
    let mut f_kl = Vec::with_capacity(n);
    let mut potential = Vec::with_capacity(n);
    let mut div_f = Vec::with_capacity(n);
    let mut div2_f = Vec::with_capacity(n);
    let mut christoffel = Vec::with_capacity(n);
    let mut dmu = Vec::with_capacity(n);
    for (i, (e, d)) in geometry.ext.nodes.iter().zip(&der.nodes).enumerate() {
        let full = d.full.as_ref().expect("full level");
        f_kl.push(d.f_kl);
        potential.push(2.0 * e.f * e.f - full.f_r3k3l);
        div_f.push(full.div_f_kl);
        div2_f.push(full.div2_f_kl);
        christoffel.push(d.christoffel);
        dmu.push(e.area_density * surface.grid.weights[i]);
    }
    Ok(OperatorAssembly {
        graph: surface.clone(),
        geometry,
        f_kl,
        potential,
        div_f,
        div2_f,
        christoffel,
        dmu,
    })
}

/// Eigenpairs of `S` in `L²(dμ)`.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: Vec<f64>,
    /// Nodal eigenfields, normalized to unit `L²(dμ)` norm.
    pub fields: Vec<Vec<f64>>,
    pub coeffs: Vec<Vec<f64>>,
}

/// Galerkin matrices of `S` and of the `L²(dμ)` mass on the grid harmonics.
pub fn galerkin_matrices(asm: &OperatorAssembly) -> (DMatrix<f64>, DMatrix<f64>) {
    let grid = &asm.graph.grid;
    let nc = grid.n_coeffs();
    let nn = asm.n_nodes();
    let mut y = DMatrix::<f64>::zeros(nn, nc);
    let mut yt = DMatrix::<f64>::zeros(nn, nc);
    let mut yp = DMatrix::<f64>::zeros(nn, nc);
    let mut e = vec![0.0; nc];
    for a in 0..nc {
        e[a] = 1.0;
        y.set_column(a, &DVector::from_vec(grid.synthesis(&e)));
        yt.set_column(a, &DVector::from_vec(grid.synthesis_derivative(&e, 1, 0)));
        yp.set_column(a, &DVector::from_vec(grid.synthesis_derivative(&e, 0, 1)));
        e[a] = 0.0;
    }
    let q: Vec<f64> = (0..nn).map(|n| asm.potential[n] + 0.5 * asm.div2_f[n]).collect();
    let scale_rows = |m: &DMatrix<f64>, w: &dyn Fn(usize) -> f64| {
        let mut out = m.clone();
        for (n, mut row) in out.row_iter_mut().enumerate() {
            row *= w(n);
        }
        out
    };
    let w_tt = scale_rows(&yt, &|n| asm.dmu[n] * asm.f_kl[n][0][0]);
    let w_tp = scale_rows(&yp, &|n| asm.dmu[n] * asm.f_kl[n][0][1]);
    let w_pt = scale_rows(&yt, &|n| asm.dmu[n] * asm.f_kl[n][1][0]);
    let w_pp = scale_rows(&yp, &|n| asm.dmu[n] * asm.f_kl[n][1][1]);
    let w_q = scale_rows(&y, &|n| asm.dmu[n] * q[n]);
    let w_m = scale_rows(&y, &|n| asm.dmu[n]);
    let s = yt.transpose() * (w_tt + w_tp) + yp.transpose() * (w_pt + w_pp) - y.transpose() * w_q;
    let m = y.transpose() * w_m;
    let sym = |a: DMatrix<f64>| (&a + a.transpose()) * 0.5;
    (sym(s), sym(m))
}

/// Lowest `k` eigenpairs of `S`; with `constrained`, restricted to fields with
/// `∫u dμ = 0`.
pub fn low_spectrum(asm: &OperatorAssembly, constrained: bool, k: usize) -> Result<Spectrum> {
    let grid = &asm.graph.grid;
    let (s, m) = galerkin_matrices(asm);
    let nc = s.nrows();
    let chol = Cholesky::new(m.clone()).ok_or_else(|| Error::Eigen("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    let c = &linv * &s * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    // basis of the admissible subspace in the Cholesky coordinates y = Lᵀx
    let basis = if constrained {
        let ones = DVector::from_element(asm.n_nodes(), 1.0);
        let mut cvec = DVector::zeros(nc);
        let mut e = vec![0.0; nc];
        for a in 0..nc {
            e[a] = 1.0;
            let ya = grid.synthesis(&e);
            cvec[a] = asm.inner(&ya, ones.as_slice());
            e[a] = 0.0;
        }
        let d = &linv * cvec;
        orthogonal_complement(&d)
    } else {
        DMatrix::identity(nc, nc)
    };
    let reduced = basis.transpose() * &c * &basis;
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(reduced, 1e-14, 10_000)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    let linv_t = linv.transpose();
    let mut values = Vec::new();
    let mut fields = Vec::new();
    let mut coeffs = Vec::new();
    for &i in order.iter().take(k) {
        values.push(eig.eigenvalues[i]);
        let yv = &basis * eig.eigenvectors.column(i);
        let x = &linv_t * yv;
        let xc: Vec<f64> = x.iter().copied().collect();
        let mut field = grid.synthesis(&xc);
        let norm = asm.inner(&field, &field).sqrt();
        let sign = if field.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        for v in field.iter_mut() {
            *v *= sign / norm;
        }
        fields.push(field);
        coeffs.push(xc.iter().map(|v| v * sign / norm).collect());
    }
    Ok(Spectrum { values, fields, coeffs })
}

/// Orthonormal basis of `d^⊥` from a Householder reflection.
fn orthogonal_complement(d: &DVector<f64>) -> DMatrix<f64> {
    let n = d.len();
    let nd = d.norm();
    let mut v = d / nd;
    let s = if v[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += s;
    let vn2 = v.norm_squared();
    let mut q = DMatrix::<f64>::identity(n, n);
    q -= (&v * v.transpose()) * (2.0 / vn2);
    q.columns(1, n - 1).into_owned()
}

/// Structure of the lowest eigenfield: `‖h₀ − h̄₀‖/(|h̄₀| |Σ|^{1/2})`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StructureReport {
    pub mean: f64,
    pub ratio: f64,
    pub mean_nonzero: bool,
}

pub fn eigenfunction_structure_check(asm: &OperatorAssembly, h0: &[f64]) -> StructureReport {
    let area = asm.area();
    let ones = vec![1.0; h0.len()];
    let mean = asm.inner(h0, &ones) / area;
    let dev: Vec<f64> = h0.iter().map(|h| h - mean).collect();
    let norm = asm.inner(&dev, &dev).sqrt();
    let ratio = if mean != 0.0 { norm / (mean.abs() * area.sqrt()) } else { f64::INFINITY };
    StructureReport {
        mean,
        ratio,
        mean_nonzero: mean.abs() > 1e-8 * asm.inner(h0, h0).sqrt() / area.sqrt(),
    }
}

/// Finite-difference first variation of `F` against `Lu`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariationReport {
    pub eps: Vec<f64>,
    /// `max |[F(ε) − F(0)]/ε − (Lu + T(F))|` per `ε`.
    pub residuals: Vec<f64>,
    /// `log₂` of successive residual ratios; 1 for first-order agreement.
    pub orders: Vec<f64>,
    /// `max |Lu|`.
    pub scale: f64,
}

/// Moves the surface by `ε w n̂` with `w = u/ḡ(n̂, ν)` band-limited, so that
/// the normal part of the deformation is `u` and the tangential part `T` only
/// reparametrizes; compares the difference quotient of `F` with `Lu + T(F)`.
pub fn first_variation_check(
    surface: &RadialGraph,
    params: &MetricParams,
    u_coeffs: &[f64],
    eps_list: &[f64],
) -> Result<VariationReport> {
    let grid = &surface.grid;
    let base = evaluate(surface, params, Level::Curvature)?;
    let u_nodal = grid.synthesis(u_coeffs);
    let w_nodal: Vec<f64> = u_nodal
        .iter()
        .zip(&base.ext.nodes)
        .map(|(u, n)| u / n.radial_dot)
        .collect();
    let w = grid.analysis(&w_nodal);
    let (geo, var) = evaluate_with_variation(surface, params, Level::Full, &w)?;
    let der = geo.der.as_ref().expect("full level");
    let predicted: Vec<f64> = (0..var.len())
        .map(|i| {
            let e = &geo.ext.nodes[i];
            let d = &der.nodes[i];
            let full = d.full.as_ref().expect("full level");
            let v = &var[i];
            let lu = -(contract(&d.f_kl, &v.hess_u) + (2.0 * e.f * e.f - full.f_r3k3l) * v.u);
            lu + v.t_upper[0] * d.grad_f[0] + v.t_upper[1] * d.grad_f[1]
        })
        .collect();
    let scale = predicted.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let mut residuals = Vec::new();
    for &eps in eps_list {
        let c: Vec<f64> = surface.coeffs.iter().zip(&w).map(|(a, b)| a + eps * b).collect();
        let moved = RadialGraph::from_coeffs(grid.clone(), c, surface.sigma_label)?;
        let ext = evaluate(&moved, params, Level::Curvature)?.ext;
        let r = (0..predicted.len())
            .map(|i| ((ext.nodes[i].f - geo.ext.nodes[i].f) / eps - predicted[i]).abs())
            .fold(0.0, f64::max);
        residuals.push(r);
    }
    let orders = residuals
        .windows(2)
        .zip(eps_list.windows(2))
        .map(|(r, e)| (r[0] / r[1]).ln() / (e[0] / e[1]).ln())
        .collect();
    Ok(VariationReport {
        eps: eps_list.to_vec(),
        residuals,
        orders,
        scale,
    })
}

/// Summary written by the spectrum pipeline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub sigma: f64,
    pub m: f64,
    pub eta0: f64,
    pub mu0: f64,
    pub next_eigs: Vec<f64>,
    pub h0_structure_ratio: f64,
    pub h0_mean_nonzero: bool,
}

pub fn spectrum_report(asm: &OperatorAssembly, params: &MetricParams, k: usize) -> Result<SpectrumReport> {
    let un = low_spectrum(asm, false, 1)?;
    let con = low_spectrum(asm, true, k.max(1))?;
    let st = eigenfunction_structure_check(asm, &un.fields[0]);
    Ok(SpectrumReport {
        sigma: asm.graph.sigma_label,
        m: params.mass,
        eta0: un.values[0],
        mu0: con.values[0],
        next_eigs: con.values[1..].to_vec(),
        h0_structure_ratio: st.ratio,
        h0_mean_nonzero: st.mean_nonzero,
    })
}
