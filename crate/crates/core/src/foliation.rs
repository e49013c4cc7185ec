//! Families of constant-F leaves, their lapse, round-sphere fits and the two
//! notions of center of mass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{linear_fit, run_to_leaf, FlowConfig, RateFit};
use crate::geometry::{evaluate, Level};
use crate::metric::{AmbientTaylor, MetricParams};
use crate::sphere::{RadialGraph, SphericalGrid};

/// Euclidean best-fit sphere of a graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereFit {
    pub r0: f64,
    pub center: [f64; 3],
    /// Area-weighted rms of `|y − ā| − r0`.
    pub residual: f64,
    /// `max |ν_e − (y − ā)/r0|` with the Euclidean unit normal `ν_e`.
    pub normal_alignment: f64,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Euclidean outward unit normals of the graph at the nodes.
pub fn euclidean_normals(graph: &RadialGraph) -> Vec<[f64; 3]> {
    let grid = &graph.grid;
    let der = graph.spectral_derivatives();
    (0..grid.n_nodes())
        .map(|n| {
            let (j, k) = grid.node_lat_lon(n);
            let (st, ct) = (grid.sin_theta[j], grid.cos_theta[j]);
            let (sp, cp) = (grid.phi[k].sin(), grid.phi[k].cos());
            let rho = graph.rho[n];
            let dir = [st * cp, st * sp, ct];
            let d_th = [ct * cp, ct * sp, -st];
            let d_ph = [-st * sp, st * cp, 0.0];
            let [rt, rp, ..] = der[n];
            let xt = [rt * dir[0] + rho * d_th[0], rt * dir[1] + rho * d_th[1], rt * dir[2] + rho * d_th[2]];
            let xp = [rp * dir[0] + rho * d_ph[0], rp * dir[1] + rho * d_ph[1], rp * dir[2] + rho * d_ph[2]];
            let c = cross(xt, xp);
            let l = norm(c);
            [c[0] / l, c[1] / l, c[2] / l]
        })
        .collect()
}

/// Least-squares sphere minimizing `Σ w (|y − ā| − r0)²` with Euclidean area
/// weights: an algebraic fit followed by Gauss–Newton.
pub fn best_fit_sphere(graph: &RadialGraph) -> Result<SphereFit> {
    let pts = graph.embed();
    let w: Vec<f64> = graph
        .euclidean_area_density()
        .iter()
        .zip(&graph.grid.weights)
        .map(|(a, b)| a * b)
        .collect();
    // algebraic: |y|² = 2ā·y + c
    let mut ata = nalgebra::Matrix4::<f64>::zeros();
    let mut atb = nalgebra::Vector4::<f64>::zeros();
    for (y, &wi) in pts.iter().zip(&w) {
        let row = nalgebra::Vector4::new(2.0 * y[0], 2.0 * y[1], 2.0 * y[2], 1.0);
        let rhs = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
        ata += row * row.transpose() * wi;
        atb += row * (rhs * wi);
    }
    let sol = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| Error::Undefined("degenerate sphere fit".into()))?;
    let mut a = [sol[0], sol[1], sol[2]];
    let mut r0 = (sol[3] + a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).max(0.0).sqrt();
    for _ in 0..50 {
        let mut jtj = nalgebra::Matrix4::<f64>::zeros();
        let mut jtr = nalgebra::Vector4::<f64>::zeros();
        for (y, &wi) in pts.iter().zip(&w) {
            let d = sub(*y, a);
            let l = norm(d);
            let r = l - r0;
            let row = nalgebra::Vector4::new(-d[0] / l, -d[1] / l, -d[2] / l, -1.0);
            jtj += row * row.transpose() * wi;
            jtr += row * (r * wi);
        }
        let Some(delta) = jtj.lu().solve(&(-jtr)) else { break };
        a = [a[0] + delta[0], a[1] + delta[1], a[2] + delta[2]];
        r0 += delta[3];
        if delta.norm() < 1e-15 * r0 {
            break;
        }
    }
    let wsum: f64 = w.iter().sum();
    let residual = (pts
        .iter()
        .zip(&w)
        .map(|(y, wi)| wi * (norm(sub(*y, a)) - r0).powi(2))
        .sum::<f64>()
        / wsum)
        .sqrt();
    if residual > 0.1 * r0 {
        return Err(Error::NotRound { residual, r0 });
    }
    let normals = euclidean_normals(graph);
    let normal_alignment = pts
        .iter()
        .zip(&normals)
        .map(|(y, nu)| {
            let d = sub(*y, a);
            norm([nu[0] - d[0] / r0, nu[1] - d[1] / r0, nu[2] - d[2] / r0])
        })
        .fold(0.0, f64::max);
    Ok(SphereFit {
        r0,
        center: a,
        residual,
        normal_alignment,
    })
}

/// Euclidean-area centroid `∫y dμ_e / ∫dμ_e`.
pub fn euclidean_centroid(graph: &RadialGraph) -> [f64; 3] {
    let pts = graph.embed();
    let dens = graph.euclidean_area_density();
    let mut c = [0.0; 3];
    let mut a = 0.0;
    for ((y, d), w) in pts.iter().zip(&dens).zip(&graph.grid.weights) {
        let wi = d * w;
        for k in 0..3 {
            c[k] += wi * y[k];
        }
        a += wi;
    }
    [c[0] / a, c[1] / a, c[2] / a]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoliationLeaf {
    pub sigma: f64,
    #[serde(skip)]
    pub graph: Option<RadialGraph>,
    pub f_sigma: f64,
    pub r0: f64,
    pub a_vec: [f64; 3],
    pub normal_alignment: f64,
    pub centroid: [f64; 3],
    pub converged: bool,
    pub steps: usize,
    pub t_final: f64,
    pub max_aring: f64,
    pub max_grad_aring: f64,
    pub stationarity: f64,
    pub volume_drift: f64,
    pub rate: Option<RateFit>,
}

impl FoliationLeaf {
    pub fn graph(&self) -> &RadialGraph {
        self.graph.as_ref().expect("leaf graph is present until serialized")
    }
}

/// Initial radial graph of a leaf: the coordinate sphere `|x − c| = σ` of the
/// chart centered at `c` (the metric offset), as a graph over the origin.
///
/// Starting off-center leaves from spheres about the origin would put the
/// translation into high degrees, which the velocity filter does not resolve.
pub fn coordinate_sphere(grid: std::sync::Arc<SphericalGrid>, sigma: f64, center: [f64; 3]) -> Result<RadialGraph> {
    let c2: f64 = center.iter().map(|c| c * c).sum();
    if c2 == 0.0 {
        return RadialGraph::round(grid, sigma);
    }
    if c2.sqrt() >= sigma {
        return Err(Error::Usage(format!("coordinate sphere of radius {sigma} does not enclose the origin")));
    }
    // ρ solves |ρn − c| = σ
    RadialGraph::from_fn(grid, sigma, |n| {
        let nc = n[0] * center[0] + n[1] * center[1] + n[2] * center[2];
        nc + (nc * nc + sigma * sigma - c2).sqrt()
    })
}

/// Flows coordinate spheres to leaves, independently for every σ.
pub fn build_foliation(
    params: &MetricParams,
    sigma_list: &[f64],
    config: &FlowConfig,
    n_lat: usize,
) -> Result<Vec<FoliationLeaf>> {
    if sigma_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Usage("sigma list must be strictly increasing".into()));
    }
    let grid = SphericalGrid::new(n_lat)?;
    sigma_list
        .par_iter()
        .map(|&sigma| leaf_from_flow(params, &grid, sigma, config))
        .collect()
}

fn leaf_from_flow(
    params: &MetricParams,
    grid: &std::sync::Arc<SphericalGrid>,
    sigma: f64,
    config: &FlowConfig,
) -> Result<FoliationLeaf> {
    let init = coordinate_sphere(grid.clone(), sigma, params.offset)?;
    let res = run_to_leaf(init, config, params)?;
    let fit = best_fit_sphere(&res.leaf)?;
    let last = *res.state.last();
    Ok(FoliationLeaf {
        sigma,
        f_sigma: res.f_sigma,
        r0: fit.r0,
        a_vec: fit.center,
        normal_alignment: fit.normal_alignment,
        centroid: euclidean_centroid(&res.leaf),
        converged: res.converged,
        steps: res.state.step_count,
        t_final: res.state.t,
        max_aring: last.max_aring,
        max_grad_aring: last.max_grad_aring,
        stationarity: last.stationarity(),
        volume_drift: res.volume_drift(),
        rate: res.rate,
        graph: Some(res.leaf),
    })
}

/// Normal speed of the family between two adjacent leaves.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LapseReport {
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub min_lapse: f64,
    pub mean_lapse: f64,
    /// `max|u − ū|/|ū|`.
    pub max_relative_deviation: f64,
    /// `min(ρ_hi − ρ_lo)`.
    pub min_gap: f64,
    #[serde(skip)]
    pub u: Vec<f64>,
    pub foliates: bool,
}

/// `u = (ρ_hi − ρ_lo) ḡ(n̂, ν_lo)/Δσ` at corresponding nodes.
pub fn lapse(lo: &RadialGraph, hi: &RadialGraph, params: &MetricParams) -> Result<LapseReport> {
    if lo.rho.len() != hi.rho.len() {
        return Err(Error::Usage("leaves must share a grid".into()));
    }
    let ds = hi.sigma_label - lo.sigma_label;
    if !(ds > 0.0) {
        return Err(Error::Usage("leaves must have increasing labels".into()));
    }
    let ext = evaluate(lo, params, Level::Curvature)?.ext;
    let u: Vec<f64> = (0..lo.rho.len())
        .map(|n| (hi.rho[n] - lo.rho[n]) * ext.nodes[n].radial_dot / ds)
        .collect();
    let dens = ext.area_density();
    let mut area = 0.0;
    let mut total = 0.0;
    for n in 0..u.len() {
        let w = dens[n] * lo.grid.weights[n];
        area += w;
        total += w * u[n];
    }
    let mean = total / area;
    let min_lapse = u.iter().copied().fold(f64::INFINITY, f64::min);
    let min_gap = hi.rho.iter().zip(&lo.rho).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
    Ok(LapseReport {
        sigma_lo: lo.sigma_label,
        sigma_hi: hi.sigma_label,
        min_lapse,
        mean_lapse: mean,
        max_relative_deviation: u.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max) / mean.abs(),
        min_gap,
        foliates: min_lapse > 0.0 && min_gap > 0.0,
        u,
    })
}

/// Polynomial fit in `1/x` evaluated at `1/x = 0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Extrapolation {
    pub value: [f64; 3],
    /// Fitted coefficients per component, constant term first.
    pub coefficients: [Vec<f64>; 3],
    /// Largest absolute fit residual over samples and components.
    pub max_residual: f64,
}

/// Least-squares fit of `c₀ + c₁/x + … + c_d/x^d` to each component.
pub fn extrapolate_inverse(xs: &[f64], ys: &[[f64; 3]], degree: usize) -> Result<Extrapolation> {
    let n = xs.len();
    if n < degree + 1 {
        return Err(Error::Usage(format!("{} samples cannot fit degree {degree} in 1/x", n)));
    }
    let a = nalgebra::DMatrix::from_fn(n, degree + 1, |i, j| xs[i].powi(-(j as i32)));
    let svd = a.clone().svd(true, true);
    let mut coefficients: [Vec<f64>; 3] = Default::default();
    let mut value = [0.0; 3];
    let mut max_residual = 0.0f64;
    for k in 0..3 {
        let b = nalgebra::DVector::from_fn(n, |i, _| ys[i][k]);
        let c = svd
            .solve(&b, 1e-14)
            .map_err(|e| Error::Undefined(format!("extrapolation fit failed: {e}")))?;
        let r = &a * &c - &b;
        max_residual = max_residual.max(r.amax());
        value[k] = c[0];
        coefficients[k] = c.iter().copied().collect();
    }
    Ok(Extrapolation {
        value,
        coefficients,
        max_residual,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HmCenter {
    pub sigmas: Vec<f64>,
    pub centroids: Vec<[f64; 3]>,
    pub extrapolation: Extrapolation,
}

/// Leaf centroids and their extrapolation in `1/σ`: quadratic with at least
/// four leaves, linear with three.
pub fn c_hm(leaves: &[FoliationLeaf]) -> Result<HmCenter> {
    if leaves.len() < 3 {
        return Err(Error::Usage("C_HM needs at least three leaves".into()));
    }
    let sigmas: Vec<f64> = leaves.iter().map(|l| l.sigma).collect();
    let smin = sigmas.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = sigmas.iter().copied().fold(0.0, f64::max);
    if smax < 1.5 * smin {
        return Err(Error::Usage("C_HM leaves must span a factor of 1.5 in sigma".into()));
    }
    let centroids: Vec<[f64; 3]> = leaves.iter().map(|l| l.centroid).collect();
    let degree = if leaves.len() >= 4 { 2 } else { 1 };
    let extrapolation = extrapolate_inverse(&sigmas, &centroids, degree)?;
    Ok(HmCenter {
        sigmas,
        centroids,
        extrapolation,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdmCenter {
    pub radii: Vec<f64>,
    pub values: Vec<[f64; 3]>,
    pub extrapolation: Extrapolation,
}

/// The flux integral
/// `C^k = (16πm)⁻¹ ∫_{|x|=R} [x^k(∂_i g_ij − ∂_j g_ii)ν^j − (g_ik ν^i − g_ii ν^k)] dμ_e`
/// on one coordinate sphere.
pub fn adm_center_at(params: &MetricParams, radius: f64, n_lat: usize) -> Result<[f64; 3]> {
    if !(params.mass > 0.0) {
        return Err(Error::Undefined("the ADM center of mass needs m > 0".into()));
    }
    let grid = SphericalGrid::new(n_lat)?;
    let parts: Result<Vec<[f64; 3]>> = (0..grid.n_nodes())
        .into_par_iter()
        .map(|n| {
            let nu = grid.directions[n];
            let x = [radius * nu[0], radius * nu[1], radius * nu[2]];
            let t = AmbientTaylor::<4>::new(params, x, 1)?;
            let g = |i: usize, j: usize| t.g[i][j].value();
            let dg = |c: usize, i: usize, j: usize| {
                let mut e = [0u8; 3];
                e[c] = 1;
                t.g[i][j].derivative(e)
            };
            let mut flux = 0.0;
            for j in 0..3 {
                let mut s = 0.0;
                for i in 0..3 {
                    s += dg(i, i, j) - dg(j, i, i);
                }
                flux += s * nu[j];
            }
            let tr = g(0, 0) + g(1, 1) + g(2, 2);
            let w = grid.weights[n] * radius * radius;
            let mut out = [0.0; 3];
            for k in 0..3 {
                let gnu = g(0, k) * nu[0] + g(1, k) * nu[1] + g(2, k) * nu[2];
                out[k] = w * (x[k] * flux - (gnu - tr * nu[k]));
            }
            Ok(out)
        })
        .collect();
    let mut c = [0.0; 3];
    for p in parts? {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let f = 1.0 / (16.0 * std::f64::consts::PI * params.mass);
    Ok([c[0] * f, c[1] * f, c[2] * f])
}

/// ADM center over a radius sweep, extrapolated linearly in `1/R`.
pub fn adm_center(params: &MetricParams, radius_list: &[f64], n_lat: usize) -> Result<AdmCenter> {
    let values: Result<Vec<[f64; 3]>> = radius_list.iter().map(|&r| adm_center_at(params, r, n_lat)).collect();
    let values = values?;
    let extrapolation = if radius_list.len() >= 2 {
        extrapolate_inverse(radius_list, &values, 1)?
    } else {
        Extrapolation {
            value: values[0],
            coefficients: [vec![values[0][0]], vec![values[0][1]], vec![values[0][2]]],
            max_residual: 0.0,
        }
    };
    Ok(AdmCenter {
        radii: radius_list.to_vec(),
        values,
        extrapolation,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CenterReport {
    pub c_hm: [f64; 3],
    pub c_hm_detail: HmCenter,
    pub c_adm: [f64; 3],
    pub c_adm_detail: AdmCenter,
    pub difference: f64,
}

pub fn center_report(leaves: &[FoliationLeaf], params: &MetricParams, radii: &[f64], n_lat: usize) -> Result<CenterReport> {
    let hm = c_hm(leaves)?;
    let adm = adm_center(params, radii, n_lat)?;
    let d = norm(sub(hm.extrapolation.value, adm.extrapolation.value));
    Ok(CenterReport {
        c_hm: hm.extrapolation.value,
        c_hm_detail: hm,
        c_adm: adm.extrapolation.value,
        c_adm_detail: adm,
        difference: d,
    })
}

/// Least-squares exponent `p` in `y ≈ C x^p`.
pub fn power_law_exponent(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, y)| **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    linear_fit(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::Mode;

    #[test]
    fn fits_an_offset_sphere() {
        let grid = SphericalGrid::new(16).unwrap();
        let a = [1.0, 2.0, 3.0];
        let g = RadialGraph::from_fn(grid, 10.0, |d| {
            let da = d[0] * a[0] + d[1] * a[1] + d[2] * a[2];
            da + (da * da - 14.0 + 100.0).sqrt()
        })
        .unwrap();
        let fit = best_fit_sphere(&g).unwrap();
        assert!((fit.r0 - 10.0).abs() < 1e-10, "{}", fit.r0);
        for k in 0..3 {
            assert!((fit.center[k] - a[k]).abs() < 1e-10);
        }
        assert!(fit.normal_alignment < 1e-9);
    }

    #[test]
    fn coordinate_sphere_follows_the_chart_center() {
        let grid = SphericalGrid::new(16).unwrap();
        let c = [0.5, 1.0, 0.0];
        let g = coordinate_sphere(grid, 10.0, c).unwrap();
        let fit = best_fit_sphere(&g).unwrap();
        assert!((fit.r0 - 10.0).abs() < 1e-10);
        for k in 0..3 {
            assert!((fit.center[k] - c[k]).abs() < 1e-10, "{:?}", fit.center);
        }
        assert!(coordinate_sphere(SphericalGrid::new(8).unwrap(), 1.0, c).is_err());
    }

    #[test]
    fn translation_mode_moves_center() {
        let grid = SphericalGrid::new(16).unwrap();
        let g = RadialGraph::with_modes(grid, 10.0, &[Mode { l: 1, m: 0, amplitude: 0.01 }]).unwrap();
        let fit = best_fit_sphere(&g).unwrap();
        // Y₁⁰ = √(3/4π) cos θ: first-order displacement along z
        let delta = 0.01 * (3.0 / (4.0 * std::f64::consts::PI)).sqrt();
        assert!((fit.center[2] - delta).abs() < 1e-5, "{:?}", fit.center);
        assert!((fit.r0 - 10.0).abs() < 1e-5);
    }

    #[test]
    fn adm_center_of_translated_schwarzschild() {
        let p = MetricParams::schwarzschild(1.0);
        let c = adm_center_at(&p, 100.0, 16).unwrap();
        assert!(norm(c) < 1e-12, "{c:?}");
        let t = MetricParams::schwarzschild(1.0).translated([0.0, 2.0, 0.0]);
        let r = adm_center(&t, &[50.0, 100.0, 200.0], 16).unwrap();
        assert!((r.extrapolation.value[1] - 2.0).abs() < 0.1, "{:?}", r);
        let d = MetricParams::conformal_dipole(1.0, [0.5, 0.0, 0.0]);
        let r = adm_center(&d, &[50.0, 100.0, 200.0], 16).unwrap();
        assert!((r.extrapolation.value[0] - 1.0).abs() < 0.05, "{:?}", r);
        assert!(matches!(adm_center_at(&MetricParams::flat(), 50.0, 8), Err(Error::Undefined(_))));
    }

    #[test]
    fn flat_lapse_is_one() {
        let grid = SphericalGrid::new(8).unwrap();
        let a = RadialGraph::round(grid.clone(), 10.0).unwrap();
        let b = RadialGraph::round(grid, 11.0).unwrap();
        let r = lapse(&a, &b, &MetricParams::flat()).unwrap();
        assert!(r.u.iter().all(|u| (u - 1.0).abs() < 1e-13));
        assert!(r.foliates);
    }
}
