use std::sync::OnceLock;

use hmcf_core::flow::{velocity, FlowConfig};
use hmcf_core::geometry::{
    evaluate, f_first_derivative, f_second_derivative, harmonic_mean_curvature, principal_curvatures, Level, Mat2,
};
use hmcf_core::sphere::{enclosed_volume, Mode, RadialGraph, Snapshot, SphericalGrid};
use hmcf_core::stability::{assemble, OperatorAssembly};
use hmcf_core::{eval_jet, MetricParams};
use proptest::prelude::*;

fn spd2(a: f64, b: f64, c: f64) -> Mat2 {
    // [[a, c], [c, b]] with |c| < sqrt(ab)
    let c = c * (a * b).sqrt();
    [[a, c], [c, b]]
}

fn inv2(m: &Mat2) -> Mat2 {
    let d = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
}

/// Symmetric `h` with both principal curvatures in `[k1, k2]` w.r.t. `g`.
fn positive_form(g: &Mat2, k1: f64, k2: f64, angle: f64) -> Mat2 {
    // h = g^{1/2} Rᵀ diag(k1, k2) R g^{1/2}, via Cholesky g = LLᵀ: h = L Q Lᵀ
    let l00 = g[0][0].sqrt();
    let l10 = g[1][0] / l00;
    let l11 = (g[1][1] - l10 * l10).sqrt();
    let l = [[l00, 0.0], [l10, l11]];
    let (s, c) = angle.sin_cos();
    let q = [[c * c * k1 + s * s * k2, c * s * (k1 - k2)], [c * s * (k1 - k2), s * s * k1 + c * c * k2]];
    let mut h = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    h[i][j] += l[i][a] * q[a][b] * l[j][b];
                }
            }
        }
    }
    h
}

proptest! {
    #[test]
    fn f_identities_hold_for_positive_forms(
        a in 0.2f64..5.0, b in 0.2f64..5.0, c in -0.9f64..0.9,
        k1 in 0.01f64..3.0, k2 in 0.01f64..3.0, angle in 0.0f64..3.2,
    ) {
        let g = spd2(a, b, c);
        let ginv = inv2(&g);
        let h = positive_form(&g, k1, k2, angle);
        let f = harmonic_mean_curvature(&ginv, &h);
        prop_assert!((f - k1 * k2 / (k1 + k2)).abs() <= 1e-12 * f.max(1.0));
        let lam = principal_curvatures(&ginv, &h);
        prop_assert!((lam[0] - k1.min(k2)).abs() <= 1e-7 * (k1 + k2));
        prop_assert!((lam[1] - k1.max(k2)).abs() <= 1e-7 * (k1 + k2));

        let fkl = f_first_derivative(&ginv, &h);
        // F^{kl} h_kl = F and F^{kl} (h g⁻¹ h)_kl = 2F²
        // F^{kl} = (1 − K/H²)g^{kl} − h^{kl}/H cancels O(1) terms along the
        // flatter direction, so rounding scales with |g^{kl}| + |h^{kl}|/H
        let hh = k1 + k2;
        let mut hup = [[0.0; 2]; 2];
        for k in 0..2 {
            for l in 0..2 {
                for m in 0..2 {
                    for n in 0..2 {
                        hup[k][l] += ginv[k][m] * h[m][n] * ginv[n][l];
                    }
                }
            }
        }
        let (mut tr, mut tr_abs) = (0.0, 0.0);
        let (mut sq, mut sq_abs) = (0.0, 0.0);
        for k in 0..2 {
            for l in 0..2 {
                let w = ginv[k][l].abs() + hup[k][l].abs() / hh;
                tr += fkl[k][l] * h[k][l];
                tr_abs += w * h[k][l].abs();
                let mut hgh = 0.0;
                for m in 0..2 {
                    for n in 0..2 {
                        hgh += h[k][m] * ginv[m][n] * h[n][l];
                    }
                }
                sq += fkl[k][l] * hgh;
                sq_abs += w * hgh.abs();
            }
        }
        prop_assert!((tr - f).abs() <= 1e-13 * tr_abs, "trace {} vs {}", tr, f);
        prop_assert!((sq - 2.0 * f * f).abs() <= 1e-13 * sq_abs, "square {} vs {}", sq, 2.0 * f * f);
        prop_assert!((fkl[0][1] - fkl[1][0]).abs() <= 1e-14 * (1.0 + fkl[0][1].abs()));

        // F is 1-homogeneous, so F^{kl,pq} h_pq = 0, and the Hessian is symmetric
        let d2 = f_second_derivative(&ginv, &h);
        for k in 0..2 {
            for l in 0..2 {
                let mut s = 0.0;
                for p in 0..2 {
                    for q in 0..2 {
                        s += d2[k][l][p][q] * h[p][q];
                        prop_assert!((d2[k][l][p][q] - d2[p][q][k][l]).abs() <= 1e-10 * (1.0 + d2[k][l][p][q].abs()));
                    }
                }
                prop_assert!(s.abs() <= 1e-10 * (1.0 + fkl[k][l].abs()), "Euler {}", s);
            }
        }
    }

    #[test]
    fn riemann_is_determined_by_ricci_in_three_dimensions(
        r in 3.0f64..200.0, th in 0.05f64..3.1, ph in 0.0f64..6.28,
        m in 0.0f64..3.0, bx in -1.0f64..1.0, by in -1.0f64..1.0,
    ) {
        let p = MetricParams::conformal_dipole(m.max(0.1), [bx, by, 0.0]);
        let x = [r * th.sin() * ph.cos(), r * th.sin() * ph.sin(), r * th.cos()];
        let jet = eval_jet(&p, x).unwrap();
        prop_assert!(jet.ricci_reconstruction_residual() <= 1e-12);
        prop_assert!(jet.symmetry_residual() <= 1e-14 * (1.0 + jet.ricci_norm()));
        prop_assert!(jet.bianchi_residual() <= 1e-12 / r.powi(3));
    }
}

fn grid12() -> &'static std::sync::Arc<SphericalGrid> {
    static G: OnceLock<std::sync::Arc<SphericalGrid>> = OnceLock::new();
    G.get_or_init(|| SphericalGrid::new(12).unwrap())
}

fn perturbed(sigma: f64, seed: u64, amp: f64) -> RadialGraph {
    let grid = grid12();
    let mut c = RadialGraph::random_coeffs(grid, 4, seed);
    c[0] = RadialGraph::round(grid.clone(), sigma).unwrap().coeffs[0];
    RadialGraph::from_coeffs(grid.clone(), c, sigma).unwrap().with_max_deviation(amp * sigma).unwrap()
}

/// The adjoint identity is an integration by parts, exact only up to the
/// quadrature error of non-polynomial integrands, hence the finer grid.
fn operators() -> &'static OperatorAssembly {
    static A: OnceLock<OperatorAssembly> = OnceLock::new();
    A.get_or_init(|| {
        let grid = SphericalGrid::new(28).unwrap();
        let mut c = RadialGraph::random_coeffs(&grid, 4, 5);
        c[0] = RadialGraph::round(grid.clone(), 12.0).unwrap().coeffs[0];
        let s = RadialGraph::from_coeffs(grid, c, 12.0).unwrap().with_max_deviation(0.6).unwrap();
        assemble(&s, &MetricParams::schwarzschild(1.0)).unwrap()
    })
}

fn band_limited(vals: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; operators().graph.grid.n_coeffs()];
    c[..vals.len()].copy_from_slice(vals);
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transforms_invert_on_band_limited_fields(vals in prop::collection::vec(-1.0f64..1.0, 144)) {
        let grid = grid12();
        let back = grid.analysis(&grid.synthesis(&vals));
        for (a, b) in vals.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn symmetrized_operator_is_symmetric_and_l_star_is_the_adjoint(
        u in prop::collection::vec(-1.0f64..1.0, 25),
        v in prop::collection::vec(-1.0f64..1.0, 25),
    ) {
        let asm = operators();
        let (u, v) = (band_limited(&u), band_limited(&v));
        let grid = &asm.graph.grid;
        let (un, vn) = (grid.synthesis(&u), grid.synthesis(&v));
        let norm = |x: &[f64]| asm.inner(x, x).sqrt();
        let (su, lu, lsv) = (asm.apply_s(&u), asm.apply_l(&u), asm.apply_l_star(&v));
        let a = asm.inner(&su, &vn);
        let b = asm.inner(&un, &asm.apply_s(&v));
        prop_assert!((a - b).abs() <= 1e-7 * norm(&su) * norm(&vn), "{} vs {}", a, b);
        let a = asm.inner(&lu, &vn);
        let b = asm.inner(&un, &lsv);
        prop_assert!((a - b).abs() <= 1e-7 * norm(&lu) * norm(&vn), "{} vs {}", a, b);
    }

    #[test]
    fn snapshots_round_trip_exactly(seed in 0u64..1000, sigma in 5.0f64..50.0, amp in 0.0f64..0.1) {
        let s = perturbed(sigma, seed, amp.max(1e-6));
        let json = s.snapshot().to_json();
        let back = RadialGraph::from_snapshot(grid12().clone(), &Snapshot::from_json(&json).unwrap()).unwrap();
        prop_assert_eq!(back.coeffs, s.coeffs);
        prop_assert_eq!(back.sigma_label, s.sigma_label);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn normal_speed_has_zero_mean(seed in 0u64..1000, amp in 0.005f64..0.04, m in 0.0f64..2.0) {
        let params = if m < 0.1 { MetricParams::flat() } else { MetricParams::schwarzschild(m) };
        let s = perturbed(15.0, seed, amp);
        let v = velocity(&s, &params).unwrap();
        let geo = evaluate(&s, &params, Level::Curvature).unwrap();
        let dens = geo.ext.area_density();
        let w = &s.grid.weights;
        let mean: f64 = v.normal_speed.iter().zip(&dens).zip(w).map(|((x, d), w)| x * d * w).sum();
        prop_assert!(mean.abs() <= 1e-12 * v.f * v.area);
    }

    #[test]
    fn gauss_and_codazzi_hold_on_random_graphs(seed in 0u64..1000, amp in 0.005f64..0.04) {
        let params = MetricParams::conformal_dipole(1.0, [0.2, -0.1, 0.3]);
        let s = perturbed(10.0, seed, amp);
        let geo = evaluate(&s, &params, Level::Gradient).unwrap();
        let der = geo.der.as_ref().unwrap();
        let kmax = der.nodes.iter().map(|n| n.intrinsic_k.abs()).fold(0.0, f64::max);
        prop_assert!(hmcf_core::geometry::gauss_residual(der) <= 1e-10 * kmax);
        let cs = der.nodes.iter().map(|n| n.codazzi_scale).fold(0.0, f64::max);
        prop_assert!(hmcf_core::geometry::codazzi_residual(der) <= 1e-10 * cs.max(kmax));
    }
}

#[test]
fn flat_volume_of_round_sphere() {
    let grid = SphericalGrid::new(16).unwrap();
    for sigma in [3.0, 10.0, 40.0] {
        let s = RadialGraph::round(grid.clone(), sigma).unwrap();
        let v = enclosed_volume(&s, &MetricParams::flat(), Some(1.5)).unwrap();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * (sigma.powi(3) - 1.5f64.powi(3));
        assert!((v - exact).abs() <= 1e-12 * exact, "{v} vs {exact}");
    }
}

#[test]
fn flow_config_defaults_validate() {
    FlowConfig::default().validate().unwrap();
    let bad = FlowConfig { stop_tol: -1.0, ..FlowConfig::default() };
    assert!(bad.validate().is_err());
}

#[test]
fn single_mode_graph_has_requested_shape() {
    let s = RadialGraph::with_modes(grid12().clone(), 10.0, &[Mode { l: 2, m: 0, amplitude: 0.1 }]).unwrap();
    let dev = s.max_rho() - s.min_rho();
    assert!(dev > 0.0 && dev < 1.0);
}
