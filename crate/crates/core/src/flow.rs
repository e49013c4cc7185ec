//! Volume-preserving harmonic mean curvature flow `∂_t X = (f − F)ν` for
//! radial graphs, where `f` is the area average of `F`.
//!
//! The radius function is advanced in spherical-harmonic coefficient space.
//! The default integrator is the additive ARS(4,4,3) scheme with the round
//! diffusion `κΔ_{S²}`, `κ = π/|Σ|`, treated implicitly (for a round sphere of
//! area `|Σ|` this is a quarter of its Laplace–Beltrami operator) and the
//! remainder explicitly. Classical RK4 is kept for cross-validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{evaluate, evaluate_with_variation, ExtrinsicField, Level};
use crate::metric::MetricParams;
use crate::sphere::{default_inner_radius, enclosed_volume, surface_integral, RadialGraph, Snapshot, SphericalGrid};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DtPolicy {
    Fixed { dt: f64 },
    Adaptive { cfl_constant: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub dt_policy: DtPolicy,
    pub t_max: f64,
    pub stop_tol: f64,
    pub filter_strength: f64,
    pub checkpoint_every: usize,
    pub imex: bool,
    /// Per-step relative volume change that triggers a rejected step.
    pub vol_step_tol: f64,
    pub max_steps: usize,
    /// Inner radius of the volume shell; `None` picks a default from the metric.
    pub r_in: Option<f64>,
    /// Evaluate `max|∇Å|` after every step (costs one extra geometry pass).
    pub monitor_gradient: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt_policy: DtPolicy::Adaptive { cfl_constant: 0.25 },
            t_max: 1e7,
            stop_tol: 1e-9,
            filter_strength: 36.0,
            checkpoint_every: 100,
            imex: true,
            vol_step_tol: 1e-10,
            max_steps: 200_000,
            r_in: None,
            monitor_gradient: true,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        match self.dt_policy {
            DtPolicy::Fixed { dt } if !(dt > 0.0 && dt.is_finite()) => {
                return Err(Error::Usage(format!("fixed dt must be positive, got {dt}")))
            }
            DtPolicy::Adaptive { cfl_constant } if !(cfl_constant > 0.0 && cfl_constant <= 1.0) => {
                return Err(Error::Usage(format!("cfl_constant must lie in (0, 1], got {cfl_constant}")))
            }
            _ => {}
        }
        if !(self.stop_tol > 0.0) {
            return Err(Error::Usage(format!("stop_tol must be positive, got {}", self.stop_tol)));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::Usage(format!("t_max must be positive, got {}", self.t_max)));
        }
        if self.filter_strength < 0.0 {
            return Err(Error::Usage("filter_strength must be nonnegative".into()));
        }
        if !(self.vol_step_tol > 0.0) {
            return Err(Error::Usage("vol_step_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Area average of `F`.
pub fn mean_value_f(ext: &ExtrinsicField, graph: &RadialGraph) -> Result<f64> {
    let dens = ext.area_density();
    let area = surface_integral(graph, &vec![1.0; dens.len()], &dens)?;
    Ok(surface_integral(graph, &ext.f_values(), &dens)? / area)
}

/// Flow velocity of a radial graph.
#[derive(Clone, Debug)]
pub struct VelocityField {
    pub f: f64,
    pub area: f64,
    /// `f − F` per node.
    pub normal_speed: Vec<f64>,
    /// `∂_t ρ` per node.
    pub nodal: Vec<f64>,
    /// Spectral coefficients of `∂_t ρ` (unfiltered).
    pub coeffs: Vec<f64>,
}

/// Converts the normal speed `f − F` into the radial speed
/// `∂_t ρ = (f − F)/ḡ(n̂, ν)`; the graph is degenerate when the normalized
/// cosine `ḡ(n̂, ν)/|n̂|_ḡ` drops to 0.1.
pub fn velocity_from_ext(ext: &ExtrinsicField, graph: &RadialGraph) -> Result<VelocityField> {
    let dens = ext.area_density();
    let area = surface_integral(graph, &vec![1.0; dens.len()], &dens)?;
    let f = surface_integral(graph, &ext.f_values(), &dens)? / area;
    let mut normal_speed = Vec::with_capacity(ext.nodes.len());
    let mut nodal = Vec::with_capacity(ext.nodes.len());
    for (node, n) in ext.nodes.iter().enumerate() {
        if n.radial_cosine <= 0.1 {
            return Err(Error::GraphDegeneracy {
                node,
                cosine: n.radial_cosine,
            });
        }
        let s = f - n.f;
        normal_speed.push(s);
        nodal.push(s / n.radial_dot);
    }
    let coeffs = graph.grid.analysis(&nodal);
    Ok(VelocityField {
        f,
        area,
        normal_speed,
        nodal,
        coeffs,
    })
}

pub fn velocity(graph: &RadialGraph, params: &MetricParams) -> Result<VelocityField> {
    let ext = evaluate(graph, params, Level::Curvature)?.ext;
    velocity_from_ext(&ext, graph)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorRow {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub f: f64,
    /// `∫(F − f)² dμ`.
    pub deficit: f64,
    pub max_aring: f64,
    pub max_grad_aring: f64,
    pub max_f_dev: f64,
    pub area: f64,
    pub volume: f64,
    pub max_rho_dev: f64,
}

impl MonitorRow {
    pub const CSV_HEADER: &'static str = "step,t,dt,f,deficit,max_aring,max_grad_aring,max_f_dev,area,volume,max_rho_dev";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.step,
            self.t,
            self.dt,
            self.f,
            self.deficit,
            self.max_aring,
            self.max_grad_aring,
            self.max_f_dev,
            self.area,
            self.volume,
            self.max_rho_dev
        )
    }

    /// `max|F − f|/f`.
    pub fn stationarity(&self) -> f64 {
        self.max_f_dev / self.f.abs()
    }

    /// `∫(F − f)² dμ / (f² |Σ|)`.
    pub fn relative_deficit(&self) -> f64 {
        self.deficit / (self.f * self.f * self.area)
    }
}

#[derive(Clone, Debug)]
pub struct FlowState {
    pub graph: RadialGraph,
    pub t: f64,
    pub vol0: f64,
    pub monitors: Vec<MonitorRow>,
    pub step_count: usize,
    /// Step size proposed for the next step.
    pub dt: f64,
    pub rejected: usize,
    velocity: VelocityField,
}

/// Serializable form of a [`FlowState`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowCheckpoint {
    pub surface: Snapshot,
    pub t: f64,
    pub vol0: f64,
    pub step_count: usize,
    pub dt: f64,
    pub rejected: usize,
    pub monitors: Vec<MonitorRow>,
}

impl FlowState {
    pub fn last(&self) -> &MonitorRow {
        self.monitors.last().expect("state always holds the initial monitor row")
    }

    pub fn velocity(&self) -> &VelocityField {
        &self.velocity
    }

    pub fn checkpoint(&self) -> FlowCheckpoint {
        FlowCheckpoint {
            surface: self.graph.snapshot(),
            t: self.t,
            vol0: self.vol0,
            step_count: self.step_count,
            dt: self.dt,
            rejected: self.rejected,
            monitors: self.monitors.clone(),
        }
    }

    /// Rebuilds a state; the cached velocity is recomputed deterministically.
    pub fn from_checkpoint(cp: &FlowCheckpoint, params: &MetricParams) -> Result<Self> {
        let grid = SphericalGrid::new(cp.surface.n_lat)?;
        let graph = RadialGraph::from_snapshot(grid, &cp.surface)?;
        let velocity = velocity(&graph, params)?;
        if cp.monitors.is_empty() {
            return Err(Error::Snapshot("checkpoint has no monitor rows".into()));
        }
        Ok(FlowState {
            graph,
            t: cp.t,
            vol0: cp.vol0,
            monitors: cp.monitors.clone(),
            step_count: cp.step_count,
            dt: cp.dt,
            rejected: cp.rejected,
            velocity,
        })
    }
}

fn r_in(config: &FlowConfig, params: &MetricParams) -> f64 {
    config.r_in.unwrap_or_else(|| default_inner_radius(params))
}

/// Geometry pass at an accepted state: velocity plus monitor row.
fn observe(
    graph: &RadialGraph,
    params: &MetricParams,
    config: &FlowConfig,
    step: usize,
    t: f64,
    dt: f64,
) -> Result<(VelocityField, MonitorRow)> {
    let level = if config.monitor_gradient { Level::Gradient } else { Level::Curvature };
    let geo = evaluate(graph, params, level)?;
    let vel = velocity_from_ext(&geo.ext, graph)?;
    let dens = geo.ext.area_density();
    let dev2: Vec<f64> = geo.ext.nodes.iter().map(|n| (n.f - vel.f).powi(2)).collect();
    let deficit = surface_integral(graph, &dev2, &dens)?;
    let max_f_dev = geo.ext.nodes.iter().map(|n| (n.f - vel.f).abs()).fold(0.0, f64::max);
    let volume = enclosed_volume(graph, params, Some(r_in(config, params)))?;
    let sigma = graph.sigma_label;
    let row = MonitorRow {
        step,
        t,
        dt,
        f: vel.f,
        deficit,
        max_aring: geo.ext.max_aring(),
        max_grad_aring: geo.der.as_ref().map_or(f64::NAN, |d| d.max_grad_aring()),
        max_f_dev,
        area: vel.area,
        volume,
        max_rho_dev: graph.rho.iter().map(|r| (r - sigma).abs()).fold(0.0, f64::max),
    };
    Ok((vel, row))
}

pub fn init_state(graph: RadialGraph, params: &MetricParams, config: &FlowConfig) -> Result<FlowState> {
    config.validate()?;
    params.validate()?;
    let (velocity, row) = observe(&graph, params, config, 0, 0.0, 0.0)?;
    let dt = initial_dt(&graph, params, config);
    Ok(FlowState {
        vol0: row.volume,
        graph,
        t: 0.0,
        monitors: vec![row],
        step_count: 0,
        dt,
        rejected: 0,
        velocity,
    })
}

/// Largest IMEX step: `0.01 σ³/m`, with `m` replaced by 1 for flat backgrounds.
pub fn imex_dt_cap(sigma: f64, params: &MetricParams) -> f64 {
    let m = if params.mass > 0.0 { params.mass } else { 1.0 };
    0.01 * sigma.powi(3) / m
}

/// Explicit step `cfl · 2 · (min meridian arclength)²`.
pub fn explicit_dt(graph: &RadialGraph, cfl: f64) -> f64 {
    let th = &graph.grid.theta;
    let mut dmin = th[0].min(std::f64::consts::PI - th[th.len() - 1]);
    for w in th.windows(2) {
        dmin = dmin.min((w[1] - w[0]).abs());
    }
    let h = dmin * graph.min_rho();
    cfl * 2.0 * h * h
}

fn initial_dt(graph: &RadialGraph, params: &MetricParams, config: &FlowConfig) -> f64 {
    match config.dt_policy {
        DtPolicy::Fixed { dt } => dt,
        DtPolicy::Adaptive { cfl_constant } => {
            if config.imex {
                (1e-3 * graph.sigma_label.powi(2)).min(imex_dt_cap(graph.sigma_label, params))
            } else {
                explicit_dt(graph, cfl_constant)
            }
        }
    }
}

// ARS(4,4,3): implicit tableau (diagonal 1/2) and explicit tableau.
const ARS_A: [[f64; 5]; 5] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.5, 0.0, 0.0, 0.0],
    [0.0, 1.0 / 6.0, 0.5, 0.0, 0.0],
    [0.0, -0.5, 0.5, 0.5, 0.0],
    [0.0, 1.5, -1.5, 0.5, 0.5],
];
const ARS_AHAT: [[f64; 5]; 5] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [0.5, 0.0, 0.0, 0.0, 0.0],
    [11.0 / 18.0, 1.0 / 18.0, 0.0, 0.0, 0.0],
    [5.0 / 6.0, -5.0 / 6.0, 0.5, 0.0, 0.0],
    [0.25, 1.75, 0.75, -1.75, 0.0],
];
pub const ARS_C: [f64; 5] = [0.0, 0.5, 2.0 / 3.0, 0.5, 1.0];

/// One ARS(4,4,3) step of `y' = N(y) + λ∘y` with a diagonal stiff part `λ`.
/// `n0` is `N(y0)`; the scheme is stiffly accurate so the last stage is the
/// new value.
pub fn ars443_step(
    y0: &[f64],
    n0: &[f64],
    lambda: &[f64],
    dt: f64,
    mut explicit: impl FnMut(usize, &[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let n = y0.len();
    let mut ys: Vec<Vec<f64>> = vec![y0.to_vec()];
    let mut ns: Vec<Vec<f64>> = vec![n0.to_vec()];
    for i in 1..5 {
        let mut rhs = y0.to_vec();
        for j in 0..i {
            let ah = ARS_AHAT[i][j];
            if ah != 0.0 {
                for k in 0..n {
                    rhs[k] += dt * ah * ns[j][k];
                }
            }
            let a = ARS_A[i][j];
            if a != 0.0 {
                for k in 0..n {
                    rhs[k] += dt * a * lambda[k] * ys[j][k];
                }
            }
        }
        let gamma = ARS_A[i][i];
        let y: Vec<f64> = rhs.iter().zip(lambda).map(|(r, l)| r / (1.0 - dt * gamma * l)).collect();
        if i < 4 {
            ns.push(explicit(i, &y)?);
        }
        ys.push(y);
    }
    Ok(ys.pop().unwrap())
}

/// One classical RK4 step of `y' = V(y)` with `v0 = V(y0)`.
pub fn rk4_step(
    y0: &[f64],
    v0: &[f64],
    dt: f64,
    mut rhs: impl FnMut(usize, &[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let axpy = |a: f64, x: &[f64]| -> Vec<f64> { y0.iter().zip(x).map(|(y, v)| y + a * v).collect() };
    let k1 = v0.to_vec();
    let k2 = rhs(1, &axpy(0.5 * dt, &k1))?;
    let k3 = rhs(2, &axpy(0.5 * dt, &k2))?;
    let k4 = rhs(3, &axpy(dt, &k3))?;
    Ok((0..y0.len())
        .map(|i| y0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

fn filtered(grid: &SphericalGrid, coeffs: &[f64], strength: f64) -> Vec<f64> {
    let mut c = coeffs.to_vec();
    grid.apply_filter(&mut c, strength);
    c
}

/// Advances coefficients by one step without acceptance logic.
fn advance(state: &FlowState, dt: f64, config: &FlowConfig, params: &MetricParams) -> Result<Vec<f64>> {
    let grid = state.graph.grid.clone();
    let sigma = state.graph.sigma_label;
    let s = config.filter_strength;
    let v_of = |c: &[f64]| -> Result<Vec<f64>> {
        let g = RadialGraph::from_coeffs(grid.clone(), c.to_vec(), sigma)?;
        Ok(filtered(&grid, &velocity(&g, params)?.coeffs, s))
    };
    let v0 = filtered(&grid, &state.velocity.coeffs, s);
    if config.imex {
        let kappa = std::f64::consts::PI / state.velocity.area;
        let lambda: Vec<f64> = grid.degrees().iter().map(|&l| -kappa * (l * (l + 1)) as f64).collect();
        let stiff = |c: &[f64]| -> Vec<f64> { c.iter().zip(&lambda).map(|(x, l)| x * l).collect() };
        let n0: Vec<f64> = v0.iter().zip(stiff(&state.graph.coeffs)).map(|(v, k)| v - k).collect();
        ars443_step(&state.graph.coeffs, &n0, &lambda, dt, |_, y| {
            let v = v_of(y)?;
            Ok(v.iter().zip(stiff(y)).map(|(v, k)| v - k).collect())
        })
    } else {
        rk4_step(&state.graph.coeffs, &v0, dt, |_, y| v_of(y))
    }
}

fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::MeanConvexity { .. }
            | Error::FSingularity { .. }
            | Error::GraphDegeneracy { .. }
            | Error::VolumeDomain { .. }
            | Error::Validity { .. }
            | Error::Domain { .. }
    )
}

/// Performs one accepted time step, halving `dt` on rejection.
pub fn step(state: &FlowState, config: &FlowConfig, params: &MetricParams) -> Result<FlowState> {
    let sigma = state.graph.sigma_label;
    let adaptive = matches!(config.dt_policy, DtPolicy::Adaptive { .. });
    let dt_floor = 1e-12 * sigma * sigma;
    let mut dt = match config.dt_policy {
        DtPolicy::Fixed { dt } => dt,
        DtPolicy::Adaptive { cfl_constant } if !config.imex => explicit_dt(&state.graph, cfl_constant),
        _ => state.dt,
    };
    let mut rejected = state.rejected;
    loop {
        if dt < dt_floor {
            return Err(Error::DtUnderflow { t: state.t, dt });
        }
        let attempt = advance(state, dt, config, params).and_then(|c| {
            let g = RadialGraph::from_coeffs(state.graph.grid.clone(), c, sigma)?;
            let (v, row) = observe(&g, params, config, state.step_count + 1, state.t + dt, dt)?;
            Ok((g, v, row))
        });
        match attempt {
            Ok((graph, velocity, row)) => {
                let delta = (row.volume - state.last().volume).abs() / state.vol0;
                if adaptive && config.imex && delta > config.vol_step_tol {
                    dt *= 0.5;
                    rejected += 1;
                    continue;
                }
                let next_dt = if adaptive && config.imex {
                    let grow = if delta > 0.0 {
                        (0.9 * (config.vol_step_tol / delta).powf(0.25)).min(2.0)
                    } else {
                        2.0
                    };
                    (dt * grow).min(imex_dt_cap(sigma, params))
                } else {
                    dt
                };
                let mut monitors = state.monitors.clone();
                monitors.push(row);
                return Ok(FlowState {
                    graph,
                    t: state.t + dt,
                    vol0: state.vol0,
                    monitors,
                    step_count: state.step_count + 1,
                    dt: next_dt,
                    rejected,
                    velocity,
                });
            }
            Err(e) if adaptive && recoverable(&e) => {
                dt *= 0.5;
                rejected += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Least-squares exponential fit of the deficit series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Decay rate `ρ` in `∫(F−f)² ∝ e^{−ρt}`.
    pub rate: f64,
    pub r_squared: f64,
    pub points: usize,
    pub t_start: f64,
    pub t_end: f64,
}

/// Fits `log ∫(F−f)²` against `t` over the decade of relative deficit
/// `[100·tol², 1000·tol²]`; falls back to the last available decade when that
/// window holds fewer than three samples.
pub fn fit_decay_rate(monitors: &[MonitorRow], stop_tol: f64) -> Option<RateFit> {
    let lo = 100.0 * stop_tol * stop_tol;
    let pts: Vec<(f64, f64)> = monitors
        .iter()
        .filter(|r| {
            let d = r.relative_deficit();
            d >= lo && d <= 10.0 * lo && r.deficit > 0.0
        })
        .map(|r| (r.t, r.deficit.ln()))
        .collect();
    let pts = if pts.len() >= 3 {
        pts
    } else {
        let last = monitors.iter().rev().find(|r| r.deficit > 0.0)?;
        let floor = last.relative_deficit();
        monitors
            .iter()
            .filter(|r| r.deficit > 0.0 && r.relative_deficit() <= 10.0 * floor)
            .map(|r| (r.t, r.deficit.ln()))
            .collect()
    };
    if pts.len() < 3 {
        return None;
    }
    let (slope, r2) = linear_fit(&pts)?;
    Some(RateFit {
        rate: -slope,
        r_squared: r2,
        points: pts.len(),
        t_start: pts[0].0,
        t_end: pts[pts.len() - 1].0,
    })
}

/// Ordinary least-squares slope and `R²` of `y` against `x`.
pub fn linear_fit(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, r2))
}

#[derive(Clone, Debug)]
pub struct LeafResult {
    pub leaf: RadialGraph,
    pub f_sigma: f64,
    pub converged: bool,
    pub rate: Option<RateFit>,
    pub state: FlowState,
}

impl LeafResult {
    pub fn monitors(&self) -> &[MonitorRow] {
        &self.state.monitors
    }

    /// `max_t |Vol(t) − Vol(0)|/Vol(0)`.
    pub fn volume_drift(&self) -> f64 {
        let v0 = self.state.vol0;
        self.state.monitors.iter().map(|r| (r.volume - v0).abs() / v0).fold(0.0, f64::max)
    }
}

/// Continues a flow until `max|F − f|/f ≤ stop_tol`, `t_max` or `max_steps`.
/// `on_step` sees every accepted state (used for checkpoints).
pub fn continue_to_leaf(
    mut state: FlowState,
    config: &FlowConfig,
    params: &MetricParams,
    on_step: &mut dyn FnMut(&FlowState) -> Result<()>,
) -> Result<LeafResult> {
    let mut converged = state.last().stationarity() <= config.stop_tol;
    while !converged && state.t < config.t_max && state.step_count < config.max_steps {
        state = step(&state, config, params)?;
        on_step(&state)?;
        converged = state.last().stationarity() <= config.stop_tol;
    }
    let rate = fit_decay_rate(&state.monitors, config.stop_tol);
    Ok(LeafResult {
        leaf: state.graph.clone(),
        f_sigma: state.last().f,
        converged,
        rate,
        state,
    })
}

pub fn run_to_leaf(initial: RadialGraph, config: &FlowConfig, params: &MetricParams) -> Result<LeafResult> {
    let state = init_state(initial, params, config)?;
    continue_to_leaf(state, config, params, &mut |_| Ok(()))
}

/// Finite-difference-in-time check of the evolution equations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvolutionResidual {
    pub quantity: String,
    pub dt: f64,
    /// `max |FD(dt) − RHS|`.
    pub residual: f64,
    /// Same with step `dt/2`.
    pub residual_half: f64,
    /// Richardson-extrapolated difference `max |2FD(dt/2) − FD(dt) − RHS|`.
    pub residual_extrapolated: f64,
    /// `max |RHS|`.
    pub scale: f64,
}

impl EvolutionResidual {
    pub fn relative(&self) -> f64 {
        self.residual / self.scale.max(f64::MIN_POSITIVE)
    }

    /// `residual_half/residual`, about 0.5 for first-order agreement.
    pub fn refinement_ratio(&self) -> f64 {
        self.residual_half / self.residual
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvolutionReport {
    pub rows: Vec<EvolutionResidual>,
}

impl EvolutionReport {
    pub fn get(&self, q: &str) -> Option<&EvolutionResidual> {
        self.rows.iter().find(|r| r.quantity == q)
    }
}

/// Compares one-sided time differences of `g_ij`, `dμ`, `H` and `F` at fixed
/// nodes with their evolution equations. The nodes move radially, so each
/// right-hand side carries the Lie derivative along the tangential part `T`
/// of `∂_tρ n̂ = uν + T`.
pub fn evolution_residuals(graph: &RadialGraph, params: &MetricParams, dt_probe: f64) -> Result<EvolutionReport> {
    let vel = velocity(graph, params)?;
    let (geo, var) = evaluate_with_variation(graph, params, Level::Full, &vel.coeffs)?;
    let der = geo.der.as_ref().expect("full level");
    let probe = |dt: f64| -> Result<ExtrinsicField> {
        let c: Vec<f64> = graph.coeffs.iter().zip(&vel.coeffs).map(|(a, b)| a + dt * b).collect();
        let g = RadialGraph::from_coeffs(graph.grid.clone(), c, graph.sigma_label)?;
        Ok(evaluate(&g, params, Level::Curvature)?.ext)
    };
    let e1 = probe(dt_probe)?;
    let e2 = probe(0.5 * dt_probe)?;
    let n = geo.ext.nodes.len();

    let mut rhs_g = Vec::with_capacity(n);
    let mut rhs_mu = Vec::with_capacity(n);
    let mut rhs_h = Vec::with_capacity(n);
    let mut rhs_f = Vec::with_capacity(n);
    for i in 0..n {
        let e = &geo.ext.nodes[i];
        let d = &der.nodes[i];
        let full = d.full.as_ref().expect("full level");
        let v = &var[i];
        let s = v.u;
        let mut gdot = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                gdot[a][b] = 2.0 * s * e.h[a][b] + v.lie_g[a][b];
            }
        }
        rhs_g.push(gdot);
        rhs_mu.push((s * e.mean + v.div_t) * e.area_density);
        let lap_u = e.ginv[0][0] * v.hess_u[0][0]
            + 2.0 * e.ginv[0][1] * v.hess_u[0][1]
            + e.ginv[1][1] * v.hess_u[1][1];
        let l_u = (0..2)
            .map(|k| (0..2).map(|l| d.f_kl[k][l] * v.hess_u[k][l]).sum::<f64>())
            .sum::<f64>();
        let t_h = v.t_upper[0] * d.grad_mean[0] + v.t_upper[1] * d.grad_mean[1];
        let t_f = v.t_upper[0] * d.grad_f[0] + v.t_upper[1] * d.grad_f[1];
        rhs_h.push(-lap_u - s * (e.a2 + full.ric_nu_nu) + t_h);
        rhs_f.push(-l_u - s * (2.0 * e.f * e.f - full.f_r3k3l) + t_f);
    }

    let mut rows = Vec::new();
    let scalar = |name: &str, q: &dyn Fn(&crate::geometry::NodeExtrinsic) -> f64, rhs: &[f64]| {
        let mut r1 = 0.0f64;
        let mut r2 = 0.0f64;
        let mut rx = 0.0f64;
        let mut sc = 0.0f64;
        for i in 0..n {
            let q0 = q(&geo.ext.nodes[i]);
            let fd1 = (q(&e1.nodes[i]) - q0) / dt_probe;
            let fd2 = (q(&e2.nodes[i]) - q0) / (0.5 * dt_probe);
            r1 = r1.max((fd1 - rhs[i]).abs());
            r2 = r2.max((fd2 - rhs[i]).abs());
            rx = rx.max((2.0 * fd2 - fd1 - rhs[i]).abs());
            sc = sc.max(rhs[i].abs());
        }
        EvolutionResidual {
            quantity: name.to_string(),
            dt: dt_probe,
            residual: r1,
            residual_half: r2,
            residual_extrapolated: rx,
            scale: sc,
        }
    };
    // the metric is compared componentwise in the norm of g
    {
        let mut r1 = 0.0f64;
        let mut r2 = 0.0f64;
        let mut rx = 0.0f64;
        let mut sc = 0.0f64;
        for i in 0..n {
            let gi = geo.ext.nodes[i].ginv;
            let norm = |m: [[f64; 2]; 2]| -> f64 {
                let mut s = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        for c in 0..2 {
                            for d in 0..2 {
                                s += gi[a][c] * gi[b][d] * m[a][b] * m[c][d];
                            }
                        }
                    }
                }
                s.max(0.0).sqrt()
            };
            let g0 = geo.ext.nodes[i].g;
            let mut d1 = [[0.0; 2]; 2];
            let mut d2 = [[0.0; 2]; 2];
            let mut dx = [[0.0; 2]; 2];
            for a in 0..2 {
                for b in 0..2 {
                    let f1 = (e1.nodes[i].g[a][b] - g0[a][b]) / dt_probe;
                    let f2 = (e2.nodes[i].g[a][b] - g0[a][b]) / (0.5 * dt_probe);
                    d1[a][b] = f1 - rhs_g[i][a][b];
                    d2[a][b] = f2 - rhs_g[i][a][b];
                    dx[a][b] = 2.0 * f2 - f1 - rhs_g[i][a][b];
                }
            }
            r1 = r1.max(norm(d1));
            r2 = r2.max(norm(d2));
            rx = rx.max(norm(dx));
            sc = sc.max(norm(rhs_g[i]));
        }
        rows.push(EvolutionResidual {
            quantity: "g".into(),
            dt: dt_probe,
            residual: r1,
            residual_half: r2,
            residual_extrapolated: rx,
            scale: sc,
        });
    }
    rows.push(scalar("dmu", &|e| e.area_density, &rhs_mu));
    rows.push(scalar("H", &|e| e.mean, &rhs_h));
    rows.push(scalar("F", &|e| e.f, &rhs_f));
    Ok(EvolutionReport { rows })
}

/// Grid shared by the graph and a candidate coefficient vector.
pub fn graph_with(graph: &RadialGraph, coeffs: Vec<f64>) -> Result<RadialGraph> {
    RadialGraph::from_coeffs(Arc::clone(&graph.grid), coeffs, graph.sigma_label)
}
