//! Experiment pipelines behind the subcommands.

use std::path::Path;

use hmcf_core::flow::{continue_to_leaf, init_state, FlowCheckpoint, FlowState, LeafResult, MonitorRow};
use hmcf_core::foliation::{build_foliation, center_report, coordinate_sphere, lapse, power_law_exponent, FoliationLeaf, LapseReport};
use hmcf_core::geometry::{self, diagnostic_csv, evaluate, kato_inequality_check, Level};
use hmcf_core::sphere::{RadialGraph, Snapshot, SphericalGrid};
use hmcf_core::stability::{assemble, first_variation_check, spectrum_report};
use hmcf_core::{eval_jet, flow, MetricParams};
use serde::Serialize;
use serde_json::json;

use crate::config::{Kind, RunConfig};
use crate::output::{fmt17, RunDir};
use crate::LabError;

/// Result of a pipeline: summary for the manifest and whether everything
/// converged.
pub struct Outcome {
    pub summary: serde_json::Value,
    pub converged: bool,
    pub checks_passed: bool,
}

pub const CONFIG_FILE: &str = "config.resolved.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

pub fn run(kind: Kind, cfg: &RunConfig, dir: &mut RunDir) -> Result<Outcome, LabError> {
    cfg.validate(kind)?;
    let mut resolved = cfg.clone();
    resolved.kind = Some(kind);
    dir.write(CONFIG_FILE, resolved.to_toml().as_bytes())?;
    let params = cfg.metric.params()?;
    match kind {
        Kind::Flow => {
            let init = cfg.perturbation.surface(cfg.grid.n_lat, cfg.sigma[0], cfg.seed)?;
            let state = init_state(init, &params, &cfg.flow)?;
            flow_from(state, cfg, &params, dir)
        }
        Kind::Foliate => foliate(cfg, &params, dir),
        Kind::Spectrum => spectrum(cfg, &params, dir),
        Kind::Center => center(cfg, &params, dir),
        Kind::Check => check(cfg, &params, dir),
    }
}

/// Continues a flow run from the checkpoint in `run_dir`.
pub fn resume(run_dir: &Path, overrides: &[String]) -> Result<(RunConfig, Outcome, RunDir), LabError> {
    let text = std::fs::read_to_string(run_dir.join(CONFIG_FILE))
        .map_err(|e| LabError::MissingInput(format!("{}: {e}", run_dir.join(CONFIG_FILE).display())))?;
    let cfg = crate::config::load(&text, overrides)?;
    if cfg.kind != Some(Kind::Flow) {
        return Err(LabError::Config("only flow runs can be resumed".into()));
    }
    let cp_text = std::fs::read_to_string(run_dir.join(CHECKPOINT_FILE))
        .map_err(|e| LabError::MissingInput(format!("{}: {e}", run_dir.join(CHECKPOINT_FILE).display())))?;
    let cp: FlowCheckpoint = serde_json::from_str(&cp_text).map_err(|e| LabError::Config(format!("checkpoint: {e}")))?;
    let params = cfg.metric.params()?;
    let state = FlowState::from_checkpoint(&cp, &params)?;
    let mut dir = RunDir::create(run_dir.to_path_buf())?;
    dir.write(CONFIG_FILE, cfg.to_toml().as_bytes())?;
    let out = flow_from(state, &cfg, &params, &mut dir)?;
    Ok((cfg, out, dir))
}

fn monitors_csv(rows: &[MonitorRow]) -> String {
    let mut s = String::from(MonitorRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

fn write_checkpoint(dir: &mut RunDir, state: &FlowState) -> Result<(), LabError> {
    dir.write("monitors.csv", monitors_csv(&state.monitors).as_bytes())?;
    dir.write_json(CHECKPOINT_FILE, &state.checkpoint())
}

#[derive(Serialize)]
struct LeafFile<'a> {
    surface: Snapshot,
    f_sigma: f64,
    converged: bool,
    steps: usize,
    t: f64,
    rejected_steps: usize,
    volume_drift: f64,
    rate: Option<flow::RateFit>,
    final_monitor: &'a MonitorRow,
}

fn flow_from(state: FlowState, cfg: &RunConfig, params: &MetricParams, dir: &mut RunDir) -> Result<Outcome, LabError> {
    let every = cfg.flow.checkpoint_every.max(1);
    if state.step_count == 0 {
        write_checkpoint(dir, &state)?;
    }
    let mut ckpt_err: Option<LabError> = None;
    let res: LeafResult = continue_to_leaf(state, &cfg.flow, params, &mut |s| {
        if s.step_count % every == 0 {
            if let Err(e) = write_checkpoint(dir, s) {
                ckpt_err = Some(e);
                return Err(hmcf_core::Error::Usage("checkpoint write failed".into()));
            }
        }
        Ok(())
    })
    .map_err(|e| ckpt_err.take().unwrap_or(LabError::Numeric(e)))?;
    write_checkpoint(dir, &res.state)?;
    let leaf = LeafFile {
        surface: res.leaf.snapshot(),
        f_sigma: res.f_sigma,
        converged: res.converged,
        steps: res.state.step_count,
        t: res.state.t,
        rejected_steps: res.state.rejected,
        volume_drift: res.volume_drift(),
        rate: res.rate,
        final_monitor: res.state.last(),
    };
    dir.write_json("leaf.json", &leaf)?;
    Ok(Outcome {
        summary: json!({
            "converged": res.converged,
            "steps": res.state.step_count,
            "t": res.state.t,
            "f_sigma": res.f_sigma,
            "volume_drift": res.volume_drift(),
            "rate": res.rate,
        }),
        converged: res.converged,
        checks_passed: true,
    })
}

#[derive(Serialize)]
struct FoliationFile {
    sigma: Vec<f64>,
    m: f64,
    leaves: Vec<LeafEntry>,
    lapse: Vec<LapseReport>,
    min_lapse: f64,
    nested: bool,
    aring_exponent: Option<f64>,
    grad_aring_exponent: Option<f64>,
}

#[derive(Serialize)]
struct LeafEntry {
    #[serde(flatten)]
    leaf: FoliationLeaf,
    min_lapse: Option<f64>,
}

fn foliation_outputs(
    cfg: &RunConfig,
    params: &MetricParams,
    dir: &mut RunDir,
) -> Result<(Vec<FoliationLeaf>, serde_json::Value, bool), LabError> {
    let leaves = build_foliation(params, &cfg.sigma, &cfg.flow, cfg.grid.n_lat)?;
    let mut lapses = Vec::new();
    for w in leaves.windows(2) {
        lapses.push(lapse(w[0].graph(), w[1].graph(), params)?);
    }
    for l in &leaves {
        dir.write_json(&format!("leaves/leaf_{:.3}.json", l.sigma), &l.graph().snapshot())?;
    }
    let min_lapse = lapses.iter().map(|l| l.min_lapse).fold(f64::INFINITY, f64::min);
    let nested = lapses.iter().all(|l| l.min_gap > 0.0);
    let sig: Vec<f64> = leaves.iter().map(|l| l.sigma).collect();
    let aring: Vec<f64> = leaves.iter().map(|l| l.max_aring).collect();
    let grad: Vec<f64> = leaves.iter().map(|l| l.max_grad_aring).collect();
    let file = FoliationFile {
        sigma: sig.clone(),
        m: params.mass,
        leaves: leaves
            .iter()
            .enumerate()
            .map(|(i, l)| LeafEntry {
                leaf: l.clone(),
                min_lapse: lapses.get(i).map(|x| x.min_lapse),
            })
            .collect(),
        min_lapse,
        nested,
        aring_exponent: power_law_exponent(&sig, &aring).map(|p| p.0),
        grad_aring_exponent: power_law_exponent(&sig, &grad).map(|p| p.0),
        lapse: lapses,
    };
    dir.write_json("foliation.json", &file)?;
    let converged = leaves.iter().all(|l| l.converged);
    let summary = json!({
        "leaves": leaves.len(),
        "converged": converged,
        "min_lapse": if min_lapse.is_finite() { Some(min_lapse) } else { None },
        "nested": nested,
        "aring_exponent": file.aring_exponent,
        "grad_aring_exponent": file.grad_aring_exponent,
    });
    Ok((leaves, summary, converged))
}

fn foliate(cfg: &RunConfig, params: &MetricParams, dir: &mut RunDir) -> Result<Outcome, LabError> {
    let (_, summary, converged) = foliation_outputs(cfg, params, dir)?;
    Ok(Outcome {
        summary,
        converged,
        checks_passed: true,
    })
}

fn center(cfg: &RunConfig, params: &MetricParams, dir: &mut RunDir) -> Result<Outcome, LabError> {
    let (leaves, fol, converged) = foliation_outputs(cfg, params, dir)?;
    let report = center_report(&leaves, params, &cfg.center.radii, cfg.center.adm_n_lat)?;
    dir.write_json("center.json", &report)?;
    Ok(Outcome {
        summary: json!({
            "foliation": fol,
            "c_hm": report.c_hm,
            "c_adm": report.c_adm,
            "difference": report.difference,
        }),
        converged,
        checks_passed: true,
    })
}

fn spectrum(cfg: &RunConfig, params: &MetricParams, dir: &mut RunDir) -> Result<Outcome, LabError> {
    let grid = SphericalGrid::new(cfg.grid.n_lat)?;
    let mut reports = Vec::new();
    let mut converged = true;
    for &sigma in &cfg.sigma {
        let init = coordinate_sphere(grid.clone(), sigma, params.offset)?;
        let state = init_state(init, params, &cfg.flow)?;
        let res = continue_to_leaf(state, &cfg.flow, params, &mut |_| Ok(()))?;
        converged &= res.converged;
        let asm = assemble(&res.leaf, params)?;
        reports.push(spectrum_report(&asm, params, cfg.spectrum.k)?);
    }
    dir.write_json("spectrum.json", &reports)?;
    Ok(Outcome {
        summary: json!({ "spectra": reports.len(), "converged": converged }),
        converged,
        checks_passed: true,
    })
}

#[derive(Serialize)]
pub struct CheckItem {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn item(name: &str, value: f64, tolerance: f64) -> CheckItem {
    CheckItem {
        name: name.to_string(),
        value,
        tolerance,
        pass: value <= tolerance,
    }
}

/// Identity and consistency suite on the configured initial surface.
pub fn check_items(surface: &RadialGraph, params: &MetricParams, eps_list: &[f64], dt_probe: f64) -> Result<Vec<CheckItem>, LabError> {
    let geo = evaluate(surface, params, Level::Full)?;
    let der = geo.der.as_ref().expect("full level");
    let mut items = Vec::new();
    let kmax = der.nodes.iter().map(|n| n.intrinsic_k.abs()).fold(0.0, f64::max);
    items.push(item("gauss_equation", geometry::gauss_residual(der) / kmax, 1e-10));
    let cscale = der.nodes.iter().map(|n| n.codazzi_scale).fold(0.0, f64::max).max(kmax);
    items.push(item("codazzi_equation", geometry::codazzi_residual(der) / cscale, 1e-10));
    let sscale = der
        .nodes
        .iter()
        .map(|n| n.full.as_ref().map_or(0.0, |f| f.simons_scale))
        .fold(0.0, f64::max);
    items.push(item("simons_identity", geometry::simons_residual(der) / sscale, 1e-8));
    let fmax = geo.ext.nodes.iter().map(|n| n.f.abs()).fold(0.0, f64::max);
    items.push(item("trace_identity", geo.ext.max_trace_identity_error() / fmax, 1e-12));
    items.push(item("square_identity", geo.ext.max_square_identity_error() / (fmax * fmax), 1e-12));
    let step = (geo.ext.nodes.len() / 64).max(1);
    let mut recon = 0.0f64;
    for n in geo.ext.nodes.iter().step_by(step) {
        recon = recon.max(eval_jet(params, n.point)?.ricci_reconstruction_residual());
    }
    items.push(item("riemann_from_ricci", recon, 1e-12));
    let kato = kato_inequality_check(der);
    let k1 = kato.first_order_violations.iter().map(|v| v.len()).sum::<usize>();
    items.push(item("kato_first_order_violations", k1 as f64, 0.0));
    let k2 = kato.second_order_violations.iter().map(|v| v.len()).sum::<usize>();
    items.push(item("kato_second_order_violations", k2 as f64, 0.0));

    let evo = flow::evolution_residuals(surface, params, dt_probe)?;
    for r in &evo.rows {
        // first-order agreement: halving dt halves the residual, unless both
        // sides vanish to round-off
        let floor = 1e-9 * r.scale.max(1e-12);
        let ratio = r.refinement_ratio();
        let value = if r.residual <= floor { 0.0 } else { (ratio - 0.5).abs() };
        items.push(item(&format!("evolution_{}_refinement", r.quantity), value, 0.1));
    }

    let mut u = vec![0.0; surface.coeffs.len()];
    u[SphericalGrid::coeff_index(2, 0, false)] = 1.0;
    u[0] = 0.5;
    let fv = first_variation_check(surface, params, &u, eps_list)?;
    let worst = fv.orders.iter().map(|o| (o - 1.0).abs()).fold(0.0, f64::max);
    let floor = fv.residuals.iter().all(|r| *r <= 1e-9 * fv.scale);
    items.push(item("first_variation_order", if floor { 0.0 } else { worst }, 0.2));
    Ok(items)
}

fn check(cfg: &RunConfig, params: &MetricParams, dir: &mut RunDir) -> Result<Outcome, LabError> {
    let surface = cfg.perturbation.surface(cfg.grid.n_lat, cfg.sigma[0], cfg.seed)?;
    let items = check_items(&surface, params, &cfg.check.eps_list, cfg.check.dt_probe)?;
    let geo = evaluate(&surface, params, Level::Gradient)?;
    dir.write("diagnostics.csv", diagnostic_csv(&geo.ext, geo.der.as_ref()).as_bytes())?;
    let all = items.iter().all(|i| i.pass);
    dir.write_json("check.json", &json!({ "items": items, "all_pass": all }))?;
    Ok(Outcome {
        summary: json!({ "all_pass": all, "failed": items.iter().filter(|i| !i.pass).map(|i| i.name.clone()).collect::<Vec<_>>() }),
        converged: true,
        checks_passed: all,
    })
}

/// Tidy CSVs for plotting from whatever outputs `run_dir` holds.
pub fn plot_data(run_dir: &Path) -> Result<Vec<String>, LabError> {
    let mut written = Vec::new();
    let monitors = run_dir.join("monitors.csv");
    if monitors.exists() {
        let text = std::fs::read_to_string(&monitors)?;
        let mut out = String::from("t,log_F_deficit\n");
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
        let it = header.iter().position(|h| *h == "t");
        let id = header.iter().position(|h| *h == "deficit");
        let (Some(it), Some(id)) = (it, id) else {
            return Err(LabError::MissingInput("monitors.csv lacks t/deficit columns".into()));
        };
        for line in lines {
            let cols: Vec<&str> = line.split(',').collect();
            let t: f64 = cols[it].parse().map_err(|_| LabError::MissingInput("bad monitors.csv".into()))?;
            let d: f64 = cols[id].parse().map_err(|_| LabError::MissingInput("bad monitors.csv".into()))?;
            if d > 0.0 {
                out.push_str(&format!("{},{}\n", fmt17(t), fmt17(d.ln())));
            }
        }
        crate::output::write_atomic(&run_dir.join("decay.csv"), out.as_bytes())?;
        written.push("decay.csv".to_string());
    }
    let foliation = run_dir.join("foliation.json");
    if foliation.exists() {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&foliation)?)
            .map_err(|e| LabError::MissingInput(format!("foliation.json: {e}")))?;
        let mut out = String::from("sigma,log_sigma,max_aring,log_max_aring,max_grad_aring,log_max_grad_aring,f_sigma,min_lapse\n");
        for leaf in v["leaves"].as_array().cloned().unwrap_or_default() {
            let s = leaf["sigma"].as_f64().unwrap_or(f64::NAN);
            let a = leaf["max_aring"].as_f64().unwrap_or(f64::NAN);
            let g = leaf["max_grad_aring"].as_f64().unwrap_or(f64::NAN);
            let f = leaf["f_sigma"].as_f64().unwrap_or(f64::NAN);
            let l = leaf["min_lapse"].as_f64().unwrap_or(f64::NAN);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                fmt17(s),
                fmt17(s.ln()),
                fmt17(a),
                fmt17(a.ln()),
                fmt17(g),
                fmt17(g.ln()),
                fmt17(f),
                fmt17(l)
            ));
        }
        crate::output::write_atomic(&run_dir.join("scaling.csv"), out.as_bytes())?;
        written.push("scaling.csv".to_string());
    }
    let spectrum = run_dir.join("spectrum.json");
    if spectrum.exists() {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&spectrum)?)
            .map_err(|e| LabError::MissingInput(format!("spectrum.json: {e}")))?;
        let mut out = String::from("sigma,m,eta0,mu0,mu0_sigma3\n");
        for r in v.as_array().cloned().unwrap_or_default() {
            let s = r["sigma"].as_f64().unwrap_or(f64::NAN);
            let mu0 = r["mu0"].as_f64().unwrap_or(f64::NAN);
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt17(s),
                fmt17(r["m"].as_f64().unwrap_or(f64::NAN)),
                fmt17(r["eta0"].as_f64().unwrap_or(f64::NAN)),
                fmt17(mu0),
                fmt17(mu0 * s.powi(3))
            ));
        }
        crate::output::write_atomic(&run_dir.join("spectrum_vs_sigma.csv"), out.as_bytes())?;
        written.push("spectrum_vs_sigma.csv".to_string());
    }
    if written.is_empty() {
        return Err(LabError::MissingInput(format!(
            "{} holds no monitors.csv, foliation.json or spectrum.json",
            run_dir.display()
        )));
    }
    Ok(written)
}
