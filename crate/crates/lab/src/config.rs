//! Run configuration: one TOML file per run, with `--set key=value` overrides.

use std::path::{Path, PathBuf};

use hmcf_core::flow::FlowConfig;
use hmcf_core::sphere::{Mode, RadialGraph, SphericalGrid};
use hmcf_core::MetricParams;
use serde::{Deserialize, Serialize};

use crate::LabError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Flow,
    Foliate,
    Spectrum,
    Center,
    Check,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Flow => "flow",
            Kind::Foliate => "foliate",
            Kind::Spectrum => "spectrum",
            Kind::Center => "center",
            Kind::Check => "check",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Flat,
    #[default]
    Schwarzschild,
    ConformalDipole,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSpec {
    pub family: Family,
    /// Defaults to 1 for the massive families; must be absent or 0 for flat.
    pub mass: Option<f64>,
    /// Dipole vector `B` of the conformal factor `1 + m/2r + B·x/r³`.
    pub dipole: Option<[f64; 3]>,
    /// Translation of the whole metric.
    pub offset: [f64; 3],
}

impl MetricSpec {
    pub fn mass(&self) -> f64 {
        match self.family {
            Family::Flat => 0.0,
            _ => self.mass.unwrap_or(1.0),
        }
    }

    pub fn params(&self) -> Result<MetricParams, LabError> {
        let m = self.mass();
        if !(m >= 0.0) || !m.is_finite() {
            return Err(LabError::Config(format!("metric.mass must be nonnegative, got {m}")));
        }
        let p = match self.family {
            Family::Flat => {
                if self.mass.is_some_and(|m| m != 0.0) {
                    return Err(LabError::Config("metric.mass must be 0 for the flat family".into()));
                }
                if self.dipole.is_some() {
                    return Err(LabError::Config("metric.dipole requires family = \"conformal-dipole\"".into()));
                }
                MetricParams::flat()
            }
            Family::Schwarzschild => {
                if self.dipole.is_some() {
                    return Err(LabError::Config("metric.dipole requires family = \"conformal-dipole\"".into()));
                }
                if m == 0.0 {
                    MetricParams::flat()
                } else {
                    MetricParams::schwarzschild(m)
                }
            }
            Family::ConformalDipole => MetricParams::conformal_dipole(m, self.dipole.unwrap_or([0.0; 3])),
        };
        let p = if self.offset != [0.0; 3] { p.translated(self.offset) } else { p };
        p.validate().map_err(|e| LabError::Config(format!("metric: {e}")))?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n_lat: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { n_lat: 24 }
    }
}

/// Initial data: `ρ = σ + Σ modes + random`, optionally rescaled so that
/// `max|ρ − σ| = relative_amplitude·σ`.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSpec {
    pub modes: Vec<Mode>,
    pub random_amplitude: f64,
    pub random_lmax: usize,
    pub relative_amplitude: Option<f64>,
}

impl PerturbationSpec {
    pub fn surface(&self, n_lat: usize, sigma: f64, seed: u64) -> Result<RadialGraph, LabError> {
        let grid = SphericalGrid::new(n_lat).map_err(|e| LabError::Config(format!("grid: {e}")))?;
        let mut g = RadialGraph::with_modes(grid.clone(), sigma, &self.modes)
            .map_err(|e| LabError::Config(format!("perturbation: {e}")))?;
        if self.random_amplitude != 0.0 {
            let r = RadialGraph::random_coeffs(&grid, self.random_lmax.min(grid.lmax), seed);
            let c: Vec<f64> = g.coeffs.iter().zip(&r).map(|(a, b)| a + self.random_amplitude * b).collect();
            g = RadialGraph::from_coeffs(grid, c, sigma).map_err(LabError::Numeric)?;
        }
        if let Some(a) = self.relative_amplitude {
            g = g.with_max_deviation(a * sigma).map_err(LabError::Numeric)?;
        }
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSpec {
    /// Number of constrained eigenvalues reported.
    pub k: usize,
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        SpectrumSpec { k: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CenterSpec {
    pub radii: Vec<f64>,
    pub adm_n_lat: usize,
}

impl Default for CenterSpec {
    fn default() -> Self {
        CenterSpec {
            radii: vec![50.0, 100.0, 200.0],
            adm_n_lat: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSpec {
    pub eps_list: Vec<f64>,
    pub dt_probe: f64,
}

impl Default for CheckSpec {
    fn default() -> Self {
        CheckSpec {
            eps_list: vec![1e-2, 5e-3, 2.5e-3],
            dt_probe: 1e-1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: Option<Kind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub metric: MetricSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub spectrum: SpectrumSpec,
    #[serde(default)]
    pub center: CenterSpec,
    #[serde(default)]
    pub check: CheckSpec,
}

fn default_output_dir() -> String {
    "hmcf-run".to_string()
}

impl RunConfig {
    pub fn validate(&self, kind: Kind) -> Result<(), LabError> {
        if let Some(k) = self.kind {
            if k != kind {
                return Err(LabError::Config(format!(
                    "config declares kind = \"{}\" but the {} subcommand was used",
                    k.name(),
                    kind.name()
                )));
            }
        }
        if self.sigma.is_empty() || self.sigma.iter().any(|s| !(*s > 1.0)) {
            return Err(LabError::Config("sigma must be a nonempty list of values > 1".into()));
        }
        if matches!(kind, Kind::Foliate | Kind::Center) && self.sigma.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::Config("sigma must be strictly increasing".into()));
        }
        if kind == Kind::Center && self.sigma.len() < 3 {
            return Err(LabError::Config("center runs need at least three sigma values".into()));
        }
        self.flow.validate().map_err(|e| LabError::Config(format!("flow: {e}")))?;
        self.metric.params()?;
        if !(4..=64).contains(&self.grid.n_lat) {
            return Err(LabError::Config(format!("grid.n_lat must lie in 4..=64, got {}", self.grid.n_lat)));
        }
        Ok(())
    }

    /// Output directory, relative paths resolved against `HMCF_OUTPUT_ROOT`.
    pub fn output_path(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }

    /// Canonical TOML of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

pub fn resolve_output(dir: &str) -> PathBuf {
    let p = Path::new(dir);
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match std::env::var_os("HMCF_OUTPUT_ROOT") {
        Some(root) => Path::new(&root).join(p),
        None => p.to_path_buf(),
    }
}

/// Parses a config file and applies dotted `key=value` overrides; values are
/// read as TOML literals, falling back to plain strings.
pub fn load(text: &str, overrides: &[String]) -> Result<RunConfig, LabError> {
    let mut table: toml::Table = text.parse().map_err(|e| LabError::Config(format!("{e}")))?;
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| LabError::Config(format!("override `{o}` is not of the form key=value")))?;
        let value = parse_value(raw.trim());
        set_path(&mut table, key.trim(), value)?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| LabError::Config(format!("{e}")))
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), LabError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(LabError::Config(format!("invalid override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| LabError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_unknown_keys() {
        let c = load("sigma = [10.0]\n[flow]\nstop_tol = 1e-8\n", &["flow.stop_tol=1e-7".into(), "metric.mass=2".into()]).unwrap();
        assert_eq!(c.flow.stop_tol, 1e-7);
        assert_eq!(c.metric.mass(), 2.0);
        assert!(load("sigma = [10.0]\nbogus = 1\n", &[]).is_err());
        assert!(load("sigma = [10.0]\n[flow]\nbogus = 1\n", &[]).is_err());
        let c = load("sigma = [10.0]\n[flow.dt_policy.fixed]\ndt = 0.5\n", &[]).unwrap();
        assert_eq!(c.flow.dt_policy, hmcf_core::flow::DtPolicy::Fixed { dt: 0.5 });
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = load("sigma = [10.0, 12.0]\n[perturbation]\nmodes = [{ l = 2, m = 0, amplitude = 0.1 }]\n", &[]).unwrap();
        let again = load(&c.to_toml(), &[]).unwrap();
        assert_eq!(c, again);
    }
}
