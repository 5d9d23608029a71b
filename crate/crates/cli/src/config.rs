//! Experiment configuration: an optional TOML file, `--set key=value`
//! overrides on top, defaults for everything else.

use anyhow::{anyhow, bail, Context, Result};
use rwre_core::io::Encoding;
use rwre_core::walk::DEFAULT_STEP_CAP;
use rwre_core::EnvSpec;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Version of every CSV/JSON layout written by the runner.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    GenEnv,
    Stationary,
    #[serde(alias = "phi-diagnostics")]
    Phi,
    #[serde(alias = "mp-check")]
    Mp,
    #[serde(alias = "mvi-check")]
    Mvi,
    #[serde(alias = "cutoff-check")]
    Cutoff,
    #[serde(alias = "perc-stats")]
    Perc,
    #[serde(alias = "mp2-check")]
    Mp2,
    #[serde(alias = "mvi2-check")]
    Mvi2,
    #[serde(alias = "walk-clt")]
    Clt,
    #[serde(alias = "recurrence-contrast")]
    Transience,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::GenEnv => "gen-env",
            Kind::Stationary => "stationary",
            Kind::Phi => "phi",
            Kind::Mp => "mp",
            Kind::Mvi => "mvi",
            Kind::Cutoff => "cutoff",
            Kind::Perc => "perc",
            Kind::Mp2 => "mp2",
            Kind::Mvi2 => "mvi2",
            Kind::Clt => "clt",
            Kind::Transience => "transience",
        }
    }

    /// Corpus experiments draw their own environments.
    fn takes_env(self) -> bool {
        !matches!(self, Kind::Mp | Kind::Mvi | Kind::Cutoff | Kind::Mp2 | Kind::Mvi2)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub experiment: Kind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "two")]
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_env: Option<GenEnvParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationary: Option<StationaryParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<PhiParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mp: Option<MpParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mvi: Option<MviParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<CutoffParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perc: Option<PercParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mp2: Option<Mp2Params>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mvi2: Option<Mvi2Params>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clt: Option<CltParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transience: Option<TransienceParams>,
}

fn two() -> usize {
    2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenEnvParams {
    pub radius: i64,
    pub encoding: Encoding,
    pub remove_laziness: bool,
}

impl Default for GenEnvParams {
    fn default() -> Self {
        GenEnvParams { radius: 8, encoding: Encoding::Csv, remove_laziness: false }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct StationaryParams {
    /// Read the environment from a file instead of generating it.
    pub env_file: Option<PathBuf>,
    pub n: Vec<i64>,
    pub tol: f64,
}

impl Default for StationaryParams {
    fn default() -> Self {
        StationaryParams { env_file: None, n: vec![4], tol: 1e-10 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PhiParams {
    pub n: Vec<i64>,
    pub env_seeds: u64,
    /// Moment exponent of `ε⁻¹` in the bound.
    pub p: f64,
    pub tol: f64,
    /// Run the stationary solve and norm diagnostics.
    pub diagnostics: bool,
    /// Significance level of the increasing-trend test.
    pub trend_level: f64,
    /// Largest allowed ratio of the overall maximum to the smallest-N maximum.
    pub max_growth: f64,
    /// Check the cluster inequality for `Φ_N` at this open-site probability.
    pub control_p_open: Option<f64>,
    /// Walks per torus for the exit-time generating bound; 0 skips it.
    pub torus_exit_samples: usize,
    pub step_cap: u64,
}

impl Default for PhiParams {
    fn default() -> Self {
        PhiParams {
            n: vec![4, 8, 16],
            env_seeds: 10,
            p: 6.0,
            tol: 1e-10,
            diagnostics: true,
            trend_level: 0.05,
            max_growth: 2.0,
            control_p_open: None,
            torus_exit_samples: 0,
            step_cap: DEFAULT_STEP_CAP,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct MpParams {
    pub instances: u64,
    pub max_radius: i64,
    pub calibration: Calibration,
}

impl Default for MpParams {
    fn default() -> Self {
        MpParams { instances: 200, max_radius: 12, calibration: Calibration::default() }
    }
}

/// The reference corpus whose largest ratio, times `margin`, bounds the
/// ratios of every later corpus.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Calibration {
    pub reference_seed: u64,
    /// Defaults to the size of the checked corpus.
    pub reference_instances: Option<u64>,
    pub margin: f64,
}

pub const REFERENCE_SEED: u64 = 0x5eed_ca11;

impl Default for Calibration {
    fn default() -> Self {
        Calibration { reference_seed: REFERENCE_SEED, reference_instances: None, margin: 1.5 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct MviParams {
    pub instances: u64,
    pub radius: f64,
    pub sigma: f64,
    /// Defaults to the dimension.
    pub p: Option<f64>,
    /// Radii for the exit-time bound; empty skips it.
    pub exit_radii: Vec<f64>,
    pub exit_samples: usize,
    pub step_cap: u64,
    pub calibration: Calibration,
}

impl Default for MviParams {
    fn default() -> Self {
        MviParams {
            instances: 100,
            radius: 16.0,
            sigma: 0.5,
            p: None,
            exit_radii: vec![1.0, 2.0, 4.0, 8.0],
            exit_samples: 4000,
            step_cap: DEFAULT_STEP_CAP,
            calibration: Calibration::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct CutoffParams {
    pub instances: u64,
}

impl Default for CutoffParams {
    fn default() -> Self {
        CutoffParams { instances: 70 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PercParams {
    /// Target `P{o open}`; converted to a threshold through the env law.
    pub p_open: Option<f64>,
    /// Explicit threshold, taking precedence over `p-open`.
    pub eps0: Option<f64>,
    pub grid: Vec<u64>,
    pub samples: u64,
    /// Also write the labels of one environment on a box of this radius.
    pub export_labels: Option<i64>,
}

impl Default for PercParams {
    fn default() -> Self {
        PercParams { p_open: Some(0.1), eps0: None, grid: (0..=8).map(|k| 2 * k).collect(), samples: 100_000, export_labels: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Mp2Params {
    pub instances: u64,
    pub max_radius_2d: i64,
    pub max_radius_3d: i64,
}

impl Default for Mp2Params {
    fn default() -> Self {
        Mp2Params { instances: 200, max_radius_2d: 12, max_radius_3d: 12 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Mvi2Params {
    pub instances: u64,
    pub radius: f64,
    pub sigma: f64,
    pub p: f64,
    pub calibration: Calibration,
}

impl Default for Mvi2Params {
    fn default() -> Self {
        Mvi2Params { instances: 50, radius: 8.0, sigma: 0.5, p: 1.0, calibration: Calibration::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct CltParams {
    /// Horizons; the covariance of `X_n/√n` is estimated at each.
    pub n: Vec<u64>,
    pub samples: usize,
    pub env_seeds: u64,
    /// Expected diagonal of the limiting covariance, if known.
    pub expected_diagonal: Option<f64>,
    pub diagonal_tol: f64,
    /// Required relative change of the mean diagonal between the first and
    /// last horizon, for contrast runs.
    pub min_relative_change: Option<f64>,
}

impl Default for CltParams {
    fn default() -> Self {
        CltParams {
            n: vec![10_000],
            samples: 10_000,
            env_seeds: 1,
            expected_diagonal: None,
            diagonal_tol: 0.05,
            min_relative_change: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TransienceParams {
    pub k: u64,
    pub i_max: usize,
    /// Annulus walks; 0 skips the annulus run.
    pub samples: usize,
    pub step_cap: u64,
    pub p_open: Option<f64>,
    pub eps0: Option<f64>,
    /// Environments labeled for the `Ω_i` frequencies.
    pub omega_samples: usize,
    /// Largest ball radius `K^{i+2}` labeled.
    pub omega_cap: f64,
    pub expected_cumulative: Option<f64>,
    pub cumulative_tol: f64,
    /// Time horizons for the visit-count contrast; empty skips it.
    pub horizons: Vec<u64>,
    pub horizon_samples: usize,
    /// Expected visit increment between the first and last horizon. Filled
    /// from the exact return probabilities for the planar simple walk.
    pub expected_increment: Option<f64>,
    pub increment_tol: f64,
    pub min_increment: f64,
}

impl Default for TransienceParams {
    fn default() -> Self {
        TransienceParams {
            k: 4,
            i_max: 3,
            samples: 10_000,
            step_cap: DEFAULT_STEP_CAP,
            p_open: None,
            eps0: None,
            omega_samples: 0,
            omega_cap: 64.0,
            expected_cumulative: None,
            cumulative_tol: 0.03,
            horizons: Vec::new(),
            horizon_samples: 2_000,
            expected_increment: None,
            increment_tol: 0.15,
            min_increment: 0.5,
        }
    }
}

/// Reads the file (if any), applies `key=value` overrides and deserializes,
/// reporting the offending key path on error.
pub fn load(kind: Kind, file: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table = match file {
        Some(f) => {
            let text = std::fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
            text.parse::<toml::Table>().with_context(|| format!("parsing {}", f.display()))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        let (key, raw) = o.split_once('=').ok_or_else(|| anyhow!("override `{o}` is not KEY=VALUE"))?;
        set_path(&mut table, key.trim(), parse_value(raw.trim()))?;
    }
    let requested = toml::Value::String(kind.name().into());
    match table.get("experiment") {
        Some(v) => {
            let given: Kind = v.clone().try_into().map_err(|e| anyhow!("experiment: {e}"))?;
            if given != kind {
                bail!("config is for experiment `{}` but `{}` was requested", given.name(), kind.name());
            }
        }
        None => {
            table.insert("experiment".into(), requested);
        }
    }
    from_table(table)?.resolve()
}

pub fn from_table(table: toml::Table) -> Result<ExperimentConfig> {
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        // toml appends its own key trailer
        let msg = inner.split("\nin `").next().unwrap_or_default().trim().to_string();
        anyhow!("invalid config at `{path}`: {msg}")
    })
}

/// TOML literal if it parses as one, else a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| anyhow!("empty override key"))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| anyhow!("override `{key}`: `{p}` is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

macro_rules! sections {
    ($self:ident, $($field:ident => $kind:ident),* $(,)?) => {{
        $(
            if $self.experiment == Kind::$kind {
                $self.$field.get_or_insert_with(Default::default);
            } else if $self.$field.is_some() {
                bail!("section `{}` does not apply to experiment `{}`", Kind::$kind.name(), $self.experiment.name());
            }
        )*
    }};
}

impl ExperimentConfig {
    /// Fills defaults for the experiment's section and checks ranges, so the
    /// echoed config is complete.
    pub fn resolve(mut self) -> Result<Self> {
        if !(2..=4).contains(&self.dim) {
            bail!("invalid config at `dim`: {} is outside 2..=4", self.dim);
        }
        sections!(self,
            gen_env => GenEnv, stationary => Stationary, phi => Phi, mp => Mp, mvi => Mvi,
            cutoff => Cutoff, perc => Perc, mp2 => Mp2, mvi2 => Mvi2, clt => Clt, transience => Transience,
        );
        let dim = self.dim;
        if self.experiment.takes_env() {
            let spec = self.env.get_or_insert_with(|| default_env(self.experiment, dim));
            spec.validate(dim).map_err(|e| anyhow!("invalid config at `env`: {e}"))?;
        } else if self.env.is_some() {
            bail!("`env` does not apply to experiment `{}`, which draws its own environments", self.experiment.name());
        }
        if let Some(s) = &mut self.stationary {
            if let Some(f) = &s.env_file {
                s.env_file = Some(f.canonicalize().with_context(|| format!("invalid config at `stationary.env-file`: {}", f.display()))?);
            }
            nonempty_positive("stationary.n", &s.n)?;
        }
        if let Some(p) = &self.phi {
            nonempty_positive("phi.n", &p.n)?;
        }
        if let Some(m) = &mut self.mvi {
            m.p.get_or_insert(dim as f64);
        }
        if let Some(c) = &self.clt {
            if c.n.is_empty() || c.samples < 2 || c.env_seeds == 0 {
                bail!("invalid config at `clt`: need horizons, at least two samples and one environment");
            }
        }
        if let Some(t) = &mut self.transience {
            let srw_plane = dim == 2 && self.env == Some(EnvSpec::UniformSrw);
            if t.expected_increment.is_none() && srw_plane && t.horizons.len() >= 2 {
                let (a, b) = (t.horizons.iter().min().unwrap(), t.horizons.iter().max().unwrap());
                t.expected_increment = Some(rwre_core::walk::srw2_expected_visits(*b) - rwre_core::walk::srw2_expected_visits(*a));
            }
        }
        Ok(self)
    }

    pub fn env_spec(&self) -> EnvSpec {
        self.env.clone().unwrap_or(EnvSpec::UniformSrw)
    }
}

fn nonempty_positive(key: &str, n: &[i64]) -> Result<()> {
    if n.is_empty() || n.iter().any(|&v| v < 1) {
        bail!("invalid config at `{key}`: need a nonempty list of positive radii");
    }
    Ok(())
}

fn default_env(kind: Kind, dim: usize) -> EnvSpec {
    match kind {
        // finite inverse-ε moments of every order below 4d
        Kind::Phi => EnvSpec::IidElliptic { shape: 4.0, stay_shape: None },
        Kind::Perc => EnvSpec::IidMaxJump { xi0: 1.0 / (2 * dim) as f64, tail: 1.0 },
        _ => EnvSpec::UniformSrw,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_parse() {
        let cfg = load(Kind::Phi, None, &["phi.n=[2, 3]".into(), "seed=9".into(), "env.kind=\"uniform-srw\"".into()]).unwrap();
        assert_eq!(cfg.phi.unwrap().n, vec![2, 3]);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.env, Some(EnvSpec::UniformSrw));
    }

    #[test]
    fn errors_name_the_key() {
        let e = load(Kind::Phi, None, &["phi.env-seeds=\"many\"".into()]).unwrap_err().to_string();
        assert!(e.contains("phi.env-seeds"), "{e}");
        let e = load(Kind::Mp, None, &["phi.n=[2]".into()]).unwrap_err().to_string();
        assert!(e.contains("does not apply"), "{e}");
    }

    #[test]
    fn long_kind_names_are_accepted() {
        let mut t = toml::Table::new();
        t.insert("experiment".into(), "mp2-check".into());
        assert_eq!(from_table(t).unwrap().experiment, Kind::Mp2);
    }

    #[test]
    fn planar_contrast_gets_its_oracle() {
        let cfg = load(Kind::Transience, None, &["transience.horizons=[10, 100]".into()]).unwrap();
        let inc = cfg.transience.unwrap().expected_increment.unwrap();
        assert!(inc > 0.5 && inc < 1.0, "{inc}");
    }
}
