//! Run configuration: a TOML schema with exhaustive validation. Unknown keys
//! are rejected, optional fields are resolved to explicit values before a
//! run, and every run emits the fully resolved configuration as its manifest
//! so results are reproducible from the manifest alone.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bath::BathParams;
use crate::constants::fwhm_to_std;
use crate::model::{InitialState, ModelSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Numerically exact process-tensor propagation.
    Tempo,
    /// Polaron master equation.
    Pme,
    /// Bare Lindblad dynamics, no environment.
    NoPhonon,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Tempo => "tempo",
            Method::Pme => "pme",
            Method::NoPhonon => "nophonon",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialStateCfg {
    Ground,
    Biexciton,
}

impl From<InitialStateCfg> for InitialState {
    fn from(v: InitialStateCfg) -> Self {
        match v {
            InitialStateCfg::Ground => InitialState::Ground,
            InitialStateCfg::Biexciton => InitialState::Biexciton,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelCfg {
    pub biexciton_binding_mev: f64,
    pub fine_structure_mev: f64,
    pub qd_cavity_coupling_mev: f64,
    pub cavity_decay_per_ps: f64,
    #[serde(default)]
    pub pulse_height_mev: f64,
    #[serde(default = "default_fwhm")]
    pub pulse_fwhm_ps: f64,
    /// Defaults to 4 * FWHM so the pulse is numerically contained in t > 0.
    #[serde(default)]
    pub pulse_center_ps: Option<f64>,
    #[serde(default = "default_nmax")]
    pub fock_truncation: usize,
    pub initial_state: InitialStateCfg,
    /// Solve in the five-level two-excitation subspace (undriven only).
    #[serde(default)]
    pub two_excitation_subspace: bool,
}

fn default_fwhm() -> f64 {
    5.0
}

fn default_nmax() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BathCfg {
    #[serde(default = "default_true")]
    pub enabled: bool,
    pub temperature_k: f64,
    #[serde(default = "default_de")]
    pub deformation_e_ev: f64,
    #[serde(default = "default_dh")]
    pub deformation_h_ev: f64,
    #[serde(default = "default_rho")]
    pub mass_density_kg_m3: f64,
    #[serde(default = "default_cs")]
    pub sound_speed_m_s: f64,
    #[serde(default = "default_ae")]
    pub electron_radius_nm: f64,
    /// Defaults to electron radius / 1.15.
    #[serde(default)]
    pub hole_radius_nm: Option<f64>,
    /// Pre-compensate the dot levels by lambda^2 Delta_p so the dressed level
    /// splittings are temperature independent.
    #[serde(default = "default_true")]
    pub absorb_polaron_shift: bool,
}

fn default_true() -> bool {
    true
}
fn default_de() -> f64 {
    7.0
}
fn default_dh() -> f64 {
    -3.5
}
fn default_rho() -> f64 {
    5370.0
}
fn default_cs() -> f64 {
    5110.0
}
fn default_ae() -> f64 {
    3.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NumericsCfg {
    #[serde(default = "default_dt")]
    pub dt_ps: f64,
    /// Memory depth of the influence functional, as a time span.
    #[serde(default = "default_memory")]
    pub memory_time_ps: f64,
    #[serde(default = "default_svd_tol")]
    pub svd_tol: f64,
    #[serde(default = "default_chi")]
    pub chi_max: usize,
    pub horizon_ps: f64,
    /// Averaging window for the time-averaged concurrence; defaults to
    /// [0, horizon].
    #[serde(default)]
    pub averaging_window_ps: Option<[f64; 2]>,
    #[serde(default = "default_pme_tol")]
    pub pme_step_tol: f64,
    /// Record every k-th step of the output grid.
    #[serde(default = "default_stride")]
    pub output_stride: usize,
}

fn default_dt() -> f64 {
    0.05
}
fn default_memory() -> f64 {
    8.0
}
fn default_svd_tol() -> f64 {
    1e-9
}
fn default_chi() -> usize {
    256
}
fn default_pme_tol() -> f64 {
    1e-8
}
fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputCfg {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default = "default_true")]
    pub write_csv: bool,
    /// Directory for reusable process tensors; disabled when empty.
    #[serde(default)]
    pub pt_cache_dir: Option<String>,
}

impl Default for OutputCfg {
    fn default() -> Self {
        OutputCfg {
            dir: None,
            write_csv: true,
            pt_cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub model: ModelCfg,
    pub bath: BathCfg,
    pub numerics: NumericsCfg,
    #[serde(default)]
    pub output: OutputCfg,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(&self.resolved()).expect("serializable config")
    }

    /// Fill optional fields with their documented defaults.
    pub fn resolved(&self) -> RunConfig {
        let mut out = self.clone();
        if out.model.pulse_center_ps.is_none() {
            out.model.pulse_center_ps = Some(4.0 * out.model.pulse_fwhm_ps);
        }
        if out.bath.hole_radius_nm.is_none() {
            out.bath.hole_radius_nm = Some(out.bath.electron_radius_nm / 1.15);
        }
        if out.numerics.averaging_window_ps.is_none() {
            out.numerics.averaging_window_ps = Some([0.0, out.numerics.horizon_ps]);
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = &self.numerics;
        if !(n.dt_ps > 0.0) {
            return Err(ConfigError::Invalid("dt_ps must be positive".into()));
        }
        if !(n.horizon_ps > n.dt_ps) {
            return Err(ConfigError::Invalid(
                "horizon_ps must exceed one time step".into(),
            ));
        }
        if !(n.memory_time_ps > 0.0) {
            return Err(ConfigError::Invalid("memory_time_ps must be positive".into()));
        }
        if n.svd_tol <= 0.0 || n.svd_tol >= 1.0 {
            return Err(ConfigError::Invalid("svd_tol must be in (0, 1)".into()));
        }
        if n.chi_max < 1 {
            return Err(ConfigError::Invalid("chi_max must be >= 1".into()));
        }
        if n.output_stride < 1 {
            return Err(ConfigError::Invalid("output_stride must be >= 1".into()));
        }
        if let Some([a, b]) = n.averaging_window_ps {
            if !(b > a) || a < 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "averaging window [{a}, {b}] must be increasing and nonnegative"
                )));
            }
        }
        if self.model.two_excitation_subspace && self.model.pulse_height_mev != 0.0 {
            return Err(ConfigError::Invalid(
                "the two-excitation subspace requires an undriven dot".into(),
            ));
        }
        if self.model.two_excitation_subspace
            && self.model.initial_state != InitialStateCfg::Biexciton
        {
            return Err(ConfigError::Invalid(
                "the two-excitation subspace starts from the biexciton".into(),
            ));
        }
        self.model_spec()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.bath.enabled {
            self.bath_params()
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        let m = &self.model;
        ModelSpec {
            biexciton_binding: m.biexciton_binding_mev,
            fine_structure: m.fine_structure_mev,
            qd_cavity_coupling: m.qd_cavity_coupling_mev,
            cavity_decay: m.cavity_decay_per_ps,
            pulse_height: m.pulse_height_mev,
            pulse_center: m.pulse_center_ps.unwrap_or(4.0 * m.pulse_fwhm_ps),
            pulse_std: fwhm_to_std(m.pulse_fwhm_ps),
            fock_truncation: m.fock_truncation,
        }
    }

    pub fn bath_params(&self) -> BathParams {
        let b = &self.bath;
        BathParams {
            deformation_e: b.deformation_e_ev,
            deformation_h: b.deformation_h_ev,
            mass_density: b.mass_density_kg_m3,
            sound_speed: b.sound_speed_m_s,
            radius_e: b.electron_radius_nm,
            radius_h: b.hole_radius_nm.unwrap_or(b.electron_radius_nm / 1.15),
            temperature: b.temperature_k,
        }
    }

    /// Number of propagation steps.
    pub fn steps(&self) -> usize {
        (self.numerics.horizon_ps / self.numerics.dt_ps).round() as usize
    }

    /// Memory depth in steps.
    pub fn memory_steps(&self) -> usize {
        ((self.numerics.memory_time_ps / self.numerics.dt_ps).ceil() as usize).max(1)
    }

    pub fn averaging_window(&self) -> (f64, f64) {
        match self.numerics.averaging_window_ps {
            Some([a, b]) => (a, b),
            None => (0.0, self.numerics.horizon_ps),
        }
    }
}
