//! Shipped experiment presets, the pulse-amplitude optimizer and the
//! numerics convergence report.
//!
//! Three experiments are preconfigured:
//!
//! * `decay` (`fig3-*`): biexciton-initialized free decay at the standard
//!   operating point (g = fine structure = 0.1 meV, binding 1.5 meV,
//!   cavity decay 0.25 1/ps, 10 K), in the full space or the two-excitation
//!   subspace;
//! * `pulsed` (`fig4-*`): ground-initialized two-photon excitation with a
//!   5 ps FWHM Gaussian of height 0.545 meV;
//! * the pulse-width/temperature sweep (`fig5`), see [`crate::sweep`].

use thiserror::Error;

use crate::config::{
    BathCfg, InitialStateCfg, Method, ModelCfg, NumericsCfg, OutputCfg, RunConfig,
};
use crate::runner::{run, RunError};

/// Standard operating point shared by all presets.
fn base_model() -> ModelCfg {
    ModelCfg {
        biexciton_binding_mev: 1.5,
        fine_structure_mev: 0.1,
        qd_cavity_coupling_mev: 0.1,
        cavity_decay_per_ps: 0.25,
        pulse_height_mev: 0.0,
        pulse_fwhm_ps: 5.0,
        pulse_center_ps: None,
        fock_truncation: 2,
        initial_state: InitialStateCfg::Biexciton,
        two_excitation_subspace: false,
    }
}

fn base_bath(temperature_k: f64, enabled: bool) -> BathCfg {
    BathCfg {
        enabled,
        temperature_k,
        deformation_e_ev: 7.0,
        deformation_h_ev: -3.5,
        mass_density_kg_m3: 5370.0,
        sound_speed_m_s: 5110.0,
        electron_radius_nm: 3.0,
        hole_radius_nm: None,
        absorb_polaron_shift: true,
    }
}

fn base_numerics(horizon_ps: f64) -> NumericsCfg {
    NumericsCfg {
        dt_ps: 0.05,
        memory_time_ps: 8.0,
        svd_tol: 1e-9,
        chi_max: 256,
        horizon_ps,
        averaging_window_ps: None,
        pme_step_tol: 1e-8,
        output_stride: 1,
    }
}

/// Biexciton-decay preset.
pub fn preset_fig3(method: Method, five_level: bool) -> RunConfig {
    let mut model = base_model();
    model.two_excitation_subspace = five_level;
    RunConfig {
        method,
        model,
        bath: base_bath(10.0, method != Method::NoPhonon),
        numerics: base_numerics(50.0),
        output: OutputCfg::default(),
    }
}

/// All method x space combinations of the decay preset.
pub fn preset_fig3_set() -> Vec<(String, RunConfig)> {
    let mut out = Vec::new();
    for method in [Method::Tempo, Method::Pme, Method::NoPhonon] {
        for five in [false, true] {
            let name = format!("fig3-{method}{}", if five { "-5ls" } else { "" });
            out.push((name, preset_fig3(method, five)));
        }
    }
    out
}

/// Pulsed two-photon-excitation preset.
pub fn preset_fig4(method: Method) -> RunConfig {
    let mut cfg = preset_fig3(method, false);
    cfg.model.initial_state = InitialStateCfg::Ground;
    cfg.model.pulse_height_mev = 0.545;
    cfg.model.pulse_fwhm_ps = 5.0;
    cfg.model.pulse_center_ps = Some(20.0);
    cfg.numerics.horizon_ps = 50.0;
    cfg
}

/// Look up a preset by CLI name (`fig3-tempo`, `fig4-pme`, ...).
pub fn preset_by_name(name: &str) -> Option<RunConfig> {
    let parse_method = |m: &str| match m {
        "tempo" => Some(Method::Tempo),
        "pme" => Some(Method::Pme),
        "nophonon" => Some(Method::NoPhonon),
        _ => None,
    };
    let rest = name.strip_prefix("fig3-").or(name.strip_prefix("decay-"));
    if let Some(rest) = rest {
        let (m, five) = match rest.strip_suffix("-5ls") {
            Some(m) => (m, true),
            None => (rest, false),
        };
        return parse_method(m).map(|m| preset_fig3(m, five));
    }
    let rest = name.strip_prefix("fig4-").or(name.strip_prefix("pulsed-"));
    if let Some(rest) = rest {
        return parse_method(rest).map(preset_fig4);
    }
    None
}

pub fn preset_names() -> Vec<String> {
    let mut names: Vec<String> = preset_fig3_set().into_iter().map(|(n, _)| n).collect();
    for m in ["tempo", "pme", "nophonon"] {
        names.push(format!("fig4-{m}"));
    }
    names
}

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("pulse optimization needs the pme or nophonon method (fast inner loop), got {0}")]
    SlowMethod(Method),
    #[error(transparent)]
    Run(#[from] RunError),
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub omega_star_mev: f64,
    /// Biexciton population at the evaluation time for the optimum.
    pub objective: f64,
    /// Coarse scan trace (omega, P_XX), recorded for unimodality checks.
    pub scan: Vec<(f64, f64)>,
    /// Whether the scan shows a single interior maximum.
    pub unimodal: bool,
    /// Whether the objective is essentially flat over the scan range.
    pub flat: bool,
}

/// Biexciton population at `t0 + 2 FWHM` for a pulse of height `omega`.
fn excitation_objective(
    base: &RunConfig,
    fwhm: f64,
    omega: f64,
) -> Result<f64, OptimizeError> {
    let mut cfg = base.clone();
    cfg.method = base.method;
    cfg.model.initial_state = InitialStateCfg::Ground;
    cfg.model.pulse_height_mev = omega;
    cfg.model.pulse_fwhm_ps = fwhm;
    cfg.model.pulse_center_ps = Some(4.0 * fwhm);
    cfg.numerics.horizon_ps = 6.0 * fwhm;
    // only the endpoint matters; keep the output grid coarse
    cfg.numerics.output_stride = ((1.0 / cfg.numerics.dt_ps).round() as usize).max(1);
    cfg.output = OutputCfg {
        dir: None,
        write_csv: false,
        pt_cache_dir: None,
    };
    let out = run(&cfg)?;
    let rho = out.trajectory.states.last().unwrap();
    let p = crate::observables::populations(rho, &out.trajectory.basis).map_err(RunError::Obs)?;
    Ok(p.xx)
}

/// Scan plus golden-section refinement of the pulse height that maximizes
/// the biexciton population after the pulse; tolerance 1e-3 meV.
pub fn optimize_pulse_amplitude(
    base: &RunConfig,
    fwhm: f64,
) -> Result<OptimizeResult, OptimizeError> {
    if base.method == Method::Tempo {
        return Err(OptimizeError::SlowMethod(base.method));
    }
    let lo = 0.05;
    let hi = 1.4;
    let n_scan = 13;
    let mut scan = Vec::with_capacity(n_scan);
    for i in 0..n_scan {
        let omega = lo + (hi - lo) * i as f64 / (n_scan - 1) as f64;
        scan.push((omega, excitation_objective(base, fwhm, omega)?));
    }
    let (best_idx, best) = scan
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, v)| (i, *v))
        .unwrap();
    let spread = scan.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max)
        - scan.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let flat = spread < 1e-6;
    if flat {
        log::warn!("pulse-amplitude objective is flat over [{lo}, {hi}] meV");
    }
    // count interior local maxima of the scan
    let mut maxima = 0;
    for i in 1..n_scan - 1 {
        if scan[i].1 > scan[i - 1].1 && scan[i].1 > scan[i + 1].1 {
            maxima += 1;
        }
    }
    let unimodal = maxima <= 1;
    // golden-section refinement inside the bracketing interval
    let mut a = scan[best_idx.saturating_sub(1)].0;
    let mut b = scan[(best_idx + 1).min(n_scan - 1)].0;
    if best_idx == 0 {
        a = lo * 0.5;
    }
    if best_idx == n_scan - 1 {
        b = hi * 1.3;
    }
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = b - INVPHI * (b - a);
    let mut x2 = a + INVPHI * (b - a);
    let mut f1 = excitation_objective(base, fwhm, x1)?;
    let mut f2 = excitation_objective(base, fwhm, x2)?;
    while (b - a) > 1e-3 {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INVPHI * (b - a);
            f1 = excitation_objective(base, fwhm, x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INVPHI * (b - a);
            f2 = excitation_objective(base, fwhm, x2)?;
        }
    }
    let (omega_star, objective) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    let (omega_star, objective) = if best.1 > objective {
        best
    } else {
        (omega_star, objective)
    };
    Ok(OptimizeResult {
        omega_star_mev: omega_star,
        objective,
        scan,
        unimodal,
        flat,
    })
}

#[derive(Debug, Clone)]
pub struct ConvergenceVariant {
    pub name: String,
    pub cbar: f64,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub base_cbar: f64,
    pub variants: Vec<ConvergenceVariant>,
    /// Largest |delta| across the variants.
    pub max_delta: f64,
}

impl ConvergenceReport {
    pub fn to_toml(&self) -> String {
        let mut s = format!("base_cbar = {:.12e}\nmax_delta = {:.6e}\n", self.base_cbar, self.max_delta);
        for v in &self.variants {
            s.push_str(&format!(
                "\n[[variant]]\nname = \"{}\"\ncbar = {:.12e}\ndelta = {:.6e}\n",
                v.name, v.cbar, v.delta
            ));
        }
        s
    }
}

/// Rerun a configuration with refined numerics knobs (one at a time) and
/// report how much the time-averaged concurrence moves.
pub fn convergence_report(base: &RunConfig) -> Result<ConvergenceReport, RunError> {
    let base_out = run(base)?;
    let base_cbar = base_out.cbar;
    let mut variants: Vec<(String, RunConfig)> = Vec::new();
    {
        let mut v = base.clone();
        v.numerics.dt_ps *= 0.5;
        variants.push(("dt_halved".into(), v));
    }
    match base.method {
        Method::Tempo => {
            let mut v = base.clone();
            v.numerics.memory_time_ps *= 1.5;
            variants.push(("memory_x1.5".into(), v));
            let mut v = base.clone();
            v.numerics.svd_tol *= 0.1;
            variants.push(("svd_tol_tenth".into(), v));
        }
        Method::Pme => {
            let mut v = base.clone();
            v.numerics.pme_step_tol *= 0.1;
            variants.push(("pme_tol_tenth".into(), v));
        }
        Method::NoPhonon => {}
    }
    let mut out = Vec::with_capacity(variants.len());
    let mut max_delta: f64 = 0.0;
    for (name, cfg) in variants {
        let cbar = run(&cfg)?.cbar;
        let delta = cbar - base_cbar;
        max_delta = max_delta.max(delta.abs());
        out.push(ConvergenceVariant { name, cbar, delta });
    }
    Ok(ConvergenceReport {
        base_cbar,
        variants: out,
        max_delta,
    })
}
