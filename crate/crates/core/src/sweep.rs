//! Pulse-width/temperature sweep of the time-averaged concurrence, with
//! per-point amplitude optimization and biexciton-initialized reference runs
//! ("zero pulse width") per temperature.
//!
//! Sweep points are independent and run on a worker pool; results are merged
//! by grid index so the emitted CSV is bit-stable for a given configuration.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{InitialStateCfg, Method, OutputCfg, RunConfig};
use crate::presets::{optimize_pulse_amplitude, preset_fig3, OptimizeError};
use crate::runner::{run, RunError};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub fwhm_ps: Vec<f64>,
    pub temperatures_k: Vec<f64>,
    /// Post-pulse decay window appended to the pulse for every point (ps).
    pub tail_ps: f64,
    /// Run one numerically exact cross-check at this temperature, at the
    /// middle pulse width of the sweep.
    pub tempo_check_temperature: Option<f64>,
    pub pt_cache_dir: Option<String>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            fwhm_ps: (2..=10).map(|k| k as f64).collect(),
            temperatures_k: vec![4.0, 10.0, 20.0],
            tail_ps: 50.0,
            tempo_check_temperature: Some(10.0),
            pt_cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub fwhm_ps: f64,
    pub temperature_k: f64,
    pub omega0_mev: f64,
    pub cbar: f64,
    pub method: String,
}

/// Pulsed-run configuration for one sweep point.
pub fn sweep_point_config(
    method: Method,
    fwhm: f64,
    temperature: f64,
    omega0: f64,
    tail_ps: f64,
) -> RunConfig {
    let mut cfg = preset_fig3(method, false);
    cfg.bath.temperature_k = temperature;
    cfg.model.initial_state = InitialStateCfg::Ground;
    cfg.model.pulse_height_mev = omega0;
    cfg.model.pulse_fwhm_ps = fwhm;
    cfg.model.pulse_center_ps = Some(4.0 * fwhm);
    cfg.numerics.horizon_ps = 4.0 * fwhm + tail_ps;
    cfg.numerics.averaging_window_ps = Some([0.0, cfg.numerics.horizon_ps]);
    // the averaged concurrence only needs a modest sampling rate
    cfg.numerics.output_stride = 5;
    cfg.output = OutputCfg {
        dir: None,
        write_csv: false,
        pt_cache_dir: None,
    };
    cfg
}

fn optimizer_base(temperature: f64) -> RunConfig {
    let mut base = preset_fig3(Method::Pme, false);
    base.bath.temperature_k = temperature;
    base.numerics.output_stride = 5;
    base
}

/// Run the full sweep; returns rows sorted by (temperature, fwhm, method).
pub fn fig5_sweep(opts: &SweepOptions) -> Result<Vec<SweepPoint>, SweepError> {
    let grid: Vec<(usize, f64, f64)> = opts
        .temperatures_k
        .iter()
        .enumerate()
        .flat_map(|(i, &t)| {
            opts.fwhm_ps
                .iter()
                .enumerate()
                .map(move |(j, &f)| (i * 1000 + j, t, f))
        })
        .collect();
    let mut rows: Vec<(usize, SweepPoint)> = grid
        .par_iter()
        .map(|&(idx, temperature, fwhm)| -> Result<(usize, SweepPoint), SweepError> {
            let base = optimizer_base(temperature);
            let opt = optimize_pulse_amplitude(&base, fwhm)?;
            let cfg = sweep_point_config(Method::Pme, fwhm, temperature, opt.omega_star_mev, opts.tail_ps);
            let out = run(&cfg)?;
            Ok((
                idx,
                SweepPoint {
                    fwhm_ps: fwhm,
                    temperature_k: temperature,
                    omega0_mev: opt.omega_star_mev,
                    cbar: out.cbar,
                    method: "pme".into(),
                },
            ))
        })
        .collect::<Result<Vec<_>, _>>()?;

    // biexciton-initialized reference per temperature (zero pulse width)
    let stars: Vec<(usize, SweepPoint)> = opts
        .temperatures_k
        .par_iter()
        .enumerate()
        .map(|(i, &temperature)| -> Result<(usize, SweepPoint), SweepError> {
            let mut cfg = preset_fig3(Method::Pme, false);
            cfg.bath.temperature_k = temperature;
            cfg.numerics.output_stride = 5;
            cfg.output.write_csv = false;
            let out = run(&cfg)?;
            Ok((
                i * 1000 + 999,
                SweepPoint {
                    fwhm_ps: 0.0,
                    temperature_k: temperature,
                    omega0_mev: 0.0,
                    cbar: out.cbar,
                    method: "pme-xx-init".into(),
                },
            ))
        })
        .collect::<Result<Vec<_>, _>>()?;
    rows.extend(stars);

    if let Some(tcheck) = opts.tempo_check_temperature {
        let fwhm = opts.fwhm_ps[opts.fwhm_ps.len() / 2];
        let omega = rows
            .iter()
            .find(|(_, p)| p.temperature_k == tcheck && p.fwhm_ps == fwhm && p.method == "pme")
            .map(|(_, p)| p.omega0_mev)
            .unwrap_or(0.545);
        let mut cfg = sweep_point_config(Method::Tempo, fwhm, tcheck, omega, opts.tail_ps);
        cfg.output.pt_cache_dir = opts.pt_cache_dir.clone();
        let out = run(&cfg)?;
        rows.push((
            usize::MAX,
            SweepPoint {
                fwhm_ps: fwhm,
                temperature_k: tcheck,
                omega0_mev: omega,
                cbar: out.cbar,
                method: "tempo".into(),
            },
        ));
    }

    rows.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(rows.into_iter().map(|(_, p)| p).collect())
}

/// Summary CSV: `fwhm_ps, temperature_K, omega0_meV, cbar, method`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "fwhm_ps,temperature_K,omega0_meV,cbar,method")?;
    for r in rows {
        writeln!(
            w,
            "{:.11e},{:.11e},{:.11e},{:.11e},{}",
            r.fwhm_ps, r.temperature_k, r.omega0_mev, r.cbar, r.method
        )?;
    }
    Ok(())
}

pub fn write_sweep_outputs(rows: &[SweepPoint], dir: &Path) -> Result<(), SweepError> {
    std::fs::create_dir_all(dir)?;
    let f = std::fs::File::create(dir.join("sweep.csv"))?;
    write_sweep_csv(rows, std::io::BufWriter::new(f))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_config_windows() {
        let cfg = sweep_point_config(Method::Pme, 8.0, 4.0, 0.4, 50.0);
        assert_eq!(cfg.model.pulse_center_ps, Some(32.0));
        assert_eq!(cfg.numerics.horizon_ps, 82.0);
        assert_eq!(cfg.bath.temperature_k, 4.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn csv_columns() {
        let rows = vec![SweepPoint {
            fwhm_ps: 2.0,
            temperature_k: 4.0,
            omega0_mev: 0.9,
            cbar: 0.8,
            method: "pme".into(),
        }];
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("fwhm_ps,temperature_K,omega0_meV,cbar,method\n"));
    }
}
