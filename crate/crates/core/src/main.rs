//! Command-line experiment harness.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure,
//! 3 validation-suite failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use num_complex::Complex64 as C64;

use qdcascade::bath::{eta_direct_2d, memory_kernel, BathParams, PolaronQuantities};
use qdcascade::config::{Method, RunConfig};
use qdcascade::expm::single_threaded_blas;
use qdcascade::presets::{
    convergence_report, optimize_pulse_amplitude, preset_by_name, preset_names,
};
use qdcascade::runner::{run_to_dir, RunError};
use qdcascade::sweep::{fig5_sweep, write_sweep_csv, write_sweep_outputs, SweepOptions};

#[derive(Parser)]
#[command(
    name = "qdcascade",
    about = "Photon-pair entanglement from a driven dot-cavity system with a phonon bath",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a single trajectory from a preset or a TOML config.
    Run {
        /// Preset name; see `--list-presets`.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// TOML configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (manifest, trajectory CSV, summary).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the solver method (tempo | pme | nophonon).
        #[arg(long)]
        method: Option<String>,
        /// Override the simulation horizon (ps).
        #[arg(long)]
        horizon: Option<f64>,
        /// Override the time step (ps).
        #[arg(long)]
        dt: Option<f64>,
        /// Override the bath temperature (K).
        #[arg(long)]
        temperature: Option<f64>,
        /// Directory for cached process tensors.
        #[arg(long)]
        pt_cache: Option<PathBuf>,
        /// List available presets and exit.
        #[arg(long)]
        list_presets: bool,
    },
    /// Pulse-width x temperature sweep of the averaged concurrence.
    Sweep {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated pulse widths in ps (default 2..10).
        #[arg(long)]
        fwhm: Option<String>,
        /// Comma-separated temperatures in K (default 4,10,20).
        #[arg(long)]
        temperatures: Option<String>,
        /// Disable the numerically exact cross-check run.
        #[arg(long)]
        no_tempo_check: bool,
        #[arg(long)]
        pt_cache: Option<PathBuf>,
    },
    /// Optimize the pulse height for maximum biexciton population.
    Optimize {
        #[arg(long)]
        fwhm: f64,
        #[arg(long, default_value_t = 10.0)]
        temperature: f64,
        /// pme (default) or nophonon.
        #[arg(long)]
        method: Option<String>,
    },
    /// Convergence report: rerun a preset with refined numerics.
    Converge {
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        pt_cache: Option<PathBuf>,
    },
    /// Fast oracle suite: cross-validating identities on small systems.
    Validate,
    /// Tabulate the bath quantities as CSV.
    DumpBath {
        #[arg(long, default_value_t = 10.0)]
        temperature: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s {
        "tempo" => Ok(Method::Tempo),
        "pme" => Ok(Method::Pme),
        "nophonon" => Ok(Method::NoPhonon),
        other => Err(format!(
            "unknown method '{other}' (expected tempo | pme | nophonon)"
        )),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad list entry '{v}': {e}"))
        })
        .collect()
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("configuration error: {msg}");
    ExitCode::from(1)
}

fn numerical_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("numerical failure: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    single_threaded_blas();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run {
            preset,
            config,
            out,
            method,
            horizon,
            dt,
            temperature,
            pt_cache,
            list_presets,
        } => {
            if list_presets {
                for name in preset_names() {
                    println!("{name}");
                }
                return ExitCode::SUCCESS;
            }
            let mut cfg = match (preset, config) {
                (Some(name), None) => match preset_by_name(&name) {
                    Some(c) => c,
                    None => return config_error(format!("unknown preset '{name}'")),
                },
                (None, Some(path)) => match RunConfig::from_file(&path) {
                    Ok(c) => c,
                    Err(e) => return config_error(e),
                },
                _ => return config_error("exactly one of --preset or --config is required"),
            };
            if let Some(m) = method {
                match parse_method(&m) {
                    Ok(m) => cfg.method = m,
                    Err(e) => return config_error(e),
                }
            }
            if let Some(h) = horizon {
                cfg.numerics.horizon_ps = h;
                cfg.numerics.averaging_window_ps = None;
            }
            if let Some(d) = dt {
                cfg.numerics.dt_ps = d;
            }
            if let Some(t) = temperature {
                cfg.bath.temperature_k = t;
            }
            if let Some(dir) = out {
                cfg.output.dir = Some(dir.to_string_lossy().into_owned());
            }
            if let Some(dir) = pt_cache {
                cfg.output.pt_cache_dir = Some(dir.to_string_lossy().into_owned());
            }
            if let Err(e) = cfg.validate() {
                return config_error(e);
            }
            match run_to_dir(&cfg) {
                Ok(res) => {
                    println!(
                        "method={} steps={} cbar={:.6} elapsed={:.1}s{}",
                        res.config.method,
                        res.config.steps(),
                        res.cbar,
                        res.elapsed_s,
                        res.pt_report
                            .as_ref()
                            .map(|r| format!(" chi_max={}", r.max_chi))
                            .unwrap_or_default()
                    );
                    ExitCode::SUCCESS
                }
                Err(RunError::Config(e)) => config_error(e),
                Err(e) => numerical_error(e),
            }
        }
        Cmd::Sweep {
            out,
            fwhm,
            temperatures,
            no_tempo_check,
            pt_cache,
        } => {
            let mut opts = SweepOptions::default();
            if let Some(s) = fwhm {
                match parse_list(&s) {
                    Ok(v) if !v.is_empty() => opts.fwhm_ps = v,
                    Ok(_) => return config_error("empty fwhm list"),
                    Err(e) => return config_error(e),
                }
            }
            if let Some(s) = temperatures {
                match parse_list(&s) {
                    Ok(v) if !v.is_empty() => opts.temperatures_k = v,
                    Ok(_) => return config_error("empty temperature list"),
                    Err(e) => return config_error(e),
                }
            }
            if no_tempo_check {
                opts.tempo_check_temperature = None;
            }
            opts.pt_cache_dir = pt_cache.map(|p| p.to_string_lossy().into_owned());
            match fig5_sweep(&opts) {
                Ok(rows) => {
                    let mut buf = Vec::new();
                    write_sweep_csv(&rows, &mut buf).expect("in-memory write");
                    print!("{}", String::from_utf8_lossy(&buf));
                    if let Some(dir) = out {
                        if let Err(e) = write_sweep_outputs(&rows, &dir) {
                            return numerical_error(e);
                        }
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => numerical_error(e),
            }
        }
        Cmd::Optimize {
            fwhm,
            temperature,
            method,
        } => {
            let m = match method.as_deref().map(parse_method).transpose() {
                Ok(m) => m.unwrap_or(Method::Pme),
                Err(e) => return config_error(e),
            };
            let mut base = qdcascade::presets::preset_fig3(m, false);
            base.bath.temperature_k = temperature;
            base.numerics.output_stride = 5;
            match optimize_pulse_amplitude(&base, fwhm) {
                Ok(res) => {
                    println!(
                        "omega_star_mev = {:.4}\nobjective_pxx = {:.6}\nunimodal = {}\nflat = {}",
                        res.omega_star_mev, res.objective, res.unimodal, res.flat
                    );
                    for (omega, pxx) in &res.scan {
                        println!("scan {omega:.4} {pxx:.6}");
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => numerical_error(e),
            }
        }
        Cmd::Converge {
            preset,
            config,
            out,
            pt_cache,
        } => {
            let mut cfg = match (preset, config) {
                (Some(name), None) => match preset_by_name(&name) {
                    Some(c) => c,
                    None => return config_error(format!("unknown preset '{name}'")),
                },
                (None, Some(path)) => match RunConfig::from_file(&path) {
                    Ok(c) => c,
                    Err(e) => return config_error(e),
                },
                _ => return config_error("exactly one of --preset or --config is required"),
            };
            if let Some(dir) = pt_cache {
                cfg.output.pt_cache_dir = Some(dir.to_string_lossy().into_owned());
            }
            cfg.output.dir = None;
            match convergence_report(&cfg) {
                Ok(rep) => {
                    let text = rep.to_toml();
                    print!("{text}");
                    if let Some(dir) = out {
                        if std::fs::create_dir_all(&dir).is_err()
                            || std::fs::write(dir.join("convergence.toml"), &text).is_err()
                        {
                            return numerical_error("failed to write report");
                        }
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => numerical_error(e),
            }
        }
        Cmd::Validate => {
            if run_validation_suite() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Cmd::DumpBath { temperature, out } => match dump_bath(temperature, &out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => numerical_error(e),
        },
    }
}

/// Quick cross-validating oracle suite; prints one line per check.
fn run_validation_suite() -> bool {
    use ndarray::Array2;
    use qdcascade::bath::MemoryKernel;
    use qdcascade::ptensor::{
        build_process_tensor, path_sum_oracle, propagate, CouplingSpec, DensePropagators,
        PtOptions,
    };

    let mut all_ok = true;
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{} {name}  {detail}", if ok { "PASS" } else { "FAIL" });
        all_ok &= ok;
    };

    // deterministic pseudo-random source
    let mut seed = 0x9e3779b97f4a7c15u64;
    let mut rnd = move || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };

    // path-sum equivalence on random small systems
    {
        let mut worst: f64 = 0.0;
        for _ in 0..3 {
            let d = 3;
            let lambdas: Vec<f64> = (0..d)
                .map(|_| (rnd() * 6.0).abs().floor().min(2.0))
                .collect();
            let eta: Vec<C64> = (0..3).map(|_| C64::new(rnd(), rnd()) * 0.3).collect();
            let kernel = MemoryKernel { dt: 0.1, eta };
            let props: Vec<Array2<C64>> = (0..3)
                .map(|_| Array2::from_shape_fn((d * d, d * d), |_| C64::new(rnd(), rnd()) / 3.0))
                .collect();
            let mut rho0 = Array2::<C64>::zeros((d, d));
            for i in 0..d {
                rho0[[i, i]] = C64::new(1.0 / d as f64, 0.0);
            }
            let cs = CouplingSpec::grouped(lambdas.clone());
            let opts = PtOptions {
                svd_tol: 1e-15,
                chi_max: 4096,
                drop_tol: 0.0,
            };
            let (pt, _) = build_process_tensor(&kernel, &cs, 3, &opts).unwrap();
            let traj = propagate(&rho0, &pt, &DensePropagators(props.clone()), &cs).unwrap();
            let oracle = path_sum_oracle(&rho0, &kernel, &lambdas, &props).unwrap();
            for m in 0..3 {
                let diff = traj[m + 1]
                    .iter()
                    .zip(oracle[m].iter())
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                worst = worst.max(diff);
            }
        }
        check(
            "path-sum-equivalence",
            worst < 1e-10,
            format!("max deviation {worst:.2e} (tol 1e-10)"),
        );
    }

    // bath quadrature dual-scheme agreement
    {
        let bath = BathParams::gaas(10.0);
        let c0 = bath.correlation(0.0).unwrap();
        let c0s = bath.correlation_simpson(0.0);
        let dp = bath.polaron_shift_freq().unwrap();
        let dps = bath.polaron_shift_freq_simpson();
        let rc = (c0 - c0s).norm() / c0.norm();
        let rd = ((dp - dps) / dp).abs();
        check(
            "bath-dual-quadrature",
            rc < 1e-8 && rd < 1e-8,
            format!("C(0) rel {rc:.2e}, shift rel {rd:.2e} (tol 1e-8)"),
        );
    }

    // memory kernel: twice-integrated route vs direct 2-D quadrature
    {
        let bath = BathParams::gaas(10.0);
        let (kernel, _) = memory_kernel(&bath, 0.2, 2).unwrap();
        let mut corr = |t: f64| bath.correlation(t).unwrap();
        let direct = eta_direct_2d(&mut corr, 0.2, 1, 1e-10);
        let diff = (kernel.eta[1] - direct).norm();
        check(
            "memory-kernel-dual-path",
            diff < 1e-8,
            format!("lag-1 deviation {diff:.2e} (tol 1e-8)"),
        );
    }

    // no-phonon reduction of the polaron master equation
    {
        use qdcascade::model::{InitialState, System};
        use qdcascade::pme::PmeSolver;
        let cfg = qdcascade::presets::preset_fig3(Method::Pme, false);
        let sys = System::full(cfg.model_spec()).unwrap();
        let mut bath = cfg.bath_params();
        bath.deformation_e = 0.0;
        bath.deformation_h = 0.0;
        let pq = PolaronQuantities::build(&bath, 6.0).unwrap();
        let with = PmeSolver::new(&sys, Some(&pq));
        let without = PmeSolver::new(&sys, None);
        let rho0 = sys.initial_density(InitialState::Biexciton).unwrap();
        let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.25).collect();
        let a = with.run(rho0.clone(), &times).unwrap();
        let b = without.run(rho0, &times).unwrap();
        let mut diff: f64 = 0.0;
        for (x, y) in a.states.iter().zip(b.states.iter()) {
            diff = diff.max(
                x.iter()
                    .zip(y.iter())
                    .map(|(p, q)| (p - q).norm())
                    .fold(0.0, f64::max),
            );
        }
        check(
            "pme-no-phonon-reduction",
            diff < 1e-10,
            format!("max deviation {diff:.2e} (tol 1e-10)"),
        );
    }

    all_ok
}

fn dump_bath(temperature: f64, out: &std::path::Path) -> Result<(), RunError> {
    use std::io::Write;
    let bath = BathParams::gaas(temperature);
    std::fs::create_dir_all(out)?;
    let wmax = bath.omega_cutoff();
    {
        let mut f =
            std::io::BufWriter::new(std::fs::File::create(out.join("spectral_density.csv"))?);
        writeln!(f, "omega_rad_ps,J_per_ps")?;
        for i in 0..=2000 {
            let w = wmax * i as f64 / 2000.0;
            writeln!(f, "{w:.11e},{:.11e}", bath.spectral_density(w))?;
        }
    }
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("correlation.csv"))?);
        writeln!(f, "t_ps,re_C,im_C")?;
        for i in 0..=1200 {
            let t = 6.0 * i as f64 / 1200.0;
            let c = bath.correlation(t)?;
            writeln!(f, "{t:.11e},{:.11e},{:.11e}", c.re, c.im)?;
        }
    }
    let pq = PolaronQuantities::build(&bath, 8.0)?;
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("phi.csv"))?);
        writeln!(f, "t_ps,re_phi,im_phi")?;
        for (i, v) in pq.phi_grid.iter().enumerate() {
            writeln!(
                f,
                "{:.11e},{:.11e},{:.11e}",
                i as f64 * pq.phi_dt,
                v.re,
                v.im
            )?;
        }
    }
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("kappa.csv"))?);
        writeln!(f, "omega_rad_ps,re_kappa_x,im_kappa_x,re_kappa_y,im_kappa_y")?;
        let m = pq.kappa_x_grid.len();
        for i in 0..m {
            let w = -pq.omega_window + i as f64 * pq.d_omega;
            let kx = pq.kappa_x_grid[i];
            let ky = pq.kappa_y_grid[i];
            writeln!(
                f,
                "{w:.11e},{:.11e},{:.11e},{:.11e},{:.11e}",
                kx.re, kx.im, ky.re, ky.im
            )?;
        }
    }
    let summary = format!(
        "temperature_k = {temperature}\nb_avg = {:.12}\npolaron_shift_mev = {:.12e}\nphi0 = {:.12e}\nt_cut_ps = {:.4}\n",
        pq.b_avg, pq.polaron_shift_mev, pq.phi0, pq.t_cut()
    );
    std::fs::write(out.join("summary.toml"), summary)?;
    Ok(())
}
