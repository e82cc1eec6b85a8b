//! Orchestration: build the system for a [`RunConfig`], dispatch to the
//! requested solver and collect observables plus reproducibility artifacts
//! (manifest, CSV, process-tensor cache).

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;
use once_cell::sync::Lazy;
use thiserror::Error;

use crate::bath::{memory_kernel, BathError, BathParams, KernelReport, MemoryKernel, PolaronQuantities};
use crate::cache::{load_or_build, pt_cache_key};
use crate::config::{ConfigError, Method, RunConfig};
use crate::constants::HBAR_MEV_PS;
use crate::expm::{expm_dense, single_threaded_blas, KrylovExp};
use crate::model::{InitialState, ModelError, System};
use crate::observables::{integrated_concurrence, write_csv, ObsError, Trajectory};
use crate::pme::{PmeError, PmeSolver};
use crate::ptensor::{
    build_process_tensor, coupling_spec, propagate, PtBuildReport,
    PtOptions, StepPropagators, TensorError,
};
use crate::sparse::Csr;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bath(#[from] BathError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Pme(#[from] PmeError),
    #[error(transparent)]
    Obs(#[from] ObsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything produced by one run.
pub struct RunOutput {
    /// Fully resolved configuration (the manifest content).
    pub config: RunConfig,
    pub trajectory: Trajectory,
    /// Time-averaged concurrence over the configured window.
    pub cbar: f64,
    pub kernel_report: Option<KernelReport>,
    pub pt_report: Option<PtBuildReport>,
    pub pt_cache_hit: bool,
    pub elapsed_s: f64,
}

/// Free-propagator provider: exp(L dt) per step, with the Liouvillian
/// evaluated at the step midpoint for driven systems.
pub struct LindbladProps<'a> {
    sys: &'a System,
    dt: f64,
    krylov: KrylovExp,
    /// dense exponential for small or undriven systems
    static_u: Option<Array2<C64>>,
    static_l: Option<Csr>,
    step_cache: RefCell<Option<(usize, Csr)>>,
}

/// Liouville dimension up to which a dense exp(L dt) is precomputed for
/// time-independent generators.
const DENSE_LIOUVILLE_LIMIT: usize = 700;

impl<'a> LindbladProps<'a> {
    pub fn new(sys: &'a System, dt: f64) -> Result<Self, ModelError> {
        let mut props = LindbladProps {
            sys,
            dt,
            krylov: KrylovExp {
                max_dim: 48,
                tol: 1e-13,
            },
            static_u: None,
            static_l: None,
            step_cache: RefCell::new(None),
        };
        if !sys.is_driven() {
            let l = sys.liouvillian(0.0)?;
            if l.dim_liou() <= DENSE_LIOUVILLE_LIMIT {
                let a = l.mat.to_dense().mapv(|z| z * dt);
                props.static_u = Some(expm_dense(&a)?);
            } else {
                props.static_l = Some(l.mat);
            }
        }
        Ok(props)
    }
}

impl StepPropagators for LindbladProps<'_> {
    fn dim_liou(&self) -> usize {
        let d = self.sys.dim();
        d * d
    }

    fn apply(&self, step: usize, v: &mut [C64]) -> Result<(), String> {
        if let Some(u) = &self.static_u {
            let n = u.nrows();
            let mut out = vec![C64::new(0.0, 0.0); n];
            for (i, row) in u.outer_iter().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for (j, w) in row.iter().enumerate() {
                    acc += w * v[j];
                }
                out[i] = acc;
            }
            v.copy_from_slice(&out);
            return Ok(());
        }
        if let Some(l) = &self.static_l {
            let out = self
                .krylov
                .apply(l, self.dt, v)
                .map_err(|e| e.to_string())?;
            v.copy_from_slice(&out);
            return Ok(());
        }
        // time-dependent: midpoint Liouvillian, rebuilt once per step
        {
            let cached = self.step_cache.borrow();
            if let Some((s, l)) = cached.as_ref() {
                if *s == step {
                    let out = self
                        .krylov
                        .apply(l, self.dt, v)
                        .map_err(|e| e.to_string())?;
                    v.copy_from_slice(&out);
                    return Ok(());
                }
            }
        }
        let t_mid = (step as f64 + 0.5) * self.dt;
        let l = self
            .sys
            .liouvillian(t_mid)
            .map_err(|e| e.to_string())?
            .mat;
        let out = self
            .krylov
            .apply(&l, self.dt, v)
            .map_err(|e| e.to_string())?;
        v.copy_from_slice(&out);
        *self.step_cache.borrow_mut() = Some((step, l));
        Ok(())
    }
}

/// Build the simulated system for a config, including the polaron-shift
/// pre-compensation when enabled.
pub fn build_system(config: &RunConfig) -> Result<System, RunError> {
    let spec = config.model_spec();
    let mut sys = if config.model.two_excitation_subspace {
        System::five_level(spec)?
    } else {
        System::full(spec)?
    };
    if config.bath.enabled && config.bath.absorb_polaron_shift {
        let shift = config.bath_params().polaron_shift_mev()?;
        sys.absorb_polaron_shift(shift);
    }
    Ok(sys)
}

/// Bohr-frequency window (rad/ps) that the response grids must cover for
/// this system: the dressed spectral spread at peak drive, with margin.
pub fn required_kappa_window(sys: &System) -> Result<f64, RunError> {
    single_threaded_blas();
    let mut span: f64 = 0.0;
    for t in [sys.spec.pulse_center, sys.spec.pulse_center + 1e6] {
        let h = sys.hamiltonian(t).to_dense();
        let (evals, _) = h
            .eigh(UPLO::Lower)
            .map_err(|e| PmeError::Eig(format!("{e}")))
            .map_err(RunError::Pme)?;
        let lo = evals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = evals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        span = span.max(hi - lo);
    }
    Ok((1.3 * span + 1.0) / HBAR_MEV_PS)
}

static PQ_CACHE: Lazy<Mutex<HashMap<String, Arc<PolaronQuantities>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Polaron quantities with process-wide reuse (sweeps share temperatures).
pub fn polaron_quantities_cached(
    bath: &BathParams,
    window: f64,
) -> Result<Arc<PolaronQuantities>, RunError> {
    // quantize the window so nearby requests share an entry
    let wq = (window / 2.0).ceil() * 2.0;
    let mut key = String::new();
    for v in [
        bath.deformation_e,
        bath.deformation_h,
        bath.mass_density,
        bath.sound_speed,
        bath.radius_e,
        bath.radius_h,
        bath.temperature,
        wq,
    ] {
        key.push_str(&format!("{:x}:", v.to_bits()));
    }
    if let Some(hit) = PQ_CACHE.lock().unwrap().get(&key) {
        return Ok(hit.clone());
    }
    let pq = Arc::new(PolaronQuantities::build(bath, wq)?);
    PQ_CACHE
        .lock()
        .unwrap()
        .insert(key, pq.clone());
    Ok(pq)
}

fn output_times(config: &RunConfig) -> Vec<f64> {
    let n = config.steps();
    let stride = config.numerics.output_stride;
    let dt = config.numerics.dt_ps;
    let mut times: Vec<f64> = (0..=n).step_by(stride).map(|k| k as f64 * dt).collect();
    if *times.last().unwrap() < n as f64 * dt - 1e-12 {
        times.push(n as f64 * dt);
    }
    times
}

/// Run one configuration to completion (no file output).
pub fn run(config: &RunConfig) -> Result<RunOutput, RunError> {
    let started = std::time::Instant::now();
    config.validate()?;
    let config = config.resolved();
    log::debug!("run: config validated");
    let sys = build_system(&config)?;
    log::debug!("run: system built, dim {}", sys.dim());
    let rho0 = sys.initial_density(InitialState::from(config.model.initial_state))?;
    let n = config.steps();
    let dt = config.numerics.dt_ps;
    let stride = config.numerics.output_stride;

    let mut kernel_report = None;
    let mut pt_report = None;
    let mut pt_cache_hit = false;

    let trajectory = match config.method {
        Method::Tempo => {
            let cs = coupling_spec(&sys.basis);
            log::debug!("run: coupling spec q = {}", cs.q());
            let kernel = if config.bath.enabled {
                let (k, report) = memory_kernel(&config.bath_params(), dt, config.memory_steps())?;
                kernel_report = Some(report);
                k
            } else {
                MemoryKernel::zero(dt, config.memory_steps())
            };
            let opts = PtOptions {
                chi_max: config.numerics.chi_max,
                svd_tol: config.numerics.svd_tol,
                ..PtOptions::default()
            };
            let cache_dir = config
                .output
                .pt_cache_dir
                .as_ref()
                .map(PathBuf::from);
            let key = pt_cache_key(&config.bath_params(), dt, kernel.depth(), n, &cs, &opts);
            let report_slot: RefCell<Option<PtBuildReport>> = RefCell::new(None);
            let (pt, hit) = load_or_build(cache_dir.as_deref(), &key, || {
                let (pt, report) = build_process_tensor(&kernel, &cs, n, &opts)?;
                *report_slot.borrow_mut() = Some(report);
                Ok(pt)
            })?;
            pt_report = report_slot.into_inner();
            pt_cache_hit = hit;
            log::debug!("run: process tensor ready (cache hit: {pt_cache_hit})");
            let props = LindbladProps::new(&sys, dt)?;
            let states = propagate(&rho0, &pt, &props, &cs)?;
            log::debug!("run: propagation done");
            let times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
            let (times, states): (Vec<f64>, Vec<Array2<C64>>) = times
                .into_iter()
                .zip(states)
                .enumerate()
                .filter(|(i, _)| i % stride == 0 || *i == n)
                .map(|(_, ts)| ts)
                .unzip();
            Trajectory::new(times, states, sys.basis.clone())
        }
        Method::NoPhonon => {
            let props = LindbladProps::new(&sys, dt)?;
            let mut v: Vec<C64> = rho0.iter().cloned().collect();
            let d = sys.dim();
            let mut times = vec![0.0];
            let mut states = vec![rho0.clone()];
            for step in 0..n {
                props
                    .apply(step, &mut v)
                    .map_err(|message| TensorError::Propagator { step, message })?;
                if (step + 1) % stride == 0 || step + 1 == n {
                    times.push((step + 1) as f64 * dt);
                    states.push(Array2::from_shape_fn((d, d), |(i, j)| v[i * d + j]));
                }
            }
            Trajectory::new(times, states, sys.basis.clone())
        }
        Method::Pme => {
            let times = output_times(&config);
            if config.bath.enabled {
                let window = required_kappa_window(&sys)?;
                let pq = polaron_quantities_cached(&config.bath_params(), window)?;
                let mut solver = PmeSolver::new(&sys, Some(&pq));
                solver.step_tol = config.numerics.pme_step_tol;
                solver.run(rho0, &times)?
            } else {
                let mut solver = PmeSolver::new(&sys, None);
                solver.step_tol = config.numerics.pme_step_tol;
                solver.run(rho0, &times)?
            }
        }
    };

    let cbar = integrated_concurrence(&trajectory, config.averaging_window())?;
    Ok(RunOutput {
        config,
        trajectory,
        cbar,
        kernel_report,
        pt_report,
        pt_cache_hit,
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}

/// Run and write manifest + CSV into the configured output directory.
pub fn run_to_dir(config: &RunConfig) -> Result<RunOutput, RunError> {
    let out = run(config)?;
    if let Some(dir) = out.config.output.dir.as_ref() {
        write_outputs(&out, Path::new(dir))?;
    }
    Ok(out)
}

pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("manifest.toml"), out.config.to_toml())?;
    if out.config.output.write_csv {
        let f = std::fs::File::create(dir.join("trajectory.csv"))?;
        write_csv(&out.trajectory, std::io::BufWriter::new(f))?;
    }
    let mut summary = String::new();
    summary.push_str(&format!("method = \"{}\"\n", out.config.method));
    summary.push_str(&format!("cbar = {:.12e}\n", out.cbar));
    summary.push_str(&format!("elapsed_s = {:.3}\n", out.elapsed_s));
    if let Some(r) = &out.pt_report {
        summary.push_str(&format!(
            "pt_max_chi = {}\npt_max_discarded = {:.3e}\npt_chi_capped = {}\npt_effective_depth = {}\n",
            r.max_chi, r.max_discarded, r.chi_capped, r.effective_depth
        ));
    }
    summary.push_str(&format!("pt_cache_hit = {}\n", out.pt_cache_hit));
    if let Some(k) = &out.kernel_report {
        summary.push_str(&format!(
            "kernel_tail_ratio = {:.3e}\nkernel_tail_ok = {}\n",
            k.tail_ratio, k.tail_ok
        ));
    }
    std::fs::write(dir.join("summary.toml"), summary)?;
    Ok(())
}
