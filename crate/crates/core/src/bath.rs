//! Phonon-environment quantities: spectral density, bath correlation
//! function, the discretized memory kernel of the influence functional, and
//! the polaron-frame response functions.
//!
//! The deformation-potential coupling to longitudinal acoustic phonons has
//! spectral density
//!
//! ```text
//! J(w) = w^3 / (4 pi^2 rho hbar c^5) * (D_e exp(-w^2 a_e^2 / 4 c^2)
//!                                       - D_h exp(-w^2 a_h^2 / 4 c^2))^2
//! ```
//!
//! evaluated here in rad/ps for `w` with `J` in 1/ps, so that the bath
//! correlation function `C(t)` carries 1/ps^2 and the memory-kernel
//! coefficients `eta_k` are dimensionless. Material parameters are quoted in
//! their customary units (eV, kg/m^3, m/s, nm) and converted once.
//!
//! All frequency integrals are cut off at `omega_cutoff`, where the Gaussian
//! form factors have fallen below 1e-16; the superexponential decay makes the
//! truncation error negligible. The phonon propagator `phi(t)` doubles as the
//! twice-integrated correlation function through
//!
//! ```text
//! Phi2(t) = int_0^t dt' int_0^t' ds C(s) = phi(0) - phi(t) - i t Delta_p
//! ```
//!
//! which is how the memory kernel is assembled; a direct two-dimensional
//! quadrature of `C` is kept as an independent cross-check.

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::constants::{EV_TO_J, HBAR_MEV_PS, HBAR_SI, KB_MEV_PER_K};
use crate::quad::{adaptive_gk, adaptive_simpson, oscillation_panels, QuadError};

#[derive(Debug, Error)]
pub enum BathError {
    #[error("invalid bath parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("frequency {omega:.4} rad/ps outside the tabulated response window +-{window:.4}")]
    WindowExceeded { omega: f64, window: f64 },
}

/// Bulk GaAs deformation-potential parameters and the dot confinement radii.
#[derive(Debug, Clone, PartialEq)]
pub struct BathParams {
    /// Electron deformation potential (eV).
    pub deformation_e: f64,
    /// Hole deformation potential (eV).
    pub deformation_h: f64,
    /// Mass density (kg/m^3).
    pub mass_density: f64,
    /// Longitudinal sound speed (m/s).
    pub sound_speed: f64,
    /// Electron confinement radius (nm).
    pub radius_e: f64,
    /// Hole confinement radius (nm).
    pub radius_h: f64,
    /// Bath temperature (K).
    pub temperature: f64,
}

impl BathParams {
    /// Standard parameter set for a GaAs-based self-assembled dot at
    /// temperature `t_k`.
    pub fn gaas(t_k: f64) -> Self {
        BathParams {
            deformation_e: 7.0,
            deformation_h: -3.5,
            mass_density: 5370.0,
            sound_speed: 5110.0,
            radius_e: 3.0,
            radius_h: 3.0 / 1.15,
            temperature: t_k,
        }
    }

    pub fn validate(&self) -> Result<(), BathError> {
        if !(self.temperature >= 0.0) {
            return Err(BathError::InvalidParameter(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.mass_density <= 0.0 || self.sound_speed <= 0.0 {
            return Err(BathError::InvalidParameter(
                "mass density and sound speed must be positive".into(),
            ));
        }
        if self.radius_e <= 0.0 || self.radius_h <= 0.0 {
            return Err(BathError::InvalidParameter(
                "confinement radii must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Sound speed in nm/ps.
    fn c_nm_ps(&self) -> f64 {
        self.sound_speed * 1e-3
    }

    /// Prefactor P such that J(w) = P w^3 (D_e f_e - D_h f_h)^2 with D in eV
    /// and w in rad/ps.
    fn prefactor(&self) -> f64 {
        let c = self.sound_speed;
        1e24 * EV_TO_J * EV_TO_J
            / (4.0 * std::f64::consts::PI.powi(2) * self.mass_density * HBAR_SI * c.powi(5))
    }

    /// Spectral density J(w) in 1/ps for w in rad/ps (w >= 0).
    pub fn spectral_density(&self, w: f64) -> f64 {
        let c = self.c_nm_ps();
        let fe = (-(w * self.radius_e / (2.0 * c)).powi(2)).exp();
        let fh = (-(w * self.radius_h / (2.0 * c)).powi(2)).exp();
        let bracket = self.deformation_e * fe - self.deformation_h * fh;
        self.prefactor() * w.powi(3) * bracket * bracket
    }

    /// Upper integration cutoff: both Gaussian form factors below 1e-16.
    pub fn omega_cutoff(&self) -> f64 {
        let c = self.c_nm_ps();
        let a_min = self.radius_e.min(self.radius_h);
        // exp(-x^2) = 1e-16 at x ~= 6.07
        let x = (16.0 * std::f64::consts::LN_10).sqrt();
        x * 2.0 * c / a_min
    }

    /// coth(hbar w / 2 k_B T), with the T -> 0 limit of 1.
    pub fn coth_factor(&self, w: f64) -> f64 {
        if self.temperature <= 0.0 {
            return 1.0;
        }
        let x = HBAR_MEV_PS * w / (2.0 * KB_MEV_PER_K * self.temperature);
        if x > 20.0 {
            1.0
        } else {
            1.0 / x.tanh()
        }
    }

    /// Integrand of C(t); J(w) coth vanishes like w^2 at w = 0.
    fn integrand_c(&self, w: f64, t: f64) -> C64 {
        if w <= 0.0 {
            return C64::new(0.0, 0.0);
        }
        let j = self.spectral_density(w);
        C64::new(j * self.coth_factor(w) * (w * t).cos(), -j * (w * t).sin())
    }

    /// Integrand of phi(t). At w = 0 the thermal part tends to the finite
    /// limit 2 P (D_e - D_h)^2 k_B T / hbar.
    fn integrand_phi(&self, w: f64, t: f64) -> C64 {
        if w <= 0.0 {
            let lim = if self.temperature > 0.0 {
                let d = self.deformation_e - self.deformation_h;
                2.0 * self.prefactor() * d * d * KB_MEV_PER_K * self.temperature / HBAR_MEV_PS
            } else {
                0.0
            };
            return C64::new(lim, 0.0);
        }
        let jw2 = self.spectral_density(w) / (w * w);
        C64::new(
            jw2 * self.coth_factor(w) * (w * t).cos(),
            -jw2 * (w * t).sin(),
        )
    }

    /// Bath correlation function
    /// C(t) = int_0^inf dw J(w) [coth(beta hbar w / 2) cos(wt) - i sin(wt)].
    pub fn correlation(&self, t: f64) -> Result<C64, BathError> {
        let wmax = self.omega_cutoff();
        let panels = oscillation_panels(0.0, wmax, t).max(8);
        Ok(adaptive_gk(
            |w| self.integrand_c(w, t),
            0.0,
            wmax,
            1e-9,
            1e-14,
            panels,
        )?)
    }

    /// Same integral by adaptive Simpson; independent validation path.
    pub fn correlation_simpson(&self, t: f64) -> C64 {
        let wmax = self.omega_cutoff();
        adaptive_simpson(&mut |w| self.integrand_c(w, t), 0.0, wmax, 1e-13, 44)
    }

    /// Phonon propagator
    /// phi(t) = int_0^inf dw J(w)/w^2 [coth(beta hbar w / 2) cos(wt) - i sin(wt)].
    pub fn phi(&self, t: f64) -> Result<C64, BathError> {
        let wmax = self.omega_cutoff();
        let panels = oscillation_panels(0.0, wmax, t).max(8);
        Ok(adaptive_gk(
            |w| self.integrand_phi(w, t),
            0.0,
            wmax,
            1e-10,
            1e-15,
            panels,
        )?)
    }

    pub fn phi_simpson(&self, t: f64) -> C64 {
        let wmax = self.omega_cutoff();
        adaptive_simpson(&mut |w| self.integrand_phi(w, t), 0.0, wmax, 1e-14, 44)
    }

    /// Polaron shift Delta_p = int_0^inf dw J(w)/w, as a frequency (rad/ps).
    pub fn polaron_shift_freq(&self) -> Result<f64, BathError> {
        let wmax = self.omega_cutoff();
        let v = adaptive_gk(
            |w| {
                if w <= 0.0 {
                    return C64::new(0.0, 0.0);
                }
                C64::new(self.spectral_density(w) / w, 0.0)
            },
            0.0,
            wmax,
            1e-11,
            1e-16,
            8,
        )?;
        Ok(v.re)
    }

    /// Polaron shift as an energy (meV).
    pub fn polaron_shift_mev(&self) -> Result<f64, BathError> {
        Ok(HBAR_MEV_PS * self.polaron_shift_freq()?)
    }

    pub fn polaron_shift_freq_simpson(&self) -> f64 {
        let wmax = self.omega_cutoff();
        adaptive_simpson(
            &mut |w| {
                if w <= 0.0 {
                    return C64::new(0.0, 0.0);
                }
                C64::new(self.spectral_density(w) / w, 0.0)
            },
            0.0,
            wmax,
            1e-15,
            44,
        )
        .re
    }

    /// Twice-integrated correlation function
    /// Phi2(t) = int_0^t dt' int_0^t' ds C(s) = phi(0) - phi(t) - i t Delta_p.
    pub fn phi2(&self, t: f64) -> Result<C64, BathError> {
        let phi0 = self.phi(0.0)?;
        let phit = self.phi(t)?;
        let dp = self.polaron_shift_freq()?;
        Ok(phi0 - phit - C64::new(0.0, t * dp))
    }
}

/// Discretized influence-functional coefficients eta_0..eta_K at step `dt`.
#[derive(Debug, Clone)]
pub struct MemoryKernel {
    pub dt: f64,
    pub eta: Vec<C64>,
}

impl MemoryKernel {
    pub fn depth(&self) -> usize {
        self.eta.len() - 1
    }

    /// All-zero kernel (no environment) of the given depth.
    pub fn zero(dt: f64, depth: usize) -> Self {
        MemoryKernel {
            dt,
            eta: vec![C64::new(0.0, 0.0); depth + 1],
        }
    }
}

/// Construction diagnostics: how far the kernel has decayed at the chosen
/// depth.
#[derive(Debug, Clone)]
pub struct KernelReport {
    /// |eta_K| / |eta_0|.
    pub tail_ratio: f64,
    /// Relative floor the tail is expected to reach.
    pub floor: f64,
    pub tail_ok: bool,
}

/// Relative tail floor used to flag an undersized memory depth.
pub const KERNEL_TAIL_FLOOR: f64 = 1e-8;

/// Memory kernel via second differences of the twice-integrated correlation
/// function:
/// eta_0 = Phi2(dt), eta_k = Phi2((k+1)dt) - 2 Phi2(k dt) + Phi2((k-1)dt).
pub fn memory_kernel(
    bath: &BathParams,
    dt: f64,
    depth: usize,
) -> Result<(MemoryKernel, KernelReport), BathError> {
    assert!(dt > 0.0 && depth >= 1, "memory kernel needs dt > 0, K >= 1");
    bath.validate()?;
    let phi0 = bath.phi(0.0)?;
    let dp = bath.polaron_shift_freq()?;
    let phi2 = |phit: C64, t: f64| phi0 - phit - C64::new(0.0, t * dp);
    let mut grid = Vec::with_capacity(depth + 2);
    for k in 0..=depth + 1 {
        let t = k as f64 * dt;
        grid.push(phi2(bath.phi(t)?, t));
    }
    let mut eta = Vec::with_capacity(depth + 1);
    eta.push(grid[1]);
    for k in 1..=depth {
        eta.push(grid[k + 1] - 2.0 * grid[k] + grid[k - 1]);
    }
    let tail_ratio = if eta[0].norm() > 0.0 {
        eta[depth].norm() / eta[0].norm()
    } else {
        0.0
    };
    let report = KernelReport {
        tail_ratio,
        floor: KERNEL_TAIL_FLOOR,
        tail_ok: tail_ratio <= KERNEL_TAIL_FLOOR,
    };
    if !report.tail_ok {
        log::warn!(
            "memory depth K = {depth} may be too small: |eta_K|/|eta_0| = {tail_ratio:.3e} > {KERNEL_TAIL_FLOOR:.1e}"
        );
    }
    Ok((MemoryKernel { dt, eta }, report))
}

/// Direct two-dimensional quadrature of the correlation function over one
/// time-step cell: the triangle t'' < t' within a step for `k = 0`, or the
/// rectangle between steps separated by lag `k`. Independent of the
/// twice-integrated-kernel route.
pub fn eta_direct_2d(corr: &mut dyn FnMut(f64) -> C64, dt: f64, k: usize, tol: f64) -> C64 {
    if k == 0 {
        // triangle: t' in [0, dt], t'' in [0, t']
        adaptive_simpson(
            &mut |tp| adaptive_simpson(&mut |ts| corr(tp - ts), 0.0, tp, tol * 0.1, 30),
            0.0,
            dt,
            tol,
            30,
        )
    } else {
        // rectangle: t' in [k dt, (k+1) dt], t'' in [0, dt]
        adaptive_simpson(
            &mut |tp| adaptive_simpson(&mut |ts| corr(tp - ts), 0.0, dt, tol * 0.1, 30),
            k as f64 * dt,
            (k as f64 + 1.0) * dt,
            tol,
            30,
        )
    }
}

/// Polaron-frame quantities: the renormalization factor, polaron shift, the
/// phi(t) grid and the tabulated response functions kappa_x/kappa_y.
#[derive(Debug, Clone)]
pub struct PolaronQuantities {
    pub temperature: f64,
    /// phi(0) (real; the imaginary part vanishes).
    pub phi0: f64,
    /// <B> = exp(-phi(0)/2).
    pub b_avg: f64,
    pub polaron_shift_mev: f64,
    /// phi(t) samples on a uniform grid [0, t_cut].
    pub phi_dt: f64,
    pub phi_grid: Vec<C64>,
    /// kappa grids over [-omega_window, +omega_window].
    pub omega_window: f64,
    pub d_omega: f64,
    pub kappa_x_grid: Vec<C64>,
    pub kappa_y_grid: Vec<C64>,
}

/// Correlation functions of the two polaron-frame bath operators, built from
/// phi(t): C_x = <B>^2 (e^phi + e^-phi - 2)/2, C_y = <B>^2 (e^phi - e^-phi)/2.
pub fn c_xy_from_phi(b_avg: f64, phi: C64) -> (C64, C64) {
    let b2 = b_avg * b_avg;
    let ep = phi.exp();
    let em = (-phi).exp();
    (0.5 * b2 * (ep + em - 2.0), 0.5 * b2 * (ep - em))
}

/// Sampling step of the phi(t) grid (ps).
const PHI_GRID_DT: f64 = 0.005;
/// Grid spacing of the kappa tables (rad/ps).
const KAPPA_D_OMEGA: f64 = 0.01;
/// phi(t) magnitude below which the long-time tail is dropped.
const PHI_TAIL_CUT: f64 = 1e-12;
/// Hard cap on the phi(t) grid extent (ps).
const PHI_T_MAX: f64 = 60.0;

impl PolaronQuantities {
    /// Tabulate everything needed by the polaron master equation for Bohr
    /// frequencies within `+-omega_window` (rad/ps).
    pub fn build(bath: &BathParams, omega_window: f64) -> Result<Self, BathError> {
        bath.validate()?;
        let phi0c = bath.phi(0.0)?;
        let phi0 = phi0c.re;
        if phi0 < 0.0 {
            return Err(BathError::InvalidParameter(format!(
                "phi(0) = {phi0} must be nonnegative"
            )));
        }
        let b_avg = (-0.5 * phi0).exp();
        let polaron_shift_mev = bath.polaron_shift_mev()?;

        // phi grid out to where the propagator has decayed
        let mut phi_grid = vec![phi0c];
        let mut t = 0.0;
        let mut quiet = 0usize;
        while t < PHI_T_MAX {
            t += PHI_GRID_DT;
            let v = bath.phi(t)?;
            phi_grid.push(v);
            if v.norm() < PHI_TAIL_CUT {
                quiet += 1;
                if quiet >= 32 {
                    break;
                }
            } else {
                quiet = 0;
            }
        }

        // response functions kappa_u(w) = int_0^tcut C_u(t) e^{iwt} dt by
        // composite Simpson on the cached grid
        let n = phi_grid.len();
        let mut cx = Vec::with_capacity(n);
        let mut cy = Vec::with_capacity(n);
        for &p in &phi_grid {
            let (x, y) = c_xy_from_phi(b_avg, p);
            cx.push(x);
            cy.push(y);
        }
        let m = ((omega_window / KAPPA_D_OMEGA).ceil() as usize).max(1);
        let mut kappa_x_grid = Vec::with_capacity(2 * m + 1);
        let mut kappa_y_grid = Vec::with_capacity(2 * m + 1);
        for i in 0..=2 * m {
            let w = (i as f64 - m as f64) * KAPPA_D_OMEGA;
            kappa_x_grid.push(fourier_simpson(&cx, PHI_GRID_DT, w));
            kappa_y_grid.push(fourier_simpson(&cy, PHI_GRID_DT, w));
        }
        Ok(PolaronQuantities {
            temperature: bath.temperature,
            phi0,
            b_avg,
            polaron_shift_mev,
            phi_dt: PHI_GRID_DT,
            phi_grid,
            omega_window: m as f64 * KAPPA_D_OMEGA,
            d_omega: KAPPA_D_OMEGA,
            kappa_x_grid,
            kappa_y_grid,
        })
    }

    pub fn t_cut(&self) -> f64 {
        (self.phi_grid.len() - 1) as f64 * self.phi_dt
    }

    /// phi(t) by cubic interpolation of the grid; zero beyond the cutoff.
    pub fn phi_at(&self, t: f64) -> C64 {
        debug_assert!(t >= 0.0);
        if t >= self.t_cut() {
            return C64::new(0.0, 0.0);
        }
        interp_cubic(&self.phi_grid, self.phi_dt, t)
    }

    pub fn kappa_x(&self, w: f64) -> Result<C64, BathError> {
        self.kappa(&self.kappa_x_grid, w)
    }

    pub fn kappa_y(&self, w: f64) -> Result<C64, BathError> {
        self.kappa(&self.kappa_y_grid, w)
    }

    fn kappa(&self, grid: &[C64], w: f64) -> Result<C64, BathError> {
        if w.abs() > self.omega_window {
            return Err(BathError::WindowExceeded {
                omega: w,
                window: self.omega_window,
            });
        }
        Ok(interp_cubic(grid, self.d_omega, w + self.omega_window))
    }

    /// Direct adaptive quadrature of kappa_u at a single frequency, without
    /// the grid; validation path.
    pub fn kappa_direct(bath: &BathParams, axis_y: bool, w: f64) -> Result<C64, BathError> {
        let phi0 = bath.phi(0.0)?.re;
        let b_avg = (-0.5 * phi0).exp();
        // conservative fixed horizon; the integrand decays with phi(t)
        let t_cut = 30.0;
        let panels = oscillation_panels(0.0, t_cut, w).max(64);
        let v = adaptive_gk(
            |t| {
                let phi = bath.phi(t).unwrap_or_else(|_| C64::new(0.0, 0.0));
                let (cx, cy) = c_xy_from_phi(b_avg, phi);
                let c = if axis_y { cy } else { cx };
                c * C64::new(0.0, w * t).exp()
            },
            0.0,
            t_cut,
            1e-8,
            1e-13,
            panels,
        )?;
        Ok(v)
    }
}

/// Composite Simpson evaluation of int f(t) e^{iwt} dt over a uniform grid.
fn fourier_simpson(f: &[C64], dt: f64, w: f64) -> C64 {
    let n = f.len();
    assert!(n >= 3);
    let phase = |k: usize| C64::new(0.0, w * k as f64 * dt).exp();
    let mut acc = C64::new(0.0, 0.0);
    let last_even = if (n - 1) % 2 == 0 { n - 1 } else { n - 2 };
    let mut k = 0;
    while k + 2 <= last_even {
        acc += (f[k] * phase(k) + 4.0 * f[k + 1] * phase(k + 1) + f[k + 2] * phase(k + 2))
            * (dt / 3.0);
        k += 2;
    }
    if last_even < n - 1 {
        // trailing interval by trapezoid; the tail is already below the cut
        acc += (f[n - 2] * phase(n - 2) + f[n - 1] * phase(n - 1)) * (0.5 * dt);
    }
    acc
}

/// Four-point (cubic Lagrange) interpolation on a uniform grid starting at 0.
fn interp_cubic(grid: &[C64], dx: f64, x: f64) -> C64 {
    let n = grid.len();
    assert!(n >= 4, "interpolation grid too short");
    let pos = x / dx;
    let i1 = (pos.floor() as isize).clamp(1, n as isize - 3) as usize;
    let i0 = i1 - 1;
    let s = pos - i1 as f64;
    let (f0, f1, f2, f3) = (grid[i0], grid[i1], grid[i1 + 1], grid[i1 + 2]);
    let w0 = -s * (s - 1.0) * (s - 2.0) / 6.0;
    let w1 = (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0;
    let w2 = -(s + 1.0) * s * (s - 2.0) / 2.0;
    let w3 = (s + 1.0) * s * (s - 1.0) / 6.0;
    f0 * w0 + f1 * w1 + f2 * w2 + f3 * w3
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_density_basics() {
        let b = BathParams::gaas(10.0);
        assert_eq!(b.spectral_density(0.0), 0.0);
        let wmax = b.omega_cutoff();
        for i in 1..200 {
            let w = wmax * i as f64 / 200.0;
            assert!(b.spectral_density(w) >= 0.0);
        }
        // low-frequency coefficient: J ~ P (D_e - D_h)^2 w^3
        let w = 1e-3;
        let coeff = b.spectral_density(w) / w.powi(3);
        let want = b.prefactor() * (7.0f64 + 3.5).powi(2);
        assert!((coeff / want - 1.0).abs() < 1e-4, "coeff {coeff} want {want}");
    }

    #[test]
    fn imaginary_part_is_temperature_independent() {
        let cold = BathParams::gaas(4.0);
        let warm = BathParams::gaas(20.0);
        for &t in &[0.1, 0.7, 1.9, 4.2] {
            let a = cold.correlation(t).unwrap();
            let b = warm.correlation(t).unwrap();
            assert!((a.im - b.im).abs() < 1e-9, "t={t}: {} vs {}", a.im, b.im);
        }
    }

    #[test]
    fn correlation_conjugate_symmetry() {
        let b = BathParams::gaas(10.0);
        for &t in &[0.3, 1.1, 2.7] {
            let plus = b.correlation(t).unwrap();
            let minus = b.correlation(-t).unwrap();
            assert!((minus - plus.conj()).norm() < 1e-9);
        }
    }

    #[test]
    fn gk_and_simpson_agree_on_c0() {
        let b = BathParams::gaas(10.0);
        let a = b.correlation(0.0).unwrap();
        let s = b.correlation_simpson(0.0);
        assert!((a - s).norm() < 1e-8 * a.norm().max(1.0));
    }

    #[test]
    fn constant_kernel_cells() {
        // eta_0 = c dt^2 / 2, eta_k = c dt^2 for a constant integrand
        let c = C64::new(0.8, -0.3);
        let dt = 0.25;
        let mut f = |_t: f64| c;
        let e0 = eta_direct_2d(&mut f, dt, 0, 1e-12);
        let e3 = eta_direct_2d(&mut f, dt, 3, 1e-12);
        assert!((e0 - c * dt * dt * 0.5).norm() < 1e-10);
        assert!((e3 - c * dt * dt).norm() < 1e-10);
    }

    #[test]
    fn zero_coupling_kernel_is_zero() {
        let mut b = BathParams::gaas(10.0);
        b.deformation_e = 0.0;
        b.deformation_h = 0.0;
        let (k, _) = memory_kernel(&b, 0.1, 8).unwrap();
        for e in &k.eta {
            assert!(e.norm() < 1e-14);
        }
    }

    #[test]
    fn kernel_refinement_consistency() {
        // coarse cells tile into fine cells: eta_0 = 2 eta'_0 + eta'_1 and
        // eta_k = eta'_{2k-1} + 2 eta'_{2k} + eta'_{2k+1}
        let b = BathParams::gaas(10.0);
        let dt = 0.2;
        let (coarse, _) = memory_kernel(&b, dt, 6).unwrap();
        let (fine, _) = memory_kernel(&b, dt / 2.0, 13).unwrap();
        let e0 = 2.0 * fine.eta[0] + fine.eta[1];
        assert!((coarse.eta[0] - e0).norm() < 1e-8);
        for k in 1..=6 {
            let want = fine.eta[2 * k - 1] + 2.0 * fine.eta[2 * k] + fine.eta[2 * k + 1];
            assert!(
                (coarse.eta[k] - want).norm() < 1e-8,
                "lag {k}: {:?} vs {want:?}",
                coarse.eta[k]
            );
        }
    }

    #[test]
    fn b_avg_monotone_in_temperature() {
        let mut last = f64::INFINITY;
        for &t in &[1.0, 4.0, 10.0, 20.0, 30.0] {
            let b = BathParams::gaas(t);
            let phi0 = b.phi(0.0).unwrap().re;
            assert!(phi0 > 0.0);
            let bavg = (-0.5 * phi0).exp();
            assert!(bavg > 0.0 && bavg <= 1.0);
            assert!(bavg < last, "B({t}) = {bavg} not below {last}");
            last = bavg;
        }
        // T -> 0 limit exceeds the 10 K value
        let b0 = BathParams::gaas(0.0);
        let b10 = BathParams::gaas(10.0);
        let f = |b: &BathParams| (-0.5 * b.phi(0.0).unwrap().re).exp();
        assert!(f(&b0) > f(&b10));
    }

    #[test]
    fn interp_cubic_reproduces_cubics() {
        let dx = 0.1;
        let f = |x: f64| C64::new(1.0 + 2.0 * x - x * x + 0.5 * x * x * x, -x * x);
        let grid: Vec<C64> = (0..50).map(|i| f(i as f64 * dx)).collect();
        for &x in &[0.12, 1.03, 3.33, 4.71] {
            assert!((interp_cubic(&grid, dx, x) - f(x)).norm() < 1e-12);
        }
    }

    #[test]
    fn polaron_tail_decays() {
        let b = BathParams::gaas(10.0);
        let pq = PolaronQuantities::build(&b, 2.0).unwrap();
        let t_end = pq.t_cut();
        let (cx, cy) = c_xy_from_phi(pq.b_avg, pq.phi_at(t_end - 1e-9));
        assert!(cx.norm() < 1e-10, "Cx tail {}", cx.norm());
        assert!(cy.norm() < 1e-10, "Cy tail {}", cy.norm());
        // b_avg consistent with phi0
        assert!((pq.b_avg - (-0.5 * pq.phi0).exp()).abs() < 1e-15);
        // window enforcement
        assert!(pq.kappa_x(pq.omega_window + 1.0).is_err());
    }
}
