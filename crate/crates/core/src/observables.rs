//! Observables extracted from simulated trajectories: dot-level populations,
//! two-photon correlators and the photon-pair concurrence.
//!
//! The time-dependent concurrence is C(t) = 2 |G_HV| / (G_HH + G_VV) with
//! G_ij = Tr[rho a_i^dag a_i^dag a_j a_j]; the time-averaged variant
//! averages the correlators first, Cbar = 2 |<G_HV>| / (<G_HH> + <G_VV>).
//! Where the denominator is below a floor (no two-photon amplitude yet) the
//! concurrence is recorded as undefined rather than forced to a value.

use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::model::{Basis, BasisKind, QdLevel};

#[derive(Debug, Error)]
pub enum ObsError {
    #[error("two-photon correlators need a Fock truncation of at least 2, got {0}")]
    NeedsTwoPhotons(usize),
    #[error("trajectory/basis dimension mismatch: state {state}, basis {basis}")]
    DimMismatch { state: usize, basis: usize },
    #[error("averaging window [{0}, {1}] contains no samples")]
    EmptyWindow(f64, f64),
    #[error("write failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Denominator below which C(t) is reported as undefined.
pub const CONCURRENCE_FLOOR: f64 = 1e-14;

/// A simulated trajectory: states on a strictly increasing time grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Array2<C64>>,
    pub basis: Basis,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Array2<C64>>, basis: Basis) -> Self {
        assert_eq!(times.len(), states.len());
        assert!(times.windows(2).all(|w| w[1] > w[0]), "times must increase");
        Trajectory {
            times,
            states,
            basis,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Populations {
    pub g: f64,
    pub xh: f64,
    pub xv: f64,
    pub xx: f64,
}

impl Populations {
    pub fn total(&self) -> f64 {
        self.g + self.xh + self.xv + self.xx
    }
}

/// Dot-level populations: partial trace over the cavity modes.
pub fn populations(rho: &Array2<C64>, basis: &Basis) -> Result<Populations, ObsError> {
    if rho.nrows() != basis.dim() {
        return Err(ObsError::DimMismatch {
            state: rho.nrows(),
            basis: basis.dim(),
        });
    }
    let mut p = Populations {
        g: 0.0,
        xh: 0.0,
        xv: 0.0,
        xx: 0.0,
    };
    for (i, lab) in basis.labels().iter().enumerate() {
        let v = rho[[i, i]].re;
        match lab.level {
            QdLevel::G => p.g += v,
            QdLevel::XH => p.xh += v,
            QdLevel::XV => p.xv += v,
            QdLevel::XX => p.xx += v,
        }
    }
    Ok(p)
}

/// Two-photon correlators (G_HH, G_VV, G_HV).
pub fn two_photon_correlators(
    rho: &Array2<C64>,
    basis: &Basis,
) -> Result<(f64, f64, C64), ObsError> {
    if let BasisKind::Full { n_max } = basis.kind {
        if n_max < 2 {
            return Err(ObsError::NeedsTwoPhotons(n_max));
        }
    }
    if rho.nrows() != basis.dim() {
        return Err(ObsError::DimMismatch {
            state: rho.nrows(),
            basis: basis.dim(),
        });
    }
    let mut g_hh = 0.0;
    let mut g_vv = 0.0;
    let mut g_hv = C64::new(0.0, 0.0);
    for (i, lab) in basis.labels().iter().enumerate() {
        let (nh, nv) = (lab.n_h as f64, lab.n_v as f64);
        g_hh += nh * (nh - 1.0) * rho[[i, i]].re;
        g_vv += nv * (nv - 1.0) * rho[[i, i]].re;
        // G_HV couples |nu, n_h, n_v> to |nu, n_h + 2, n_v - 2>
        if lab.n_v >= 2 {
            let mut dst = *lab;
            dst.n_h += 2;
            dst.n_v -= 2;
            if let Some(j) = basis.index_of(&dst) {
                let amp = (nv * (nv - 1.0) * (nh + 1.0) * (nh + 2.0)).sqrt();
                g_hv += amp * rho[[i, j]];
            }
        }
    }
    Ok((g_hh, g_vv, g_hv))
}

#[derive(Debug, Clone, Copy)]
pub struct ConcurrenceRecord {
    pub g_hh: f64,
    pub g_vv: f64,
    pub g_hv: C64,
    /// None where the two-photon amplitude is below the floor.
    pub c: Option<f64>,
}

pub fn concurrence_record(rho: &Array2<C64>, basis: &Basis) -> Result<ConcurrenceRecord, ObsError> {
    let (g_hh, g_vv, g_hv) = two_photon_correlators(rho, basis)?;
    let den = g_hh + g_vv;
    let c = if den > CONCURRENCE_FLOOR {
        Some(2.0 * g_hv.norm() / den)
    } else {
        None
    };
    Ok(ConcurrenceRecord { g_hh, g_vv, g_hv, c })
}

/// Concurrence record at every trajectory sample.
pub fn concurrence_series(traj: &Trajectory) -> Result<Vec<ConcurrenceRecord>, ObsError> {
    traj.states
        .iter()
        .map(|rho| concurrence_record(rho, &traj.basis))
        .collect()
}

/// Time-averaged concurrence over `window` (averages of the correlators by
/// the trapezoidal rule, then the ratio).
pub fn integrated_concurrence(traj: &Trajectory, window: (f64, f64)) -> Result<f64, ObsError> {
    let (t0, t1) = window;
    let idx: Vec<usize> = traj
        .times
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= t0 - 1e-12 && t <= t1 + 1e-12)
        .map(|(i, _)| i)
        .collect();
    if idx.len() < 2 {
        return Err(ObsError::EmptyWindow(t0, t1));
    }
    let mut avg_hh = 0.0;
    let mut avg_vv = 0.0;
    let mut avg_hv = C64::new(0.0, 0.0);
    let mut span = 0.0;
    let mut prev: Option<(f64, f64, f64, C64)> = None;
    for &i in &idx {
        let (g_hh, g_vv, g_hv) = two_photon_correlators(&traj.states[i], &traj.basis)?;
        let t = traj.times[i];
        if let Some((tp, hh, vv, hv)) = prev {
            let h = t - tp;
            avg_hh += 0.5 * h * (hh + g_hh);
            avg_vv += 0.5 * h * (vv + g_vv);
            avg_hv += 0.5 * h * (hv + g_hv);
            span += h;
        }
        prev = Some((t, g_hh, g_vv, g_hv));
    }
    let den = (avg_hh + avg_vv) / span;
    if den <= CONCURRENCE_FLOOR {
        return Ok(0.0);
    }
    Ok(2.0 * (avg_hv / span).norm() / den)
}

/// Write the trajectory observables as CSV with the schema
/// `t, P_G, P_XH, P_XV, P_XX, G_HH, G_VV, Re_G_HV, Im_G_HV, C`
/// at 12 significant digits; undefined concurrence is written as `nan`.
pub fn write_csv<W: Write>(traj: &Trajectory, mut w: W) -> Result<(), ObsError> {
    writeln!(w, "t,P_G,P_XH,P_XV,P_XX,G_HH,G_VV,Re_G_HV,Im_G_HV,C")?;
    for (t, rho) in traj.times.iter().zip(traj.states.iter()) {
        let p = populations(rho, &traj.basis)?;
        let r = concurrence_record(rho, &traj.basis)?;
        let c = match r.c {
            Some(v) => format!("{v:.11e}"),
            None => "nan".to_string(),
        };
        writeln!(
            w,
            "{t:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{c}",
            p.g, p.xh, p.xv, p.xx, r.g_hh, r.g_vv, r.g_hv.re, r.g_hv.im
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::fwhm_to_std;
    use crate::model::{build_basis, BasisLabel, ModelSpec};

    fn basis(n_max: usize) -> Basis {
        build_basis(&ModelSpec {
            biexciton_binding: 1.5,
            fine_structure: 0.1,
            qd_cavity_coupling: 0.1,
            cavity_decay: 0.25,
            pulse_height: 0.0,
            pulse_center: 0.0,
            pulse_std: fwhm_to_std(5.0),
            fock_truncation: n_max,
        })
        .unwrap()
    }

    fn pure(basis: &Basis, label: BasisLabel) -> Array2<C64> {
        let i = basis.index_of(&label).unwrap();
        let mut rho = Array2::zeros((basis.dim(), basis.dim()));
        rho[[i, i]] = C64::new(1.0, 0.0);
        rho
    }

    #[test]
    fn biexciton_population() {
        let b = basis(2);
        let rho = pure(&b, BasisLabel::new(QdLevel::XX, 0, 0));
        let p = populations(&rho, &b).unwrap();
        assert_eq!(p.xx, 1.0);
        assert_eq!(p.total(), 1.0);
    }

    #[test]
    fn bell_state_concurrence_is_one() {
        // (|2,0> + |0,2>)/sqrt(2) on the ground level
        let b = basis(2);
        let i = b.index_of(&BasisLabel::new(QdLevel::G, 2, 0)).unwrap();
        let j = b.index_of(&BasisLabel::new(QdLevel::G, 0, 2)).unwrap();
        let mut rho = Array2::<C64>::zeros((b.dim(), b.dim()));
        for (a, bb) in [(i, i), (i, j), (j, i), (j, j)] {
            rho[[a, bb]] = C64::new(0.5, 0.0);
        }
        let r = concurrence_record(&rho, &b).unwrap();
        assert!((r.g_hh - 1.0).abs() < 1e-12);
        assert!((r.g_vv - 1.0).abs() < 1e-12);
        assert!((r.g_hv - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((r.c.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_mode_two_photon_state() {
        let b = basis(2);
        let rho = pure(&b, BasisLabel::new(QdLevel::G, 2, 0));
        let r = concurrence_record(&rho, &b).unwrap();
        assert!((r.g_hh - 2.0).abs() < 1e-12);
        assert_eq!(r.g_vv, 0.0);
        assert_eq!(r.g_hv, C64::new(0.0, 0.0));
        assert_eq!(r.c.unwrap(), 0.0);
    }

    #[test]
    fn mixed_state_ratio() {
        // G_HH = G_VV = 0.5 with <a_H^+a_H^+a_V a_V> = 0.3 gives C = 0.6
        let b = basis(2);
        let i = b.index_of(&BasisLabel::new(QdLevel::G, 2, 0)).unwrap();
        let j = b.index_of(&BasisLabel::new(QdLevel::G, 0, 2)).unwrap();
        let mut rho = Array2::<C64>::zeros((b.dim(), b.dim()));
        rho[[i, i]] = C64::new(0.25, 0.0);
        rho[[j, j]] = C64::new(0.25, 0.0);
        let g = b.index_of(&BasisLabel::new(QdLevel::G, 0, 0)).unwrap();
        rho[[g, g]] = C64::new(0.5, 0.0);
        rho[[j, i]] = C64::new(0.15, 0.0);
        rho[[i, j]] = C64::new(0.15, 0.0);
        let r = concurrence_record(&rho, &b).unwrap();
        assert!((r.g_hh - 0.5).abs() < 1e-12);
        assert!((r.g_vv - 0.5).abs() < 1e-12);
        assert!((r.g_hv.re - 0.3).abs() < 1e-12);
        assert!((r.c.unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn undefined_below_floor() {
        let b = basis(2);
        let rho = pure(&b, BasisLabel::new(QdLevel::G, 0, 0));
        let r = concurrence_record(&rho, &b).unwrap();
        assert!(r.c.is_none());
    }

    #[test]
    fn small_truncation_rejected() {
        let b = basis(1);
        let rho = pure(&b, BasisLabel::new(QdLevel::G, 0, 0));
        assert!(matches!(
            two_photon_correlators(&rho, &b),
            Err(ObsError::NeedsTwoPhotons(1))
        ));
    }

    #[test]
    fn constant_series_integrates_to_pointwise() {
        let b = basis(2);
        let i = b.index_of(&BasisLabel::new(QdLevel::G, 2, 0)).unwrap();
        let j = b.index_of(&BasisLabel::new(QdLevel::G, 0, 2)).unwrap();
        let mut rho = Array2::<C64>::zeros((b.dim(), b.dim()));
        rho[[i, i]] = C64::new(0.5, 0.0);
        rho[[j, j]] = C64::new(0.5, 0.0);
        rho[[i, j]] = C64::new(0.4, 0.0);
        rho[[j, i]] = C64::new(0.4, 0.0);
        let point = concurrence_record(&rho, &b).unwrap().c.unwrap();
        let times: Vec<f64> = (0..11).map(|k| k as f64 * 0.5).collect();
        let states = vec![rho.clone(); 11];
        let traj = Trajectory::new(times, states, b);
        let cbar = integrated_concurrence(&traj, (0.0, 5.0)).unwrap();
        assert!((cbar - point).abs() < 1e-12);
        assert!(integrated_concurrence(&traj, (9.0, 10.0)).is_err());
    }

    #[test]
    fn csv_schema() {
        let b = basis(2);
        let rho = pure(&b, BasisLabel::new(QdLevel::XX, 0, 0));
        let traj = Trajectory::new(vec![0.0, 1.0], vec![rho.clone(), rho], b);
        let mut buf = Vec::new();
        write_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,P_G,P_XH,P_XV,P_XX,G_HH,G_VV,Re_G_HV,Im_G_HV,C"
        );
        let row = lines.next().unwrap();
        assert_eq!(row.split(',').count(), 10);
        assert!(row.ends_with(",nan"));
    }
}
