//! Quantum-dot-bimodal-cavity model: basis construction, Hamiltonians,
//! Lindblad Liouvillians and time-step propagators.
//!
//! The dot is a four-level system (ground `G`, excitons `X_H`/`X_V` split by
//! the fine structure, biexciton `XX`) coupled to two degenerate cavity modes
//! tuned to half the biexciton energy; everything is written in the frame
//! rotating at that frequency, so both cavity modes and the two-photon
//! transition sit at zero detuning. Density matrices are vectorized row-major:
//! `rho_mu = <mu_l| rho |mu_r>` with `mu = mu_l * dim + mu_r`.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::constants::HBAR_MEV_PS;
use crate::expm::{expm_dense, ExpmError, KrylovExp};
use crate::sparse::Csr;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("cavity decay rate must be nonnegative, got {0}")]
    NegativeDecay(f64),
    #[error("the two-excitation subspace requires an undriven dot (pulse_height = 0), got {0}")]
    DrivenSubspace(f64),
    #[error("initial state {0} is not contained in this basis")]
    BadInitialState(String),
    #[error(transparent)]
    Expm(#[from] ExpmError),
}

/// Electronic level of the dot. `lambda` is the eigenvalue of the phonon
/// coupling operator (the exciton number).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QdLevel {
    G,
    XH,
    XV,
    XX,
}

impl QdLevel {
    pub const ALL: [QdLevel; 4] = [QdLevel::G, QdLevel::XH, QdLevel::XV, QdLevel::XX];

    pub fn lambda(self) -> f64 {
        match self {
            QdLevel::G => 0.0,
            QdLevel::XH | QdLevel::XV => 1.0,
            QdLevel::XX => 2.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QdLevel::G => "G",
            QdLevel::XH => "XH",
            QdLevel::XV => "XV",
            QdLevel::XX => "XX",
        }
    }
}

/// Model parameters. Energies in meV, times in ps, rates in 1/ps.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Biexciton binding energy E_B.
    pub biexciton_binding: f64,
    /// Fine-structure splitting of the excitons.
    pub fine_structure: f64,
    /// Dot-cavity coupling g.
    pub qd_cavity_coupling: f64,
    /// Cavity intensity decay rate (1/ps).
    pub cavity_decay: f64,
    /// Peak drive strength of the Gaussian pulse.
    pub pulse_height: f64,
    /// Pulse center t0 (ps).
    pub pulse_center: f64,
    /// Gaussian standard deviation tau (ps).
    pub pulse_std: f64,
    /// Photon-number truncation per cavity mode.
    pub fock_truncation: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fin = [
            self.biexciton_binding,
            self.fine_structure,
            self.qd_cavity_coupling,
            self.cavity_decay,
            self.pulse_height,
            self.pulse_center,
            self.pulse_std,
        ];
        if fin.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidParameter(
                "all energies, rates and times must be finite".into(),
            ));
        }
        if self.cavity_decay < 0.0 {
            return Err(ModelError::NegativeDecay(self.cavity_decay));
        }
        if self.qd_cavity_coupling < 0.0 {
            return Err(ModelError::InvalidParameter("g must be >= 0".into()));
        }
        if self.pulse_std <= 0.0 {
            return Err(ModelError::InvalidParameter("tau must be > 0".into()));
        }
        if self.fock_truncation < 1 {
            return Err(ModelError::InvalidParameter("n_max must be >= 1".into()));
        }
        Ok(())
    }

    /// Gaussian drive envelope Omega(t).
    pub fn omega(&self, t: f64) -> f64 {
        let x = (t - self.pulse_center) / self.pulse_std;
        self.pulse_height * (-0.5 * x * x).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasisLabel {
    pub level: QdLevel,
    pub n_h: u32,
    pub n_v: u32,
}

impl BasisLabel {
    pub fn new(level: QdLevel, n_h: u32, n_v: u32) -> Self {
        BasisLabel { level, n_h, n_v }
    }

    /// Total excitation number: exciton number plus photons.
    pub fn excitation(&self) -> f64 {
        self.level.lambda() + self.n_h as f64 + self.n_v as f64
    }
}

impl std::fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "|{},{},{}>", self.level.name(), self.n_h, self.n_v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    /// All 4 (n_max+1)^2 product states, ordered dot-level major, then n_H,
    /// then n_V. The ordering is part of the output contract (CSV columns and
    /// cached tensors depend on it).
    Full { n_max: usize },
    /// The five levels reachable from |XX,0,0> under excitation-conserving
    /// dynamics: |XX,0,0>, |XH,1,0>, |XV,0,1>, |G,2,0>, |G,0,2>.
    TwoExcitation,
}

#[derive(Debug, Clone)]
pub struct Basis {
    pub kind: BasisKind,
    labels: Vec<BasisLabel>,
}

impl Basis {
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[BasisLabel] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> BasisLabel {
        self.labels[i]
    }

    pub fn index_of(&self, label: &BasisLabel) -> Option<usize> {
        match self.kind {
            BasisKind::Full { n_max } => {
                let per = n_max + 1;
                if (label.n_h as usize) > n_max || (label.n_v as usize) > n_max {
                    return None;
                }
                let l = QdLevel::ALL.iter().position(|&q| q == label.level)?;
                Some(l * per * per + label.n_h as usize * per + label.n_v as usize)
            }
            BasisKind::TwoExcitation => self.labels.iter().position(|l| l == label),
        }
    }

    /// Phonon-coupling eigenvalue of each basis state; the cavity modes
    /// inherit the value of the dot level.
    pub fn lambda_bar(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.level.lambda()).collect()
    }
}

/// Build the full product basis for `spec`.
pub fn build_basis(spec: &ModelSpec) -> Result<Basis, ModelError> {
    spec.validate()?;
    let n_max = spec.fock_truncation;
    let per = n_max + 1;
    let mut labels = Vec::with_capacity(4 * per * per);
    for level in QdLevel::ALL {
        for n_h in 0..per {
            for n_v in 0..per {
                labels.push(BasisLabel::new(level, n_h as u32, n_v as u32));
            }
        }
    }
    Ok(Basis {
        kind: BasisKind::Full { n_max },
        labels,
    })
}

fn two_excitation_labels() -> Vec<BasisLabel> {
    vec![
        BasisLabel::new(QdLevel::XX, 0, 0),
        BasisLabel::new(QdLevel::XH, 1, 0),
        BasisLabel::new(QdLevel::XV, 0, 1),
        BasisLabel::new(QdLevel::G, 2, 0),
        BasisLabel::new(QdLevel::G, 0, 2),
    ]
}

/// Sparse operator on the system Hilbert space.
#[derive(Debug, Clone)]
pub struct OperatorRep {
    pub dim: usize,
    pub entries: Vec<(u32, u32, C64)>,
}

impl OperatorRep {
    pub fn new(dim: usize) -> Self {
        OperatorRep {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, r: usize, c: usize, v: C64) {
        debug_assert!(r < self.dim && c < self.dim);
        self.entries.push((r as u32, c as u32, v));
    }

    /// Add `v` at (r, c) together with its Hermitian partner.
    pub fn add_herm(&mut self, r: usize, c: usize, v: C64) {
        self.add(r, c, v);
        if r != c {
            self.add(c, r, v.conj());
        }
    }

    /// Sort and merge duplicate coordinates.
    pub fn canonicalize(&mut self) {
        self.entries
            .sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut out: Vec<(u32, u32, C64)> = Vec::with_capacity(self.entries.len());
        for &(r, c, v) in &self.entries {
            if let Some(last) = out.last_mut() {
                if last.0 == r && last.1 == c {
                    last.2 += v;
                    continue;
                }
            }
            out.push((r, c, v));
        }
        self.entries = out;
    }

    pub fn scaled(&self, s: C64) -> Self {
        OperatorRep {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .map(|&(r, c, v)| (r, c, v * s))
                .collect(),
        }
    }

    pub fn plus(&self, other: &OperatorRep) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut entries = self.entries.clone();
        entries.extend_from_slice(&other.entries);
        let mut op = OperatorRep { dim: self.dim, entries };
        op.canonicalize();
        op
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut a = Array2::zeros((self.dim, self.dim));
        for &(r, c, v) in &self.entries {
            a[[r as usize, c as usize]] += v;
        }
        a
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let d = self.to_dense();
        for i in 0..self.dim {
            for j in 0..self.dim {
                if (d[[i, j]] - d[[j, i]].conj()).norm() > tol {
                    return false;
                }
            }
        }
        true
    }
}

/// Annihilation operator of one cavity mode, restricted to `basis`.
fn mode_op(basis: &Basis, horizontal: bool) -> OperatorRep {
    let mut a = OperatorRep::new(basis.dim());
    for (i, lab) in basis.labels().iter().enumerate() {
        let n = if horizontal { lab.n_h } else { lab.n_v };
        if n == 0 {
            continue;
        }
        let mut dst = *lab;
        if horizontal {
            dst.n_h -= 1;
        } else {
            dst.n_v -= 1;
        }
        if let Some(j) = basis.index_of(&dst) {
            // a |n> = sqrt(n) |n-1>, entry at (target, source)
            a.add(j, i, C64::new((n as f64).sqrt(), 0.0));
        }
    }
    a
}

/// Dot lowering operator sigma_i = |G><X_i| + |X_i><XX| on `basis`
/// (diagonal in the photon numbers).
fn sigma_op(basis: &Basis, horizontal: bool) -> OperatorRep {
    let (x, _other) = if horizontal {
        (QdLevel::XH, QdLevel::XV)
    } else {
        (QdLevel::XV, QdLevel::XH)
    };
    let mut s = OperatorRep::new(basis.dim());
    for (i, lab) in basis.labels().iter().enumerate() {
        let dst_level = match lab.level {
            l if l == x => Some(QdLevel::G),
            QdLevel::XX => Some(x),
            _ => None,
        };
        if let Some(level) = dst_level {
            let dst = BasisLabel::new(level, lab.n_h, lab.n_v);
            if let Some(j) = basis.index_of(&dst) {
                s.add(j, i, C64::new(1.0, 0.0));
            }
        }
    }
    s
}

/// Combined cascade operator sigma_i a_i^dagger: lowers the dot by one
/// excitation while creating a photon in mode `i`. Evaluated label-to-label
/// so it stays exact on restricted bases (the intermediate single-factor
/// states need not be representable).
fn cascade_op(basis: &Basis, horizontal: bool) -> OperatorRep {
    let x = if horizontal { QdLevel::XH } else { QdLevel::XV };
    let mut op = OperatorRep::new(basis.dim());
    for (i, lab) in basis.labels().iter().enumerate() {
        let dst_level = match lab.level {
            l if l == x => Some(QdLevel::G),
            QdLevel::XX => Some(x),
            _ => None,
        };
        let Some(level) = dst_level else { continue };
        let n = if horizontal { lab.n_h } else { lab.n_v };
        let mut dst = BasisLabel::new(level, lab.n_h, lab.n_v);
        if horizontal {
            dst.n_h += 1;
        } else {
            dst.n_v += 1;
        }
        if let Some(j) = basis.index_of(&dst) {
            op.add(j, i, C64::new(((n + 1) as f64).sqrt(), 0.0));
        }
    }
    op
}

#[cfg(test)]
fn op_mul(a: &OperatorRep, b: &OperatorRep) -> OperatorRep {
    // small operator product via column lookup; fine at these dimensions
    assert_eq!(a.dim, b.dim);
    let mut out = OperatorRep::new(a.dim);
    for &(ra, ca, va) in &a.entries {
        for &(rb, cb, vb) in &b.entries {
            if ca == rb {
                out.add(ra as usize, cb as usize, va * vb);
            }
        }
    }
    out.canonicalize();
    out
}

/// Static part of the system Hamiltonian (dot levels plus cavity coupling).
pub fn static_hamiltonian(spec: &ModelSpec, basis: &Basis) -> OperatorRep {
    let eb = spec.biexciton_binding;
    let fs = spec.fine_structure;
    let g = spec.qd_cavity_coupling;
    let mut h = OperatorRep::new(basis.dim());
    for (i, lab) in basis.labels().iter().enumerate() {
        let e = match lab.level {
            QdLevel::XH => 0.5 * eb + 0.5 * fs,
            QdLevel::XV => 0.5 * eb - 0.5 * fs,
            _ => 0.0,
        };
        if e != 0.0 {
            h.add(i, i, C64::new(e, 0.0));
        }
    }
    for horizontal in [true, false] {
        let term = cascade_op(basis, horizontal);
        for &(r, c, v) in &term.entries {
            h.add_herm(r as usize, c as usize, v * g);
        }
    }
    h.canonicalize();
    h
}

/// Drive operator (sigma_H + sigma_V + h.c.) / sqrt(2); multiply by Omega(t).
pub fn drive_operator(basis: &Basis) -> OperatorRep {
    let mut d = OperatorRep::new(basis.dim());
    let s = 1.0 / 2f64.sqrt();
    for horizontal in [true, false] {
        let sig = sigma_op(basis, horizontal);
        for &(r, c, v) in &sig.entries {
            d.add_herm(r as usize, c as usize, v * s);
        }
    }
    d.canonicalize();
    d
}

/// Full Hamiltonian at time `t`.
pub fn build_hamiltonian(spec: &ModelSpec, basis: &Basis, t: f64) -> OperatorRep {
    let h0 = static_hamiltonian(spec, basis);
    let om = spec.omega(t);
    if om == 0.0 {
        return h0;
    }
    h0.plus(&drive_operator(basis).scaled(C64::new(om, 0.0)))
}

/// Superoperator acting on row-major vectorized density matrices.
#[derive(Debug, Clone)]
pub struct Superoperator {
    pub hdim: usize,
    pub mat: Csr,
}

impl Superoperator {
    pub fn dim_liou(&self) -> usize {
        self.hdim * self.hdim
    }

    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.mat.matvec(x, y);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LindbladKind {
    /// Full Lindblad dissipator.
    Full,
    /// Anticommutator part only; used in the two-excitation subspace where
    /// quantum jumps leave the subspace and never feed back.
    DrainOnly,
}

/// Liouvillian L[rho] = -i/hbar [H, rho] + gamma sum_k D[a_k] rho.
pub fn build_liouvillian(
    h: &OperatorRep,
    gamma: f64,
    basis: &Basis,
    kind: LindbladKind,
) -> Result<Superoperator, ModelError> {
    if gamma < 0.0 {
        return Err(ModelError::NegativeDecay(gamma));
    }
    let d = basis.dim();
    let dl = d * d;
    let mut t: Vec<(u32, u32, C64)> = Vec::new();
    let idx = |l: usize, r: usize| (l * d + r) as u32;
    // coherent part
    let minus_i_over_h = C64::new(0.0, -1.0 / HBAR_MEV_PS);
    for &(r, c, v) in &h.entries {
        for k in 0..d {
            t.push((idx(r as usize, k), idx(c as usize, k), minus_i_over_h * v));
            t.push((idx(k, c as usize), idx(k, r as usize), -minus_i_over_h * v));
        }
    }
    if gamma > 0.0 {
        // drain: -gamma/2 (n_tot(l) + n_tot(r)) on the diagonal
        let ntot: Vec<f64> = basis
            .labels()
            .iter()
            .map(|l| (l.n_h + l.n_v) as f64)
            .collect();
        for l in 0..d {
            for r in 0..d {
                let w = -0.5 * gamma * (ntot[l] + ntot[r]);
                if w != 0.0 {
                    t.push((idx(l, r), idx(l, r), C64::new(w, 0.0)));
                }
            }
        }
        if kind == LindbladKind::Full {
            for horizontal in [true, false] {
                let a = mode_op(basis, horizontal);
                for &(p1, q1, w1) in &a.entries {
                    for &(p2, q2, w2) in &a.entries {
                        t.push((
                            idx(p1 as usize, p2 as usize),
                            idx(q1 as usize, q2 as usize),
                            C64::new(gamma, 0.0) * w1 * w2.conj(),
                        ));
                    }
                }
            }
        }
    }
    Ok(Superoperator {
        hdim: d,
        mat: Csr::from_triplets(dl, dl, t),
    })
}

/// Action of exp(L dt), either as a dense matrix exponential or as a Krylov
/// evaluation on demand.
pub enum Propagator {
    Dense(Array2<C64>),
    Krylov {
        l: Superoperator,
        dt: f64,
        krylov: KrylovExp,
    },
}

impl Propagator {
    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>, ModelError> {
        match self {
            Propagator::Dense(u) => {
                let n = u.nrows();
                let mut out = vec![C64::new(0.0, 0.0); n];
                for (i, row) in u.outer_iter().enumerate() {
                    let mut acc = C64::new(0.0, 0.0);
                    for (j, uu) in row.iter().enumerate() {
                        acc += uu * v[j];
                    }
                    out[i] = acc;
                }
                Ok(out)
            }
            Propagator::Krylov { l, dt, krylov } => Ok(krylov.apply(&l.mat, *dt, v)?),
        }
    }
}

/// Dense-exponential propagator for exp(L dt).
pub fn step_propagator_dense(l: &Superoperator, dt: f64) -> Result<Propagator, ModelError> {
    assert!(dt > 0.0, "dt must be positive");
    let a = l.mat.to_dense().mapv(|z| z * dt);
    Ok(Propagator::Dense(expm_dense(&a)?))
}

/// Krylov propagator for exp(L dt); suited to large sparse Liouvillians.
pub fn step_propagator_krylov(l: Superoperator, dt: f64) -> Propagator {
    assert!(dt > 0.0, "dt must be positive");
    Propagator::Krylov {
        l,
        dt,
        krylov: KrylovExp::default(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    /// |G,0,0>
    Ground,
    /// |XX,0,0>
    Biexciton,
}

/// A complete simulated system: model parameters, basis, dissipator kind and
/// an optional per-state diagonal shift (used to absorb the polaron shift so
/// level splittings stay temperature independent).
#[derive(Debug, Clone)]
pub struct System {
    pub spec: ModelSpec,
    pub basis: Basis,
    pub lindblad: LindbladKind,
    pub level_shift: Vec<f64>,
}

impl System {
    pub fn full(spec: ModelSpec) -> Result<Self, ModelError> {
        let basis = build_basis(&spec)?;
        let dim = basis.dim();
        Ok(System {
            spec,
            basis,
            lindblad: LindbladKind::Full,
            level_shift: vec![0.0; dim],
        })
    }

    /// Two-excitation-subspace variant; only valid for an undriven dot.
    pub fn five_level(spec: ModelSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        if spec.pulse_height != 0.0 {
            return Err(ModelError::DrivenSubspace(spec.pulse_height));
        }
        let basis = Basis {
            kind: BasisKind::TwoExcitation,
            labels: two_excitation_labels(),
        };
        Ok(System {
            spec,
            basis,
            lindblad: LindbladKind::DrainOnly,
            level_shift: vec![0.0; 5],
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Apply a per-dot-level diagonal shift lambda^2 * delta to every basis
    /// state (meV).
    pub fn absorb_polaron_shift(&mut self, shift_mev: f64) {
        for (s, lab) in self.level_shift.iter_mut().zip(self.basis.labels()) {
            let lam = lab.level.lambda();
            *s = lam * lam * shift_mev;
        }
    }

    pub fn hamiltonian(&self, t: f64) -> OperatorRep {
        let mut h = build_hamiltonian(&self.spec, &self.basis, t);
        for (i, &s) in self.level_shift.iter().enumerate() {
            if s != 0.0 {
                h.add(i, i, C64::new(s, 0.0));
            }
        }
        h.canonicalize();
        h
    }

    pub fn liouvillian(&self, t: f64) -> Result<Superoperator, ModelError> {
        build_liouvillian(
            &self.hamiltonian(t),
            self.spec.cavity_decay,
            &self.basis,
            self.lindblad,
        )
    }

    pub fn is_driven(&self) -> bool {
        self.spec.pulse_height != 0.0
    }

    pub fn lambda_bar(&self) -> Vec<f64> {
        self.basis.lambda_bar()
    }

    pub fn initial_density(&self, init: InitialState) -> Result<Array2<C64>, ModelError> {
        let label = match init {
            InitialState::Ground => BasisLabel::new(QdLevel::G, 0, 0),
            InitialState::Biexciton => BasisLabel::new(QdLevel::XX, 0, 0),
        };
        let i = self
            .basis
            .index_of(&label)
            .ok_or_else(|| ModelError::BadInitialState(label.to_string()))?;
        let mut rho = Array2::zeros((self.dim(), self.dim()));
        rho[[i, i]] = C64::new(1.0, 0.0);
        Ok(rho)
    }
}

/// Build the two-excitation-subspace model (`Basis` plus Liouvillian factory).
pub fn build_5ls_model(spec: &ModelSpec) -> Result<System, ModelError> {
    System::five_level(spec.clone())
}

/// Total excitation operator N = sum lambda_nu |nu><nu| + n_H + n_V
/// (diagonal); `H_int` commutes with it.
pub fn excitation_operator(basis: &Basis) -> OperatorRep {
    let mut n = OperatorRep::new(basis.dim());
    for (i, lab) in basis.labels().iter().enumerate() {
        n.add(i, i, C64::new(lab.excitation(), 0.0));
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::fwhm_to_std;

    fn spec(nmax: usize) -> ModelSpec {
        ModelSpec {
            biexciton_binding: 1.5,
            fine_structure: 0.1,
            qd_cavity_coupling: 0.1,
            cavity_decay: 0.25,
            pulse_height: 0.0,
            pulse_center: 0.0,
            pulse_std: fwhm_to_std(5.0),
            fock_truncation: nmax,
        }
    }

    #[test]
    fn basis_dims() {
        assert_eq!(build_basis(&spec(1)).unwrap().dim(), 16);
        assert_eq!(build_basis(&spec(2)).unwrap().dim(), 36);
    }

    #[test]
    fn basis_label_round_trip() {
        let b = build_basis(&spec(2)).unwrap();
        let lab = BasisLabel::new(QdLevel::XX, 0, 0);
        let i = b.index_of(&lab).unwrap();
        assert_eq!(b.label(i), lab);
        for (i, l) in b.labels().iter().enumerate() {
            assert_eq!(b.index_of(l), Some(i));
        }
    }

    #[test]
    fn bare_levels() {
        let mut s = spec(1);
        s.qd_cavity_coupling = 0.0;
        let b = build_basis(&s).unwrap();
        let h = build_hamiltonian(&s, &b, 0.0);
        let d = h.to_dense();
        let xh = b.index_of(&BasisLabel::new(QdLevel::XH, 0, 0)).unwrap();
        let xv = b.index_of(&BasisLabel::new(QdLevel::XV, 0, 0)).unwrap();
        assert!((d[[xh, xh]].re - (1.5 / 2.0 + 0.1 / 2.0)).abs() < 1e-14);
        assert!((d[[xv, xv]].re - (1.5 / 2.0 - 0.1 / 2.0)).abs() < 1e-14);
        // off-diagonals all vanish
        for i in 0..b.dim() {
            for j in 0..b.dim() {
                if i != j {
                    assert_eq!(d[[i, j]], C64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn drive_peak_and_fwhm() {
        let mut s = spec(1);
        s.pulse_height = 0.545;
        s.pulse_center = 20.0;
        let b = build_basis(&s).unwrap();
        let h = build_hamiltonian(&s, &b, 20.0);
        let d = h.to_dense();
        let g = b.index_of(&BasisLabel::new(QdLevel::G, 0, 0)).unwrap();
        let xh = b.index_of(&BasisLabel::new(QdLevel::XH, 0, 0)).unwrap();
        assert!((d[[g, xh]].re - 0.545 / 2f64.sqrt()).abs() < 1e-14);
        // envelope at +- FWHM/2 is half the peak
        let fwhm = 5.0;
        assert!((s.omega(20.0 + 0.5 * fwhm) - 0.5 * 0.545).abs() < 1e-12);
        assert!((s.omega(20.0 - 0.5 * fwhm) - 0.5 * 0.545).abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_is_hermitian() {
        let mut s = spec(2);
        s.pulse_height = 0.4;
        let b = build_basis(&s).unwrap();
        assert!(build_hamiltonian(&s, &b, 1.3).is_hermitian(1e-14));
    }

    #[test]
    fn interaction_conserves_excitation() {
        let s = spec(2);
        let b = build_basis(&s).unwrap();
        let h = static_hamiltonian(&s, &b);
        let n = excitation_operator(&b);
        let hn = op_mul(&h, &n);
        let nh = op_mul(&n, &h);
        let diff = hn.plus(&nh.scaled(C64::new(-1.0, 0.0)));
        let norm: f64 = diff.entries.iter().map(|e| e.2.norm()).sum();
        assert!(norm < 1e-12, "commutator norm {norm}");
    }

    #[test]
    fn five_level_structure() {
        let s = spec(2);
        let sys = build_5ls_model(&s).unwrap();
        assert_eq!(sys.dim(), 5);
        assert_eq!(sys.lambda_bar(), vec![2.0, 1.0, 1.0, 0.0, 0.0]);
        let h = sys.hamiltonian(0.0).to_dense();
        assert!((h[[0, 1]].re - 0.1).abs() < 1e-14);
        assert!((h[[1, 3]].re - 0.1 * 2f64.sqrt()).abs() < 1e-14);
        // no decay channel from bare XX when g = 0
        let mut s0 = s.clone();
        s0.qd_cavity_coupling = 0.0;
        let sys0 = build_5ls_model(&s0).unwrap();
        let h0 = sys0.hamiltonian(0.0).to_dense();
        for j in 1..5 {
            assert_eq!(h0[[0, j]], C64::new(0.0, 0.0));
        }
        // driven subspace is rejected
        let mut sd = s;
        sd.pulse_height = 0.1;
        assert!(build_5ls_model(&sd).is_err());
    }

    #[test]
    fn zero_liouvillian_is_zero() {
        let s = spec(1);
        let b = build_basis(&s).unwrap();
        let h = OperatorRep::new(b.dim());
        let l = build_liouvillian(&h, 0.0, &b, LindbladKind::Full).unwrap();
        assert_eq!(l.mat.nnz(), 0);
    }

    #[test]
    fn negative_decay_rejected() {
        let s = spec(1);
        let b = build_basis(&s).unwrap();
        let h = OperatorRep::new(b.dim());
        assert!(build_liouvillian(&h, -0.1, &b, LindbladKind::Full).is_err());
    }

    #[test]
    fn photon_decay_closed_form() {
        // diagonal Fock initial state: <n>(t) = n0 exp(-gamma t)
        let s = spec(2);
        let b = build_basis(&s).unwrap();
        let h = OperatorRep::new(b.dim());
        let gamma = 0.25;
        let l = build_liouvillian(&h, gamma, &b, LindbladKind::Full).unwrap();
        let prop = step_propagator_dense(&l, 0.5).unwrap();
        let start = b.index_of(&BasisLabel::new(QdLevel::G, 2, 0)).unwrap();
        let d = b.dim();
        let mut rho = vec![C64::new(0.0, 0.0); d * d];
        rho[start * d + start] = C64::new(1.0, 0.0);
        let mut t = 0.0;
        for _ in 0..8 {
            rho = prop.apply(&rho).unwrap();
            t += 0.5;
            let n_mean: f64 = b
                .labels()
                .iter()
                .enumerate()
                .map(|(i, lab)| lab.n_h as f64 * rho[i * d + i].re)
                .sum();
            assert!(
                (n_mean - 2.0 * (-gamma * t).exp()).abs() < 1e-9,
                "t={t}: {n_mean}"
            );
        }
    }

    #[test]
    fn trace_preservation_random_states() {
        use rand::{Rng, SeedableRng};
        let s = spec(1);
        let b = build_basis(&s).unwrap();
        let h = static_hamiltonian(&s, &b);
        let l = build_liouvillian(&h, 0.4, &b, LindbladKind::Full).unwrap();
        let prop = step_propagator_dense(&l, 0.3).unwrap();
        let d = b.dim();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            // random density matrix: G G^dagger normalized
            let g = Array2::from_shape_fn((d, d), |_| {
                C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
            });
            let mut rho = Array2::<C64>::zeros((d, d));
            for i in 0..d {
                for j in 0..d {
                    let mut acc = C64::new(0.0, 0.0);
                    for k in 0..d {
                        acc += g[[i, k]] * g[[j, k]].conj();
                    }
                    rho[[i, j]] = acc;
                }
            }
            let tr: C64 = (0..d).map(|i| rho[[i, i]]).sum();
            rho.mapv_inplace(|z| z / tr);
            let v: Vec<C64> = rho.iter().cloned().collect();
            let out = prop.apply(&v).unwrap();
            let tr_out: C64 = (0..d).map(|i| out[i * d + i]).sum();
            assert!((tr_out - C64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn rabi_oscillation() {
        // two-level sigma_x Hamiltonian of strength hbar*Omega/2 gives
        // ground population cos^2(Omega t / 2)
        let omega = 1.3; // rad/ps
        let mut h = OperatorRep::new(2);
        h.add_herm(0, 1, C64::new(0.5 * HBAR_MEV_PS * omega, 0.0));
        let basis = Basis {
            kind: BasisKind::Full { n_max: 0 },
            labels: vec![
                BasisLabel::new(QdLevel::G, 0, 0),
                BasisLabel::new(QdLevel::XH, 0, 0),
            ],
        };
        let l = build_liouvillian(&h, 0.0, &basis, LindbladKind::Full).unwrap();
        let dt = 0.05;
        let prop = step_propagator_dense(&l, dt).unwrap();
        let mut rho = vec![C64::new(0.0, 0.0); 4];
        rho[0] = C64::new(1.0, 0.0);
        for step in 1..=200 {
            rho = prop.apply(&rho).unwrap();
            let t = step as f64 * dt;
            let want = (omega * t / 2.0).cos().powi(2);
            assert!(
                (rho[0].re - want).abs() < 1e-8,
                "t={t}: {} vs {want}",
                rho[0].re
            );
        }
    }

    #[test]
    fn krylov_agrees_with_dense_on_random_liouvillian() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        // random Hermitian H and a random collapse operator on dim 4 -> 16-dim
        // Liouville space
        let d = 4;
        let mut h = OperatorRep::new(d);
        for i in 0..d {
            for j in i..d {
                let v = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                if i == j {
                    h.add(i, i, C64::new(v.re, 0.0));
                } else {
                    h.add_herm(i, j, v);
                }
            }
        }
        let b = Basis {
            kind: BasisKind::TwoExcitation,
            labels: two_excitation_labels()[..4].to_vec(),
        };
        let l = build_liouvillian(&h, 0.3, &b, LindbladKind::Full).unwrap();
        let dt = 0.21;
        let dense = step_propagator_dense(&l, dt).unwrap();
        let kry = step_propagator_krylov(l, dt);
        let v: Vec<C64> = (0..16)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let a = dense.apply(&v).unwrap();
        let c = kry.apply(&v).unwrap();
        let err: f64 = a.iter().zip(c.iter()).map(|(x, y)| (x - y).norm()).sum();
        assert!(err < 1e-10, "dense vs krylov {err}");
    }
}
