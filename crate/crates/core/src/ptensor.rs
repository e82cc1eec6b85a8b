//! Discretized-influence-functional propagation with a compressed process
//! tensor.
//!
//! The environment couples through an operator that is diagonal in the system
//! basis with eigenvalues `lambda`, so every elementary influence tensor
//!
//! ```text
//! [b_k]^{mu nu} = exp(-(l_{mu_l} - l_{mu_r}) (eta_k l_{nu_l} - eta_k* l_{nu_r}))
//! ```
//!
//! depends on a Liouville index only through its eigenvalue pair. Degenerate
//! eigenvalues therefore factor out: the process tensor is built over the
//! *unique* eigenvalue pairs (external leg dimension q^2, with q = 3 for the
//! dot regardless of the cavity truncation) and the multiplicity indices ride
//! along untouched. [`CouplingSpec`] holds the grouping; building with
//! [`CouplingSpec::ungrouped`] instead reproduces the full-leg tensor, which
//! is how the factorization is validated end to end.
//!
//! Construction contracts the influence network row by row (one row per time
//! step, spanning one memory window) into a tensor train. Each row is first
//! compressed into a short "comb" (its internal bond is the numerical rank of
//! the b matrices, at most q^2), then zipped into the chain with SVD
//! truncation and re-canonicalized; relative singular-value threshold
//! `svd_tol`, hard cap `chi_max`.
//!
//! Reading out intermediate states uses cap vectors: pinning every future leg
//! of the exact process tensor to any diagonal eigenvalue pair turns all
//! factors that involve those legs into exact ones, so the horizon-m tensor
//! is the horizon-n tensor evaluated at pinned future legs. The caps store
//! that evaluation, one vector per bond.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, Order};
use ndarray_linalg::{JobSvd, SVDDC};
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::bath::MemoryKernel;
use crate::expm::single_threaded_blas;
use crate::model::Basis;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("SVD failed: {0}")]
    Svd(String),
    #[error("size guard: {0}")]
    Guard(String),
    #[error("propagator failed at step {step}: {message}")]
    Propagator { step: usize, message: String },
    #[error("serialization: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt process-tensor file: {0}")]
    Corrupt(String),
}

/// Grouping of the per-state coupling eigenvalues into unique values.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSpec {
    /// Eigenvalue of the coupling operator for every basis state.
    pub lambda_bar: Vec<f64>,
    /// The distinct eigenvalues (sorted ascending when grouped).
    pub unique: Vec<f64>,
    /// Index into `unique` for every basis state.
    pub state_to_unique: Vec<usize>,
}

impl CouplingSpec {
    /// Group degenerate eigenvalues.
    pub fn grouped(lambda_bar: Vec<f64>) -> Self {
        let mut unique: Vec<f64> = lambda_bar.to_vec();
        unique.sort_by(f64::total_cmp);
        unique.dedup();
        let state_to_unique = lambda_bar
            .iter()
            .map(|l| unique.iter().position(|u| u == l).expect("present"))
            .collect();
        CouplingSpec {
            lambda_bar,
            unique,
            state_to_unique,
        }
    }

    /// Keep every state as its own "unique" value (no reduction); the
    /// process tensor then carries full Liouville legs.
    pub fn ungrouped(lambda_bar: Vec<f64>) -> Self {
        let state_to_unique = (0..lambda_bar.len()).collect();
        CouplingSpec {
            unique: lambda_bar.clone(),
            lambda_bar,
            state_to_unique,
        }
    }

    pub fn q(&self) -> usize {
        self.unique.len()
    }

    /// External leg dimension q^2.
    pub fn leg_dim(&self) -> usize {
        self.q() * self.q()
    }

    /// Eigenvalue pair of a leg index (left-major).
    pub fn lambda_pair(&self, leg: usize) -> (f64, f64) {
        let q = self.q();
        (self.unique[leg / q], self.unique[leg % q])
    }

    /// Map from vectorized Liouville indices (dim^2, row-major) to legs.
    pub fn liou_to_leg(&self) -> Vec<u32> {
        let d = self.state_to_unique.len();
        let q = self.q();
        let mut map = Vec::with_capacity(d * d);
        for &ul in &self.state_to_unique {
            for &ur in &self.state_to_unique {
                map.push((ul * q + ur) as u32);
            }
        }
        map
    }

    /// A diagonal leg used to pin future legs when reading intermediate
    /// states; any (u, u) works, the smallest |lambda| is used.
    pub fn pin_leg(&self) -> usize {
        let u = self
            .unique
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        u * self.q() + u
    }

    /// Number of basis states per unique eigenvalue.
    pub fn multiplicities(&self) -> Vec<usize> {
        let mut m = vec![0usize; self.q()];
        for &u in &self.state_to_unique {
            m[u] += 1;
        }
        m
    }
}

/// Coupling spec of the dot-cavity model: states inherit the dot eigenvalue.
pub fn coupling_spec(basis: &Basis) -> CouplingSpec {
    CouplingSpec::grouped(basis.lambda_bar())
}

/// One elementary influence tensor, a leg_dim x leg_dim matrix over
/// eigenvalue pairs.
#[derive(Debug, Clone)]
pub struct InfluenceTensor {
    pub lag: usize,
    pub values: Array2<C64>,
}

/// Influence matrix at lag `k`: rows are the later-time pair, columns the
/// earlier-time pair.
pub fn influence_tensor(lag: usize, kernel: &MemoryKernel, cs: &CouplingSpec) -> InfluenceTensor {
    assert!(lag <= kernel.depth(), "lag beyond the kernel depth");
    let eta = kernel.eta[lag];
    InfluenceTensor {
        lag,
        values: influence_matrix(eta, cs),
    }
}

fn influence_matrix(eta: C64, cs: &CouplingSpec) -> Array2<C64> {
    let p = cs.leg_dim();
    Array2::from_shape_fn((p, p), |(mu, nu)| {
        let (ml, mr) = cs.lambda_pair(mu);
        let (nl, nr) = cs.lambda_pair(nu);
        (-(ml - mr) * (eta * nl - eta.conj() * nr)).exp()
    })
}

#[derive(Debug, Clone)]
pub struct PtOptions {
    pub chi_max: usize,
    pub svd_tol: f64,
    /// Lags whose influence deviates from unity by less than this are
    /// treated as exact ones (finite-memory drop).
    pub drop_tol: f64,
}

impl Default for PtOptions {
    fn default() -> Self {
        PtOptions {
            chi_max: 256,
            svd_tol: 1e-9,
            drop_tol: 1e-15,
        }
    }
}

/// Compressed process tensor over `n` time steps.
#[derive(Debug, Clone)]
pub struct ProcessTensor {
    pub n: usize,
    pub q: usize,
    pub leg_dim: usize,
    /// Site tensors (left bond, leg, right bond), one per time step.
    pub sites: Vec<Array3<C64>>,
    /// Cap vector on the right bond of each site; contracting the state with
    /// `caps[m]` yields the physical state after step m+1.
    pub caps: Vec<Array1<C64>>,
    pub pin_leg: usize,
    pub svd_tol: f64,
    pub chi_max: usize,
}

#[derive(Debug, Clone, Default)]
pub struct PtBuildReport {
    pub max_chi: usize,
    pub bond_dims: Vec<usize>,
    /// Largest relative singular-value weight discarded in any truncation.
    pub max_discarded: f64,
    /// Whether the chi_max cap ever forced a truncation.
    pub chi_capped: bool,
    /// Effective memory width after dropping near-unity influence tensors.
    pub effective_depth: usize,
}

impl ProcessTensor {
    pub fn bond_dims(&self) -> Vec<usize> {
        self.sites.iter().map(|s| s.dim().2).collect()
    }
}

/// Truncated SVD: returns (U_r, sigma_r, Vt_r, relative discarded weight,
/// capped flag).
fn svd_trunc(
    m: &Array2<C64>,
    rel_tol: f64,
    chi_max: usize,
) -> Result<(Array2<C64>, Array1<f64>, Array2<C64>, f64, bool), TensorError> {
    single_threaded_blas();
    let (u, sv, vt) = m
        .svddc(JobSvd::Some)
        .map_err(|e| TensorError::Svd(format!("{e}")))?;
    let u = u.ok_or_else(|| TensorError::Svd("missing U".into()))?;
    let vt = vt.ok_or_else(|| TensorError::Svd("missing Vt".into()))?;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok((
            u.slice(s![.., ..1]).to_owned(),
            Array1::zeros(1),
            vt.slice(s![..1, ..]).to_owned(),
            0.0,
            false,
        ));
    }
    let full: f64 = sv.iter().map(|x| x * x).sum();
    let mut r = sv.iter().filter(|&&x| x > rel_tol * smax).count().max(1);
    let capped = r > chi_max;
    if capped {
        r = chi_max;
    }
    let cut: f64 = sv.iter().skip(r).map(|x| x * x).sum();
    let discarded = (cut / full).sqrt();
    Ok((
        u.slice(s![.., ..r]).to_owned(),
        sv.slice(s![..r]).to_owned(),
        vt.slice(s![..r, ..]).to_owned(),
        discarded,
        capped,
    ))
}

fn scale_rows(vt: &Array2<C64>, sv: &Array1<f64>) -> Array2<C64> {
    let mut out = vt.clone();
    for (mut row, &sigma) in out.outer_iter_mut().zip(sv.iter()) {
        row.mapv_inplace(|z| z * sigma);
    }
    out
}

fn scale_cols(u: &Array2<C64>, sv: &Array1<f64>) -> Array2<C64> {
    let mut out = u.clone();
    for (mut col, &sigma) in out.columns_mut().into_iter().zip(sv.iter()) {
        col.mapv_inplace(|z| z * sigma);
    }
    out
}

fn reshape2(a: Array3<C64>, rows: usize, cols: usize) -> Array2<C64> {
    a.into_shape_with_order(((rows, cols), Order::RowMajor))
        .expect("contiguous reshape")
}

fn reshape3(a: Array2<C64>, d0: usize, d1: usize, d2: usize) -> Array3<C64> {
    a.into_shape_with_order(((d0, d1, d2), Order::RowMajor))
        .expect("contiguous reshape")
}

/// A row of the influence network compressed into a short tensor train. Core
/// `l` has shape (c_in, leg, c_out) with c_in = 1 at the time slot itself and
/// c_out = 1 at the far end of the memory window.
#[derive(Debug, Clone)]
struct Comb {
    cores: Vec<Array3<C64>>,
}

fn build_comb(b: &[Array2<C64>], width: usize, tol: f64) -> Result<Comb, TensorError> {
    let p = b[0].nrows();
    if width == 0 {
        let mut core = Array3::zeros((1, p, 1));
        for mu in 0..p {
            core[[0, mu, 0]] = b[0][[mu, mu]];
        }
        return Ok(Comb { cores: vec![core] });
    }
    let mut cores: Vec<Array3<C64>> = vec![Array3::zeros((0, 0, 0)); width + 1];
    // rightmost core: rows nu (the carried pair), cols mu
    let mut m = Array2::<C64>::zeros((p, p));
    for mu in 0..p {
        for nu in 0..p {
            m[[nu, mu]] = b[width][[mu, nu]];
        }
    }
    let mut cout = 1usize;
    for l in (1..=width).rev() {
        let (u, sv, vt, _, _) = svd_trunc(&m, tol, p * p)?;
        let r = sv.len();
        cores[l] = reshape3(scale_rows(&vt, &sv), r, p, cout);
        cout = r;
        if l > 1 {
            // absorb U into the next core to the left:
            // m[nu, (mu, c)] = b_{l-1}[mu, nu] * U[nu, c]
            let mut next = Array2::<C64>::zeros((p, p * cout));
            for nu in 0..p {
                for mu in 0..p {
                    for c in 0..cout {
                        next[[nu, mu * cout + c]] = b[l - 1][[mu, nu]] * u[[nu, c]];
                    }
                }
            }
            m = next;
        } else {
            // leftmost core: (1, mu, c) = b_0[mu, mu] U[mu, c]
            let mut core0 = Array3::zeros((1, p, cout));
            for mu in 0..p {
                for c in 0..cout {
                    core0[[0, mu, c]] = b[0][[mu, mu]] * u[[mu, c]];
                }
            }
            cores[0] = core0;
        }
    }
    Ok(Comb { cores })
}

/// Build the compressed process tensor for `n` steps from the memory kernel
/// and the eigenvalue grouping.
pub fn build_process_tensor(
    kernel: &MemoryKernel,
    cs: &CouplingSpec,
    n: usize,
    opts: &PtOptions,
) -> Result<(ProcessTensor, PtBuildReport), TensorError> {
    assert!(n >= 1);
    single_threaded_blas();
    let p = cs.leg_dim();
    let depth = kernel.depth();
    let b: Vec<Array2<C64>> = (0..=depth)
        .map(|k| influence_matrix(kernel.eta[k], cs))
        .collect();
    // drop trailing lags that are numerically exact ones
    let mut w_eff = 0usize;
    for (k, bk) in b.iter().enumerate() {
        let dev = bk
            .iter()
            .map(|z| (z - C64::new(1.0, 0.0)).norm())
            .fold(0.0, f64::max);
        if dev > opts.drop_tol {
            w_eff = k;
        }
    }
    let comb_tol = (opts.svd_tol * 1e-3).min(1e-12);
    let zip_tol = opts.svd_tol * 0.1;
    // all row widths that occur: w_eff in the bulk, shorter near the end
    let mut combs: Vec<Option<Comb>> = vec![None; w_eff + 1];
    for w in 1..=w_eff {
        if w <= n - 1 {
            combs[w] = Some(build_comb(&b, w, comb_tol)?);
        }
    }

    let mut sites: Vec<Array3<C64>> = (0..n)
        .map(|_| Array3::from_elem((1, p, 1), C64::new(1.0, 0.0)))
        .collect();
    let mut report = PtBuildReport {
        effective_depth: w_eff,
        ..Default::default()
    };
    let track = |discarded: f64, capped: bool, report: &mut PtBuildReport| {
        if discarded > report.max_discarded {
            report.max_discarded = discarded;
        }
        report.chi_capped |= capped;
    };

    for j in (0..n).rev() {
        let w = w_eff.min(n - 1 - j);
        if w == 0 {
            // pointwise b_0 only
            for mu in 0..p {
                let f = b[0][[mu, mu]];
                sites[j].slice_mut(s![.., mu, ..]).mapv_inplace(|z| z * f);
            }
        } else {
            let comb = combs[w].as_ref().expect("comb for occurring width");
            // zip left-to-right across the window
            let fj = sites[j].clone();
            let (a, _, a1) = fj.dim();
            let g0 = &comb.cores[0];
            let c0 = g0.dim().2;
            let mut m0 = Array2::<C64>::zeros((a * p, a1 * c0));
            for ia in 0..a {
                for mu in 0..p {
                    for ja in 0..a1 {
                        for c in 0..c0 {
                            m0[[ia * p + mu, ja * c0 + c]] = fj[[ia, mu, ja]] * g0[[0, mu, c]];
                        }
                    }
                }
            }
            let (u, sv, vt, disc, capped) = svd_trunc(&m0, zip_tol, opts.chi_max)?;
            track(disc, capped, &mut report);
            let r = sv.len();
            sites[j] = reshape3(u, a, p, r);
            // carry (r, a1, c0)
            let mut carry = reshape3(scale_rows(&vt, &sv), r, a1, c0);
            for l in 1..w {
                let site = &sites[j + l];
                let (d_a1, _, a2) = site.dim();
                let gl = &comb.cores[l];
                let (cin, _, cout) = gl.dim();
                let (r, ca1, ccin) = carry.dim();
                if ca1 != d_a1 || ccin != cin {
                    return Err(TensorError::Dim(format!(
                        "zip bond mismatch at site {}: carry ({r},{ca1},{ccin}) vs site {d_a1} comb {cin}",
                        j + l
                    )));
                }
                // D[(r c), (mu a2)] = sum_a1 carry[r, a1, c] F[a1, mu, a2]
                let cm = carry
                    .permuted_axes([0, 2, 1])
                    .as_standard_layout()
                    .to_owned();
                let cm = reshape2(cm, r * cin, d_a1);
                let fm = reshape2(site.clone(), d_a1, p * a2);
                let d = cm.dot(&fm); // (r*cin, p*a2)
                // assemble M[(r mu), (a2 cout)] = sum_c D[r, c, mu, a2] G[c, mu, cout]
                let mut m = Array2::<C64>::zeros((r * p, a2 * cout));
                for mu in 0..p {
                    // D_mu: (r*cin, a2) -> (r, cin, a2) -> (r*a2, cin)
                    let dmu = d.slice(s![.., mu * a2..(mu + 1) * a2]).to_owned();
                    let dmu = reshape3(dmu, r, cin, a2)
                        .permuted_axes([0, 2, 1])
                        .as_standard_layout()
                        .to_owned();
                    let dmu = reshape2(dmu, r * a2, cin);
                    let gmu = gl.slice(s![.., mu, ..]).to_owned(); // (cin, cout)
                    let emu = dmu.dot(&gmu); // (r*a2, cout)
                    for ir in 0..r {
                        for ia2 in 0..a2 {
                            for c in 0..cout {
                                m[[ir * p + mu, ia2 * cout + c]] = emu[[ir * a2 + ia2, c]];
                            }
                        }
                    }
                }
                let (u, sv, vt, disc, capped) = svd_trunc(&m, zip_tol, opts.chi_max)?;
                track(disc, capped, &mut report);
                let rn = sv.len();
                sites[j + l] = reshape3(u, r, p, rn);
                carry = reshape3(scale_rows(&vt, &sv), rn, a2, cout);
            }
            // final window site: contract the comb terminal
            {
                let sidx = j + w;
                let site = &sites[sidx];
                let (d_a1, _, a2) = site.dim();
                let gw = &comb.cores[w];
                let (cin, _, _) = gw.dim();
                let (r, ca1, ccin) = carry.dim();
                if ca1 != d_a1 || ccin != cin {
                    return Err(TensorError::Dim(format!(
                        "zip bond mismatch at terminal site {sidx}: carry ({r},{ca1},{ccin}) vs site {d_a1} comb {cin}"
                    )));
                }
                let cm = carry
                    .permuted_axes([0, 2, 1])
                    .as_standard_layout()
                    .to_owned();
                let cm = reshape2(cm, r * cin, d_a1);
                let fm = reshape2(site.clone(), d_a1, p * a2);
                let d = cm.dot(&fm); // (r*cin, p*a2)
                let mut t = Array3::<C64>::zeros((r, p, a2));
                for mu in 0..p {
                    let dmu = d.slice(s![.., mu * a2..(mu + 1) * a2]).to_owned();
                    let dmu = reshape3(dmu, r, cin, a2);
                    for ir in 0..r {
                        for ia2 in 0..a2 {
                            let mut acc = C64::new(0.0, 0.0);
                            for c in 0..cin {
                                acc += dmu[[ir, c, ia2]] * gw[[c, mu, 0]];
                            }
                            t[[ir, mu, ia2]] = acc;
                        }
                    }
                }
                sites[sidx] = t;
            }
        }
        // re-canonicalize the window right-to-left, pushing weight one site
        // left of the row
        let lo = j.max(1);
        for s_idx in (lo..=j + w).rev() {
            let site = sites[s_idx].clone();
            let (dl, _, dr) = site.dim();
            let m = reshape2(site, dl, p * dr);
            let (u, sv, vt, disc, capped) = svd_trunc(&m, opts.svd_tol, opts.chi_max)?;
            track(disc, capped, &mut report);
            let r = sv.len();
            sites[s_idx] = reshape3(vt, r, p, dr);
            let push = scale_cols(&u, &sv); // (dl, r)
            let left = sites[s_idx - 1].clone();
            let (dl2, _, dmid) = left.dim();
            debug_assert_eq!(dmid, dl);
            let lm = reshape2(left, dl2 * p, dl);
            sites[s_idx - 1] = reshape3(lm.dot(&push), dl2, p, r);
        }
    }

    report.bond_dims = sites.iter().map(|t| t.dim().2).collect();
    report.max_chi = report.bond_dims.iter().cloned().max().unwrap_or(1);

    // caps: evaluate all future legs at the pinned diagonal pair
    let pin = cs.pin_leg();
    let mut caps: Vec<Array1<C64>> = vec![Array1::zeros(0); n];
    caps[n - 1] = Array1::from_elem(sites[n - 1].dim().2, C64::new(1.0, 0.0));
    for m in (0..n - 1).rev() {
        let nxt = &sites[m + 1];
        let (dl, _, dr) = nxt.dim();
        let mut cap = Array1::<C64>::zeros(dl);
        let prev = &caps[m + 1];
        for b in 0..dl {
            let mut acc = C64::new(0.0, 0.0);
            for bp in 0..dr {
                acc += nxt[[b, pin, bp]] * prev[bp];
            }
            cap[b] = acc;
        }
        caps[m] = cap;
    }

    Ok((
        ProcessTensor {
            n,
            q: cs.q(),
            leg_dim: p,
            sites,
            caps,
            pin_leg: pin,
            svd_tol: opts.svd_tol,
            chi_max: opts.chi_max,
        },
        report,
    ))
}

/// Per-step free propagators consumed by [`propagate`].
pub trait StepPropagators {
    fn dim_liou(&self) -> usize;
    /// Apply exp(L dt) of step `step` (0-based) in place.
    fn apply(&self, step: usize, v: &mut [C64]) -> Result<(), String>;
}

/// Fixed list of dense step matrices (mainly for tests and small systems).
pub struct DensePropagators(pub Vec<Array2<C64>>);

impl StepPropagators for DensePropagators {
    fn dim_liou(&self) -> usize {
        self.0[0].nrows()
    }

    fn apply(&self, step: usize, v: &mut [C64]) -> Result<(), String> {
        let u = &self.0[step.min(self.0.len() - 1)];
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
        Ok(())
    }
}

/// Contract the process tensor with the free propagators and an initial
/// state. Returns the density-matrix trajectory including the initial state
/// (n + 1 entries, vectorized row-major).
pub fn propagate(
    rho0: &Array2<C64>,
    pt: &ProcessTensor,
    props: &dyn StepPropagators,
    cs: &CouplingSpec,
) -> Result<Vec<Array2<C64>>, TensorError> {
    single_threaded_blas();
    let d = rho0.nrows();
    if rho0.ncols() != d {
        return Err(TensorError::Dim("rho0 must be square".into()));
    }
    let dl = d * d;
    if props.dim_liou() != dl {
        return Err(TensorError::Dim(format!(
            "propagator dimension {} != dim^2 = {dl}",
            props.dim_liou()
        )));
    }
    if cs.state_to_unique.len() != d {
        return Err(TensorError::Dim(format!(
            "coupling spec covers {} states, system has {d}",
            cs.state_to_unique.len()
        )));
    }
    if cs.leg_dim() != pt.leg_dim {
        return Err(TensorError::Dim(format!(
            "leg dimension mismatch: coupling {} vs tensor {}",
            cs.leg_dim(),
            pt.leg_dim
        )));
    }
    let leg_of = cs.liou_to_leg();
    // columns grouped by leg value for batched site contraction
    let mut cols_by_leg: Vec<Vec<usize>> = vec![Vec::new(); pt.leg_dim];
    for (col, &leg) in leg_of.iter().enumerate() {
        cols_by_leg[leg as usize].push(col);
    }

    let mut state = Array2::<C64>::zeros((1, dl));
    for (k, z) in rho0.iter().enumerate() {
        state[[0, k]] = *z;
    }
    let mut out = Vec::with_capacity(pt.n + 1);
    out.push(rho0.clone());

    for step in 0..pt.n {
        // free propagator on every bond component
        for mut row in state.outer_iter_mut() {
            let v = row.as_slice_mut().expect("contiguous row");
            props
                .apply(step, v)
                .map_err(|message| TensorError::Propagator { step, message })?;
        }
        // site contraction, diagonal in the physical index
        let site = &pt.sites[step];
        let (bl, _, br) = site.dim();
        debug_assert_eq!(bl, state.nrows());
        let mut next = Array2::<C64>::zeros((br, dl));
        for (leg, cols) in cols_by_leg.iter().enumerate() {
            if cols.is_empty() {
                continue;
            }
            let a = site.slice(s![.., leg, ..]); // (bl, br)
            let mut sub = Array2::<C64>::zeros((bl, cols.len()));
            for (k, &c) in cols.iter().enumerate() {
                for b in 0..bl {
                    sub[[b, k]] = state[[b, c]];
                }
            }
            let res = a.t().dot(&sub); // (br, cols)
            for (k, &c) in cols.iter().enumerate() {
                for b in 0..br {
                    next[[b, c]] = res[[b, k]];
                }
            }
        }
        state = next;
        // read out through the cap
        let cap = &pt.caps[step];
        let mut rho = Array2::<C64>::zeros((d, d));
        for b in 0..state.nrows() {
            let w = cap[b];
            if w == C64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..dl {
                rho[[k / d, k % d]] += w * state[[b, k]];
            }
        }
        out.push(rho);
    }
    Ok(out)
}

/// Brute-force evaluation of the discretized influence-functional path sum
/// over full Liouville paths; no tensor compression, no eigenvalue grouping.
/// Guard limits: dim <= 6, n <= 4.
pub fn path_sum_oracle(
    rho0: &Array2<C64>,
    kernel: &MemoryKernel,
    lambda_bar: &[f64],
    props: &[Array2<C64>],
) -> Result<Vec<Array2<C64>>, TensorError> {
    let d = rho0.nrows();
    let n = props.len();
    if d > 6 || n > 4 {
        return Err(TensorError::Guard(format!(
            "path sum limited to dim <= 6 and n <= 4 steps, got dim {d}, n {n}"
        )));
    }
    let dl = d * d;
    let lam_l = |mu: usize| lambda_bar[mu / d];
    let lam_r = |mu: usize| lambda_bar[mu % d];
    let depth = kernel.depth();
    let b_factor = |lag: usize, mu: usize, nu: usize| -> C64 {
        if lag > depth {
            return C64::new(1.0, 0.0);
        }
        let eta = kernel.eta[lag];
        (-(lam_l(mu) - lam_r(mu)) * (eta * lam_l(nu) - eta.conj() * lam_r(nu))).exp()
    };
    let rho0v: Vec<C64> = rho0.iter().cloned().collect();
    let mut out = Vec::with_capacity(n);
    for m in 1..=n {
        // v1[mu] = sum_nu U_1[mu, nu] rho0[nu]
        let mut v1 = vec![C64::new(0.0, 0.0); dl];
        for mu in 0..dl {
            for nu in 0..dl {
                v1[mu] += props[0][[mu, nu]] * rho0v[nu];
            }
        }
        let mut rho = vec![C64::new(0.0, 0.0); dl];
        let mut path = vec![0usize; m];
        loop {
            // amplitude along the path
            let mut amp = v1[path[0]];
            for l in 1..m {
                amp *= props[l][[path[l], path[l - 1]]];
            }
            if amp != C64::new(0.0, 0.0) {
                // influence weight: all ordered pairs (j, j + lag) within horizon m
                let mut weight = C64::new(1.0, 0.0);
                for jj in 0..m {
                    for ii in jj..m {
                        weight *= b_factor(ii - jj, path[ii], path[jj]);
                    }
                }
                rho[path[m - 1]] += amp * weight;
            }
            // odometer
            let mut pos = 0;
            loop {
                path[pos] += 1;
                if path[pos] < dl {
                    break;
                }
                path[pos] = 0;
                pos += 1;
                if pos == m {
                    break;
                }
            }
            if pos == m {
                break;
            }
        }
        let mut rm = Array2::zeros((d, d));
        for k in 0..dl {
            rm[[k / d, k % d]] = rho[k];
        }
        out.push(rm);
    }
    Ok(out)
}

const PT_MAGIC: &[u8; 8] = b"QDPT\x01\0\0\n";

impl ProcessTensor {
    /// Binary layout: magic, then u64 header (n, q, leg_dim, pin, chi_max),
    /// f64 svd_tol, u64 bond dims (n + 1, leading 1 included), then per site
    /// the row-major complex entries (re, im as f64 LE), then the n cap
    /// vectors.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), TensorError> {
        w.write_all(PT_MAGIC)?;
        for v in [
            self.n as u64,
            self.q as u64,
            self.leg_dim as u64,
            self.pin_leg as u64,
            self.chi_max as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.svd_tol.to_le_bytes())?;
        w.write_all(&1u64.to_le_bytes())?;
        for site in &self.sites {
            w.write_all(&(site.dim().2 as u64).to_le_bytes())?;
        }
        for site in &self.sites {
            for z in site.iter() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        for cap in &self.caps {
            for z in cap.iter() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self, TensorError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != PT_MAGIC {
            return Err(TensorError::Corrupt("bad magic".into()));
        }
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |r: &mut R| -> Result<u64, TensorError> {
            r.read_exact(&mut u64buf)?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let n = read_u64(&mut r)? as usize;
        let q = read_u64(&mut r)? as usize;
        let leg_dim = read_u64(&mut r)? as usize;
        let pin_leg = read_u64(&mut r)? as usize;
        let chi_max = read_u64(&mut r)? as usize;
        let mut f64buf = [0u8; 8];
        r.read_exact(&mut f64buf)?;
        let svd_tol = f64::from_le_bytes(f64buf);
        if n == 0 || leg_dim == 0 || q * q != leg_dim || n > 1_000_000 {
            return Err(TensorError::Corrupt("implausible header".into()));
        }
        let mut bonds = Vec::with_capacity(n + 1);
        {
            let mut b = [0u8; 8];
            for _ in 0..=n {
                r.read_exact(&mut b)?;
                bonds.push(u64::from_le_bytes(b) as usize);
            }
        }
        if bonds[0] != 1 {
            return Err(TensorError::Corrupt("leading bond must be 1".into()));
        }
        let read_c64 = |r: &mut R| -> Result<C64, TensorError> {
            let mut b = [0u8; 16];
            r.read_exact(&mut b)?;
            Ok(C64::new(
                f64::from_le_bytes(b[0..8].try_into().unwrap()),
                f64::from_le_bytes(b[8..16].try_into().unwrap()),
            ))
        };
        let mut sites = Vec::with_capacity(n);
        for i in 0..n {
            let (dl, dr) = (bonds[i], bonds[i + 1]);
            let mut t = Array3::zeros((dl, leg_dim, dr));
            for a in 0..dl {
                for mu in 0..leg_dim {
                    for b in 0..dr {
                        t[[a, mu, b]] = read_c64(&mut r)?;
                    }
                }
            }
            sites.push(t);
        }
        let mut caps = Vec::with_capacity(n);
        for i in 0..n {
            let mut cap = Array1::zeros(bonds[i + 1]);
            for b in 0..bonds[i + 1] {
                cap[b] = read_c64(&mut r)?;
            }
            caps.push(cap);
        }
        Ok(ProcessTensor {
            n,
            q,
            leg_dim,
            sites,
            caps,
            pin_leg,
            svd_tol,
            chi_max,
        })
    }

    pub fn save_file(&self, path: &Path) -> Result<(), TensorError> {
        self.save(BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load_file(path: &Path) -> Result<Self, TensorError> {
        Self::load(BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_kernel(rng: &mut impl Rng, dt: f64, depth: usize, scale: f64) -> MemoryKernel {
        let eta = (0..=depth)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * scale)
            .collect();
        MemoryKernel { dt, eta }
    }

    fn random_props(rng: &mut impl Rng, dl: usize, n: usize) -> Vec<Array2<C64>> {
        (0..n)
            .map(|_| {
                Array2::from_shape_fn((dl, dl), |_| {
                    C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                        / (dl as f64).sqrt()
                })
            })
            .collect()
    }

    fn random_rho(rng: &mut impl Rng, d: usize) -> Array2<C64> {
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
        rho.mapv(|z| z / tr)
    }

    fn max_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn coupling_spec_grouping() {
        let cs = CouplingSpec::grouped(vec![0.0, 1.0, 1.0, 2.0, 0.0]);
        assert_eq!(cs.unique, vec![0.0, 1.0, 2.0]);
        assert_eq!(cs.q(), 3);
        assert_eq!(cs.state_to_unique, vec![0, 1, 1, 2, 0]);
        assert_eq!(cs.multiplicities(), vec![2, 2, 1]);
        // round trip through the map
        for (i, &u) in cs.state_to_unique.iter().enumerate() {
            assert_eq!(cs.unique[u], cs.lambda_bar[i]);
        }
        let all_zero = CouplingSpec::grouped(vec![0.0; 7]);
        assert_eq!(all_zero.q(), 1);
        assert_eq!(all_zero.leg_dim(), 1);
    }

    #[test]
    fn influence_rows_with_equal_pair_are_one() {
        let cs = CouplingSpec::grouped(vec![0.0, 1.0, 2.0]);
        let kernel = MemoryKernel {
            dt: 0.1,
            eta: vec![C64::new(0.3, -0.7), C64::new(-0.2, 0.4)],
        };
        let b = influence_tensor(1, &kernel, &cs);
        let q = cs.q();
        for mu in 0..cs.leg_dim() {
            if mu / q == mu % q {
                for nu in 0..cs.leg_dim() {
                    assert!((b.values[[mu, nu]] - C64::new(1.0, 0.0)).norm() < 1e-15);
                }
            }
        }
        // eta = 0 gives an all-ones tensor
        let zero = MemoryKernel::zero(0.1, 1);
        let b0 = influence_tensor(1, &zero, &cs);
        for v in b0.values.iter() {
            assert!((v - C64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn influence_entry_minus_one_at_eta_i_pi() {
        // lambda pair difference 1 against nu = (1, 0): entry exp(-i pi) = -1
        let cs = CouplingSpec::grouped(vec![0.0, 1.0]);
        let kernel = MemoryKernel {
            dt: 0.1,
            eta: vec![C64::new(0.0, std::f64::consts::PI)],
        };
        let b = influence_tensor(0, &kernel, &cs);
        let q = cs.q();
        let mu = q; // (1, 0)
        let nu = q; // (1, 0)
        assert!((b.values[[mu, nu]] - C64::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn influence_two_level_table() {
        // hand expansion for lambda = {0, 1}
        let eta = C64::new(0.21, -0.37);
        let cs = CouplingSpec::grouped(vec![0.0, 1.0]);
        let kernel = MemoryKernel { dt: 0.1, eta: vec![eta] };
        let b = influence_tensor(0, &kernel, &cs).values;
        let one = C64::new(1.0, 0.0);
        let ec = eta.conj();
        let want = [
            [one, one, one, one],
            [one, (-ec).exp(), eta.exp(), (eta - ec).exp()],
            [one, ec.exp(), (-eta).exp(), (ec - eta).exp()],
            [one, one, one, one],
        ];
        for mu in 0..4 {
            for nu in 0..4 {
                assert!(
                    (b[[mu, nu]] - want[mu][nu]).norm() < 1e-14,
                    "mu {mu} nu {nu}: {:?} vs {:?}",
                    b[[mu, nu]],
                    want[mu][nu]
                );
            }
        }
    }

    #[test]
    fn zero_kernel_gives_identity_process_tensor() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let d = 3;
        let cs = CouplingSpec::grouped(vec![0.0, 1.0, 1.0]);
        let kernel = MemoryKernel::zero(0.1, 4);
        let n = 12;
        let (pt, report) = build_process_tensor(&kernel, &cs, n, &PtOptions::default()).unwrap();
        assert_eq!(report.max_chi, 1);
        let props = random_props(&mut rng, d * d, n);
        let rho0 = random_rho(&mut rng, d);
        let traj = propagate(&rho0, &pt, &DensePropagators(props.clone()), &cs).unwrap();
        // phonon-free reference: plain propagator chain
        let mut v: Vec<C64> = rho0.iter().cloned().collect();
        for (step, u) in props.iter().enumerate() {
            let mut next = vec![C64::new(0.0, 0.0); v.len()];
            for i in 0..v.len() {
                for j in 0..v.len() {
                    next[i] += u[[i, j]] * v[j];
                }
            }
            v = next;
            let want = Array2::from_shape_fn((d, d), |(i, j)| v[i * d + j]);
            assert!(max_diff(&traj[step + 1], &want) < 1e-13);
        }
    }

    #[test]
    fn path_sum_zero_kernel_is_propagator_chain() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = 2;
        let props = random_props(&mut rng, d * d, 3);
        let rho0 = random_rho(&mut rng, d);
        let kernel = MemoryKernel::zero(0.1, 2);
        let states = path_sum_oracle(&rho0, &kernel, &[0.0, 1.0], &props).unwrap();
        let mut v: Vec<C64> = rho0.iter().cloned().collect();
        for (m, u) in props.iter().enumerate() {
            let mut next = vec![C64::new(0.0, 0.0); v.len()];
            for i in 0..v.len() {
                for j in 0..v.len() {
                    next[i] += u[[i, j]] * v[j];
                }
            }
            v = next;
            let want = Array2::from_shape_fn((d, d), |(i, j)| v[i * d + j]);
            assert!(max_diff(&states[m], &want) < 1e-13);
        }
    }

    #[test]
    fn process_tensor_matches_path_sum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        for trial in 0..6 {
            let d = 2 + (trial % 2); // 2 or 3 levels
            let lambdas: Vec<f64> = (0..d).map(|_| rng.random_range(0..3) as f64).collect();
            let cs = CouplingSpec::grouped(lambdas.clone());
            let kernel = random_kernel(&mut rng, 0.1, 2, 0.2);
            let n = 3;
            let props = random_props(&mut rng, d * d, n);
            let rho0 = random_rho(&mut rng, d);
            let opts = PtOptions {
                svd_tol: 1e-15,
                chi_max: 4096,
                drop_tol: 0.0,
            };
            let (pt, _) = build_process_tensor(&kernel, &cs, n, &opts).unwrap();
            let traj = propagate(&rho0, &pt, &DensePropagators(props.clone()), &cs).unwrap();
            let oracle = path_sum_oracle(&rho0, &kernel, &lambdas, &props).unwrap();
            for m in 0..n {
                let diff = max_diff(&traj[m + 1], &oracle[m]);
                assert!(diff < 1e-12, "trial {trial} step {m}: diff {diff}");
            }
        }
    }

    #[test]
    fn degenerate_reduction_matches_full_legs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(97);
        let d = 3;
        let lambdas = vec![0.0, 1.0, 1.0];
        let kernel = random_kernel(&mut rng, 0.1, 3, 0.15);
        let n = 8;
        let props = random_props(&mut rng, d * d, n);
        let rho0 = random_rho(&mut rng, d);
        let opts = PtOptions {
            svd_tol: 1e-15,
            chi_max: 4096,
            drop_tol: 0.0,
        };
        let reduced = CouplingSpec::grouped(lambdas.clone());
        let full = CouplingSpec::ungrouped(lambdas.clone());
        assert_eq!(reduced.leg_dim(), 4);
        assert_eq!(full.leg_dim(), 9);
        let (pt_r, _) = build_process_tensor(&kernel, &reduced, n, &opts).unwrap();
        let (pt_f, _) = build_process_tensor(&kernel, &full, n, &opts).unwrap();
        let tr = propagate(&rho0, &pt_r, &DensePropagators(props.clone()), &reduced).unwrap();
        let tf = propagate(&rho0, &pt_f, &DensePropagators(props.clone()), &full).unwrap();
        for m in 0..=n {
            let diff = max_diff(&tr[m], &tf[m]);
            assert!(diff < 1e-12, "step {m}: reduced vs full {diff}");
        }
        // the oracle agrees too on a short horizon
        let oracle = path_sum_oracle(&rho0, &kernel, &lambdas, &props[..4]).unwrap();
        for m in 0..4 {
            assert!(max_diff(&oracle[m], &tr[m + 1]) < 1e-11);
            assert!(max_diff(&oracle[m], &tf[m + 1]) < 1e-11);
        }
    }

    #[test]
    fn serialization_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let cs = CouplingSpec::grouped(vec![0.0, 1.0, 2.0]);
        let kernel = random_kernel(&mut rng, 0.05, 4, 0.1);
        let (pt, _) = build_process_tensor(&kernel, &cs, 10, &PtOptions::default()).unwrap();
        let mut buf = Vec::new();
        pt.save(&mut buf).unwrap();
        let back = ProcessTensor::load(buf.as_slice()).unwrap();
        assert_eq!(back.n, pt.n);
        assert_eq!(back.q, pt.q);
        assert_eq!(back.bond_dims(), pt.bond_dims());
        for (a, b) in pt.sites.iter().zip(back.sites.iter()) {
            assert_eq!(a.dim(), b.dim());
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x, y);
            }
        }
        for (a, b) in pt.caps.iter().zip(back.caps.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn path_sum_guard() {
        let rho0 = Array2::<C64>::eye(7);
        let kernel = MemoryKernel::zero(0.1, 1);
        let props = vec![Array2::<C64>::eye(49)];
        assert!(path_sum_oracle(&rho0, &kernel, &[0.0; 7], &props).is_err());
    }
}
