//! Adaptive quadrature for the bath integrals.
//!
//! The primary scheme is a globally adaptive Gauss-Kronrod (G7, K15) rule
//! with bisection of the worst segment. Integrands here are smooth with
//! superexponentially decaying tails but can be strongly oscillatory
//! (Fourier-type kernels), so callers may request an initial uniform panel
//! split resolving the oscillation scale before adaptation takes over.
//!
//! An adaptive Simpson rule is kept as an independent cross-check; the two
//! schemes share no nodes or error machinery.

use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error(
        "quadrature failed to converge: estimate {estimate}, error bound {bound:.3e} > target {target:.3e}"
    )]
    NotConverged {
        estimate: C64,
        bound: f64,
        target: f64,
    },
}

pub type QuadResult = Result<C64, QuadError>;

// K15 nodes on [0, 1] side of the symmetric rule; odd indices are the
// embedded G7 nodes.
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// One Gauss-Kronrod 15-point evaluation on [a, b]. Returns the K15 value
/// and |K15 - G7| as the local error estimate.
fn gk15<F: FnMut(f64) -> C64>(f: &mut F, a: f64, b: f64) -> (C64, f64) {
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    let fc = f(c);
    let mut k15 = WGK[7] * fc;
    let mut g7 = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let fs = f(c - x) + f(c + x);
        k15 += WGK[i] * fs;
        if i % 2 == 1 {
            g7 += WG[(i - 1) / 2] * fs;
        }
    }
    k15 *= h;
    g7 *= h;
    (k15, (k15 - g7).norm())
}

struct Segment {
    a: f64,
    b: f64,
    value: C64,
    err: f64,
}

/// Globally adaptive Gauss-Kronrod integration of `f` over [a, b].
///
/// `init_panels` pre-splits the interval uniformly before adaptation, which
/// keeps the global error estimate honest for oscillatory integrands whose
/// first coarse evaluation would otherwise look spuriously converged.
pub fn adaptive_gk<F: FnMut(f64) -> C64>(
    mut f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_floor: f64,
    init_panels: usize,
) -> QuadResult {
    if a == b {
        return Ok(C64::new(0.0, 0.0));
    }
    let panels = init_panels.clamp(1, 4096);
    let mut segs: Vec<Segment> = Vec::with_capacity(panels + 64);
    let w = (b - a) / panels as f64;
    for i in 0..panels {
        let sa = a + i as f64 * w;
        let sb = if i + 1 == panels { b } else { sa + w };
        let (value, err) = gk15(&mut f, sa, sb);
        segs.push(Segment {
            a: sa,
            b: sb,
            value,
            err,
        });
    }
    const MAX_SEGS: usize = 20_000;
    loop {
        let total: C64 = segs.iter().map(|s| s.value).sum();
        let err: f64 = segs.iter().map(|s| s.err).sum();
        let target = (rel_tol * total.norm()).max(abs_floor);
        if err <= target {
            return Ok(total);
        }
        if segs.len() >= MAX_SEGS {
            return Err(QuadError::NotConverged {
                estimate: total,
                bound: err,
                target,
            });
        }
        // bisect the worst segment
        let (worst, _) = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .expect("non-empty");
        let Segment { a: sa, b: sb, .. } = segs.swap_remove(worst);
        let m = 0.5 * (sa + sb);
        for (lo, hi) in [(sa, m), (m, sb)] {
            let (value, err) = gk15(&mut f, lo, hi);
            segs.push(Segment {
                a: lo,
                b: hi,
                value,
                err,
            });
        }
    }
}

/// Adaptive Simpson integration; independent validation path for the
/// Gauss-Kronrod results.
pub fn adaptive_simpson<F: FnMut(f64) -> C64>(
    f: &mut F,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: usize,
) -> C64 {
    fn simpson(fa: C64, fm: C64, fb: C64, h: f64) -> C64 {
        (fa + 4.0 * fm + fb) * (h / 6.0)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: FnMut(f64) -> C64>(
        f: &mut F,
        a: f64,
        b: f64,
        fa: C64,
        fm: C64,
        fb: C64,
        whole: C64,
        tol: f64,
        depth: usize,
    ) -> C64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.norm() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return C64::new(0.0, 0.0);
    }
    // seed with a modest uniform split so oscillatory integrands are resolved
    let n0 = 16;
    let w = (b - a) / n0 as f64;
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n0 {
        let sa = a + i as f64 * w;
        let sb = sa + w;
        let m = 0.5 * (sa + sb);
        let (fa, fm, fb) = (f(sa), f(m), f(sb));
        let whole = simpson(fa, fm, fb, sb - sa);
        acc += recurse(f, sa, sb, fa, fm, fb, whole, tol / n0 as f64, max_depth);
    }
    acc
}

/// Panel count resolving oscillations of angular frequency `freq` on [a, b].
pub fn oscillation_panels(a: f64, b: f64, freq: f64) -> usize {
    let cycles = (b - a).abs() * freq.abs() / std::f64::consts::PI;
    (cycles.ceil() as usize).clamp(1, 2048)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = adaptive_gk(|x| C64::new(x * x * x - 2.0 * x, 0.0), 0.0, 2.0, 1e-12, 1e-13, 1)
            .unwrap();
        assert!((v.re - 0.0).abs() < 1e-12);
    }

    #[test]
    fn oscillatory_fourier() {
        // int_0^10 exp(-x) cos(20 x) dx = (1 - e^{-10}(cos 200 - 20 sin 200))/401
        let exact = (1.0 - (-10.0f64).exp() * ((200.0f64).cos() - 20.0 * (200.0f64).sin())) / 401.0;
        let panels = oscillation_panels(0.0, 10.0, 20.0);
        let v = adaptive_gk(
            |x| C64::new((-x).exp() * (20.0 * x).cos(), 0.0),
            0.0,
            10.0,
            1e-11,
            1e-15,
            panels,
        )
        .unwrap();
        assert!((v.re - exact).abs() < 1e-10, "got {} want {}", v.re, exact);
    }

    #[test]
    fn simpson_agrees_with_gk() {
        let mut f = |x: f64| C64::new((-0.3 * x * x).exp(), (1.7 * x).sin());
        let a = adaptive_gk(&mut f, 0.0, 6.0, 1e-11, 1e-15, 4).unwrap();
        let b = adaptive_simpson(&mut f, 0.0, 6.0, 1e-12, 40);
        assert!((a - b).norm() < 1e-9);
    }
}
