//! Adaptive Simpson quadrature for smooth one-dimensional integrands.

use crate::error::{Error, Result};

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Classic adaptive Simpson with the 15x error criterion and Richardson
/// correction on accepted panels. Depth is capped; hitting the cap with the
/// panel still out of tolerance is reported as an error rather than silently
/// returning a degraded value.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    if !(fa.is_finite() && fb.is_finite() && fm.is_finite()) {
        return Err(Error::Quadrature(format!(
            "integrand not finite on [{a:e}, {b:e}]"
        )));
    }
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_panel(
        f,
        a,
        b,
        fa,
        fm,
        fb,
        whole,
        tol.abs().max(f64::MIN_POSITIVE),
        0,
    )
}

fn simpson_panel<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    if !(flm.is_finite() && frm.is_finite()) {
        return Err(Error::Quadrature(format!(
            "integrand not finite on [{a:e}, {b:e}]"
        )));
    }
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth >= 60 {
        return Err(Error::Quadrature(format!(
            "panel [{a:e}, {b:e}] failed to converge at maximum depth"
        )));
    }
    let lv = simpson_panel(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)?;
    let rv = simpson_panel(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)?;
    Ok(lv + rv)
}

/// Composite Simpson over an explicit node sequence with caller-supplied
/// midpoint values: `nodes[i] = (x, f(x))`, `mids[i] = f` at the midpoint of
/// interval `i`. Intended for integrating along an already-accepted mesh.
pub fn composite_simpson(nodes: &[(f64, f64)], mids: &[f64]) -> f64 {
    debug_assert_eq!(mids.len() + 1, nodes.len().max(1));
    let mut sum = 0.0;
    for i in 0..mids.len() {
        let (x0, f0) = nodes[i];
        let (x1, f1) = nodes[i + 1];
        sum += (x1 - x0) / 6.0 * (f0 + 4.0 * mids[i] + f1);
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        // Simpson with Richardson correction integrates degree-5 exactly on
        // symmetric panels; degree-3 is exact without correction.
        let v = adaptive_simpson(&|x: f64| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((v - (4.0 - 4.0 + 2.0)).abs() < 1e-13, "got {v}");
    }

    #[test]
    fn transcendental_to_tight_tolerance() {
        let v = adaptive_simpson(&|x: f64| x.exp() * x.sin(), 0.0, 3.0, 1e-12).unwrap();
        // antiderivative: exp(x) (sin x - cos x) / 2
        let exact = 0.5 * (3.0f64.exp() * (3.0f64.sin() - 3.0f64.cos()) + 1.0);
        assert!((v - exact).abs() < 1e-11, "got {v}, want {exact}");
    }

    #[test]
    fn reversed_interval_negates() {
        let a = adaptive_simpson(&|x: f64| x.cos(), 0.0, 1.0, 1e-12).unwrap();
        let b = adaptive_simpson(&|x: f64| x.cos(), 1.0, 0.0, 1e-12).unwrap();
        assert!((a + b).abs() < 1e-13);
    }

    #[test]
    fn non_finite_integrand_is_an_error() {
        let r = adaptive_simpson(&|x: f64| 1.0 / x, -1.0, 1.0, 1e-10);
        assert!(matches!(r, Err(Error::Quadrature(_))));
    }

    #[test]
    fn composite_matches_adaptive_on_smooth_mesh() {
        let f = |x: f64| (x * x + 1.0).ln();
        let n = 64;
        let nodes: Vec<(f64, f64)> = (0..=n)
            .map(|i| i as f64 / n as f64 * 2.0)
            .map(|x| (x, f(x)))
            .collect();
        let mids: Vec<f64> = (0..n)
            .map(|i| f(0.5 * (nodes[i].0 + nodes[i + 1].0)))
            .collect();
        let v = composite_simpson(&nodes, &mids);
        let want = adaptive_simpson(&f, 0.0, 2.0, 1e-13).unwrap();
        assert!((v - want).abs() < 1e-9, "composite {v} vs adaptive {want}");
    }
}
