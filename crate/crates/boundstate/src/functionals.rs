//! Monotone-branch inversion r(s) and the comparison functionals evaluated
//! along branches: W and its weighted variant, Q with its primitive H, P and
//! its increasing-branch variant, the pairwise ratio S12, and the
//! radius-parametrized Dirichlet functional P(r).

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::quad::adaptive_simpson;
use crate::radial_ode::{EventKind, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchDir {
    Decreasing,
    Increasing,
}

/// A maximal monotone piece of u between consecutive extremal points,
/// inverted to give r(s) and u'(r(s)).
#[derive(Clone, Debug)]
pub struct Branch {
    traj: Arc<Trajectory>,
    pub dir: BranchDir,
    pub r_lo: f64,
    pub r_hi: f64,
    y_lo: [f64; 4],
    y_hi: [f64; 4],
    pub beta: f64,
}

impl Branch {
    /// u at the left r-endpoint.
    pub fn value_start(&self) -> f64 {
        self.y_lo[0]
    }

    /// u at the right r-endpoint.
    pub fn value_end(&self) -> f64 {
        self.y_hi[0]
    }

    pub fn s_min(&self) -> f64 {
        self.value_start().min(self.value_end())
    }

    pub fn s_max(&self) -> f64 {
        self.value_start().max(self.value_end())
    }

    pub fn trajectory(&self) -> &Arc<Trajectory> {
        &self.traj
    }

    pub fn contains_s(&self, s: f64) -> bool {
        let slop = 1e-9 * (1.0 + s.abs());
        s >= self.s_min() - slop && s <= self.s_max() + slop
    }

    /// Solves u(r) = s on the branch: dense-output bisection to 1e-12
    /// relative in r, then two Newton polishes on freshly integrated states.
    /// Returns the radius and the state there.
    pub fn r_of_s(&self, s: f64) -> Result<(f64, [f64; 4])> {
        if !self.contains_s(s) {
            return Err(Error::OutOfRange {
                what: "s".into(),
                value: s,
                lo: self.s_min(),
                hi: self.s_max(),
            });
        }
        // endpoint shortcuts keep extremal endpoints exact
        if s == self.value_start() {
            return Ok((self.r_lo, self.y_lo));
        }
        if s == self.value_end() {
            return Ok((self.r_hi, self.y_hi));
        }
        let increasing = self.dir == BranchDir::Increasing;
        let (mut lo, mut hi) = (self.r_lo, self.r_hi);
        for _ in 0..200 {
            if hi - lo <= 1e-12 * f64::max(1.0, hi) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let um = self.traj.eval(mid)?[0];
            // decreasing branch: u > s to the left of the root
            if (um > s) == increasing {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mut r = 0.5 * (lo + hi);
        let mut y = self.traj.eval_refined(r)?;
        for _ in 0..2 {
            if y[1].abs() < 1e-14 * (1.0 + s.abs()) {
                break;
            }
            let step = (y[0] - s) / y[1];
            let next = (r - step).clamp(self.r_lo, self.r_hi);
            if next == r {
                break;
            }
            r = next;
            y = self.traj.eval_refined(r)?;
        }
        Ok((r, y))
    }

    /// (r(s), u'(r(s))).
    pub fn eval(&self, s: f64) -> Result<(f64, f64)> {
        let (r, y) = self.r_of_s(s)?;
        Ok((r, y[1]))
    }
}

/// Splits a trajectory at its refined extremal events. The initial descent
/// from the takeoff node and the terminal (possibly unfinished) piece are
/// included; degenerate slivers and flat pieces are dropped, so a constant
/// shot yields no branches.
pub fn extract_branches(traj: &Arc<Trajectory>, beta: f64) -> Vec<Branch> {
    let mut cuts: Vec<(f64, [f64; 4])> = Vec::new();
    let first = traj.nodes[0];
    cuts.push((first.r, first.y));
    for e in traj.events_of(EventKind::DuZero) {
        cuts.push((e.r, e.y));
    }
    let last = traj.last();
    cuts.push((last.r, last.y));

    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let (r_lo, y_lo) = w[0];
        let (r_hi, y_hi) = w[1];
        if r_hi - r_lo <= 1e-9 * f64::max(1.0, r_hi) {
            continue;
        }
        let ds = y_hi[0] - y_lo[0];
        if ds.abs() <= 1e-12 * (1.0 + y_lo[0].abs().max(y_hi[0].abs())) {
            continue;
        }
        let dir = if ds < 0.0 {
            BranchDir::Decreasing
        } else {
            BranchDir::Increasing
        };
        out.push(Branch {
            traj: traj.clone(),
            dir,
            r_lo,
            r_hi,
            y_lo,
            y_hi,
            beta,
        });
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FunctionalTag {
    I,
    W,
    Wtilde,
    Q,
    H,
    P,
    Pbar,
    S12,
    S12bar,
    DirichletP,
}

impl FunctionalTag {
    pub fn label(self) -> &'static str {
        match self {
            FunctionalTag::I => "I",
            FunctionalTag::W => "W",
            FunctionalTag::Wtilde => "Wtilde",
            FunctionalTag::Q => "Q",
            FunctionalTag::H => "H",
            FunctionalTag::P => "P",
            FunctionalTag::Pbar => "Pbar",
            FunctionalTag::S12 => "S12",
            FunctionalTag::S12bar => "S12bar",
            FunctionalTag::DirichletP => "dirichletP",
        }
    }

    /// Radius-parametrized traces export `r,value` rows instead of
    /// `s,r,du,value`.
    pub fn is_radial(self) -> bool {
        matches!(self, FunctionalTag::I | FunctionalTag::DirichletP)
    }
}

/// One traced functional: parallel arrays over the grid.
#[derive(Clone, Debug, Serialize)]
pub struct FunctionalTrace {
    pub tag: FunctionalTag,
    pub s: Vec<f64>,
    pub r: Vec<f64>,
    pub du: Vec<f64>,
    pub values: Vec<f64>,
    /// branch/trajectory metadata for export headers
    pub meta: String,
}

fn meta_of(branch: &Branch) -> String {
    format!(
        "alpha={:e} n={} dir={} r=[{:e},{:e}] s=[{:e},{:e}]",
        branch.traj.alpha,
        branch.traj.n,
        match branch.dir {
            BranchDir::Decreasing => "decreasing",
            BranchDir::Increasing => "increasing",
        },
        branch.r_lo,
        branch.r_hi,
        branch.s_min(),
        branch.s_max()
    )
}

/// F/f with the non-removable pole at |s| = b guarded by a band of
/// half-width 1e-6 beta.
fn checked_ratio(nl: &Nonlinearity, s: f64, beta: f64) -> Result<f64> {
    let b = nl.b();
    if b > 0.0 && (s.abs() - b).abs() < 1e-6 * beta {
        return Err(Error::Domain(format!(
            "s = {s:e} inside the guard band around |s| = b = {b:e}"
        )));
    }
    Ok(nl.ratio(s))
}

/// Evenly spaced sample grid, inclusive of both ends.
pub fn sample_grid(a: f64, b: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    (0..count)
        .map(|i| a + (b - a) * i as f64 / (count - 1) as f64)
        .collect()
}

/// H(s) = -4(n-2) int_beta^{|s|} (F/f), the even primitive normalized so
/// H(+-beta) = 0. Closed forms for the piecewise-linear and pure-power
/// families; adaptive Simpson (abs tol 1e-12) otherwise.
pub fn h_of(nl: &Nonlinearity, n: f64, s: f64) -> Result<f64> {
    let x = s.abs();
    let beta = nl.beta();
    if n == 2.0 {
        return Ok(0.0);
    }
    if nl.b() > 0.0 && x < beta * (1.0 - 1e-12) {
        return Err(Error::Domain(format!(
            "H is evaluated for |s| >= beta, got |s| = {x:e}"
        )));
    }
    use crate::nonlinearity::Family;
    match nl.family() {
        Family::Troy => {
            // F/f = (t-1)/2 - 1/(4(t-1)) on [beta, infinity)
            let d = x - 1.0;
            let db = beta - 1.0;
            Ok(-(n - 2.0) * (d * d - db * db - (d / db).ln()))
        }
        Family::PurePower { q } => Ok(-2.0 * (n - 2.0) * x * x / (q + 1.0)),
        _ => {
            let integral = adaptive_simpson(&|t: f64| nl.ratio(t), beta, x, 1e-12)?;
            Ok(-4.0 * (n - 2.0) * integral)
        }
    }
}

/// Q at an extremal point (r u' -> 0): Q = -2 t^2 F(value) + H(value).
/// Covers the initial point, where t = 0 gives Q = H(alpha).
pub fn q_at_extremum(nl: &Nonlinearity, n: f64, t: f64, value: f64) -> Result<f64> {
    Ok(-2.0 * t * t * nl.big_f(value) + h_of(nl, n, value)?)
}

/// P at an extremal point: the u'-weighted terms vanish, leaving -2 t^n F.
pub fn p_at_extremum(nl: &Nonlinearity, n: f64, t: f64, value: f64) -> f64 {
    -2.0 * t.powf(n) * nl.big_f(value)
}

fn radicand(nl: &Nonlinearity, du: f64, s: f64) -> Result<f64> {
    let v = du * du + 2.0 * nl.big_f(s);
    if v < -1e-14 {
        return Err(Error::Domain(format!(
            "negative radicand {v:e} at s = {s:e}: outside the I > 0 region"
        )));
    }
    Ok(v.max(0.0))
}

fn check_w_domain(branch: &Branch, s: f64) -> Result<()> {
    let nl = &branch.traj.nl;
    if nl.b() > 0.0 && s.abs() > branch.beta * (1.0 + 1e-9) {
        return Err(Error::Domain(format!(
            "|s| = {:e} beyond beta = {:e}: W traces live on [-beta, beta]",
            s.abs(),
            branch.beta
        )));
    }
    Ok(())
}

fn check_qp_domain(branch: &Branch, s: f64) -> Result<()> {
    if branch.traj.nl.b() > 0.0 && s.abs() < branch.beta * (1.0 - 1e-9) {
        return Err(Error::Domain(format!(
            "|s| = {:e} inside (-beta, beta): Q/P traces live outside",
            s.abs()
        )));
    }
    Ok(())
}

/// W(s) = r(s) sqrt(u'^2 + 2F(s)) on the energy-positive core |s| <= beta.
pub fn trace_w(branch: &Branch, s_grid: &[f64]) -> Result<FunctionalTrace> {
    trace_w_impl(branch, s_grid, false)
}

/// The r^{n-1}-weighted W.
pub fn trace_wtilde(branch: &Branch, s_grid: &[f64]) -> Result<FunctionalTrace> {
    trace_w_impl(branch, s_grid, true)
}

fn trace_w_impl(branch: &Branch, s_grid: &[f64], weighted: bool) -> Result<FunctionalTrace> {
    let nl = &branch.traj.nl;
    let n = branch.traj.n;
    let mut tr = FunctionalTrace {
        tag: if weighted {
            FunctionalTag::Wtilde
        } else {
            FunctionalTag::W
        },
        s: Vec::with_capacity(s_grid.len()),
        r: Vec::with_capacity(s_grid.len()),
        du: Vec::with_capacity(s_grid.len()),
        values: Vec::with_capacity(s_grid.len()),
        meta: meta_of(branch),
    };
    for &s in s_grid {
        check_w_domain(branch, s)?;
        let (r, y) = branch.r_of_s(s)?;
        let rad = radicand(nl, y[1], s)?;
        let weight = if weighted { r.powf(n - 1.0) } else { r };
        tr.s.push(s);
        tr.r.push(r);
        tr.du.push(y[1]);
        tr.values.push(weight * rad.sqrt());
    }
    Ok(tr)
}

/// Q(s) = -4(F/f) r u' - (r u')^2 - 2 r^2 F + H(s), traced for |s| >= beta.
pub fn trace_q(branch: &Branch, s_grid: &[f64]) -> Result<FunctionalTrace> {
    let nl = &branch.traj.nl;
    let n = branch.traj.n;
    let mut tr = FunctionalTrace {
        tag: FunctionalTag::Q,
        s: Vec::new(),
        r: Vec::new(),
        du: Vec::new(),
        values: Vec::new(),
        meta: meta_of(branch),
    };
    for &s in s_grid {
        check_qp_domain(branch, s)?;
        let ratio = checked_ratio(nl, s, branch.beta)?;
        let (r, y) = branch.r_of_s(s)?;
        let du = y[1];
        let rdu = r * du;
        let v = -4.0 * ratio * rdu - rdu * rdu - 2.0 * r * r * nl.big_f(s) + h_of(nl, n, s)?;
        tr.s.push(s);
        tr.r.push(r);
        tr.du.push(du);
        tr.values.push(v);
    }
    Ok(tr)
}

/// P(s) = -2n(F/f) r^{n-1} u' - r^n u'^2 - 2 r^n F on decreasing branches.
pub fn trace_p(branch: &Branch, s_grid: &[f64]) -> Result<FunctionalTrace> {
    if branch.dir != BranchDir::Decreasing {
        return Err(Error::Domain(
            "P is traced on decreasing branches; use the barred variant".into(),
        ));
    }
    trace_p_impl(branch, s_grid, FunctionalTag::P)
}

/// The increasing-branch variant of P (same assembly along r̄).
pub fn trace_pbar(branch: &Branch, s_grid: &[f64]) -> Result<FunctionalTrace> {
    if branch.dir != BranchDir::Increasing {
        return Err(Error::Domain(
            "the barred P is traced on increasing branches".into(),
        ));
    }
    trace_p_impl(branch, s_grid, FunctionalTag::Pbar)
}

fn trace_p_impl(branch: &Branch, s_grid: &[f64], tag: FunctionalTag) -> Result<FunctionalTrace> {
    let nl = &branch.traj.nl;
    let n = branch.traj.n;
    let mut tr = FunctionalTrace {
        tag,
        s: Vec::new(),
        r: Vec::new(),
        du: Vec::new(),
        values: Vec::new(),
        meta: meta_of(branch),
    };
    for &s in s_grid {
        check_qp_domain(branch, s)?;
        let ratio = checked_ratio(nl, s, branch.beta)?;
        let (r, y) = branch.r_of_s(s)?;
        let du = y[1];
        let rn1 = r.powf(n - 1.0);
        let v = -2.0 * n * ratio * rn1 * du - rn1 * r * du * du - 2.0 * rn1 * r * nl.big_f(s);
        tr.s.push(s);
        tr.r.push(r);
        tr.du.push(du);
        tr.values.push(v);
    }
    Ok(tr)
}

/// S12(s) = (r1/r2)^{n-1} u1'/u2' for same-orientation branches; `barred`
/// must match that orientation (increasing pairs are the barred variant).
pub fn trace_s12(
    branch1: &Branch,
    branch2: &Branch,
    s_grid: &[f64],
    barred: bool,
) -> Result<FunctionalTrace> {
    if branch1.dir != branch2.dir {
        return Err(Error::Domain(
            "S12 needs branches of the same orientation".into(),
        ));
    }
    let expect = if barred {
        BranchDir::Increasing
    } else {
        BranchDir::Decreasing
    };
    if branch1.dir != expect {
        return Err(Error::Domain(format!(
            "orientation mismatch: {} variant expects {} branches",
            if barred { "barred" } else { "unbarred" },
            if barred { "increasing" } else { "decreasing" }
        )));
    }
    let n = branch1.traj.n;
    let mut tr = FunctionalTrace {
        tag: if barred {
            FunctionalTag::S12bar
        } else {
            FunctionalTag::S12
        },
        s: Vec::new(),
        r: Vec::new(),
        du: Vec::new(),
        values: Vec::new(),
        meta: format!("1:[{}] 2:[{}]", meta_of(branch1), meta_of(branch2)),
    };
    for &s in s_grid {
        let (r1, du1) = branch1.eval(s)?;
        let (r2, du2) = branch2.eval(s)?;
        // branch1's extremal endpoint gives the limit value 0; an interior
        // vanishing of the second slope has no limit
        let at_endpoint1 = s == branch1.value_start() || s == branch1.value_end();
        if du2.abs() < 1e-13 && !(at_endpoint1 && du1.abs() < 1e-13) {
            return Err(Error::Domain(format!(
                "u2' vanishes at interior grid point s = {s:e}"
            )));
        }
        let v = if du1 == 0.0 {
            0.0
        } else {
            (r1 / r2).powf(n - 1.0) * du1 / du2
        };
        tr.s.push(s);
        tr.r.push(r1);
        tr.du.push(du1);
        tr.values.push(v);
    }
    Ok(tr)
}

/// H(s) sampled on an s-grid. H depends only on the family and n, so the
/// position and slope columns are zero.
pub fn trace_h(nl: &Nonlinearity, n: f64, s_grid: &[f64]) -> Result<FunctionalTrace> {
    let mut tr = FunctionalTrace {
        tag: FunctionalTag::H,
        s: Vec::with_capacity(s_grid.len()),
        r: vec![0.0; s_grid.len()],
        du: vec![0.0; s_grid.len()],
        values: Vec::with_capacity(s_grid.len()),
        meta: format!("n={n}"),
    };
    for &s in s_grid {
        tr.values.push(h_of(nl, n, s)?);
        tr.s.push(s);
    }
    Ok(tr)
}

/// I(r) = u'^2 + 2F(u) sampled on an r-grid.
pub fn trace_i(traj: &Trajectory, r_grid: &[f64]) -> Result<FunctionalTrace> {
    let nl = &traj.nl;
    let mut tr = FunctionalTrace {
        tag: FunctionalTag::I,
        s: Vec::new(),
        r: Vec::new(),
        du: Vec::new(),
        values: Vec::new(),
        meta: format!("alpha={:e} n={}", traj.alpha, traj.n),
    };
    for &r in r_grid {
        let y = traj.eval_refined(r)?;
        tr.s.push(y[0]);
        tr.r.push(r);
        tr.du.push(y[1]);
        tr.values.push(y[1] * y[1] + 2.0 * nl.big_f(y[0]));
    }
    Ok(tr)
}

/// The Dirichlet functional P(r) = -2n(F/f)(u) r^{n-1} u' - r^n u'^2
/// - 2 r^n F(u), for b = 0 families away from u-zeros.
pub fn dirichlet_p_of_r(traj: &Trajectory, r_grid: &[f64]) -> Result<FunctionalTrace> {
    let nl = &traj.nl;
    if nl.b() != 0.0 {
        return Err(Error::Domain(
            "the radius-parametrized P needs a b = 0 family".into(),
        ));
    }
    let n = traj.n;
    let guard = 1e-9 * f64::max(1.0, traj.alpha.abs());
    let mut tr = FunctionalTrace {
        tag: FunctionalTag::DirichletP,
        s: Vec::new(),
        r: Vec::new(),
        du: Vec::new(),
        values: Vec::new(),
        meta: format!("alpha={:e} n={}", traj.alpha, traj.n),
    };
    for &r in r_grid {
        let y = traj.eval_refined(r)?;
        let (u, du) = (y[0], y[1]);
        if u.abs() < guard {
            return Err(Error::Domain(format!(
                "grid point r = {r:e} has |u| = {:e} inside the u-zero guard band",
                u.abs()
            )));
        }
        let rn1 = r.powf(n - 1.0);
        let v = -2.0 * n * nl.ratio(u) * rn1 * du - rn1 * r * du * du - 2.0 * rn1 * r * nl.big_f(u);
        tr.s.push(u);
        tr.r.push(r);
        tr.du.push(du);
        tr.values.push(v);
    }
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::adaptive_simpson;
    use crate::radial_ode::{integrate, ProblemConfig};
    use crate::shooting::{classify_with_trajectory, find_bound_state, solve_dirichlet};

    fn tight_cfg(n: f64) -> ProblemConfig {
        ProblemConfig {
            rtol: 1e-12,
            atol: 1e-14,
            ..ProblemConfig::new(n, f64::NAN)
        }
    }

    fn troy_trajectory(alpha: f64, n: f64) -> Arc<Trajectory> {
        let nl = Nonlinearity::troy();
        let (_, traj) = classify_with_trajectory(&nl, n, alpha, &tight_cfg(n), 3).unwrap();
        Arc::new(traj)
    }

    #[test]
    fn h_closed_form_matches_quadrature_for_troy() {
        let nl = Nonlinearity::troy();
        let beta = nl.beta();
        assert_eq!(h_of(&nl, 3.0, beta).unwrap(), 0.0);
        assert_eq!(h_of(&nl, 3.0, -beta).unwrap(), 0.0);
        for x in [2.0, 2.5, 4.0, 7.0] {
            let via_quad = -4.0
                * (3.0 - 2.0)
                * adaptive_simpson(&|t: f64| nl.ratio(t), beta, x, 1e-13).unwrap();
            let closed = h_of(&nl, 3.0, x).unwrap();
            assert!(
                (closed - via_quad).abs() <= 1e-10 * (1.0 + closed.abs()),
                "H({x})"
            );
            assert_eq!(h_of(&nl, 3.0, -x).unwrap(), closed, "evenness at {x}");
        }
    }

    #[test]
    fn h_quadrature_path_and_pure_power_form() {
        let nl = Nonlinearity::power_diff(3.0, 1.0).unwrap();
        let beta = nl.beta();
        for x in [1.6, 2.0, 3.5] {
            let via_quad = -4.0 * adaptive_simpson(&|t: f64| nl.ratio(t), beta, x, 1e-13).unwrap();
            let h = h_of(&nl, 3.0, x).unwrap();
            assert!(
                (h - via_quad).abs() <= 1e-10 * (1.0 + h.abs()),
                "H({x}) for cubic"
            );
        }
        let pp = Nonlinearity::pure_power(0.5).unwrap();
        for x in [0.3, 1.0, 2.0] {
            let want = -2.0 * (3.0 - 2.0) * x * x / 1.5;
            assert!((h_of(&pp, 3.0, x).unwrap() - want).abs() <= 1e-14 * (1.0 + want.abs()));
        }
        // n = 2 collapses H entirely
        assert_eq!(h_of(&nl, 2.0, 3.0).unwrap(), 0.0);
        assert_eq!(h_of(&pp, 2.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn h_domain_requires_beta_for_positive_b() {
        let nl = Nonlinearity::troy();
        assert!(matches!(h_of(&nl, 3.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn branch_structure_of_the_linear_shot() {
        let nl = Nonlinearity::pure_power(1.0).unwrap();
        let mut cfg = tight_cfg(3.0);
        cfg.alpha = 1.0;
        cfg.r_max = 3.0 * std::f64::consts::PI;
        let traj = Arc::new(integrate(&nl, &cfg).unwrap());
        let branches = extract_branches(&traj, 0.0);
        assert_eq!(branches.len(), 3, "descent, ascent, terminal descent");
        assert_eq!(branches[0].dir, BranchDir::Decreasing);
        assert_eq!(branches[1].dir, BranchDir::Increasing);
        assert_eq!(branches[2].dir, BranchDir::Decreasing);
        // endpoint values sit at the extrema of sin(r)/r
        let t1 = 4.493409457909064f64;
        let want_m1 = t1.sin() / t1;
        assert!((branches[0].value_end() - want_m1).abs() <= 1e-9);
        assert!((branches[1].value_start() - want_m1).abs() <= 1e-9);
        // round trip through the inverse
        for s in sample_grid(want_m1 + 1e-3, 0.99, 7) {
            let (r, y) = branches[0].r_of_s(s).unwrap();
            assert!(
                (y[0] - s).abs() <= 1e-9 * (1.0 + s.abs()),
                "round trip at s = {s}"
            );
            assert!(
                (r.sin() / r - s).abs() <= 1e-8,
                "inverse against the closed form"
            );
        }
    }

    #[test]
    fn w_matches_the_closed_form_oracle_on_the_linear_family() {
        let nl = Nonlinearity::pure_power(1.0).unwrap();
        let mut cfg = tight_cfg(3.0);
        cfg.alpha = 1.0;
        cfg.r_max = 6.0;
        let traj = Arc::new(integrate(&nl, &cfg).unwrap());
        let branch = &extract_branches(&traj, 0.0)[0];
        for s in [0.2, 0.5, 0.8] {
            // independent inversion of sin(r)/r = s by bisection on [1e-6, pi]
            let (mut lo, mut hi) = (1e-6f64, std::f64::consts::PI);
            for _ in 0..200 {
                let m = 0.5 * (lo + hi);
                if m.sin() / m > s {
                    lo = m;
                } else {
                    hi = m;
                }
            }
            let r = 0.5 * (lo + hi);
            let du = r.cos() / r - r.sin() / (r * r);
            let want = r * (du * du + s * s).sqrt(); // 2F = s^2 for linear f
            let tr = trace_w(branch, &[s]).unwrap();
            assert!(
                (tr.values[0] - want).abs() <= 1e-8 * want,
                "W({s}): {} vs {want}",
                tr.values[0]
            );
        }
    }

    #[test]
    fn w_at_beta_reduces_to_r_times_slope() {
        let nl = Nonlinearity::troy();
        let traj = troy_trajectory(4.0, 3.0); // P side, descent reaches below beta
        let branch = &extract_branches(&traj, nl.beta())[0];
        let beta = nl.beta();
        let tr = trace_w(branch, &[beta]).unwrap();
        let (r, du) = branch.eval(beta).unwrap();
        assert!((tr.values[0] - r * du.abs()).abs() <= 1e-12 * (1.0 + r * du.abs()));
        // the weighted variant picks up r^{n-1}
        let trw = trace_wtilde(branch, &[beta]).unwrap();
        assert!((trw.values[0] - r * r * du.abs()).abs() <= 1e-10 * (1.0 + trw.values[0].abs()));
    }

    #[test]
    fn w_domain_violations_are_reported() {
        let nl = Nonlinearity::troy();
        let traj = troy_trajectory(4.0, 3.0);
        let branch = &extract_branches(&traj, nl.beta())[0];
        // beyond beta: domain error
        assert!(matches!(
            trace_w(branch, &[1.5 * nl.beta()]),
            Err(Error::Domain(_))
        ));
        // inside the turned-back region the energy has gone negative
        let m1 = branch.value_end();
        assert!(m1 > 0.0 && m1 < nl.beta());
        let s_bad = m1 + 0.01 * (branch.value_start() - m1);
        assert!(matches!(trace_w(branch, &[s_bad]), Err(Error::Domain(_))));
    }

    #[test]
    fn q_at_the_start_equals_h() {
        let nl = Nonlinearity::troy();
        let alpha = 2.5;
        let q0 = q_at_extremum(&nl, 3.0, 0.0, alpha).unwrap();
        assert_eq!(q0, h_of(&nl, 3.0, alpha).unwrap());
        // the trace approaches it as s -> alpha on the first descent branch
        let traj = troy_trajectory(alpha, 3.0);
        let branch = &extract_branches(&traj, nl.beta())[0];
        let s_near = alpha - 1e-4 * alpha;
        let tr = trace_q(branch, &[s_near]).unwrap();
        assert!(
            (tr.values[0] - q0).abs() <= 1e-3 * (1.0 + q0.abs()),
            "Q near the top {} vs H(alpha) {q0}",
            tr.values[0]
        );
    }

    #[test]
    fn p_at_extremal_endpoint_reduces_to_pressure_term() {
        let nl = Nonlinearity::troy();
        let traj = troy_trajectory(5.0, 3.0); // lands P_2: interior extremum in (-beta, 0)
        let branches = extract_branches(&traj, nl.beta());
        assert!(branches.len() >= 2);
        let descent = &branches[0];
        let t1 = descent.r_hi;
        let m1 = descent.value_end();
        let want = p_at_extremum(&nl, 3.0, t1, m1);
        assert!((want - (-2.0 * t1.powi(3) * nl.big_f(m1))).abs() <= 1e-12 * want.abs().max(1.0));
        // trace near the endpoint approaches the closed form (loose: u' -> 0)
        if m1 < -nl.beta() {
            let s_near = m1 + 1e-5 * (descent.value_start() - m1);
            let tr = trace_p(descent, &[s_near]).unwrap();
            assert!((tr.values[0] - want).abs() <= 1e-2 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn q_and_p_refuse_the_inner_interval() {
        let nl = Nonlinearity::troy();
        let traj = troy_trajectory(4.0, 3.0);
        let branch = &extract_branches(&traj, nl.beta())[0];
        assert!(matches!(
            trace_q(branch, &[0.5 * nl.beta()]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(trace_p(branch, &[-0.2]), Err(Error::Domain(_))));
    }

    #[test]
    fn p_orientation_is_enforced() {
        let nl = Nonlinearity::troy();
        let traj = troy_trajectory(9.3, 3.0); // past alpha*_2: has an ascent branch
        let branches = extract_branches(&traj, nl.beta());
        let ascent = branches
            .iter()
            .find(|b| b.dir == BranchDir::Increasing)
            .unwrap();
        assert!(matches!(trace_p(ascent, &[-2.0]), Err(Error::Domain(_))));
        let descent = &branches[0];
        assert!(matches!(trace_pbar(descent, &[2.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn s12_of_identical_branches_is_one() {
        let nl = Nonlinearity::troy();
        let traj = troy_trajectory(5.0, 3.0);
        let branch = &extract_branches(&traj, nl.beta())[0];
        let grid = sample_grid(branch.s_min() + 0.1, branch.s_max() - 0.1, 9);
        let tr = trace_s12(branch, branch, &grid, false).unwrap();
        for v in tr.values {
            assert!((v - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn derivative_identities_hold_on_a_near_critical_pair() {
        let nl = Nonlinearity::troy();
        let n = 3.0;
        let base = ProblemConfig::new(n, f64::NAN);
        let bs2 = find_bound_state(&nl, n, 2, (4.5, 50.0), &base, 1e-8).unwrap();
        let a_star = bs2.alpha_star;
        let t1 = troy_trajectory(a_star * (1.0 + 1e-3), n);
        let t2 = troy_trajectory(a_star * (1.0 + 2e-3), n);
        let b1 = &extract_branches(&t1, nl.beta())[0];
        let b2 = &extract_branches(&t2, nl.beta())[0];

        // five-point stencil: truncation O(h^4) keeps the comparison honest
        let h = 1e-3;
        let stencil = |s: f64| [s - 2.0 * h, s - h, s, s + h, s + 2.0 * h];
        let fd5 = |v: &[f64]| (-v[4] + 8.0 * v[3] - 8.0 * v[1] + v[0]) / (12.0 * h);
        let samples = sample_grid(nl.beta() + 0.05, t1.alpha - 0.05, 9);

        for &s in &samples {
            // Q' = (2(n-2) - 4(F/f)') r u'
            let tr = trace_q(b1, &stencil(s)).unwrap();
            let closed = (2.0 * (n - 2.0) - 4.0 * nl.ratio_deriv(s)) * tr.r[2] * tr.du[2];
            let scale = closed.abs().max(1.0);
            assert!(
                (fd5(&tr.values) - closed).abs() <= 1e-5 * scale,
                "qderiv at s = {s}"
            );

            // P' = (n - 2 - 2n(F/f)') r^{n-1} u'
            let trp = trace_p(b1, &stencil(s)).unwrap();
            let closed =
                (n - 2.0 - 2.0 * n * nl.ratio_deriv(s)) * trp.r[2].powf(n - 1.0) * trp.du[2];
            let scale = closed.abs().max(1.0);
            assert!(
                (fd5(&trp.values) - closed).abs() <= 1e-5 * scale,
                "pderiv at s = {s}"
            );

            // S12' = S12 f (r2'^2 - r1'^2) on the common descent domain
            let trs = trace_s12(b1, b2, &stencil(s), false).unwrap();
            let rp1 = 1.0 / trs.du[2];
            let rp2 = 1.0 / b2.eval(s).unwrap().1;
            let closed = trs.values[2] * nl.f(s) * (rp2 * rp2 - rp1 * rp1);
            let scale = closed.abs().max(1e-3);
            assert!(
                (fd5(&trs.values) - closed).abs() <= 1e-5 * scale,
                "sderiv at s = {s}"
            );
        }
    }

    #[test]
    fn w_derivative_sign_mechanism() {
        // h(p) = (-2F)/(p sqrt(p^2+2F)) + (n-2) p / sqrt(p^2+2F) decreases in p
        let n = 3.0;
        let h = |p: f64, big_f: f64| {
            let root = (p * p + 2.0 * big_f).sqrt();
            (-2.0 * big_f) / (p * root) + (n - 2.0) * p / root
        };
        for big_f in [-0.3, -0.1, -0.01] {
            for (p1, p2) in [(0.9, 1.0), (1.0, 2.0), (1.5, 4.0)] {
                if p1 * p1 + 2.0 * big_f <= 0.0 {
                    continue;
                }
                assert!(
                    h(p1, big_f) > h(p2, big_f),
                    "h not decreasing: F = {big_f}, p = ({p1}, {p2})"
                );
            }
        }
    }

    #[test]
    fn dirichlet_p_vanishes_at_origin_and_decreases() {
        let nl = Nonlinearity::pure_power(0.5).unwrap();
        let sol = solve_dirichlet(&nl, 3.0, 1.0, 0, &tight_cfg(3.0), (1e-3, 10.0)).unwrap();
        let traj = &sol.trajectory;
        let grid = sample_grid(2e-6, 0.95, 80);
        let tr = dirichlet_p_of_r(traj, &grid).unwrap();
        assert!(
            tr.values[0].abs() <= 1e-12,
            "P near 0 is {:e}",
            tr.values[0]
        );
        for w in tr.values.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9 * (1.0 + w[0].abs()),
                "P not decreasing: {w:?}"
            );
        }
        assert!(tr.values.iter().skip(5).all(|&v| v < 0.0));
        // the linear family shares the mechanism ((F/f)' = 1/2 > 1/6)
        let lin = Nonlinearity::pure_power(1.0).unwrap();
        let mut cfg = tight_cfg(3.0);
        cfg.alpha = 1.0;
        cfg.r_max = 3.0;
        let traj = integrate(&lin, &cfg).unwrap();
        let tr = dirichlet_p_of_r(&traj, &sample_grid(2e-6, 2.9, 50)).unwrap();
        for w in tr.values.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0].abs()));
        }
        // troy is rejected: the pole of F/f at b sits inside
        let ttraj = troy_trajectory(3.0, 3.0);
        assert!(matches!(
            dirichlet_p_of_r(&ttraj, &sample_grid(0.1, 1.0, 5)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn dirichlet_p_guards_zero_crossings() {
        let nl = Nonlinearity::pure_power(0.5).unwrap();
        let mut cfg = tight_cfg(3.0);
        cfg.alpha = 1.0;
        cfg.r_max = 5.0;
        let traj = integrate(&nl, &cfg).unwrap();
        let z1 = traj.events_of(EventKind::UZero).next().unwrap().r;
        assert!(matches!(
            dirichlet_p_of_r(&traj, &[z1]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn s12bar_vanishes_at_the_extremal_endpoint() {
        let nl = Nonlinearity::troy();
        let n = 3.0;
        let base = ProblemConfig::new(n, f64::NAN);
        let bs2 = find_bound_state(&nl, n, 2, (4.5, 50.0), &base, 1e-8).unwrap();
        let t1 = troy_trajectory(bs2.alpha_star * (1.0 + 1e-3), n);
        let t2 = troy_trajectory(bs2.alpha_star * (1.0 + 2e-3), n);
        let a1 = extract_branches(&t1, nl.beta());
        let a2 = extract_branches(&t2, nl.beta());
        let asc1 = a1.iter().find(|b| b.dir == BranchDir::Increasing).unwrap();
        let asc2 = a2.iter().find(|b| b.dir == BranchDir::Increasing).unwrap();
        let m1 = asc1.value_start();
        assert!(
            asc2.contains_s(m1),
            "m1 interior to the second ascent branch"
        );
        let tr = trace_s12(asc1, asc2, &[m1], true).unwrap();
        assert!(
            tr.values[0].abs() <= 1e-8,
            "Sbar12(m1) = {:e}",
            tr.values[0]
        );
    }

    #[test]
    fn trace_i_matches_node_energies() {
        let traj = troy_trajectory(3.0, 3.0);
        let rs: Vec<f64> = traj
            .nodes
            .iter()
            .skip(1)
            .step_by(7)
            .map(|nd| nd.r)
            .collect();
        let tr = trace_i(&traj, &rs).unwrap();
        for (i, &r) in rs.iter().enumerate() {
            let idx = traj.nodes.iter().position(|nd| nd.r == r).unwrap();
            assert!((tr.values[i] - traj.i_at_node(idx)).abs() <= 1e-12);
        }
    }
}
