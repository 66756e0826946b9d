//! Radial initial value problem
//!
//!   u'' + (n-1)/r u' + f(u) = 0,   u(0) = alpha, u'(0) = 0,
//!
//! integrated jointly with its variational equation
//!
//!   phi'' + (n-1)/r phi' + f'(u) phi = 0,   phi(0) = 1, phi'(0) = 0,
//!
//! by an adaptive Dormand-Prince 5(4) scheme started off the r = 0
//! singularity with a second-order series. Accepted nodes carry value and
//! derivative, giving a cubic Hermite dense output; sign-change events are
//! refined by re-integrating fresh single steps from the left node so event
//! states carry integration accuracy, not interpolation accuracy.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;

/// Configuration for one shot. `n` is the (real) dimension parameter,
/// `alpha` the initial height.
#[derive(Clone, Debug)]
pub struct ProblemConfig {
    pub n: f64,
    pub alpha: f64,
    /// Integration horizon in r.
    pub r_max: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Relative tolerance (in r) for event refinement.
    pub event_tol: f64,
    /// Series takeoff radius; `None` selects the default small radius.
    pub r0: Option<f64>,
    /// Whether the variational components are integrated.
    pub with_phi: bool,
}

impl ProblemConfig {
    pub fn new(n: f64, alpha: f64) -> Self {
        ProblemConfig {
            n,
            alpha,
            r_max: 50.0,
            rtol: 1e-10,
            atol: 1e-12,
            event_tol: 1e-11,
            r0: None,
            with_phi: true,
        }
    }

    pub fn default_r0(&self, nl: &Nonlinearity) -> f64 {
        1e-6 * f64::max(1.0, 1.0 / (1.0 + nl.f(self.alpha).abs()).sqrt())
    }
}

/// One accepted integration node: state and derivative of
/// [u, u', phi, phi'] at radius r.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Node {
    pub r: f64,
    pub y: [f64; 4],
    pub dy: [f64; 4],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    UZero,
    DuZero,
    PhiZero,
    IZero,
}

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::UZero => "u-zero",
            EventKind::DuZero => "du-zero",
            EventKind::PhiZero => "phi-zero",
            EventKind::IZero => "I-zero",
        }
    }
}

/// A refined sign-change event. `y` is the freshly integrated state at `r`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Event {
    pub kind: EventKind,
    pub r: f64,
    pub y: [f64; 4],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// Reached r_max.
    Horizon,
    /// The caller's stop predicate fired.
    ClassifierStop,
    /// Step size collapsed below resolution; state at the last node is valid.
    StepUnderflow,
}

/// An integrated shot: accepted nodes, refined events, and how it ended.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub n: f64,
    pub alpha: f64,
    pub nl: Nonlinearity,
    pub with_phi: bool,
    pub rtol: f64,
    pub atol: f64,
    pub event_tol: f64,
    pub nodes: Vec<Node>,
    pub events: Vec<Event>,
    pub termination: Termination,
}

struct OdeSys<'a> {
    nl: &'a Nonlinearity,
    n: f64,
    with_phi: bool,
    /// Magnitude floor for the argument of f' near u = 0, active only for
    /// families whose f' is unbounded at 0.
    u_clamp: f64,
    /// max(1, |alpha|); scales the crossing step cap.
    u_scale: f64,
}

impl OdeSys<'_> {
    fn rhs(&self, r: f64, y: &[f64; 4]) -> [f64; 4] {
        let c = (self.n - 1.0) / r;
        let mut out = [0.0; 4];
        out[0] = y[1];
        out[1] = -c * y[1] - self.nl.f(y[0]);
        if self.with_phi {
            let u = if self.u_clamp > 0.0 && y[0].abs() < self.u_clamp {
                self.u_clamp // f' is even, so the sign of the floor is free
            } else {
                y[0]
            };
            out[2] = y[3];
            out[3] = -c * y[3] - self.nl.df(u) * y[2];
        }
        out
    }

    /// Step cap near u = 0 for singular-f' families: 1e-3 of the local
    /// u'-based crossing scale, floored so the crossing completes.
    fn crossing_cap(&self, y: &[f64; 4]) -> f64 {
        if self.u_clamp == 0.0 {
            return f64::INFINITY;
        }
        let u = y[0].abs();
        let du = y[1].abs();
        if du == 0.0 || u >= 0.05 * self.u_scale {
            return f64::INFINITY;
        }
        let approaching = y[0] * y[1] < 0.0 || u < 1e-3 * self.u_scale;
        if !approaching {
            return f64::INFINITY;
        }
        1e-3 * (u + 1e-3 * self.u_scale) / du
    }
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy(y: &[f64; 4], h: f64, coefs: &[(f64, &[f64; 4])]) -> [f64; 4] {
    let mut out = *y;
    for i in 0..4 {
        let mut acc = 0.0;
        for (c, k) in coefs {
            acc += c * k[i];
        }
        out[i] += h * acc;
    }
    out
}

/// One Dormand-Prince step of size h from (r, y) with k1 = rhs(r, y) given.
/// Returns the fifth-order solution, the embedded error vector, and the
/// derivative at the endpoint (FSAL stage).
fn dp5_step(
    sys: &OdeSys,
    r: f64,
    y: &[f64; 4],
    k1: &[f64; 4],
    h: f64,
) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let y2 = axpy(y, h, &[(A21, k1)]);
    let k2 = sys.rhs(r + C2 * h, &y2);
    let y3 = axpy(y, h, &[(A31, k1), (A32, &k2)]);
    let k3 = sys.rhs(r + C3 * h, &y3);
    let y4 = axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]);
    let k4 = sys.rhs(r + C4 * h, &y4);
    let y5 = axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
    let k5 = sys.rhs(r + C5 * h, &y5);
    let y6 = axpy(
        y,
        h,
        &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
    );
    let k6 = sys.rhs(r + h, &y6);
    let ynew = axpy(
        y,
        h,
        &[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
    );
    let k7 = sys.rhs(r + h, &ynew);
    let mut err = [0.0; 4];
    for i in 0..4 {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    (ynew, err, k7)
}

/// Series takeoff state at radius r0: the regular solution has
/// u = alpha - f(alpha) r^2/(2n) + O(r^4) and phi = 1 - f'(alpha) r^2/(2n).
pub fn series_start(nl: &Nonlinearity, n: f64, alpha: f64, r0: f64) -> [f64; 4] {
    let fa = nl.f(alpha);
    let dfa = nl.df(alpha);
    [
        alpha - fa * r0 * r0 / (2.0 * n),
        -fa * r0 / n,
        1.0 - dfa * r0 * r0 / (2.0 * n),
        -dfa * r0 / n,
    ]
}

fn event_g(kind: EventKind, nl: &Nonlinearity, y: &[f64; 4]) -> f64 {
    match kind {
        EventKind::UZero => y[0],
        EventKind::DuZero => y[1],
        EventKind::PhiZero => y[2],
        EventKind::IZero => y[1] * y[1] + 2.0 * nl.big_f(y[0]),
    }
}

fn hermite(a: &Node, b: &Node, r: f64) -> [f64; 4] {
    let h = b.r - a.r;
    let t = (r - a.r) / h;
    let t2 = t * t;
    let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
    let h10 = t * (1.0 - t) * (1.0 - t);
    let h01 = t2 * (3.0 - 2.0 * t);
    let h11 = t2 * (t - 1.0);
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = h00 * a.y[i] + h10 * h * a.dy[i] + h01 * b.y[i] + h11 * h * b.dy[i];
    }
    out
}

fn hermite_deriv(a: &Node, b: &Node, r: f64) -> [f64; 4] {
    let h = b.r - a.r;
    let t = (r - a.r) / h;
    let d00 = (6.0 * t * t - 6.0 * t) / h;
    let d10 = 3.0 * t * t - 4.0 * t + 1.0;
    let d01 = (6.0 * t - 6.0 * t * t) / h;
    let d11 = 3.0 * t * t - 2.0 * t;
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = d00 * a.y[i] + d10 * a.dy[i] + d01 * b.y[i] + d11 * b.dy[i];
    }
    out
}

/// Refines a sign change of `g` inside [a.r, b.r]: coarse Hermite bisection
/// narrows the bracket cheaply, then bisection on freshly integrated single
/// steps from the left node pins the root to event accuracy. Falls back to
/// the full interval when interpolation misjudged the bracket.
/// Length to cut an accepted trial step so it ends at the first crossing of
/// a corner level of f, or None when the step straddles no corner. Crossings
/// within roundoff of the step start are the corner the previous cut landed
/// on and are ignored.
fn kink_cut(
    sys: &OdeSys,
    node: &Node,
    h: f64,
    ynew: &[f64; 4],
    k7: &[f64; 4],
    event_tol: f64,
) -> Option<f64> {
    let kinks = sys.nl.kink_heights();
    if kinks.is_empty() {
        return None;
    }
    let next = Node {
        r: node.r + h,
        y: *ynew,
        dy: *k7,
    };
    let mut best: Option<f64> = None;
    for &level in kinks {
        for c in [level, -level] {
            let (ga, gb) = (node.y[0] - c, ynew[0] - c);
            if ga == 0.0 || (gb != 0.0 && (ga > 0.0) == (gb > 0.0)) {
                continue;
            }
            let g = |y: &[f64; 4]| y[0] - c;
            let (rc, _) = refine_root(sys, node, &next, &g, event_tol);
            let hc = rc - node.r;
            if hc > 1e-12 * f64::max(1.0, node.r) && hc < h * (1.0 - 1e-9) {
                best = Some(best.map_or(hc, |b: f64| b.min(hc)));
            }
        }
    }
    best
}

fn refine_root(
    sys: &OdeSys,
    a: &Node,
    b: &Node,
    g: &dyn Fn(&[f64; 4]) -> f64,
    event_tol: f64,
) -> (f64, [f64; 4]) {
    let h = b.r - a.r;
    let tol = event_tol * f64::max(1.0, b.r);
    let fresh = |r: f64| -> [f64; 4] {
        if r <= a.r {
            return a.y;
        }
        let (y, _, _) = dp5_step(sys, a.r, &a.y, &a.dy, r - a.r);
        y
    };

    let ga = g(&a.y);
    let gb = g(&b.y);
    if ga == 0.0 {
        return (a.r, a.y);
    }
    if gb == 0.0 {
        return (b.r, b.y);
    }

    // coarse phase on the interpolant
    let coarse_width = f64::max(1e-4 * h, 8.0 * tol);
    let (mut lo, mut hi) = (a.r, b.r);
    let mut g_lo = ga;
    while hi - lo > coarse_width {
        let mid = 0.5 * (lo + hi);
        let gm = g(&hermite(a, b, mid));
        if gm == 0.0 || gm.is_nan() {
            break;
        }
        if (gm > 0.0) == (g_lo > 0.0) {
            lo = mid;
            g_lo = gm;
        } else {
            hi = mid;
        }
    }

    // fresh phase; re-widen if the interpolant misplaced the bracket
    let mut f_lo = fresh(lo);
    let mut f_hi = fresh(hi);
    let (mut g_lo, mut g_hi) = (g(&f_lo), g(&f_hi));
    if (g_lo > 0.0) == (g_hi > 0.0) {
        lo = a.r;
        hi = b.r;
        f_lo = a.y;
        f_hi = b.y;
        g_lo = ga;
        g_hi = gb;
    }
    let _ = g_hi;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = fresh(mid);
        let gm = g(&fm);
        if gm == 0.0 {
            return (mid, fm);
        }
        if (gm > 0.0) == (g_lo > 0.0) {
            lo = mid;
            f_lo = fm;
            g_lo = gm;
        } else {
            hi = mid;
            f_hi = fm;
        }
    }
    let _ = f_lo;
    (hi, f_hi)
}

/// Integrates until the horizon or until `stop` returns true after an
/// accepted node (events of that step are already recorded when it runs).
pub fn integrate_until<F: FnMut(&Trajectory) -> bool>(
    nl: &Nonlinearity,
    cfg: &ProblemConfig,
    mut stop: F,
) -> Result<Trajectory> {
    if !(cfg.n.is_finite() && cfg.n >= 2.0) {
        return Err(Error::BadParameter(format!(
            "dimension n must be >= 2, got {}",
            cfg.n
        )));
    }
    if !cfg.alpha.is_finite() {
        return Err(Error::BadParameter("alpha must be finite".into()));
    }
    if !(cfg.rtol > 0.0 && cfg.atol > 0.0 && cfg.event_tol > 0.0) {
        return Err(Error::BadParameter("tolerances must be positive".into()));
    }
    let r0 = cfg.r0.unwrap_or_else(|| cfg.default_r0(nl));
    if !(r0 > 0.0 && r0 < cfg.r_max) {
        return Err(Error::BadParameter(format!(
            "need 0 < r0 < r_max, got r0={r0}, r_max={}",
            cfg.r_max
        )));
    }

    let sys = OdeSys {
        nl,
        n: cfg.n,
        with_phi: cfg.with_phi,
        u_clamp: if nl.df_unbounded_at_zero() {
            1e-12 * f64::max(1.0, cfg.alpha.abs())
        } else {
            0.0
        },
        u_scale: f64::max(1.0, cfg.alpha.abs()),
    };

    let y0 = series_start(nl, cfg.n, cfg.alpha, r0);
    let dy0 = sys.rhs(r0, &y0);
    let mut traj = Trajectory {
        n: cfg.n,
        alpha: cfg.alpha,
        nl: nl.clone(),
        with_phi: cfg.with_phi,
        rtol: cfg.rtol,
        atol: cfg.atol,
        event_tol: cfg.event_tol,
        nodes: vec![Node {
            r: r0,
            y: y0,
            dy: dy0,
        }],
        events: Vec::new(),
        termination: Termination::Horizon,
    };

    if stop(&traj) {
        traj.termination = Termination::ClassifierStop;
        return Ok(traj);
    }

    let ncomp = if cfg.with_phi { 4 } else { 2 };
    let mut h = 0.5 * r0;
    let mut node = traj.nodes[0];

    'outer: loop {
        if node.r >= cfg.r_max {
            traj.termination = Termination::Horizon;
            break;
        }
        let mut rejected = 0u32;
        loop {
            h = h.min(cfg.r_max - node.r).min(sys.crossing_cap(&node.y));
            if h < 1e-14 * f64::max(node.r, 1.0) {
                traj.termination = Termination::StepUnderflow;
                break 'outer;
            }
            let (ynew, errv, k7) = dp5_step(&sys, node.r, &node.y, &node.dy, h);
            let mut err = 0.0;
            let mut finite = true;
            for i in 0..ncomp {
                if !ynew[i].is_finite() {
                    finite = false;
                    break;
                }
                let sc = cfg.atol + cfg.rtol * f64::max(node.y[i].abs(), ynew[i].abs());
                err += (errv[i] / sc) * (errv[i] / sc);
            }
            let err = if finite {
                (err / ncomp as f64).sqrt()
            } else {
                f64::INFINITY
            };

            if err <= 1.0 {
                // a step straddling a corner of f carries uncontrolled local
                // error; retake it so it ends exactly at the crossing
                if let Some(hc) = kink_cut(&sys, &node, h, &ynew, &k7, cfg.event_tol) {
                    h = hc;
                    continue;
                }
                let is_last = h >= cfg.r_max - node.r - 1e-12 * cfg.r_max;
                let r_new = if is_last { cfg.r_max } else { node.r + h };
                let next = Node {
                    r: r_new,
                    y: ynew,
                    dy: k7,
                };

                // events in (node.r, r_new], ordered by refined position
                let mut step_events: Vec<Event> = Vec::new();
                for kind in [
                    EventKind::UZero,
                    EventKind::DuZero,
                    EventKind::PhiZero,
                    EventKind::IZero,
                ] {
                    if !cfg.with_phi && kind == EventKind::PhiZero {
                        continue;
                    }
                    let ga = event_g(kind, nl, &node.y);
                    let gb = event_g(kind, nl, &ynew);
                    if ga == 0.0 || ga.is_nan() || gb.is_nan() {
                        continue;
                    }
                    if gb == 0.0 || (ga > 0.0) != (gb > 0.0) {
                        let g = |y: &[f64; 4]| event_g(kind, nl, y);
                        let (re, ye) = refine_root(&sys, &node, &next, &g, cfg.event_tol);
                        step_events.push(Event { kind, r: re, y: ye });
                    }
                }
                step_events.sort_by(|a, b| a.r.total_cmp(&b.r));
                traj.events.extend(step_events);
                traj.nodes.push(next);
                node = next;

                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                h *= fac;

                if stop(&traj) {
                    traj.termination = Termination::ClassifierStop;
                    break 'outer;
                }
                break;
            } else {
                let fac = if err.is_finite() {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 0.9)
                } else {
                    0.2
                };
                h *= fac;
                rejected += 1;
                if rejected > 2000 {
                    return Err(Error::Numerical(format!(
                        "step control stalled at r = {:e}",
                        node.r
                    )));
                }
            }
        }
    }
    Ok(traj)
}

pub fn integrate(nl: &Nonlinearity, cfg: &ProblemConfig) -> Result<Trajectory> {
    integrate_until(nl, cfg, |_| false)
}

impl Trajectory {
    pub fn r_start(&self) -> f64 {
        self.nodes[0].r
    }

    pub fn r_end(&self) -> f64 {
        self.nodes[self.nodes.len() - 1].r
    }

    pub fn last(&self) -> &Node {
        self.nodes
            .last()
            .expect("trajectory has at least the takeoff node")
    }

    fn interval_of(&self, r: f64) -> Result<usize> {
        if r < self.r_start() || r > self.r_end() {
            return Err(Error::OutOfRange {
                what: "r".into(),
                value: r,
                lo: self.r_start(),
                hi: self.r_end(),
            });
        }
        // last interval whose left node is <= r
        let idx = self.nodes.partition_point(|nd| nd.r <= r);
        Ok(idx.saturating_sub(1).min(self.nodes.len() - 2))
    }

    /// Dense-output state via the cubic Hermite interpolant.
    pub fn eval(&self, r: f64) -> Result<[f64; 4]> {
        let i = self.interval_of(r)?;
        if r == self.nodes[i].r {
            return Ok(self.nodes[i].y);
        }
        if r == self.nodes[i + 1].r {
            return Ok(self.nodes[i + 1].y);
        }
        Ok(hermite(&self.nodes[i], &self.nodes[i + 1], r))
    }

    /// Derivative of the dense output (second derivatives come out of the
    /// derivative components).
    pub fn eval_deriv(&self, r: f64) -> Result<[f64; 4]> {
        let i = self.interval_of(r)?;
        Ok(hermite_deriv(&self.nodes[i], &self.nodes[i + 1], r))
    }

    /// State at r obtained by one fresh integrator step from the left node:
    /// carries local integration accuracy rather than interpolation accuracy.
    /// Preferred for functional traces and identity checks.
    pub fn eval_refined(&self, r: f64) -> Result<[f64; 4]> {
        let i = self.interval_of(r)?;
        let a = &self.nodes[i];
        if r == a.r {
            return Ok(a.y);
        }
        if r == self.nodes[i + 1].r {
            return Ok(self.nodes[i + 1].y);
        }
        let sys = self.sys();
        let (y, _, _) = dp5_step(&sys, a.r, &a.y, &a.dy, r - a.r);
        Ok(y)
    }

    /// Pucci-Serrin style energy I(r) = u'(r)^2 + 2F(u(r)).
    pub fn eval_i(&self, r: f64) -> Result<f64> {
        let y = self.eval_refined(r)?;
        Ok(y[1] * y[1] + 2.0 * self.nl.big_f(y[0]))
    }

    pub fn i_at_node(&self, idx: usize) -> f64 {
        let y = &self.nodes[idx].y;
        y[1] * y[1] + 2.0 * self.nl.big_f(y[0])
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// First radius where u crosses `target`, refined to event accuracy.
    pub fn first_u_crossing(&self, target: f64) -> Option<(f64, [f64; 4])> {
        let sys = self.sys();
        for w in self.nodes.windows(2) {
            let ga = w[0].y[0] - target;
            let gb = w[1].y[0] - target;
            if ga == 0.0 {
                return Some((w[0].r, w[0].y));
            }
            if gb == 0.0 || (ga > 0.0) != (gb > 0.0) {
                let g = |y: &[f64; 4]| y[0] - target;
                return Some(refine_root(&sys, &w[0], &w[1], &g, self.event_tol));
            }
        }
        None
    }

    fn sys(&self) -> OdeSys<'_> {
        OdeSys {
            nl: &self.nl,
            n: self.n,
            with_phi: self.with_phi,
            u_clamp: if self.nl.df_unbounded_at_zero() {
                1e-12 * f64::max(1.0, self.alpha.abs())
            } else {
                0.0
            },
            u_scale: f64::max(1.0, self.alpha.abs()),
        }
    }
}
