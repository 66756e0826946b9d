//! Named, machine-checkable assertions over trajectories, branches, and
//! near-critical pairs: energy monotonicity and its derivative law, Q/P
//! monotonicity, the sensitivity-function sign structure with its integral
//! identities, pairwise orderings and separations, and the scaling law of
//! the zero-boundary problem.

use std::collections::HashMap;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::{
    dirichlet_p_of_r, extract_branches, q_at_extremum, sample_grid, trace_p, trace_pbar, trace_q,
    trace_s12, trace_w, trace_wtilde, Branch, BranchDir,
};
use crate::nonlinearity::{check_hypotheses, HypId, HypothesisReport, Nonlinearity, Verdict};
use crate::radial_ode::{EventKind, ProblemConfig, Trajectory};
use crate::shooting::{
    classify_with_trajectory, find_bound_state, reaches_level, solve_dirichlet, BoundState,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped(String),
}

/// One named assertion with its worst margin. Margins are absolute
/// differences scaled by max(1, |value|); the sign convention is that a
/// positive margin means the assertion held with room to spare.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub status: CheckStatus,
    pub margin: f64,
    pub location: f64,
    /// Which variable `location` is: "r", "s", "alpha", or "" when moot.
    pub location_var: &'static str,
    pub inputs: String,
}

impl CheckResult {
    fn pass(name: &str, margin: f64, location: f64, var: &'static str, inputs: String) -> Self {
        CheckResult {
            name: name.into(),
            status: CheckStatus::Pass,
            margin,
            location,
            location_var: var,
            inputs,
        }
    }

    fn fail(name: &str, margin: f64, location: f64, var: &'static str, inputs: String) -> Self {
        CheckResult {
            name: name.into(),
            status: CheckStatus::Fail,
            margin,
            location,
            location_var: var,
            inputs,
        }
    }

    fn graded(
        name: &str,
        ok: bool,
        margin: f64,
        location: f64,
        var: &'static str,
        inputs: String,
    ) -> Self {
        if ok {
            Self::pass(name, margin, location, var, inputs)
        } else {
            Self::fail(name, margin, location, var, inputs)
        }
    }

    fn skipped(name: &str, reason: &str, inputs: String) -> Self {
        CheckResult {
            name: name.into(),
            status: CheckStatus::Skipped(reason.into()),
            margin: 0.0,
            location: f64::NAN,
            location_var: "",
            inputs,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }

    pub fn failed(&self) -> bool {
        self.status == CheckStatus::Fail
    }
}

fn digest(traj: &Trajectory) -> String {
    format!(
        "family={} n={} alpha={:e}",
        traj.nl.spec_string(),
        traj.n,
        traj.alpha
    )
}

fn digest_nl(nl: &Nonlinearity, n: f64) -> String {
    format!("family={} n={}", nl.spec_string(), n)
}

/// Running worst (smallest) scaled margin with its location.
struct WorstMargin {
    margin: f64,
    location: f64,
}

impl WorstMargin {
    fn new() -> Self {
        WorstMargin {
            margin: f64::INFINITY,
            location: f64::NAN,
        }
    }

    fn add(&mut self, margin: f64, location: f64) {
        if margin < self.margin || self.margin.is_infinite() {
            self.margin = margin;
            self.location = location;
        }
    }
}

// ---------------------------------------------------------------------------
// energy checks

/// Node-to-node monotonicity of I(r) = u'^2 + 2F(u), with slack
/// 1e-9 (1 + |I(r0)|).
pub fn check_i_monotone(traj: &Trajectory) -> CheckResult {
    let i0 = traj.i_at_node(0);
    let tol = 1e-9 * (1.0 + i0.abs());
    let scale = f64::max(1.0, i0.abs());
    let mut w = WorstMargin::new();
    for idx in 1..traj.nodes.len() {
        let drop = traj.i_at_node(idx - 1) - traj.i_at_node(idx);
        w.add(drop / scale, traj.nodes[idx].r);
    }
    if traj.nodes.len() < 2 {
        w.add(0.0, traj.nodes[0].r);
    }
    CheckResult::graded(
        "energy-monotone",
        w.margin >= -tol / scale,
        w.margin,
        w.location,
        "r",
        digest(traj),
    )
}

/// Per-step energy balance: the node-to-node drop of I matches the
/// quadrature of -2(n-1) u'^2 / r over the step to 1e-6 relative, away
/// from event-bearing steps.
pub fn check_i_derivative(traj: &Trajectory) -> CheckResult {
    let n = traj.n;
    let i0 = traj.i_at_node(0);
    // the relative comparison is floored at the resolution the accepted
    // states carry: tiny per-step drops cannot be resolved past the step
    // error of the underlying integration
    let floor = f64::max(1e-9, 100.0 * traj.rtol) * (1.0 + i0.abs());
    let rhs = |r: f64, y: &[f64; 4]| -2.0 * (n - 1.0) * y[1] * y[1] / r;
    // families with f' unbounded at zero degrade step accuracy in a band
    // around each u-zero, not just at the refined crossing itself
    let u_band = if traj.nl.df_unbounded_at_zero() {
        1e-4 * f64::max(1.0, traj.alpha.abs())
    } else {
        0.0
    };
    let mut w = WorstMargin::new();
    let mut checked = 0usize;
    'steps: for idx in 0..traj.nodes.len() - 1 {
        let (a, b) = (traj.nodes[idx], traj.nodes[idx + 1]);
        if a.y[0].abs() < u_band || b.y[0].abs() < u_band {
            continue;
        }
        // skip steps touching an event, where I' is about to change regime
        let pad_lo = if idx > 0 { traj.nodes[idx - 1].r } else { a.r };
        let pad_hi = if idx + 2 < traj.nodes.len() {
            traj.nodes[idx + 2].r
        } else {
            b.r
        };
        for e in &traj.events {
            if e.r >= pad_lo && e.r <= pad_hi {
                continue 'steps;
            }
        }
        let h = b.r - a.r;
        if h <= 0.0 {
            continue;
        }
        // two Simpson panels keep the quadrature truncation well under tol
        let mut quad = 0.0;
        let mut ok = true;
        for (lo, lo_y, hi, hi_y) in [
            (a.r, Some(a.y), a.r + 0.5 * h, None),
            (a.r + 0.5 * h, None, b.r, Some(b.y)),
        ] {
            let ylo = match lo_y {
                Some(y) => y,
                None => match traj.eval_refined(lo) {
                    Ok(y) => y,
                    Err(_) => {
                        ok = false;
                        break;
                    }
                },
            };
            let yhi = match hi_y {
                Some(y) => y,
                None => match traj.eval_refined(hi) {
                    Ok(y) => y,
                    Err(_) => {
                        ok = false;
                        break;
                    }
                },
            };
            let mid = 0.5 * (lo + hi);
            let ymid = match traj.eval_refined(mid) {
                Ok(y) => y,
                Err(_) => {
                    ok = false;
                    break;
                }
            };
            quad += (hi - lo) / 6.0 * (rhs(lo, &ylo) + 4.0 * rhs(mid, &ymid) + rhs(hi, &yhi));
        }
        if !ok {
            continue;
        }
        let di = traj.i_at_node(idx + 1) - traj.i_at_node(idx);
        let residual = (di - quad).abs() / f64::max(quad.abs(), floor);
        w.add(1e-6 - residual, a.r + 0.5 * h);
        checked += 1;
    }
    if checked == 0 {
        return CheckResult::skipped(
            "energy-derivative",
            "no event-free steps to check",
            digest(traj),
        );
    }
    CheckResult::graded(
        "energy-derivative",
        w.margin >= 0.0,
        w.margin,
        w.location,
        "r",
        digest(traj),
    )
}

// ---------------------------------------------------------------------------
// Q / P monotonicity

fn hypotheses_for(traj: &Trajectory) -> HypothesisReport {
    let s_max = f64::max(traj.alpha.abs(), traj.nl.beta() * 1.5) * (1.0 + 1e-9);
    check_hypotheses(&traj.nl, traj.n, s_max, 2001)
}

/// The |s| >= beta sub-intervals of a branch's value range, in ascending s.
fn outer_segments(branch: &Branch) -> Vec<(f64, f64)> {
    let beta = branch.beta;
    let (lo, hi) = (branch.s_min(), branch.s_max());
    let min_len = 1e-6 * (1.0 + hi.abs().max(lo.abs()));
    let mut segs = Vec::new();
    if lo < -beta {
        let top = hi.min(-beta);
        if top - lo > min_len {
            segs.push((lo, top));
        }
    }
    if hi > beta {
        let bot = lo.max(beta);
        if hi - bot > min_len {
            segs.push((bot, hi));
        }
    }
    if beta == 0.0 && segs.is_empty() && hi - lo > min_len {
        segs.push((lo, hi));
    }
    segs
}

fn check_trace_monotone(
    name: &str,
    branch: &Branch,
    required: HypId,
    tracer: impl Fn(&Branch, &[f64]) -> Result<crate::functionals::FunctionalTrace>,
) -> CheckResult {
    let traj = branch.trajectory();
    let inputs = format!(
        "{} branch=[{:e},{:e}]",
        digest(traj),
        branch.r_lo,
        branch.r_hi
    );
    let hyps = hypotheses_for(traj);
    if !hyps.passes(required) {
        let reason = format!(
            "hypothesis ({}) not established at n = {}",
            required.label(),
            traj.n
        );
        return CheckResult::skipped(name, &reason, inputs);
    }
    let mut w = WorstMargin::new();
    let mut any = false;
    for (lo, hi) in outer_segments(branch) {
        let grid = sample_grid(lo, hi, 257);
        let tr = match tracer(branch, &grid) {
            Ok(tr) => tr,
            Err(e) => {
                return CheckResult::fail(
                    name,
                    f64::NEG_INFINITY,
                    lo,
                    "s",
                    format!("{inputs}; error: {e}"),
                );
            }
        };
        for i in 0..tr.values.len() - 1 {
            let scale = f64::max(1.0, tr.values[i].abs().max(tr.values[i + 1].abs()));
            w.add((tr.values[i + 1] - tr.values[i]) / scale, tr.s[i]);
            any = true;
        }
    }
    if !any {
        return CheckResult::skipped(name, "branch has no |s| >= beta segment", inputs);
    }
    CheckResult::graded(name, w.margin >= -1e-6, w.margin, w.location, "s", inputs)
}

/// Q is non-decreasing in s along a decreasing branch (checked on the
/// |s| >= beta segments by successive differences of the trace).
pub fn check_q_monotone(branch: &Branch) -> Result<CheckResult> {
    if branch.dir != BranchDir::Decreasing {
        return Err(Error::Domain(
            "Q monotonicity is stated for decreasing branches".into(),
        ));
    }
    Ok(check_trace_monotone(
        "q-monotone",
        branch,
        HypId::F4Prime,
        trace_q,
    ))
}

/// P (or its increasing-branch variant) is non-decreasing in s on the
/// |s| >= beta segments.
pub fn check_p_monotone(branch: &Branch) -> Result<CheckResult> {
    match branch.dir {
        BranchDir::Decreasing => Ok(check_trace_monotone(
            "p-monotone",
            branch,
            HypId::F4,
            trace_p,
        )),
        BranchDir::Increasing => Ok(check_trace_monotone(
            "p-monotone",
            branch,
            HypId::F4,
            trace_pbar,
        )),
    }
}

// ---------------------------------------------------------------------------
// sensitivity-function structure

fn first_descent(branches: &[Branch]) -> Option<&Branch> {
    branches.first().filter(|b| b.dir == BranchDir::Decreasing)
}

/// Radius where the first descent passes through level `s`, if it does.
fn descent_radius(branches: &[Branch], s: f64) -> Option<f64> {
    let b0 = first_descent(branches)?;
    if !b0.contains_s(s) {
        return None;
    }
    b0.r_of_s(s).ok().map(|(r, _)| r)
}

/// Sign structure of the sensitivity function: positive core before the
/// beta radius, a zero between consecutive extremal radii, and the
/// conditional negative tail up to the b radius.
pub fn check_phi(traj: &Arc<Trajectory>, beta: f64, b: f64) -> Result<Vec<CheckResult>> {
    if !traj.with_phi {
        return Err(Error::Domain(
            "trajectory carries no sensitivity columns".into(),
        ));
    }
    let inputs = digest(traj);
    let hyps = hypotheses_for(traj);
    let branches = extract_branches(traj, beta);
    let r_beta = descent_radius(&branches, beta);
    let mut out = Vec::new();

    // (1) positive before the beta radius
    if !hyps.passes(HypId::F3) {
        out.push(CheckResult::skipped(
            "phi-positive-core",
            &format!(
                "hypothesis (f3) not established ({:?})",
                hyps.get(HypId::F3).verdict
            ),
            inputs.clone(),
        ));
    } else {
        let r_stop = r_beta.unwrap_or(traj.last().r);
        let mut w = WorstMargin::new();
        for nd in &traj.nodes {
            if nd.r >= r_stop {
                break;
            }
            w.add(nd.y[2] / f64::max(1.0, nd.y[2].abs()), nd.r);
        }
        if w.margin.is_infinite() {
            w.add(1.0, traj.nodes[0].r);
        }
        out.push(CheckResult::graded(
            "phi-positive-core",
            w.margin > 0.0,
            w.margin,
            w.location,
            "r",
            inputs.clone(),
        ));
    }

    // (2) at least one phi-zero strictly between consecutive extremal radii
    {
        let ts: Vec<f64> = traj.events_of(EventKind::DuZero).map(|e| e.r).collect();
        let phi_zeros: Vec<f64> = traj.events_of(EventKind::PhiZero).map(|e| e.r).collect();
        let mut w = WorstMargin::new();
        for pair in ts.windows(2) {
            let count = phi_zeros
                .iter()
                .filter(|&&z| z > pair[0] && z < pair[1])
                .count();
            w.add(count as f64 - 1.0, pair[0]);
        }
        if ts.len() < 2 {
            w.add(0.0, f64::NAN);
        }
        out.push(CheckResult::graded(
            "phi-zero-interlace",
            w.margin >= 0.0,
            w.margin,
            w.location,
            "r",
            inputs.clone(),
        ));
    }

    // (3) negative from the first phi-zero to the b radius, with
    // non-positive slope there; conditional on that zero preceding the
    // beta radius
    let name = "phi-negative-tail";
    if !(hyps.passes(HypId::F4) && hyps.passes(HypId::F5)) {
        out.push(CheckResult::skipped(
            name,
            "hypotheses (f4)-(f5) not established",
            inputs,
        ));
        return Ok(out);
    }
    if b <= 0.0 {
        out.push(CheckResult::skipped(
            name,
            "the family has no dead-core edge",
            inputs,
        ));
        return Ok(out);
    }
    let z = traj.events_of(EventKind::PhiZero).next().map(|e| e.r);
    let r_b = descent_radius(&branches, b);
    match (z, r_b) {
        (Some(z), Some(rb)) if z < rb => {
            let mut w = WorstMargin::new();
            for nd in &traj.nodes {
                if nd.r <= z || nd.r >= rb {
                    continue;
                }
                w.add(-nd.y[2] / f64::max(1.0, nd.y[2].abs()), nd.r);
            }
            let dphi = traj.eval_refined(rb)?[3];
            w.add((1e-9 - dphi) / f64::max(1.0, dphi.abs()), rb);
            out.push(CheckResult::graded(
                name,
                w.margin >= 0.0,
                w.margin,
                w.location,
                "r",
                inputs,
            ));
        }
        (None, _) => {
            out.push(CheckResult::skipped(
                name,
                "no sensitivity zero located",
                inputs,
            ));
        }
        (_, None) => {
            out.push(CheckResult::skipped(
                name,
                "descent does not reach the b level",
                inputs,
            ));
        }
        _ => {
            out.push(CheckResult::skipped(
                name,
                "the first sensitivity zero lies beyond the b radius",
                inputs,
            ));
        }
    }
    Ok(out)
}

/// Composite Simpson over the trajectory's own steps restricted to [a, b],
/// with freshly integrated states at interval ends and midpoints.
fn quad_nodes(traj: &Trajectory, a: f64, b: f64, g: &dyn Fn(f64, &[f64; 4]) -> f64) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let mut cuts: Vec<f64> = vec![a];
    for nd in &traj.nodes {
        if nd.r > a && nd.r < b {
            cuts.push(nd.r);
        }
    }
    cuts.push(b);
    let mut points = Vec::with_capacity(cuts.len());
    for &r in &cuts {
        points.push((r, g(r, &traj.eval_refined(r)?)));
    }
    let mut mids = Vec::with_capacity(cuts.len() - 1);
    for pair in cuts.windows(2) {
        let m = 0.5 * (pair[0] + pair[1]);
        mids.push(g(m, &traj.eval_refined(m)?));
    }
    Ok(crate::quad::composite_simpson(&points, &mids))
}

/// Integral identity tying the sensitivity function to the shifted
/// nonlinearity: the weighted quadrature of f'(u)(u - beta) - f(u) against
/// phi equals the boundary term r^{n-1} (u' phi - phi' (u - beta)),
/// sampled at 10 radii before the beta radius.
pub fn check_variational_identity(traj: &Arc<Trajectory>, beta: f64) -> Result<CheckResult> {
    if !traj.with_phi {
        return Err(Error::Domain(
            "trajectory carries no sensitivity columns".into(),
        ));
    }
    let inputs = digest(traj);
    let nl = traj.nl.clone();
    let n = traj.n;
    let branches = extract_branches(traj, beta);
    let r_stop = descent_radius(&branches, beta).unwrap_or(traj.last().r);
    let r_first = traj.nodes[0].r;
    let boundary = |r: f64, y: &[f64; 4]| r.powf(n - 1.0) * (y[1] * y[2] - y[3] * (y[0] - beta));
    let integrand = move |r: f64, y: &[f64; 4]| {
        r.powf(n - 1.0) * y[2] * (nl.df(y[0]) * (y[0] - beta) - nl.f(y[0]))
    };
    let mut w = WorstMargin::new();
    let b0 = boundary(r_first, &traj.nodes[0].y);
    for j in 1..=10 {
        let r = r_first + (r_stop * (1.0 - 1e-9) - r_first) * j as f64 / 10.0;
        let lhs = quad_nodes(traj, r_first, r, &integrand)?;
        let rhs = boundary(r, &traj.eval_refined(r)?) - b0;
        let residual = (lhs - rhs).abs() / (1.0 + rhs.abs());
        w.add(1e-6 - residual, r);
    }
    Ok(CheckResult::graded(
        "variational-identity",
        w.margin >= 0.0,
        w.margin,
        w.location,
        "r",
        inputs,
    ))
}

/// Wronskian-style identity between the slope and the sensitivity function:
/// the boundary difference of r^{n-1} (u'' phi - u' phi') over a window
/// equals the quadrature of (n-1) r^{n-3} u' phi, checked between
/// consecutive u-zeros (whole span when fewer than two).
pub fn check_wronskian(traj: &Arc<Trajectory>) -> Result<CheckResult> {
    if !traj.with_phi {
        return Err(Error::Domain(
            "trajectory carries no sensitivity columns".into(),
        ));
    }
    let inputs = digest(traj);
    let nl = traj.nl.clone();
    let n = traj.n;
    let boundary = move |r: f64, y: &[f64; 4]| {
        let ddu = -(n - 1.0) / r * y[1] - nl.f(y[0]);
        r.powf(n - 1.0) * (ddu * y[2] - y[1] * y[3])
    };
    let integrand = |r: f64, y: &[f64; 4]| (n - 1.0) * r.powf(n - 3.0) * y[1] * y[2];
    let zeros: Vec<f64> = traj.events_of(EventKind::UZero).map(|e| e.r).collect();
    let windows: Vec<(f64, f64)> = if zeros.len() >= 2 {
        zeros.windows(2).map(|w| (w[0], w[1])).collect()
    } else {
        vec![(traj.nodes[0].r, traj.last().r)]
    };
    let mut w = WorstMargin::new();
    for (a, b) in windows {
        let ba = boundary(a, &traj.eval_refined(a)?);
        let bb = boundary(b, &traj.eval_refined(b)?);
        let quad = quad_nodes(traj, a, b, &integrand)?;
        let scale = 1.0 + ba.abs().max(bb.abs()).max(quad.abs());
        let residual = (bb - ba - quad).abs() / scale;
        w.add(1e-6 - residual, a);
    }
    Ok(CheckResult::graded(
        "wronskian-identity",
        w.margin >= 0.0,
        w.margin,
        w.location,
        "r",
        inputs,
    ))
}

/// The sensitivity column against a central finite difference of u over
/// the takeoff height, at 10 shared radii before the first u-zero (beyond
/// it the difference quotient loses accuracy near a critical height).
pub fn check_phi_fd(
    nl: &Nonlinearity,
    n: f64,
    alpha: f64,
    cfg: &ProblemConfig,
) -> Result<CheckResult> {
    let inputs = format!("{} alpha={alpha:e}", digest_nl(nl, n));
    let d_alpha = 1e-6 * alpha;
    let center_cfg = ProblemConfig {
        n,
        alpha,
        with_phi: true,
        ..cfg.clone()
    };
    let center = crate::radial_ode::integrate(nl, &center_cfg)?;
    let side = |a: f64| -> Result<Trajectory> {
        let c = ProblemConfig {
            n,
            alpha: a,
            with_phi: false,
            ..cfg.clone()
        };
        crate::radial_ode::integrate(nl, &c)
    };
    let plus = side(alpha + d_alpha)?;
    let minus = side(alpha - d_alpha)?;
    let reach = center.last().r.min(plus.last().r).min(minus.last().r);
    let r_hi = 0.999
        * center
            .events_of(EventKind::UZero)
            .next()
            .map(|e| e.r)
            .unwrap_or(reach)
            .min(reach);
    let r_lo = center.nodes[0].r.max(plus.nodes[0].r).max(minus.nodes[0].r);
    let mut w = WorstMargin::new();
    for j in 1..=10 {
        let r = r_lo + (r_hi - r_lo) * j as f64 / 10.0;
        let phi = center.eval_refined(r)?[2];
        let fd = (plus.eval_refined(r)?[0] - minus.eval_refined(r)?[0]) / (2.0 * d_alpha);
        let residual = (phi - fd).abs() / (1.0 + phi.abs());
        w.add(1e-4 - residual, r);
    }
    Ok(CheckResult::graded(
        "sensitivity-finite-difference",
        w.margin >= 0.0,
        w.margin,
        w.location,
        "r",
        inputs,
    ))
}

// ---------------------------------------------------------------------------
// scaling law

/// For the homogeneous family, Z_i(alpha) * alpha^{-(1-q)/2} is constant
/// across takeoff heights (1e-6 relative spread).
pub fn check_scaling(
    nl: &Nonlinearity,
    n: f64,
    alphas: &[f64],
    levels: usize,
) -> Result<CheckResult> {
    use crate::nonlinearity::Family;
    let q = match nl.family() {
        Family::PurePower { q } => *q,
        _ => {
            return Err(Error::BadParameter(
                "the scaling check needs the homogeneous family".into(),
            ))
        }
    };
    let inputs = format!("{} alphas={alphas:?}", digest_nl(nl, n));
    if alphas.is_empty() || levels == 0 {
        return Err(Error::BadParameter(
            "need at least one alpha and one level".into(),
        ));
    }
    let exponent = -(1.0 - q) / 2.0;
    let cfg = ProblemConfig::new(n, f64::NAN);
    let mut reduced: Vec<Vec<f64>> = vec![Vec::new(); levels];
    for &alpha in alphas {
        let (c, _) = classify_with_trajectory(nl, n, alpha, &cfg, levels)?;
        if c.zeros.len() < levels {
            return Err(Error::Horizon {
                r_max: cfg.r_max,
                what: format!("only {} zeros located at alpha = {alpha:e}", c.zeros.len()),
            });
        }
        for i in 0..levels {
            reduced[i].push(c.zeros[i].r * alpha.powf(exponent));
        }
    }
    let mut w = WorstMargin::new();
    for (i, row) in reduced.iter().enumerate() {
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let spread = row.iter().cloned().fold(f64::MIN, f64::max)
            - row.iter().cloned().fold(f64::MAX, f64::min);
        w.add(1e-6 - spread / mean.abs(), (i + 1) as f64);
    }
    Ok(CheckResult::graded(
        "reduced-zero-constancy",
        w.margin >= 0.0,
        w.margin,
        w.location,
        "",
        inputs,
    ))
}

// ---------------------------------------------------------------------------
// pair comparison

/// One strict ordering with its scaled margin. `holds` is the direction,
/// `conclusive` whether the margin clears 1e-10.
#[derive(Clone, Debug, Serialize)]
pub struct OrderingItem {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
    pub conclusive: bool,
}

fn ordering(name: String, lhs: f64, rhs: f64) -> OrderingItem {
    // margin convention: positive iff lhs > rhs
    let margin = (lhs - rhs) / f64::max(1.0, lhs.abs().max(rhs.abs()));
    OrderingItem {
        name,
        lhs,
        rhs,
        margin,
        holds: margin > 0.0,
        conclusive: margin.abs() > 1e-10,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WindowCount {
    pub r_lo: f64,
    pub r_hi: f64,
    pub count: usize,
    pub first_r: f64,
    pub first_value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub family: String,
    pub n: f64,
    pub k: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub orderings: Vec<OrderingItem>,
    pub windows: Vec<WindowCount>,
    /// u-value at the first intersection of the two descents.
    pub u_i: Option<f64>,
    pub separations: Vec<CheckResult>,
    pub inconclusive: bool,
}

impl ComparisonReport {
    pub fn ordering(&self, name: &str) -> Option<&OrderingItem> {
        self.orderings.iter().find(|o| o.name == name)
    }

    pub fn all_hold(&self) -> bool {
        self.orderings.iter().all(|o| o.holds)
            && self.windows.iter().all(|w| w.count >= 1)
            && self.separations.iter().all(|c| !c.failed())
    }
}

/// Extremal radii (origin included) and values of a trajectory.
fn extremal_points(traj: &Trajectory) -> (Vec<f64>, Vec<f64>) {
    let mut rs = vec![0.0];
    let mut vals = vec![traj.alpha];
    for e in traj.events_of(EventKind::DuZero) {
        rs.push(e.r);
        vals.push(e.y[0]);
    }
    (rs, vals)
}

/// Counts sign changes of u1 - u2 on the merged node grid of a window and
/// refines the first by bisection.
fn count_intersections(t1: &Trajectory, t2: &Trajectory, lo: f64, hi: f64) -> Result<WindowCount> {
    let inset = 1e-9 * (1.0 + hi);
    // neither shot is evaluable below its takeoff radius
    let lo = lo.max(t1.nodes[0].r).max(t2.nodes[0].r);
    let (lo, hi) = (lo + inset, hi - inset);
    if !(hi > lo) {
        return Ok(WindowCount {
            r_lo: lo,
            r_hi: hi,
            count: 0,
            first_r: f64::NAN,
            first_value: f64::NAN,
        });
    }
    let mut grid: Vec<f64> = t1
        .nodes
        .iter()
        .chain(t2.nodes.iter())
        .map(|nd| nd.r)
        .filter(|&r| r > lo && r < hi)
        .collect();
    grid.push(lo);
    grid.push(hi);
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    let g = |r: f64| -> Result<f64> { Ok(t1.eval(r)?[0] - t2.eval(r)?[0]) };
    let mut count = 0usize;
    let mut first: Option<(f64, f64)> = None;
    let mut prev_r = grid[0];
    let mut prev_g = g(prev_r)?;
    for &r in &grid[1..] {
        let cur = g(r)?;
        if prev_g == 0.0 || prev_g.signum() != cur.signum() {
            count += 1;
            if first.is_none() {
                let (mut a, mut b) = (prev_r, r);
                let mut ga = prev_g;
                for _ in 0..80 {
                    if b - a <= 1e-10 * (1.0 + b) {
                        break;
                    }
                    let m = 0.5 * (a + b);
                    let gm = g(m)?;
                    if gm == 0.0 || gm.signum() == ga.signum() {
                        a = m;
                        ga = gm;
                    } else {
                        b = m;
                    }
                }
                let rm = 0.5 * (a + b);
                first = Some((rm, t1.eval(rm)?[0]));
            }
        }
        prev_r = r;
        prev_g = cur;
    }
    let (first_r, first_value) = first.unwrap_or((f64::NAN, f64::NAN));
    Ok(WindowCount {
        r_lo: lo,
        r_hi: hi,
        count,
        first_r,
        first_value,
    })
}

/// Lowest height on a descent branch where u'^2 + 2F(u) is still
/// nonnegative. W traces are undefined below it: once the shot's energy
/// crosses zero it never recovers, so the cut is permanent.
fn energy_floor(br: &Branch) -> f64 {
    let traj = br.trajectory();
    let nl = &traj.nl;
    let mut edge = br.value_start();
    for nd in &traj.nodes {
        if nd.r < br.r_lo || nd.r > br.r_hi {
            continue;
        }
        if nd.y[1] * nd.y[1] + 2.0 * nl.big_f(nd.y[0]) < 0.0 {
            return edge;
        }
        edge = nd.y[0];
    }
    br.s_min()
}

/// The shared window for height-parametrized pair comparisons: within
/// [-beta, beta], above both branches' energy floors, below the first
/// intersection height.
fn core_window(br1: &Branch, br2: &Branch, beta: f64, upper: f64) -> (f64, f64) {
    let lo = f64::max(-beta, f64::max(energy_floor(br1), energy_floor(br2)));
    let hi = f64::min(beta, upper);
    (lo, hi)
}

/// Separation checks on the shared energy-positive core [-beta,
/// min(beta, u_i)): the lower shot runs wide (r1 > r2) with smaller W.
fn w_separation(
    br1: &Branch,
    br2: &Branch,
    beta: f64,
    upper: f64,
    inputs: &str,
) -> Vec<CheckResult> {
    let (lo, hi) = core_window(br1, br2, beta, upper);
    let names = ["radius-order", "w-separation", "wtilde-separation"];
    if !(hi > lo) {
        return names
            .iter()
            .map(|n| CheckResult::skipped(n, "empty admissible window", inputs.into()))
            .collect();
    }
    let span = hi - lo;
    let grid = sample_grid(lo + 1e-6 * span, hi - 1e-3 * span, 161);
    let traces = (
        trace_w(br1, &grid).and_then(|w1| trace_w(br2, &grid).map(|w2| (w1, w2))),
        trace_wtilde(br1, &grid).and_then(|w1| trace_wtilde(br2, &grid).map(|w2| (w1, w2))),
    );
    let mut out = Vec::new();
    match traces.0 {
        Ok((w1, w2)) => {
            let mut rw = WorstMargin::new();
            let mut ww = WorstMargin::new();
            for i in 0..grid.len() {
                rw.add(
                    (w1.r[i] - w2.r[i]) / f64::max(1.0, w1.r[i].max(w2.r[i])),
                    grid[i],
                );
                ww.add(
                    (w2.values[i] - w1.values[i])
                        / f64::max(1.0, w1.values[i].abs().max(w2.values[i].abs())),
                    grid[i],
                );
            }
            out.push(CheckResult::graded(
                names[0],
                rw.margin > 1e-10,
                rw.margin,
                rw.location,
                "s",
                inputs.into(),
            ));
            out.push(CheckResult::graded(
                names[1],
                ww.margin > 1e-10,
                ww.margin,
                ww.location,
                "s",
                inputs.into(),
            ));
        }
        Err(e) => {
            out.push(CheckResult::fail(
                names[0],
                f64::NEG_INFINITY,
                lo,
                "s",
                format!("{inputs}; error: {e}"),
            ));
            out.push(CheckResult::fail(
                names[1],
                f64::NEG_INFINITY,
                lo,
                "s",
                format!("{inputs}; error: {e}"),
            ));
        }
    }
    match traces.1 {
        Ok((w1, w2)) => {
            let mut ww = WorstMargin::new();
            for i in 0..grid.len() {
                ww.add(
                    (w2.values[i] - w1.values[i])
                        / f64::max(1.0, w1.values[i].abs().max(w2.values[i].abs())),
                    grid[i],
                );
            }
            out.push(CheckResult::graded(
                names[2],
                ww.margin > 1e-10,
                ww.margin,
                ww.location,
                "s",
                inputs.into(),
            ));
        }
        Err(e) => {
            out.push(CheckResult::fail(
                names[2],
                f64::NEG_INFINITY,
                lo,
                "s",
                format!("{inputs}; error: {e}"),
            ));
        }
    }
    out
}

/// Orders a near-critical pair: extremal values, Q at shared extrema,
/// zero radii and slopes, the ratio functional, intersection counts per
/// shared inter-extremal window, and the W separations.
pub fn compare_pair(
    traj1: &Arc<Trajectory>,
    traj2: &Arc<Trajectory>,
    k: usize,
) -> Result<ComparisonReport> {
    let nl = &traj1.nl;
    if nl.spec_string() != traj2.nl.spec_string() || traj1.n != traj2.n {
        return Err(Error::BadParameter(
            "pair must share family and dimension".into(),
        ));
    }
    let (a1, a2) = (traj1.alpha, traj2.alpha);
    if a1 > a2 {
        return Err(Error::BadParameter(
            "pair must be ordered alpha1 <= alpha2".into(),
        ));
    }
    let n = traj1.n;
    let beta = nl.beta();
    let z1: Vec<&crate::radial_ode::Event> = traj1.events_of(EventKind::UZero).collect();
    let z2: Vec<&crate::radial_ode::Event> = traj2.events_of(EventKind::UZero).collect();
    if k > 0 && (z1.len() < k - 1 || z2.len() < k - 1) {
        return Err(Error::Domain(format!(
            "pair not comparable at level {k}: zero counts {} and {}",
            z1.len(),
            z2.len()
        )));
    }
    let inputs = format!("family={} n={} pair=({a1:e},{a2:e})", nl.spec_string(), n);

    let (t_r1, t_v1) = extremal_points(traj1);
    let (t_r2, t_v2) = extremal_points(traj2);
    let shared = t_r1.len().min(t_r2.len());

    let mut orderings = Vec::new();
    for j in 0..shared {
        let (label, maximum) = if j % 2 == 0 {
            (format!("M{}", j / 2 + 1), true)
        } else {
            (format!("m{}", j / 2 + 1), false)
        };
        // maxima of the lower shot sit lower, minima sit higher
        let item = if maximum {
            ordering(label.clone(), t_v2[j], t_v1[j])
        } else {
            ordering(label.clone(), t_v1[j], t_v2[j])
        };
        orderings.push(OrderingItem {
            name: format!("{label}-order"),
            ..item
        });
        // Q at the shared extremum, where the primitive H is defined
        if t_v1[j].abs() >= beta && t_v2[j].abs() >= beta {
            let q1 = q_at_extremum(nl, n, t_r1[j], t_v1[j])?;
            let q2 = q_at_extremum(nl, n, t_r2[j], t_v2[j])?;
            orderings.push(ordering(format!("Q-at-{label}"), q1, q2));
        }
    }

    // intersections per shared inter-extremal window, terminal stub included
    let mut windows = Vec::new();
    for j in 0..shared.saturating_sub(1) {
        let lo = f64::max(t_r1[j], t_r2[j]);
        let hi = f64::min(t_r1[j + 1], t_r2[j + 1]);
        if hi > lo {
            windows.push(count_intersections(traj1, traj2, lo, hi)?);
        }
    }
    let tail_lo = f64::max(t_r1[shared - 1], t_r2[shared - 1]);
    let tail_hi = f64::min(traj1.last().r, traj2.last().r);
    if tail_hi > tail_lo * (1.0 + 1e-6) {
        windows.push(count_intersections(traj1, traj2, tail_lo, tail_hi)?);
    }
    let u_i = windows
        .first()
        .filter(|w| w.count >= 1)
        .map(|w| w.first_value);

    // k-th zero radius moves in, its slope steepens
    if z1.len() >= k && z2.len() >= k && k >= 1 {
        let (e1, e2) = (z1[k - 1], z2[k - 1]);
        orderings.push(ordering(format!("Z{k}-order"), e1.r, e2.r));
        orderings.push(ordering(
            format!("Z{k}-slope-order"),
            e2.y[1].abs(),
            e1.y[1].abs(),
        ));
    }

    let branches1 = extract_branches(traj1, beta);
    let branches2 = extract_branches(traj2, beta);
    let mut separations = Vec::new();
    let mut s12_items: Vec<OrderingItem> = Vec::new();
    if let (Some(b1), Some(b2)) = (first_descent(&branches1), first_descent(&branches2)) {
        let upper = u_i.unwrap_or(f64::min(b1.s_max(), b2.s_max()));
        separations = w_separation(b1, b2, beta, upper, &inputs);
        // ratio functional stays below one on the shared core
        let (lo, hi) = core_window(b1, b2, beta, upper);
        if hi > lo {
            let span = hi - lo;
            let grid = sample_grid(lo + 1e-6 * span, hi - 1e-3 * span, 101);
            if let Ok(tr) = trace_s12(b1, b2, &grid, false) {
                let worst = tr.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                s12_items.push(ordering("S12-below-one".into(), 1.0, worst));
            }
        }
    }
    orderings.extend(s12_items);

    let degenerate = a1 == a2;
    if degenerate {
        for o in &mut orderings {
            o.margin = 0.0;
            o.holds = false;
            o.conclusive = false;
        }
    }
    let inconclusive = degenerate
        || orderings.iter().any(|o| !o.conclusive || !o.holds)
        || windows.iter().any(|w| w.count == 0)
        || separations.iter().any(|c| c.failed());

    Ok(ComparisonReport {
        family: nl.spec_string(),
        n,
        k,
        alpha1: a1,
        alpha2: a2,
        orderings,
        windows,
        u_i,
        separations,
        inconclusive,
    })
}

// ---------------------------------------------------------------------------
// critical-height location and the retry ladder

/// Brackets and certifies the k-th critical takeoff height by doubling the
/// upper end until the side flips, then bisecting.
pub fn locate_alpha_star(
    nl: &Nonlinearity,
    n: f64,
    k: usize,
    cfg: &ProblemConfig,
) -> Result<BoundState> {
    locate_alpha_star_above(nl, n, k, cfg, None)
}

fn locate_alpha_star_above(
    nl: &Nonlinearity,
    n: f64,
    k: usize,
    cfg: &ProblemConfig,
    lower: Option<f64>,
) -> Result<BoundState> {
    if k == 0 {
        return Err(Error::BadParameter("level must be at least 1".into()));
    }
    let fast = ProblemConfig {
        with_phi: false,
        ..cfg.clone()
    };
    let mut lo = match lower {
        Some(l) => l,
        None => {
            if k == 1 {
                f64::max(nl.b() + 1e-3, nl.beta() * 1.0001).max(1e-3)
            } else {
                locate_alpha_star_above(nl, n, k - 1, cfg, None)?.alpha_star * (1.0 + 1e-9)
            }
        }
    };
    // guard: lo must sit on the P side
    for _ in 0..60 {
        if !reaches_level(nl, n, lo, &fast, k)? {
            break;
        }
        lo = nl.b() + (lo - nl.b()) / 2.0;
    }
    let mut hi = lo * 2.0;
    let mut expansions = 0;
    while !reaches_level(nl, n, hi, &fast, k)? {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 40 {
            return Err(Error::NoBracket(format!(
                "no level-{k} crossing found below alpha = {hi:e}"
            )));
        }
    }
    find_bound_state(nl, n, k, (lo, hi), cfg, f64::NAN)
}

/// Builds the pair at alpha* -+ delta and compares; shrinks delta tenfold
/// on an inconclusive report, flooring at 1e-6 alpha*. Returns the last
/// report with the delta it used. A non-positive or non-finite delta0
/// selects the default 1e-3 alpha*.
pub fn compare_at_level(
    nl: &Nonlinearity,
    n: f64,
    k: usize,
    cfg: &ProblemConfig,
    delta0: f64,
) -> Result<(ComparisonReport, f64)> {
    let star = locate_alpha_star(nl, n, k, cfg)?.alpha_star;
    let floor = 1e-6 * star;
    let mut delta = if delta0.is_finite() && delta0 > 0.0 {
        delta0
    } else {
        1e-3 * star
    };
    let mut last: (ComparisonReport, f64);
    loop {
        let pair_cfg = ProblemConfig {
            with_phi: true,
            ..cfg.clone()
        };
        let (_, t1) = classify_with_trajectory(nl, n, star - delta, &pair_cfg, k + 1)?;
        let (_, t2) = classify_with_trajectory(nl, n, star + delta, &pair_cfg, k + 1)?;
        let (t1, t2) = (Arc::new(t1), Arc::new(t2));
        let mut report = compare_pair(&t1, &t2, k)?;
        // the straddling pair has no k-th zero on its lower side; the zero
        // orderings come from a second pair just past the crossing level
        if k >= 1 && report.ordering(&format!("Z{k}-order")).is_none() {
            let (_, t3) = classify_with_trajectory(nl, n, star + 2.0 * delta, &pair_cfg, k + 1)?;
            let aux = compare_pair(&t2, &Arc::new(t3), k)?;
            let z_name = format!("Z{k}-order");
            let zs_name = format!("Z{k}-slope-order");
            report.orderings.extend(
                aux.orderings
                    .into_iter()
                    .filter(|o| o.name == z_name || o.name == zs_name),
            );
            report.inconclusive = report.orderings.iter().any(|o| !o.conclusive || !o.holds)
                || report.windows.iter().any(|w| w.count == 0)
                || report.separations.iter().any(|c| c.failed());
        }
        let done = !report.inconclusive;
        last = (report, delta);
        if done || delta / 10.0 < floor {
            break;
        }
        delta /= 10.0;
    }
    Ok(last)
}

// ---------------------------------------------------------------------------
// suite plumbing

#[derive(Clone, Debug)]
pub enum PlanItem {
    /// Full hypothesis battery, one result per hypothesis.
    Hypotheses { s_max: f64, grid: usize },
    /// Energy monotonicity and the energy-derivative law at one height.
    Energy { alpha: f64 },
    /// Q monotonicity on the decreasing branches of both near-critical shots.
    QMonotone { k: usize, delta: Option<f64> },
    /// P monotonicity on the first descent of the upper near-critical shot.
    PMonotone { k: usize, delta: Option<f64> },
    /// Sensitivity sign structure, both integral identities, and the
    /// finite-difference cross-check on both near-critical shots.
    PhiSuite { k: usize, delta: Option<f64> },
    /// Full pair comparison at a level.
    Compare { k: usize, delta: Option<f64> },
    /// Zero-radius scaling across takeoff heights.
    Scaling { alphas: Vec<f64>, levels: usize },
    /// Zero-boundary solve plus the sensitivity-sign and pressure checks.
    BoundaryValue { rho: f64, k: usize },
}

/// A family-appropriate battery: structural checks everywhere, pair
/// comparisons where a sign-change barrier exists, scaling and boundary
/// checks for the homogeneous family.
pub fn default_plan(nl: &Nonlinearity, _n: f64) -> Vec<PlanItem> {
    use crate::nonlinearity::Family;
    use PlanItem::*;
    let mut plan = vec![Hypotheses {
        s_max: 4.0 * f64::max(nl.beta(), 1.0),
        grid: 2001,
    }];
    if nl.b() > 0.0 {
        let beta = nl.beta();
        plan.push(Energy { alpha: beta + 1.0 });
        plan.push(Energy {
            alpha: 2.0 * beta + 1.0,
        });
        plan.push(QMonotone { k: 2, delta: None });
        plan.push(PMonotone { k: 2, delta: None });
        plan.push(PhiSuite { k: 2, delta: None });
        plan.push(Compare { k: 2, delta: None });
    } else {
        plan.push(Energy { alpha: 1.0 });
        plan.push(Energy { alpha: 2.0 });
        if let Family::PurePower { q } = nl.family() {
            plan.push(Scaling {
                alphas: vec![0.5, 1.0, 2.0, 4.0],
                levels: 3,
            });
            if *q < 1.0 {
                plan.push(BoundaryValue { rho: 1.0, k: 0 });
                plan.push(BoundaryValue { rho: 1.0, k: 1 });
            }
        }
    }
    plan
}

fn capture(name: &str, inputs: String, r: Result<Vec<CheckResult>>) -> Vec<CheckResult> {
    match r {
        Ok(v) => v,
        Err(e) => vec![CheckResult::fail(
            name,
            f64::NEG_INFINITY,
            f64::NAN,
            "",
            format!("{inputs}; error: {e}"),
        )],
    }
}

/// Runs every plan item, capturing per-check errors as failures; never
/// aborts early. Results come back in plan order.
pub fn run_suite(nl: &Nonlinearity, n: f64, plan: &[PlanItem]) -> Vec<CheckResult> {
    let cfg = ProblemConfig::new(n, f64::NAN);
    let mut stars: HashMap<usize, f64> = HashMap::new();
    let mut out: Vec<CheckResult> = Vec::new();
    let mut star_of = |k: usize, out: &mut Vec<CheckResult>| -> Option<f64> {
        if let Some(&s) = stars.get(&k) {
            return Some(s);
        }
        match locate_alpha_star(nl, n, k, &cfg) {
            Ok(bs) => {
                stars.insert(k, bs.alpha_star);
                Some(bs.alpha_star)
            }
            Err(e) => {
                out.push(CheckResult::fail(
                    "critical-height",
                    f64::NEG_INFINITY,
                    f64::NAN,
                    "",
                    format!("{}; error: {e}", digest_nl(nl, n)),
                ));
                None
            }
        }
    };

    for item in plan {
        match item {
            PlanItem::Hypotheses { s_max, grid } => {
                let report = check_hypotheses(nl, n, *s_max, *grid);
                let inputs = format!("{} s_max={s_max:e}", digest_nl(nl, n));
                for c in &report.checks {
                    let name = format!("hypothesis-{}", c.id.label());
                    out.push(match c.verdict {
                        Verdict::Pass => {
                            CheckResult::pass(&name, c.margin, c.at, "s", inputs.clone())
                        }
                        Verdict::Fail => {
                            CheckResult::fail(&name, c.margin, c.at, "s", inputs.clone())
                        }
                        Verdict::NotApplicable => {
                            CheckResult::skipped(&name, &c.note, inputs.clone())
                        }
                    });
                }
            }
            PlanItem::Energy { alpha } => {
                let fast = ProblemConfig {
                    with_phi: false,
                    ..cfg.clone()
                };
                let res = crate::radial_ode::integrate(
                    nl,
                    &ProblemConfig {
                        n,
                        alpha: *alpha,
                        ..fast
                    },
                );
                match res {
                    Ok(traj) => {
                        out.push(check_i_monotone(&traj));
                        out.push(check_i_derivative(&traj));
                    }
                    Err(e) => out.push(CheckResult::fail(
                        "energy-monotone",
                        f64::NEG_INFINITY,
                        f64::NAN,
                        "",
                        format!("{} alpha={alpha:e}; error: {e}", digest_nl(nl, n)),
                    )),
                }
            }
            PlanItem::QMonotone { k, delta } => {
                if let Some(star) = star_of(*k, &mut out) {
                    let d = delta.unwrap_or(1e-3 * star);
                    let inputs = format!("{} k={k}", digest_nl(nl, n));
                    let run = || -> Result<Vec<CheckResult>> {
                        let mut v = Vec::new();
                        for alpha in [star - d, star + d] {
                            let (_, t) = classify_with_trajectory(
                                nl,
                                n,
                                alpha,
                                &ProblemConfig {
                                    with_phi: false,
                                    ..cfg.clone()
                                },
                                k + 1,
                            )?;
                            let t = Arc::new(t);
                            for br in extract_branches(&t, nl.beta()) {
                                if br.dir == BranchDir::Decreasing {
                                    v.push(check_q_monotone(&br)?);
                                }
                            }
                        }
                        Ok(v)
                    };
                    out.extend(capture("q-monotone", inputs, run()));
                }
            }
            PlanItem::PMonotone { k, delta } => {
                if let Some(star) = star_of(*k, &mut out) {
                    let d = delta.unwrap_or(1e-3 * star);
                    let inputs = format!("{} k={k}", digest_nl(nl, n));
                    let run = || -> Result<Vec<CheckResult>> {
                        let (_, t) = classify_with_trajectory(
                            nl,
                            n,
                            star + d,
                            &ProblemConfig {
                                with_phi: false,
                                ..cfg.clone()
                            },
                            k + 1,
                        )?;
                        let t = Arc::new(t);
                        let branches = extract_branches(&t, nl.beta());
                        match first_descent(&branches) {
                            Some(br) => Ok(vec![check_p_monotone(br)?]),
                            None => Ok(vec![CheckResult::skipped(
                                "p-monotone",
                                "no initial descent",
                                digest(&t),
                            )]),
                        }
                    };
                    out.extend(capture("p-monotone", inputs, run()));
                }
            }
            PlanItem::PhiSuite { k, delta } => {
                if let Some(star) = star_of(*k, &mut out) {
                    let d = delta.unwrap_or(1e-3 * star);
                    let inputs = format!("{} k={k}", digest_nl(nl, n));
                    let run = || -> Result<Vec<CheckResult>> {
                        let mut v = Vec::new();
                        for alpha in [star - d, star + d] {
                            let (_, t) = classify_with_trajectory(nl, n, alpha, &cfg, k + 1)?;
                            let t = Arc::new(t);
                            v.extend(check_phi(&t, nl.beta(), nl.b())?);
                            v.push(check_variational_identity(&t, nl.beta())?);
                            v.push(check_wronskian(&t)?);
                            v.push(check_phi_fd(nl, n, alpha, &cfg)?);
                        }
                        Ok(v)
                    };
                    out.extend(capture("phi-suite", inputs, run()));
                }
            }
            PlanItem::Compare { k, delta } => {
                if let Some(star) = star_of(*k, &mut out) {
                    let d = delta.unwrap_or(1e-3 * star);
                    let inputs = format!("{} k={k}", digest_nl(nl, n));
                    match compare_at_level(nl, n, *k, &cfg, d) {
                        Ok((report, used)) => out.extend(report_to_checks(&report, used)),
                        Err(e) => out.push(CheckResult::fail(
                            "compare",
                            f64::NEG_INFINITY,
                            f64::NAN,
                            "",
                            format!("{inputs}; error: {e}"),
                        )),
                    }
                }
            }
            PlanItem::Scaling { alphas, levels } => {
                let inputs = digest_nl(nl, n);
                let run = || Ok(vec![check_scaling(nl, n, alphas, *levels)?]);
                out.extend(capture("reduced-zero-constancy", inputs, run()));
            }
            PlanItem::BoundaryValue { rho, k } => {
                let inputs = format!("{} rho={rho:e} k={k}", digest_nl(nl, n));
                let run = || boundary_value_checks(nl, n, *rho, *k, &cfg);
                out.extend(capture("boundary-value", inputs, run()));
            }
        }
    }
    out
}

/// Flattens a comparison report into named check results, mapping
/// inconclusive-at-smallest-delta to skipped rather than failed.
pub fn report_to_checks(report: &ComparisonReport, delta: f64) -> Vec<CheckResult> {
    let inputs = format!(
        "family={} n={} pair=({:e},{:e}) delta={delta:e}",
        report.family, report.n, report.alpha1, report.alpha2
    );
    let mut out = Vec::new();
    for o in &report.orderings {
        let name = format!("compare-{}", o.name);
        if o.holds && o.conclusive {
            out.push(CheckResult::pass(
                &name,
                o.margin,
                f64::NAN,
                "",
                inputs.clone(),
            ));
        } else if !o.conclusive {
            out.push(CheckResult::skipped(
                &name,
                "inconclusive at the smallest delta",
                inputs.clone(),
            ));
        } else {
            out.push(CheckResult::fail(
                &name,
                o.margin,
                f64::NAN,
                "",
                inputs.clone(),
            ));
        }
    }
    let mut w = WorstMargin::new();
    for win in &report.windows {
        w.add(win.count as f64 - 1.0, win.r_lo);
    }
    if !report.windows.is_empty() {
        out.push(CheckResult::graded(
            "compare-intersections",
            w.margin >= 0.0,
            w.margin,
            w.location,
            "r",
            inputs.clone(),
        ));
    }
    out.extend(report.separations.iter().cloned());
    out
}

fn boundary_value_checks(
    nl: &Nonlinearity,
    n: f64,
    rho: f64,
    k: usize,
    cfg: &ProblemConfig,
) -> Result<Vec<CheckResult>> {
    let sol = solve_dirichlet(nl, n, rho, k, cfg, (1e-4, 1e4))?;
    let inputs = format!(
        "{} rho={rho:e} k={k} alpha={:e}",
        digest_nl(nl, n),
        sol.alpha
    );
    let mut out = Vec::new();
    out.push(CheckResult::graded(
        "boundary-zero-count",
        sol.zeros.len() == k,
        sol.boundary_residual.abs() / f64::max(1.0, rho),
        rho,
        "r",
        inputs.clone(),
    ));

    // -phi/u' positive at every zero, the matched boundary radius included
    let traj = &sol.trajectory;
    let mut w = WorstMargin::new();
    for &z in sol.zeros.iter().chain(std::iter::once(&sol.z_next)) {
        let y = traj.eval_refined(z)?;
        w.add(-y[2] / y[1] / f64::max(1.0, (y[2] / y[1]).abs()), z);
    }
    out.push(CheckResult::graded(
        "boundary-sensitivity-sign",
        w.margin > 0.0,
        w.margin,
        w.location,
        "r",
        inputs.clone(),
    ));

    // pressure functional: zero at the origin, decreasing along the shot
    let r_first = traj.nodes[0].r;
    let mut grid: Vec<f64> = sample_grid(2.0 * r_first, 0.98 * rho, 201);
    let guard = 1e-3 * rho;
    grid.retain(|&r| sol.zeros.iter().all(|&z| (r - z).abs() > guard));
    let tr = dirichlet_p_of_r(traj, &grid)?;
    let scale0 = f64::max(
        1.0,
        tr.values
            .iter()
            .cloned()
            .fold(0.0, |a: f64, v| a.max(v.abs())),
    );
    let mut w = WorstMargin::new();
    w.add(1e-9 - tr.values[0].abs() / scale0, grid[0]);
    for i in 0..tr.values.len() - 1 {
        let scale = f64::max(1.0, tr.values[i].abs().max(tr.values[i + 1].abs()));
        w.add((tr.values[i] - tr.values[i + 1]) / scale + 1e-9, tr.r[i]);
    }
    out.push(CheckResult::graded(
        "boundary-pressure-decreasing",
        w.margin >= 0.0,
        w.margin,
        w.location,
        "r",
        inputs,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial_ode::integrate;
    use std::sync::OnceLock;

    fn cfg(n: f64) -> ProblemConfig {
        ProblemConfig::new(n, f64::NAN)
    }

    fn troy_star2() -> f64 {
        static STAR: OnceLock<f64> = OnceLock::new();
        *STAR.get_or_init(|| {
            let nl = Nonlinearity::troy();
            locate_alpha_star(&nl, 3.0, 2, &cfg(3.0))
                .unwrap()
                .alpha_star
        })
    }

    #[test]
    fn energy_checks_pass_across_families() {
        for (nl, n, alpha) in [
            (Nonlinearity::troy(), 3.0, 3.0),
            (Nonlinearity::power_diff(3.0, 1.0).unwrap(), 2.5, 2.0),
            (Nonlinearity::pure_power(0.5).unwrap(), 3.0, 1.0),
        ] {
            let mut c = cfg(n);
            c.alpha = alpha;
            c.with_phi = false;
            c.r_max = 15.0;
            let traj = integrate(&nl, &c).unwrap();
            let mono = check_i_monotone(&traj);
            assert!(mono.passed(), "{}: {mono:?}", nl.spec_string());
            let deriv = check_i_derivative(&traj);
            assert!(deriv.passed(), "{}: {deriv:?}", nl.spec_string());
        }
    }

    #[test]
    fn q_monotone_passes_and_respects_routing() {
        let nl = Nonlinearity::troy();
        let star = troy_star2();
        let (_, t) = classify_with_trajectory(&nl, 3.0, star + 1e-3, &cfg(3.0), 3).unwrap();
        let t = Arc::new(t);
        let branches = extract_branches(&t, nl.beta());
        let br = first_descent(&branches).unwrap();
        let res = check_q_monotone(br).unwrap();
        assert!(res.passed(), "{res:?}");

        // same branch data at n = 4: the ratio-derivative bound fails there
        let (_, t4) = classify_with_trajectory(&nl, 4.0, 3.0, &cfg(4.0), 2).unwrap();
        let t4 = Arc::new(t4);
        let b4 = extract_branches(&t4, nl.beta());
        let res4 = check_q_monotone(first_descent(&b4).unwrap()).unwrap();
        assert!(matches!(res4.status, CheckStatus::Skipped(_)), "{res4:?}");

        // the cubic-minus-linear family at n = 2 passes
        let pd = Nonlinearity::power_diff(3.0, 1.0).unwrap();
        let star_pd = locate_alpha_star(&pd, 2.0, 1, &cfg(2.0))
            .unwrap()
            .alpha_star;
        let (_, tp) = classify_with_trajectory(&pd, 2.0, star_pd + 1e-3, &cfg(2.0), 2).unwrap();
        let tp = Arc::new(tp);
        let bp = extract_branches(&tp, pd.beta());
        let rp = check_q_monotone(first_descent(&bp).unwrap()).unwrap();
        assert!(rp.passed(), "{rp:?}");
    }

    #[test]
    fn p_monotone_on_first_descent() {
        let nl = Nonlinearity::troy();
        let star = troy_star2();
        let (_, t) = classify_with_trajectory(&nl, 3.0, star + 1e-3, &cfg(3.0), 3).unwrap();
        let t = Arc::new(t);
        let branches = extract_branches(&t, nl.beta());
        let res = check_p_monotone(first_descent(&branches).unwrap()).unwrap();
        assert!(res.passed(), "{res:?}");
    }

    #[test]
    fn phi_structure_and_identities_near_critical() {
        let nl = Nonlinearity::troy();
        let star = troy_star2();
        for alpha in [star - 1e-3, star + 1e-3] {
            let (_, t) = classify_with_trajectory(&nl, 3.0, alpha, &cfg(3.0), 3).unwrap();
            let t = Arc::new(t);
            let phi_checks = check_phi(&t, nl.beta(), nl.b()).unwrap();
            assert_eq!(phi_checks.len(), 3);
            for c in &phi_checks {
                assert!(!c.failed(), "{c:?}");
            }
            assert!(phi_checks[0].passed(), "{:?}", phi_checks[0]);
            assert!(phi_checks[1].passed(), "{:?}", phi_checks[1]);
            let ident = check_variational_identity(&t, nl.beta()).unwrap();
            assert!(ident.passed(), "{ident:?}");
            let wr = check_wronskian(&t).unwrap();
            assert!(wr.passed(), "{wr:?}");
            let fd = check_phi_fd(&nl, 3.0, alpha, &cfg(3.0)).unwrap();
            assert!(fd.passed(), "{fd:?}");
        }
    }

    #[test]
    fn phi_core_check_skips_without_the_sign_hypothesis() {
        let nl = Nonlinearity::pure_power(0.5).unwrap();
        let mut c = cfg(3.0);
        c.alpha = 1.0;
        c.r_max = 8.0;
        let t = Arc::new(integrate(&nl, &c).unwrap());
        let checks = check_phi(&t, nl.beta(), nl.b()).unwrap();
        assert!(
            matches!(checks[0].status, CheckStatus::Skipped(_)),
            "{:?}",
            checks[0]
        );
    }

    #[test]
    fn comparison_chain_holds_at_level_two() {
        let nl = Nonlinearity::troy();
        let (report, delta) = compare_at_level(&nl, 3.0, 2, &cfg(3.0), 1e-3).unwrap();
        assert!(!report.inconclusive, "needed delta {delta:e}: {report:#?}");
        assert!(report.all_hold());
        for name in [
            "M1-order",
            "m1-order",
            "Q-at-M1",
            "Q-at-m1",
            "Z2-order",
            "Z2-slope-order",
        ] {
            let item = report
                .ordering(name)
                .unwrap_or_else(|| panic!("missing {name}"));
            assert!(item.holds && item.conclusive, "{name}: {item:?}");
        }
        assert!(report.windows.len() >= 2, "windows: {:?}", report.windows);
        for win in &report.windows {
            assert!(win.count >= 1, "{win:?}");
        }
        assert!(report.u_i.is_some());
        assert_eq!(report.separations.len(), 3);
        for sep in &report.separations {
            assert!(sep.passed(), "{sep:?}");
        }
    }

    #[test]
    fn equal_pair_degenerates_to_inconclusive() {
        let nl = Nonlinearity::troy();
        let (_, t) = classify_with_trajectory(&nl, 3.0, 5.0, &cfg(3.0), 2).unwrap();
        let t = Arc::new(t);
        let report = compare_pair(&t, &t, 1).unwrap();
        assert!(report.inconclusive);
        for o in &report.orderings {
            assert_eq!(o.margin, 0.0);
            assert!(!o.conclusive);
        }
    }

    #[test]
    fn scaling_holds_for_the_homogeneous_family() {
        let nl = Nonlinearity::pure_power(0.5).unwrap();
        let res = check_scaling(&nl, 3.0, &[0.5, 1.0, 2.0, 4.0], 3).unwrap();
        assert!(res.passed(), "{res:?}");
        // the linear member is scale-free
        let lin = Nonlinearity::pure_power(1.0).unwrap();
        let res = check_scaling(&lin, 3.0, &[0.5, 2.0], 2).unwrap();
        assert!(res.passed(), "{res:?}");
        // wrong family is a usage error
        assert!(check_scaling(&Nonlinearity::troy(), 3.0, &[2.0], 1).is_err());
    }

    #[test]
    fn boundary_value_battery() {
        let nl = Nonlinearity::pure_power(0.5).unwrap();
        let checks = boundary_value_checks(&nl, 3.0, 1.0, 1, &cfg(3.0)).unwrap();
        assert_eq!(checks.len(), 3);
        for c in &checks {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn suite_runs_in_order_and_routes_skips() {
        let nl = Nonlinearity::troy();
        assert!(run_suite(&nl, 3.0, &[]).is_empty());
        let plan = vec![
            PlanItem::Hypotheses {
                s_max: 8.0,
                grid: 801,
            },
            PlanItem::Energy { alpha: 3.0 },
        ];
        let results = run_suite(&nl, 4.0, &plan);
        // at n = 4 the stronger ratio bound fails while the battery still runs
        assert!(results
            .iter()
            .any(|c| c.name == "hypothesis-f4'" && c.failed()));
        assert!(results
            .iter()
            .any(|c| c.name == "energy-monotone" && c.passed()));
        assert!(!results.is_empty());
    }

    #[test]
    fn locate_alpha_star_orders_levels() {
        let nl = Nonlinearity::troy();
        let s1 = locate_alpha_star(&nl, 3.0, 1, &cfg(3.0)).unwrap();
        let s2 = troy_star2();
        assert!(s1.alpha_star < s2);
        assert!(s1.width <= 1e-10 * s1.alpha_star);
    }
}
