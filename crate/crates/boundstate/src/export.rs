//! Byte-stable delimited-text rendering of trajectories, traces, scans,
//! and reports: 17 significant digits everywhere, `# key=value` comment
//! headers carrying the producing configuration, and no timestamps or
//! other run-varying content.

use crate::functionals::FunctionalTrace;
use crate::nonlinearity::{HypothesisReport, Verdict};
use crate::radial_ode::{Termination, Trajectory};
use crate::shooting::{BoundState, Classification, DirichletSolution};
use crate::verify::{CheckResult, CheckStatus, ComparisonReport};

/// 17 significant digits: the shortest format that round-trips every f64.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_header(out: &mut String, key: &str, value: &str) {
    out.push_str("# ");
    out.push_str(key);
    out.push('=');
    out.push_str(value);
    out.push('\n');
}

fn push_extra(out: &mut String, extra: &[(&str, String)]) {
    for (k, v) in extra {
        push_header(out, k, v);
    }
}

fn termination_label(t: Termination) -> &'static str {
    match t {
        Termination::Horizon => "horizon",
        Termination::ClassifierStop => "classifier-stop",
        Termination::StepUnderflow => "step-underflow",
    }
}

fn verdict_label(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::NotApplicable => "not-applicable",
    }
}

fn status_label(s: &CheckStatus) -> &'static str {
    match s {
        CheckStatus::Pass => "pass",
        CheckStatus::Fail => "fail",
        CheckStatus::Skipped(_) => "skipped",
    }
}

/// Node table `r,u,du,phi,dphi,I` followed by the event table
/// `kind,r,u,du,phi,dphi`. The variational columns are left empty when the
/// trajectory was integrated without them.
pub fn render_trajectory(traj: &Trajectory, extra: &[(&str, String)]) -> String {
    let mut out = String::new();
    push_header(&mut out, "family", &traj.nl.spec_string());
    push_header(&mut out, "n", &format!("{}", traj.n));
    push_header(&mut out, "alpha", &fmt17(traj.alpha));
    push_header(&mut out, "rtol", &format!("{:e}", traj.rtol));
    push_header(&mut out, "atol", &format!("{:e}", traj.atol));
    push_header(&mut out, "event_tol", &format!("{:e}", traj.event_tol));
    push_header(
        &mut out,
        "with_phi",
        if traj.with_phi { "true" } else { "false" },
    );
    push_header(&mut out, "termination", termination_label(traj.termination));
    push_extra(&mut out, extra);
    let phi_cols = |out: &mut String, y: &[f64; 4]| {
        if traj.with_phi {
            out.push_str(&fmt17(y[2]));
            out.push(',');
            out.push_str(&fmt17(y[3]));
        } else {
            out.push(',');
        }
    };
    out.push_str("r,u,du,phi,dphi,I\n");
    for (idx, nd) in traj.nodes.iter().enumerate() {
        out.push_str(&fmt17(nd.r));
        out.push(',');
        out.push_str(&fmt17(nd.y[0]));
        out.push(',');
        out.push_str(&fmt17(nd.y[1]));
        out.push(',');
        phi_cols(&mut out, &nd.y);
        out.push(',');
        out.push_str(&fmt17(traj.i_at_node(idx)));
        out.push('\n');
    }
    out.push('\n');
    out.push_str("kind,r,u,du,phi,dphi\n");
    for e in &traj.events {
        out.push_str(e.kind.label());
        out.push(',');
        out.push_str(&fmt17(e.r));
        out.push(',');
        out.push_str(&fmt17(e.y[0]));
        out.push(',');
        out.push_str(&fmt17(e.y[1]));
        out.push(',');
        phi_cols(&mut out, &e.y);
        out.push('\n');
    }
    out
}

/// Functional trace: `s,r,du,value` rows, or `r,value` for the
/// radius-parametrized functionals. Tag and branch metadata go on one
/// comment line.
pub fn render_trace(tr: &FunctionalTrace, extra: &[(&str, String)]) -> String {
    let mut out = String::new();
    out.push_str("# functional=");
    out.push_str(tr.tag.label());
    out.push(' ');
    out.push_str(&tr.meta);
    out.push('\n');
    push_extra(&mut out, extra);
    if tr.tag.is_radial() {
        out.push_str("r,value\n");
        for i in 0..tr.values.len() {
            out.push_str(&fmt17(tr.r[i]));
            out.push(',');
            out.push_str(&fmt17(tr.values[i]));
            out.push('\n');
        }
    } else {
        out.push_str("s,r,du,value\n");
        for i in 0..tr.values.len() {
            out.push_str(&fmt17(tr.s[i]));
            out.push(',');
            out.push_str(&fmt17(tr.r[i]));
            out.push(',');
            out.push_str(&fmt17(tr.du[i]));
            out.push(',');
            out.push_str(&fmt17(tr.values[i]));
            out.push('\n');
        }
    }
    out
}

/// One row per classified amplitude: outcome, decision level, then the
/// zeros Z_i and the extremal radii/values T_i, U_i up to `k_max`, with
/// absent entries left empty. The always-present initial extremum at r = 0
/// is not a column; it equals (0, alpha) by construction.
pub fn render_scan(rows: &[Classification], k_max: usize, extra: &[(&str, String)]) -> String {
    let mut out = String::new();
    push_extra(&mut out, extra);
    out.push_str("alpha,outcome,level");
    for i in 1..=k_max {
        out.push_str(&format!(",Z{i}"));
    }
    for i in 1..=k_max {
        out.push_str(&format!(",T{i}"));
    }
    for i in 1..=k_max {
        out.push_str(&format!(",U{i}"));
    }
    out.push('\n');
    for c in rows {
        out.push_str(&fmt17(c.alpha));
        out.push(',');
        out.push_str(c.outcome.label());
        out.push(',');
        if let Some(level) = c.outcome.level() {
            out.push_str(&format!("{level}"));
        }
        let interior: &[crate::shooting::Extremum] =
            if c.extrema.first().is_some_and(|e| e.r == 0.0) {
                &c.extrema[1..]
            } else {
                &c.extrema
            };
        for i in 0..k_max {
            out.push(',');
            if let Some(z) = c.zeros.get(i) {
                out.push_str(&fmt17(z.r));
            }
        }
        for i in 0..k_max {
            out.push(',');
            if let Some(e) = interior.get(i) {
                out.push_str(&fmt17(e.r));
            }
        }
        for i in 0..k_max {
            out.push(',');
            if let Some(e) = interior.get(i) {
                out.push_str(&fmt17(e.value));
            }
        }
        out.push('\n');
    }
    out
}

/// Single-shot classification as key=value lines plus zero/extremum tables.
pub fn render_classification(c: &Classification, extra: &[(&str, String)]) -> String {
    let mut out = String::new();
    push_extra(&mut out, extra);
    out.push_str(&format!("alpha={}\n", fmt17(c.alpha)));
    out.push_str(&format!("outcome={}\n", c.outcome.label()));
    if let Some(level) = c.outcome.level() {
        out.push_str(&format!("level={level}\n"));
    }
    if let crate::shooting::Outcome::Undetermined { reason } = &c.outcome {
        out.push_str(&format!("reason={reason}\n"));
    }
    out.push_str(&format!("i_at_stop={}\n", fmt17(c.i_at_stop)));
    out.push_str(&format!("final_r={}\n", fmt17(c.final_r)));
    out.push_str("zero,r,slope\n");
    for (i, z) in c.zeros.iter().enumerate() {
        out.push_str(&format!("Z{},{},{}\n", i + 1, fmt17(z.r), fmt17(z.slope)));
    }
    out.push_str("extremum,r,value,I\n");
    for (i, e) in c.extrema.iter().enumerate() {
        out.push_str(&format!(
            "T{i},{},{},{}\n",
            fmt17(e.r),
            fmt17(e.value),
            fmt17(e.i_value)
        ));
    }
    out
}

/// Hypothesis battery: `id,verdict,margin,at,note` rows (the free-form note
/// comes last so earlier fields split cleanly).
pub fn render_hypotheses(rep: &HypothesisReport, extra: &[(&str, String)]) -> String {
    let mut out = String::new();
    push_header(&mut out, "family", &rep.family);
    push_header(&mut out, "n", &format!("{}", rep.n));
    push_header(&mut out, "s_max", &fmt17(rep.s_max));
    push_header(&mut out, "grid_count", &format!("{}", rep.grid_count));
    push_extra(&mut out, extra);
    out.push_str("id,verdict,margin,at,note\n");
    for c in &rep.checks {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.id.label(),
            verdict_label(c.verdict),
            fmt17(c.margin),
            fmt17(c.at),
            c.note
        ));
    }
    out
}

/// Suite results: `status,name,margin,location,location_var,detail` rows,
/// where detail is the inputs digest plus any skip reason.
pub fn render_checks(checks: &[CheckResult], extra: &[(&str, String)]) -> String {
    let mut out = String::new();
    push_extra(&mut out, extra);
    out.push_str("status,name,margin,location,location_var,detail\n");
    for c in checks {
        let detail = match &c.status {
            CheckStatus::Skipped(reason) => format!("{}; skipped: {}", c.inputs, reason),
            _ => c.inputs.clone(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            status_label(&c.status),
            c.name,
            fmt17(c.margin),
            fmt17(c.location),
            c.location_var,
            detail
        ));
    }
    out
}

/// Pair comparison: typed rows for orderings, intersection windows, and
/// separation checks under one header.
pub fn render_comparison(rep: &ComparisonReport, delta: f64, extra: &[(&str, String)]) -> String {
    let mut out = String::new();
    push_header(&mut out, "family", &rep.family);
    push_header(&mut out, "n", &format!("{}", rep.n));
    push_header(&mut out, "k", &format!("{}", rep.k));
    push_header(&mut out, "alpha1", &fmt17(rep.alpha1));
    push_header(&mut out, "alpha2", &fmt17(rep.alpha2));
    push_header(&mut out, "delta", &fmt17(delta));
    push_header(&mut out, "u_i", &rep.u_i.map(fmt17).unwrap_or_default());
    push_header(
        &mut out,
        "inconclusive",
        if rep.inconclusive { "true" } else { "false" },
    );
    push_extra(&mut out, extra);
    out.push_str("row,name,lhs,rhs,margin,holds,conclusive\n");
    for o in &rep.orderings {
        out.push_str(&format!(
            "ordering,{},{},{},{},{},{}\n",
            o.name,
            fmt17(o.lhs),
            fmt17(o.rhs),
            fmt17(o.margin),
            o.holds,
            o.conclusive
        ));
    }
    out.push_str("row,r_lo,r_hi,count,first_r,first_value\n");
    for w in &rep.windows {
        out.push_str(&format!(
            "window,{},{},{},{},{}\n",
            fmt17(w.r_lo),
            fmt17(w.r_hi),
            w.count,
            fmt17(w.first_r),
            fmt17(w.first_value)
        ));
    }
    out.push_str("row,name,status,margin,location\n");
    for s in &rep.separations {
        out.push_str(&format!(
            "separation,{},{},{},{}\n",
            s.name,
            status_label(&s.status),
            fmt17(s.margin),
            fmt17(s.location)
        ));
    }
    out
}

/// Certified critical amplitude with its bracket and diagnostics.
pub fn render_bound_state(bs: &BoundState, extra: &[(&str, String)]) -> String {
    let mut out = String::new();
    push_extra(&mut out, extra);
    out.push_str(&format!("k={}\n", bs.k));
    out.push_str(&format!("alpha_star={}\n", fmt17(bs.alpha_star)));
    out.push_str(&format!("bracket_lo={}\n", fmt17(bs.bracket.0)));
    out.push_str(&format!("bracket_hi={}\n", fmt17(bs.bracket.1)));
    out.push_str(&format!("width={}\n", fmt17(bs.width)));
    out.push_str(&format!("z_k={}\n", bs.z_k.map(fmt17).unwrap_or_default()));
    out.push_str(&format!("residual_u={}\n", fmt17(bs.residual_u)));
    out.push_str(&format!("residual_du={}\n", fmt17(bs.residual_du)));
    out.push_str(&format!(
        "midpoint_outcome={}\n",
        bs.classification.outcome.label()
    ));
    out
}

/// Ball-problem solution: matched amplitude, interior zeros, residual.
pub fn render_dirichlet(sol: &DirichletSolution, extra: &[(&str, String)]) -> String {
    let mut out = String::new();
    push_extra(&mut out, extra);
    out.push_str(&format!("rho={}\n", fmt17(sol.rho)));
    out.push_str(&format!("k={}\n", sol.k));
    out.push_str(&format!("alpha={}\n", fmt17(sol.alpha)));
    out.push_str(&format!("z_next={}\n", fmt17(sol.z_next)));
    out.push_str(&format!(
        "boundary_residual={}\n",
        fmt17(sol.boundary_residual)
    ));
    out.push_str("zero,r\n");
    for (i, z) in sol.zeros.iter().enumerate() {
        out.push_str(&format!("Z{},{}\n", i + 1, fmt17(*z)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::{check_hypotheses, Nonlinearity};
    use crate::radial_ode::{integrate, ProblemConfig};
    use crate::shooting::classify;

    fn first_data_row(text: &str) -> &str {
        let mut lines = text.lines().skip_while(|l| *l != "r,u,du,phi,dphi,I");
        lines.next();
        lines.next().unwrap()
    }

    fn linear_traj(with_phi: bool) -> Trajectory {
        let nl = Nonlinearity::pure_power(1.0).unwrap();
        let mut cfg = ProblemConfig::new(3.0, 1.0);
        cfg.r_max = 8.0;
        cfg.with_phi = with_phi;
        integrate(&nl, &cfg).unwrap()
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [
            1.0 / 3.0,
            -2.5e17,
            1e-300,
            4.410335985533106,
            0.0,
            f64::MIN_POSITIVE,
        ] {
            let s = fmt17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x} -> {s} -> {back}");
        }
    }

    #[test]
    fn trajectory_rendering_has_both_tables_and_headers() {
        let traj = linear_traj(true);
        let text = render_trajectory(&traj, &[("r_max", "8".into())]);
        assert!(text.starts_with("# family=pure_power:q=1\n"));
        assert!(text.contains("# r_max=8\n"));
        assert!(text.contains("\nr,u,du,phi,dphi,I\n"));
        assert!(text.contains("\nkind,r,u,du,phi,dphi\n"));
        assert!(text.contains("u-zero,"));
        let data_row = first_data_row(&text);
        assert_eq!(data_row.split(',').count(), 6);
        let i0: f64 = data_row.split(',').last().unwrap().parse().unwrap();
        assert_eq!(i0, traj.i_at_node(0));
    }

    #[test]
    fn variational_columns_empty_without_phi() {
        let traj = linear_traj(false);
        let text = render_trajectory(&traj, &[]);
        assert!(text.contains("# with_phi=false\n"));
        let fields: Vec<&str> = first_data_row(&text).split(',').collect();
        assert_eq!(fields.len(), 6);
        assert!(fields[3].is_empty() && fields[4].is_empty());
        assert!(!fields[5].is_empty());
    }

    #[test]
    fn rendering_is_reproducible_across_recomputation() {
        let a = render_trajectory(&linear_traj(true), &[]);
        let b = render_trajectory(&linear_traj(true), &[]);
        assert_eq!(a, b);
    }

    #[test]
    fn scan_rows_pad_missing_columns() {
        let nl = Nonlinearity::troy();
        let cfg = ProblemConfig {
            with_phi: false,
            ..ProblemConfig::new(3.0, f64::NAN)
        };
        let rows = vec![
            classify(&nl, 3.0, 2.0, &cfg, 2).unwrap(),
            classify(&nl, 3.0, 6.0, &cfg, 2).unwrap(),
        ];
        let text = render_scan(&rows, 2, &[("family", "troy".into())]);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# family=troy");
        assert_eq!(
            lines.next().unwrap(),
            "alpha,outcome,level,Z1,Z2,T1,T2,U1,U2"
        );
        let low: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(low.len(), 9);
        assert_eq!(low[1], "lands-P");
        // alpha = 2 sits below the first critical amplitude: no zeros at all
        assert!(low[3].is_empty() && low[4].is_empty());
        let mid: Vec<&str> = lines.next().unwrap().split(',').collect();
        // alpha = 6 crosses once, then turns back: Z1 present, Z2 empty
        assert_eq!(mid[1], "lands-P");
        assert!(!mid[3].is_empty() && mid[4].is_empty());
        assert!(!mid[5].is_empty());
    }

    #[test]
    fn trace_rendering_switches_layout_by_tag() {
        use crate::functionals::{extract_branches, sample_grid, trace_i, trace_w};
        use std::sync::Arc;
        let nl = Nonlinearity::troy();
        let mut cfg = ProblemConfig::new(3.0, 6.0);
        cfg.with_phi = false;
        cfg.r_max = 10.0;
        let traj = Arc::new(integrate(&nl, &cfg).unwrap());
        let branches = extract_branches(&traj, nl.beta());
        let grid = sample_grid(-1.0, 1.0, 9);
        let w = trace_w(&branches[0], &grid).unwrap();
        let text = render_trace(&w, &[]);
        assert!(text.starts_with("# functional=W alpha=6e0 "));
        assert!(text.contains("s,r,du,value\n"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 9);

        let i_tr = trace_i(&traj, &sample_grid(0.1, 5.0, 7)).unwrap();
        let text = render_trace(&i_tr, &[]);
        assert!(text.contains("r,value\n"));
        let row = text.lines().nth(2).unwrap();
        assert_eq!(row.split(',').count(), 2);
    }

    #[test]
    fn hypothesis_table_renders_verdict_labels() {
        let rep = check_hypotheses(&Nonlinearity::troy(), 4.0, 8.0, 401);
        let text = render_hypotheses(&rep, &[]);
        assert!(text.contains("id,verdict,margin,at,note"));
        assert!(text.contains("f4',fail,"));
        assert!(text.contains("f1',not-applicable,"));
    }
}
