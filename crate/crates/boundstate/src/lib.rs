//! Radial shooting for sign-changing bound states of semilinear field
//! equations: nonlinearity families and their structural hypotheses, an
//! event-aware adaptive integrator for the radial IVP and its variational
//! equation, classification of shots, critical-height location, monotone
//! comparison functionals along trajectories, and a verification suite of
//! grid-sampled inequality and identity checks.

pub mod error;
pub mod export;
pub mod functionals;
pub mod nonlinearity;
pub(crate) mod quad;
pub mod radial_ode;
pub mod shooting;
pub mod verify;

pub use error::{Error, Result};
pub use export::{
    fmt17, render_bound_state, render_checks, render_classification, render_comparison,
    render_dirichlet, render_hypotheses, render_scan, render_trace, render_trajectory,
};
pub use functionals::{
    dirichlet_p_of_r, extract_branches, h_of, p_at_extremum, q_at_extremum, sample_grid, trace_h,
    trace_i, trace_p, trace_pbar, trace_q, trace_s12, trace_w, trace_wtilde, Branch, BranchDir,
    FunctionalTag, FunctionalTrace,
};
pub use nonlinearity::{
    check_hypotheses, find_beta, Family, HypId, HypothesisCheck, HypothesisReport, Nonlinearity,
    Verdict,
};
pub use radial_ode::{
    integrate, integrate_until, series_start, Event, EventKind, Node, ProblemConfig, Termination,
    Trajectory,
};
pub use shooting::{
    classify, classify_one, classify_with_trajectory, find_bound_state, reaches_level, scan,
    solve_dirichlet, BoundState, Classification, DirichletSolution, Extremum, Outcome,
    ZeroCrossing,
};
pub use verify::{
    check_i_derivative, check_i_monotone, check_p_monotone, check_phi, check_phi_fd,
    check_q_monotone, check_scaling, check_variational_identity, check_wronskian, compare_at_level,
    compare_pair, default_plan, locate_alpha_star, report_to_checks, run_suite, CheckResult,
    CheckStatus, ComparisonReport, OrderingItem, PlanItem, WindowCount,
};
