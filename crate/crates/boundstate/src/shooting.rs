//! Classification of shots by amplitude, bisection onto the critical
//! amplitudes separating the oscillatory (N) and turn-back (P) regimes,
//! grid sweeps, and the Dirichlet problem in a ball of radius rho.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::radial_ode::{integrate_until, EventKind, ProblemConfig, Termination, Trajectory};

/// How a shot at a given amplitude resolved.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    /// k transversal zeros reached; the shot is still heading away from zero.
    ReachesN {
        k: usize,
    },
    /// Turned back: an extremum with 2F(u) < 0 occurred after `level - 1`
    /// zeros, or the energy criterion fired at the horizon.
    LandsP {
        level: usize,
    },
    /// A zero was hit with slope below the transversality floor, or u settles
    /// toward 0 at the horizon with positive energy: near a bound state.
    GCandidate {
        level: usize,
    },
    Undetermined {
        reason: String,
    },
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::ReachesN { .. } => "reaches-N",
            Outcome::LandsP { .. } => "lands-P",
            Outcome::GCandidate { .. } => "G-candidate",
            Outcome::Undetermined { .. } => "undetermined",
        }
    }

    pub fn level(&self) -> Option<usize> {
        match self {
            Outcome::ReachesN { k } => Some(*k),
            Outcome::LandsP { level } | Outcome::GCandidate { level } => Some(*level),
            Outcome::Undetermined { .. } => None,
        }
    }
}

/// A transversal zero crossing Z_i with its slope u'(Z_i).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ZeroCrossing {
    pub r: f64,
    pub slope: f64,
}

/// An extremal point T_i. T_0 = 0 is always present; i_value = 2F(u(T_i))
/// is the energy there (u' vanishes at an extremum).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Extremum {
    pub r: f64,
    pub value: f64,
    pub i_value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Classification {
    pub alpha: f64,
    pub outcome: Outcome,
    pub zeros: Vec<ZeroCrossing>,
    pub extrema: Vec<Extremum>,
    /// Energy at the decision point (or at the final node if undetermined).
    pub i_at_stop: f64,
    pub final_r: f64,
    pub final_state: [f64; 4],
}

/// Transversality floor: a zero with |u'| at or below this is treated as a
/// bound-state candidate rather than a crossing.
fn slope_floor(nl: &Nonlinearity, alpha: f64) -> f64 {
    1e-8 * (1.0 + 2.0 * nl.big_f(alpha).abs()).sqrt()
}

/// Classifies the shot at `alpha`, stopping as soon as the outcome is
/// decided: P as soon as some extremum has 2F(u) < 0 (including the initial
/// point T_0 = 0, which requires no integration), N at the k_max-th
/// transversal zero, G-candidate at a tangential zero. At the horizon the
/// energy criterion decides between lands-P (I < 0) and a settling
/// G-candidate (I > 0, u small and shrinking); anything else is undetermined.
pub fn classify_with_trajectory(
    nl: &Nonlinearity,
    n: f64,
    alpha: f64,
    cfg: &ProblemConfig,
    k_max: usize,
) -> Result<(Classification, Trajectory)> {
    if !(alpha > nl.b()) {
        return Err(Error::AlphaNotAboveB { alpha, b: nl.b() });
    }
    if k_max == 0 {
        return Err(Error::BadParameter("k_max must be at least 1".into()));
    }
    let cfg = ProblemConfig {
        n,
        alpha,
        ..cfg.clone()
    };
    let two_f_alpha = 2.0 * nl.big_f(alpha);
    let floor = slope_floor(nl, alpha);

    let mut zeros: Vec<ZeroCrossing> = Vec::new();
    let mut extrema = vec![Extremum {
        r: 0.0,
        value: alpha,
        i_value: two_f_alpha,
    }];
    let mut outcome: Option<Outcome> = None;
    let mut i_at_stop: Option<f64> = None;

    if two_f_alpha < 0.0 {
        outcome = Some(Outcome::LandsP { level: 1 });
        i_at_stop = Some(two_f_alpha);
    }

    let mut seen = 0usize;
    let decided_immediately = outcome.is_some();
    let traj = integrate_until(nl, &cfg, |t| {
        if decided_immediately {
            return true;
        }
        for idx in seen..t.events.len() {
            let e = t.events[idx];
            seen = idx + 1;
            match e.kind {
                EventKind::UZero => {
                    let slope = e.y[1];
                    if slope.abs() <= floor {
                        outcome = Some(Outcome::GCandidate {
                            level: zeros.len() + 1,
                        });
                        i_at_stop = Some(slope * slope + 2.0 * nl.big_f(e.y[0]));
                    } else {
                        zeros.push(ZeroCrossing { r: e.r, slope });
                        if zeros.len() >= k_max {
                            outcome = Some(Outcome::ReachesN { k: k_max });
                            i_at_stop = Some(slope * slope + 2.0 * nl.big_f(e.y[0]));
                        }
                    }
                }
                EventKind::DuZero => {
                    let i_val = 2.0 * nl.big_f(e.y[0]);
                    extrema.push(Extremum {
                        r: e.r,
                        value: e.y[0],
                        i_value: i_val,
                    });
                    if i_val < 0.0 {
                        outcome = Some(Outcome::LandsP {
                            level: zeros.len() + 1,
                        });
                        i_at_stop = Some(i_val);
                    }
                }
                EventKind::PhiZero | EventKind::IZero => {}
            }
            if outcome.is_some() {
                return true;
            }
        }
        false
    })?;

    if outcome.is_none() {
        let y = traj.last().y;
        let i_end = y[1] * y[1] + 2.0 * nl.big_f(y[0]);
        outcome = Some(match traj.termination {
            Termination::Horizon => {
                if i_end > 0.0
                    && y[0].abs() < 1e-3 * f64::max(1.0, alpha.abs())
                    && y[0] * y[1] < 0.0
                {
                    Outcome::GCandidate {
                        level: zeros.len() + 1,
                    }
                } else if i_end < 0.0 {
                    // monotone-forever tail: the energy criterion certifies P
                    Outcome::LandsP {
                        level: zeros.len() + 1,
                    }
                } else {
                    Outcome::Undetermined {
                        reason: format!(
                            "horizon r_max = {:e} reached with I = {i_end:e} and |u| = {:e}",
                            cfg.r_max,
                            y[0].abs()
                        ),
                    }
                }
            }
            Termination::StepUnderflow => Outcome::Undetermined {
                reason: format!("step underflow at r = {:e} before a decision", traj.r_end()),
            },
            Termination::ClassifierStop => unreachable!("stop fired only after a decision"),
        });
        i_at_stop = Some(i_end);
    }

    let last = traj.last();
    let classification = Classification {
        alpha,
        outcome: outcome.expect("outcome decided above"),
        zeros,
        extrema,
        i_at_stop: i_at_stop.expect("set together with outcome"),
        final_r: last.r,
        final_state: last.y,
    };
    Ok((classification, traj))
}

pub fn classify(
    nl: &Nonlinearity,
    n: f64,
    alpha: f64,
    cfg: &ProblemConfig,
    k_max: usize,
) -> Result<Classification> {
    classify_with_trajectory(nl, n, alpha, cfg, k_max).map(|(c, _)| c)
}

/// A certified bracket around the k-th critical amplitude, with the
/// midpoint shot.
#[derive(Clone, Debug)]
pub struct BoundState {
    pub k: usize,
    pub alpha_star: f64,
    pub bracket: (f64, f64),
    pub width: f64,
    pub classification: Classification,
    pub trajectory: Trajectory,
    /// Z_k estimate from the midpoint shot (absent if the midpoint fell on
    /// the P side before its k-th zero).
    pub z_k: Option<f64>,
    pub residual_u: f64,
    pub residual_du: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    N,
    P,
}

fn side_of(outcome: &Outcome, k: usize) -> Option<Side> {
    match outcome {
        Outcome::ReachesN { .. } => Some(Side::N),
        // a level-k candidate is the boundary itself; fold it onto the N side
        Outcome::GCandidate { level } if *level == k => Some(Side::N),
        Outcome::GCandidate { .. } => Some(Side::P),
        Outcome::LandsP { .. } => Some(Side::P),
        Outcome::Undetermined { .. } => None,
    }
}

/// Classifies with one retry on undetermined: horizon doubled, tolerances
/// tightened tenfold (an undetermined shot is usually a horizon artifact
/// near the boundary).
fn side_with_retry(
    nl: &Nonlinearity,
    n: f64,
    alpha: f64,
    cfg: &ProblemConfig,
    k: usize,
) -> Result<Side> {
    let c = classify(nl, n, alpha, cfg, k)?;
    if let Some(side) = side_of(&c.outcome, k) {
        return Ok(side);
    }
    let retry_cfg = ProblemConfig {
        r_max: cfg.r_max * 2.0,
        rtol: cfg.rtol / 10.0,
        atol: cfg.atol / 10.0,
        ..cfg.clone()
    };
    let c = classify(nl, n, alpha, &retry_cfg, k)?;
    match side_of(&c.outcome, k) {
        Some(side) => Ok(side),
        None => {
            let reason = match c.outcome {
                Outcome::Undetermined { reason } => reason,
                _ => unreachable!(),
            };
            Err(Error::Undetermined { alpha, reason })
        }
    }
}

/// The bisection predicate as a standalone query: does the shot at `alpha`
/// reach a k-th transversal zero before a P-stop? Retries once on an
/// undetermined outcome.
pub fn reaches_level(
    nl: &Nonlinearity,
    n: f64,
    alpha: f64,
    cfg: &ProblemConfig,
    k: usize,
) -> Result<bool> {
    Ok(side_with_retry(nl, n, alpha, cfg, k)? == Side::N)
}

/// Bisects the bracket on the predicate "reaches a k-th transversal zero
/// before a P-stop", certifying the critical amplitude to `width_tol`
/// relative (default 1e-12 when non-finite or non-positive is passed).
pub fn find_bound_state(
    nl: &Nonlinearity,
    n: f64,
    k: usize,
    bracket: (f64, f64),
    cfg: &ProblemConfig,
    width_tol: f64,
) -> Result<BoundState> {
    let width_tol = if width_tol.is_finite() && width_tol > 0.0 {
        width_tol
    } else {
        1e-12
    };
    let (mut lo, mut hi) = bracket;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::BadParameter(format!("bad bracket [{lo}, {hi}]")));
    }
    // bisection shots skip the variational columns; the final one honors cfg
    let fast = ProblemConfig {
        with_phi: false,
        ..cfg.clone()
    };
    let side_lo = side_with_retry(nl, n, lo, &fast, k)?;
    let side_hi = side_with_retry(nl, n, hi, &fast, k)?;
    if side_lo == side_hi {
        let side = match side_lo {
            Side::N => "reaches-N",
            Side::P => "lands-P",
        };
        return Err(Error::BracketSameSide {
            lo,
            hi,
            side: side.into(),
        });
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= width_tol * f64::max(1.0, mid.abs()) || mid <= lo || mid >= hi {
            break;
        }
        let side_mid = side_with_retry(nl, n, mid, &fast, k)?;
        if side_mid == side_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha_star = 0.5 * (lo + hi);
    let (classification, trajectory) = classify_with_trajectory(nl, n, alpha_star, cfg, k)?;
    let last = trajectory.last();
    Ok(BoundState {
        k,
        alpha_star,
        bracket: (lo, hi),
        width: hi - lo,
        z_k: classification.zeros.get(k - 1).map(|z| z.r),
        residual_u: last.y[0].abs(),
        residual_du: last.y[1].abs(),
        classification,
        trajectory,
    })
}

/// Classifies every grid amplitude in order. Per-point integration failures
/// become undetermined entries; the sweep itself never aborts.
pub fn scan(
    nl: &Nonlinearity,
    n: f64,
    alpha_grid: &[f64],
    cfg: &ProblemConfig,
    k_max: usize,
) -> Result<Vec<Classification>> {
    for w in alpha_grid.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::BadParameter(
                "alpha grid must be strictly increasing".into(),
            ));
        }
    }
    if let Some(&a) = alpha_grid.first() {
        if !(a > nl.b()) {
            return Err(Error::AlphaNotAboveB {
                alpha: a,
                b: nl.b(),
            });
        }
    }
    Ok(alpha_grid
        .iter()
        .map(|&alpha| classify_one(nl, n, alpha, cfg, k_max))
        .collect())
}

/// Single scan entry; failures fold into an undetermined classification.
pub fn classify_one(
    nl: &Nonlinearity,
    n: f64,
    alpha: f64,
    cfg: &ProblemConfig,
    k_max: usize,
) -> Classification {
    match classify(nl, n, alpha, cfg, k_max) {
        Ok(c) => c,
        Err(e) => Classification {
            alpha,
            outcome: Outcome::Undetermined {
                reason: e.to_string(),
            },
            zeros: Vec::new(),
            extrema: Vec::new(),
            i_at_stop: f64::NAN,
            final_r: f64::NAN,
            final_state: [f64::NAN; 4],
        },
    }
}

#[derive(Clone, Debug)]
pub struct DirichletSolution {
    pub rho: f64,
    pub k: usize,
    pub alpha: f64,
    /// Interior zeros Z_1..Z_k.
    pub zeros: Vec<f64>,
    /// Z_{k+1}, matched to rho.
    pub z_next: f64,
    pub boundary_residual: f64,
    pub trajectory: Trajectory,
}

/// Z_{k+1}(alpha), or None when the horizon arrives first.
fn z_next_of(
    nl: &Nonlinearity,
    n: f64,
    alpha: f64,
    cfg: &ProblemConfig,
    k: usize,
    r_max: f64,
) -> Result<Option<f64>> {
    let cfg = ProblemConfig {
        n,
        alpha,
        r_max,
        with_phi: false,
        ..cfg.clone()
    };
    let mut count = 0usize;
    let traj = integrate_until(nl, &cfg, |t| {
        count = t.events_of(EventKind::UZero).count();
        count >= k + 1
    })?;
    let zs: Vec<f64> = traj.events_of(EventKind::UZero).map(|e| e.r).collect();
    Ok(zs.get(k).copied())
}

/// Solves u(rho) = 0 with exactly k interior zeros by bisecting
/// Z_{k+1}(alpha) = rho over the amplitude bracket. Monotonicity of Z_i in
/// alpha holds for the b = 0 families this is intended for; bisection only
/// needs the bracket to straddle.
pub fn solve_dirichlet(
    nl: &Nonlinearity,
    n: f64,
    rho: f64,
    k: usize,
    cfg: &ProblemConfig,
    bracket: (f64, f64),
) -> Result<DirichletSolution> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::BadParameter(format!(
            "rho must be positive, got {rho}"
        )));
    }
    let (mut lo, mut hi) = bracket;
    if !(lo.is_finite() && hi.is_finite() && lo < hi && lo > nl.b()) {
        return Err(Error::BadParameter(format!("bad bracket [{lo}, {hi}]")));
    }
    let r_horizon = f64::max(cfg.r_max, 4.0 * rho);
    let z_of = |alpha: f64| -> Result<f64> {
        match z_next_of(nl, n, alpha, cfg, k, r_horizon)? {
            Some(z) => Ok(z),
            None => match z_next_of(nl, n, alpha, cfg, k, 4.0 * r_horizon)? {
                Some(z) => Ok(z),
                None => Err(Error::Horizon {
                    r_max: 4.0 * r_horizon,
                    what: format!("zero number {} at alpha = {alpha:e}", k + 1),
                }),
            },
        }
    };
    let mut g_lo = z_of(lo)? - rho;
    let g_hi = z_of(hi)? - rho;
    let degenerate = 1e-7 * f64::max(1.0, rho);
    if g_lo.abs() <= degenerate && g_hi.abs() <= degenerate {
        return Err(Error::DegenerateBracket { lo, hi });
    }
    let tol = 1e-10 * rho;
    if g_lo.abs() > tol && g_hi.abs() > tol && (g_lo > 0.0) == (g_hi > 0.0) {
        return Err(Error::BracketSameSide {
            lo,
            hi,
            side: format!("Z_{}(alpha) - rho has one sign", k + 1),
        });
    }
    let mut alpha = if g_lo.abs() <= tol { lo } else { hi };
    let mut g_best = if g_lo.abs() <= tol { g_lo } else { g_hi };
    if g_lo.abs() > tol && g_hi.abs() > tol {
        for iter in 0.. {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                return Err(Error::Numerical(format!(
                    "Dirichlet bisection exhausted precision; best residual {g_best:e}"
                )));
            }
            let g_mid = z_of(mid)? - rho;
            if g_mid.abs() <= tol {
                alpha = mid;
                g_best = g_mid;
                break;
            }
            if (g_mid > 0.0) == (g_lo > 0.0) {
                lo = mid;
                g_lo = g_mid;
            } else {
                hi = mid;
            }
            if iter > 300 {
                return Err(Error::Numerical(
                    "Dirichlet bisection failed to converge".into(),
                ));
            }
        }
    }
    let _ = g_best;

    // Final shot, integrated a little past rho so the boundary state is
    // evaluable, with the variational columns per cfg.
    let z_next = z_of(alpha)?;
    let final_cfg = ProblemConfig {
        n,
        alpha,
        r_max: 1.05 * f64::max(rho, z_next),
        ..cfg.clone()
    };
    let trajectory = integrate_until(nl, &final_cfg, |_| false)?;
    let zeros: Vec<f64> = trajectory
        .events_of(EventKind::UZero)
        .map(|e| e.r)
        .filter(|&z| z < rho * (1.0 - 1e-8))
        .collect();
    if zeros.len() != k {
        return Err(Error::Numerical(format!(
            "expected {k} interior zeros, found {} at alpha = {alpha:e}",
            zeros.len()
        )));
    }
    let boundary_residual = trajectory.eval_refined(rho)?[0].abs();
    Ok(DirichletSolution {
        rho,
        k,
        alpha,
        zeros,
        z_next,
        boundary_residual,
        trajectory,
    })
}
