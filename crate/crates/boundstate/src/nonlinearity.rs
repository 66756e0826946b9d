//! Nonlinearity families: evaluation of f, f′ and the primitive F, the
//! landmark constants b (positive dead-core edge) and β (upper zero of F),
//! and a grid-sampled checker for the structural hypotheses the rest of the
//! crate keys its analyses on.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::adaptive_simpson;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Built-in families plus an escape hatch for caller-supplied odd f.
#[derive(Clone)]
pub enum Family {
    /// Piecewise linear: f(s) = -s on [0, 1/2], s - 1 beyond, odd extension.
    Troy,
    /// f(s) = s^p - s^q on s >= 0 with p > q > 0, odd extension.
    PowerDiff { p: f64, q: f64 },
    /// f(s) = |s|^q sign(s) with 0 < q <= 1.
    PurePower { q: f64 },
    /// Caller-supplied evaluators; the caller owns the odd-extension contract.
    Custom {
        label: String,
        f: ScalarFn,
        df: ScalarFn,
        big_f: ScalarFn,
        df_unbounded_at_zero: bool,
    },
}

impl fmt::Debug for Family {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Troy => write!(fm, "Troy"),
            Family::PowerDiff { p, q } => write!(fm, "PowerDiff {{ p: {p}, q: {q} }}"),
            Family::PurePower { q } => write!(fm, "PurePower {{ q: {q} }}"),
            Family::Custom { label, .. } => write!(fm, "Custom {{ label: {label:?} }}"),
        }
    }
}

/// A nonlinearity together with its cached landmarks.
///
/// All built-ins are odd by construction: positive-branch values are computed
/// on |s| and reflected, so f(-s) == -f(s) holds bitwise.
#[derive(Clone, Debug)]
pub struct Nonlinearity {
    family: Family,
    b: f64,
    beta: f64,
}

fn pow_pos(x: f64, e: f64) -> f64 {
    if e == 1.0 {
        x
    } else {
        x.powf(e)
    }
}

fn dpow_pos(x: f64, e: f64) -> f64 {
    if e == 1.0 {
        1.0
    } else {
        e * x.powf(e - 1.0)
    }
}

impl Nonlinearity {
    pub fn troy() -> Self {
        Nonlinearity {
            family: Family::Troy,
            b: 1.0,
            beta: 1.0 + std::f64::consts::SQRT_2 / 2.0,
        }
    }

    pub fn power_diff(p: f64, q: f64) -> Result<Self> {
        if !(p.is_finite() && q.is_finite() && q > 0.0 && p > q) {
            return Err(Error::BadParameter(format!(
                "power_diff requires finite p > q > 0, got p={p}, q={q}"
            )));
        }
        // F(s) = s^{p+1}/(p+1) - s^{q+1}/(q+1) vanishes where s^{p-q} = (p+1)/(q+1).
        let beta = ((p + 1.0) / (q + 1.0)).powf(1.0 / (p - q));
        Ok(Nonlinearity {
            family: Family::PowerDiff { p, q },
            b: 1.0,
            beta,
        })
    }

    pub fn pure_power(q: f64) -> Result<Self> {
        if !(q.is_finite() && q > 0.0 && q <= 1.0) {
            return Err(Error::BadParameter(format!(
                "pure_power requires 0 < q <= 1, got q={q}"
            )));
        }
        Ok(Nonlinearity {
            family: Family::PurePower { q },
            b: 0.0,
            beta: 0.0,
        })
    }

    /// Wraps caller-supplied evaluators. `big_f` may be omitted, in which
    /// case F is computed by adaptive quadrature of f from 0 (slow but safe).
    /// `df_unbounded_at_zero` must be set when f′(s) blows up as s -> 0 so
    /// the integrator can clamp its variational coefficient there.
    pub fn custom(
        label: impl Into<String>,
        f: ScalarFn,
        df: ScalarFn,
        big_f: Option<ScalarFn>,
        b: f64,
        df_unbounded_at_zero: bool,
    ) -> Result<Self> {
        if !(b.is_finite() && b >= 0.0) {
            return Err(Error::BadParameter(format!(
                "custom family requires b >= 0, got {b}"
            )));
        }
        let big_f = big_f.unwrap_or_else(|| {
            let f = f.clone();
            Arc::new(move |s: f64| {
                adaptive_simpson(&|t| f(t), 0.0, s.abs(), 1e-12).unwrap_or(f64::NAN)
            })
        });
        let mut nl = Nonlinearity {
            family: Family::Custom {
                label: label.into(),
                f,
                df,
                big_f,
                df_unbounded_at_zero,
            },
            b,
            beta: 0.0,
        };
        if b > 0.0 {
            nl.beta = find_beta(&nl, 4.0 * b.max(1.0))?;
        }
        Ok(nl)
    }

    /// Parses a family spec: `troy`, `power_diff:p=3,q=1`, `pure_power:q=0.5`.
    pub fn from_spec(spec: &str) -> Result<Self> {
        let (name, rest) = match spec.split_once(':') {
            Some((n, r)) => (n.trim(), Some(r)),
            None => (spec.trim(), None),
        };
        let mut params: Vec<(String, f64)> = Vec::new();
        if let Some(rest) = rest {
            for piece in rest.split(',') {
                let piece = piece.trim();
                if piece.is_empty() {
                    continue;
                }
                let (k, v) = piece.split_once('=').ok_or_else(|| {
                    Error::BadParameter(format!("expected key=value, got `{piece}`"))
                })?;
                let v: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::BadParameter(format!("bad number `{}`", v.trim())))?;
                params.push((k.trim().to_string(), v));
            }
        }
        let get = |key: &str| -> Result<f64> {
            params
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::BadParameter(format!("`{name}` requires parameter {key}")))
        };
        match name {
            "troy" => Ok(Self::troy()),
            "power_diff" => Self::power_diff(get("p")?, get("q")?),
            "pure_power" => Self::pure_power(get("q")?),
            other => Err(Error::BadFamily(other.to_string())),
        }
    }

    /// Canonical spec string; inverse of `from_spec` for built-ins.
    pub fn spec_string(&self) -> String {
        match &self.family {
            Family::Troy => "troy".to_string(),
            Family::PowerDiff { p, q } => format!("power_diff:p={p},q={q}"),
            Family::PurePower { q } => format!("pure_power:q={q}"),
            Family::Custom { label, .. } => format!("custom:{label}"),
        }
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Upper zero of F (0 for families with b = 0).
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn f(&self, s: f64) -> f64 {
        let x = s.abs();
        let v = match &self.family {
            Family::Troy => {
                if x < 0.5 {
                    -x
                } else {
                    x - 1.0
                }
            }
            Family::PowerDiff { p, q } => pow_pos(x, *p) - pow_pos(x, *q),
            Family::PurePower { q } => pow_pos(x, *q),
            Family::Custom { f, .. } => return f(s),
        };
        if s < 0.0 {
            -v
        } else {
            v
        }
    }

    /// f′(s); even by oddness of f. Jump points of built-ins report the
    /// one-sided value from the outer piece.
    pub fn df(&self, s: f64) -> f64 {
        let x = s.abs();
        match &self.family {
            Family::Troy => {
                if x < 0.5 {
                    -1.0
                } else {
                    1.0
                }
            }
            Family::PowerDiff { p, q } => dpow_pos(x, *p) - dpow_pos(x, *q),
            Family::PurePower { q } => dpow_pos(x, *q),
            Family::Custom { df, .. } => df(s),
        }
    }

    /// F(s) = integral of f from 0 to s; even.
    pub fn big_f(&self, s: f64) -> f64 {
        let x = s.abs();
        match &self.family {
            Family::Troy => {
                if x < 0.5 {
                    -0.5 * x * x
                } else {
                    let d = x - 1.0;
                    0.5 * d * d - 0.25
                }
            }
            Family::PowerDiff { p, q } => {
                pow_pos(x, p + 1.0) / (p + 1.0) - pow_pos(x, q + 1.0) / (q + 1.0)
            }
            Family::PurePower { q } => pow_pos(x, q + 1.0) / (q + 1.0),
            Family::Custom { big_f, .. } => big_f(s),
        }
    }

    /// F(s)/f(s). Undefined where f vanishes; callers keep a guard band.
    pub fn ratio(&self, s: f64) -> f64 {
        self.big_f(s) / self.f(s)
    }

    /// (F/f)′(s) through the algebraic identity (f² − F·f′)/f², avoiding
    /// finite differences: the margins under test are exactly this quantity.
    pub fn ratio_deriv(&self, s: f64) -> f64 {
        let fv = self.f(s);
        let ff = fv * fv;
        (ff - self.big_f(s) * self.df(s)) / ff
    }

    /// True when f′(s) is unbounded as s -> 0 (fractional powers). The
    /// integrator clamps the variational coefficient near u = 0 in that case.
    /// Heights where f has a corner with finite one-sided slopes. The
    /// integrator ends steps exactly at crossings of these levels and their
    /// mirrors, so no accepted step straddles a derivative jump.
    pub fn kink_heights(&self) -> &'static [f64] {
        match &self.family {
            Family::Troy => &[0.5],
            _ => &[],
        }
    }

    pub fn df_unbounded_at_zero(&self) -> bool {
        match &self.family {
            Family::Troy => false,
            Family::PowerDiff { q, .. } => *q < 1.0,
            Family::PurePower { q } => *q < 1.0,
            Family::Custom {
                df_unbounded_at_zero,
                ..
            } => *df_unbounded_at_zero,
        }
    }
}

/// Locates β, the positive zero of F above b, by doubling expansion from
/// `s_max_initial` followed by bisection and two Newton polish steps
/// (F′ = f). Returns 0 immediately for b = 0 families, where F > 0 away
/// from the origin and no landmark exists.
pub fn find_beta(nl: &Nonlinearity, s_max_initial: f64) -> Result<f64> {
    if nl.b() == 0.0 {
        return Ok(0.0);
    }
    let b = nl.b();
    let mut lo = b;
    if !(nl.big_f(lo) < 0.0) {
        return Err(Error::NoBracket(format!(
            "F(b) = {:e} is not negative",
            nl.big_f(lo)
        )));
    }
    let mut hi = s_max_initial.max(b * (1.0 + 1e-3));
    let mut doublings = 0;
    while nl.big_f(hi) <= 0.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 || !hi.is_finite() {
            return Err(Error::NoBracket(format!(
                "F stayed non-positive up to s = {hi:e}; no upper zero"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if nl.big_f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    let mut beta = 0.5 * (lo + hi);
    for _ in 0..2 {
        let fv = nl.f(beta);
        if fv != 0.0 {
            let next = beta - nl.big_f(beta) / fv;
            if next.is_finite() && next > b {
                beta = next;
            }
        }
    }
    if !(beta.is_finite() && beta > b) {
        return Err(Error::NonFinite {
            what: "beta".into(),
            at: beta,
        });
    }
    Ok(beta)
}

/// Identifier for one structural hypothesis. Primed variants are the b = 0
/// counterparts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HypId {
    F1,
    F2,
    F3,
    F4,
    F4Prime,
    F5,
    F6,
    F1Prime,
    F2Prime,
    F3Prime,
}

impl HypId {
    pub const ALL: [HypId; 10] = [
        HypId::F1,
        HypId::F2,
        HypId::F3,
        HypId::F4,
        HypId::F4Prime,
        HypId::F5,
        HypId::F6,
        HypId::F1Prime,
        HypId::F2Prime,
        HypId::F3Prime,
    ];

    pub fn label(self) -> &'static str {
        match self {
            HypId::F1 => "f1",
            HypId::F2 => "f2",
            HypId::F3 => "f3",
            HypId::F4 => "f4",
            HypId::F4Prime => "f4'",
            HypId::F5 => "f5",
            HypId::F6 => "f6",
            HypId::F1Prime => "f1'",
            HypId::F2Prime => "f2'",
            HypId::F3Prime => "f3'",
        }
    }
}

impl fmt::Display for HypId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for HypId {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

/// One hypothesis verdict: the smallest slack found on the grid (negative
/// means violated) and the grid point attaining it.
#[derive(Clone, Debug, Serialize)]
pub struct HypothesisCheck {
    pub id: HypId,
    pub verdict: Verdict,
    pub margin: f64,
    pub at: f64,
    pub note: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub family: String,
    pub n: f64,
    pub s_max: f64,
    pub grid_count: usize,
    pub checks: Vec<HypothesisCheck>,
}

impl HypothesisReport {
    pub fn get(&self, id: HypId) -> &HypothesisCheck {
        self.checks
            .iter()
            .find(|c| c.id == id)
            .expect("report covers every hypothesis")
    }

    pub fn passes(&self, id: HypId) -> bool {
        self.get(id).verdict == Verdict::Pass
    }

    pub fn any_failed(&self) -> bool {
        self.checks.iter().any(|c| c.verdict == Verdict::Fail)
    }
}

/// Worst-slack accumulator. NaN slack is treated as a hard violation.
struct Worst {
    slack: f64,
    at: f64,
    scale: f64,
}

impl Worst {
    fn new() -> Self {
        Worst {
            slack: f64::INFINITY,
            at: f64::NAN,
            scale: 1.0,
        }
    }

    fn add(&mut self, slack: f64, at: f64, scale: f64) {
        let slack = if slack.is_nan() {
            f64::NEG_INFINITY
        } else {
            slack
        };
        if slack < self.slack {
            self.slack = slack;
            self.at = at;
            self.scale = scale.abs().max(1.0);
        }
    }

    fn check(&self, id: HypId, note: &str) -> HypothesisCheck {
        let verdict = if self.slack < -1e-10 * self.scale {
            Verdict::Fail
        } else {
            Verdict::Pass
        };
        HypothesisCheck {
            id,
            verdict,
            margin: self.slack,
            at: self.at,
            note: note.to_string(),
        }
    }
}

fn not_applicable(id: HypId, note: &str) -> HypothesisCheck {
    HypothesisCheck {
        id,
        verdict: Verdict::NotApplicable,
        margin: f64::NAN,
        at: f64::NAN,
        note: note.to_string(),
    }
}

fn linspace(a: f64, b: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    (0..count)
        .map(|i| a + (b - a) * (i as f64) / ((count - 1) as f64))
        .collect()
}

/// Grid points in [a, b] avoiding the guard band |s - b_landmark| < guard.
fn guarded_grid(a: f64, b: f64, count: usize, landmark: f64, guard: f64) -> Vec<f64> {
    linspace(a, b, count)
        .into_iter()
        .filter(|s| (s - landmark).abs() >= guard)
        .collect()
}

/// Samples every structural hypothesis on [0, s_max] with `grid_count`
/// points per check. Which variant applies is routed by the family's b:
/// unprimed sign hypotheses need b > 0, primed ones need b = 0; the ratio
/// conditions (f4)/(f4') apply to every family. A pass is "no violation
/// found on the grid"; margins and their locations are always recorded.
pub fn check_hypotheses(
    nl: &Nonlinearity,
    n: f64,
    s_max: f64,
    grid_count: usize,
) -> HypothesisReport {
    let b = nl.b();
    let beta = nl.beta();
    let guard = 1e-6 * s_max;
    let mut checks: Vec<HypothesisCheck> = Vec::new();

    // (f1): odd f with f <= 0 on (0, b), f > 0 past b, F < 0 up to beta.
    if b > 0.0 {
        let mut w = Worst::new();
        for s in guarded_grid(guard, b - guard, grid_count, b, guard) {
            w.add(-nl.f(s), s, nl.f(s));
        }
        for s in guarded_grid(b + guard, s_max, grid_count, b, guard) {
            w.add(nl.f(s), s, nl.f(s));
        }
        for s in linspace(guard, beta * (1.0 - 1e-9), grid_count) {
            w.add(-nl.big_f(s), s, nl.big_f(s));
        }
        let mut check = w.check(HypId::F1, "sign structure of f and F around b and beta");
        // auxiliary gates: f(0) = 0 and odd symmetry on a coarse sample
        let f0 = nl.f(0.0).abs();
        let mut odd_err: f64 = 0.0;
        for s in linspace(0.1 * s_max, s_max, 17) {
            odd_err = odd_err.max((nl.f(s) + nl.f(-s)).abs() / (1.0 + nl.f(s).abs()));
        }
        if f0 > 1e-12 || odd_err > 1e-12 {
            check.verdict = Verdict::Fail;
            check.note =
                format!("odd-symmetry gate violated: |f(0)|={f0:e}, odd residual={odd_err:e}");
        }
        checks.push(check);
    } else {
        checks.push(not_applicable(HypId::F1, "requires b > 0"));
    }

    // (f2) / (f2'): f' integrable near 0, probed through the dyadic tail of
    // f(1) - f(eps_k), eps_k = 2^-k. Both the limit magnitude |f(eps)| and
    // the largest increment must be small for the integral to converge to
    // f(1) - f(0).
    {
        let threshold = 1e-4 * (1.0 + nl.f(1.0).abs());
        let mut tail: f64 = 0.0;
        let mut at = 0.0;
        let mut prev = f64::NAN;
        for k in 200..=220 {
            let eps = 2f64.powi(-k);
            let v = nl.f(eps);
            if v.abs() > tail {
                tail = v.abs();
                at = eps;
            }
            if !prev.is_nan() && (v - prev).abs() > tail {
                tail = (v - prev).abs();
                at = eps;
            }
            prev = v;
        }
        let mut w = Worst::new();
        w.add(threshold - tail, at, threshold);
        let note = "dyadic tail of f(1) - f(eps), eps = 2^-k, k in [200, 220]";
        let (active, inactive) = if b > 0.0 {
            (HypId::F2, HypId::F2Prime)
        } else {
            (HypId::F2Prime, HypId::F2)
        };
        let mut both = vec![w.check(active, note)];
        both.push(not_applicable(
            inactive,
            if b > 0.0 {
                "requires b = 0"
            } else {
                "requires b > 0"
            },
        ));
        both.sort_by_key(|c| (c.id != HypId::F2) as u8);
        checks.extend(both);
    }

    // (f3): f(s) >= f'(s)(s - beta) for s >= beta.
    if b > 0.0 {
        let mut w = Worst::new();
        for s in guarded_grid(beta, s_max, grid_count, b, guard) {
            let lhs = nl.f(s);
            let rhs = nl.df(s) * (s - beta);
            w.add(lhs - rhs, s, lhs.abs().max(rhs.abs()));
        }
        checks.push(w.check(HypId::F3, "f(s) - f'(s)(s - beta) on [beta, s_max]"));
    } else {
        checks.push(not_applicable(HypId::F3, "requires b > 0"));
    }

    // (f4), (f4'): (F/f)' bounded below by (n-2)/(2n), resp. (n-2)/2.
    for (id, bound) in [
        (HypId::F4, (n - 2.0) / (2.0 * n)),
        (HypId::F4Prime, (n - 2.0) / 2.0),
    ] {
        let mut w = Worst::new();
        for s in guarded_grid(guard, s_max, grid_count, b, guard) {
            let v = nl.ratio_deriv(s);
            w.add(v - bound, s, v.abs().max(bound.abs()));
        }
        let note = format!("(F/f)' - {bound:.6} on (0, s_max], guard band at b");
        checks.push(w.check(id, &note));
    }

    // (f5): s f'(s)/f(s) decreasing for s > b.
    if b > 0.0 {
        let mut w = Worst::new();
        let grid = guarded_grid(b + guard, s_max, grid_count, b, guard);
        for pair in grid.windows(2) {
            let g0 = pair[0] * nl.df(pair[0]) / nl.f(pair[0]);
            let g1 = pair[1] * nl.df(pair[1]) / nl.f(pair[1]);
            w.add(g0 - g1, pair[1], g0.abs().max(g1.abs()));
        }
        checks.push(w.check(HypId::F5, "successive differences of s f'/f on (b, s_max]"));
    } else {
        checks.push(not_applicable(HypId::F5, "requires b > 0"));
    }

    // (f6): beta f'(beta)/f(beta) <= n/(n-2); only meaningful for n > 2.
    if b > 0.0 && n > 2.0 {
        let mut w = Worst::new();
        let lhs = beta * nl.df(beta) / nl.f(beta);
        let bound = n / (n - 2.0);
        w.add(bound - lhs, beta, lhs.abs().max(bound.abs()));
        checks.push(w.check(HypId::F6, "point test at beta"));
    } else if b > 0.0 {
        checks.push(not_applicable(HypId::F6, "requires n > 2"));
    } else {
        checks.push(not_applicable(HypId::F6, "requires b > 0"));
    }

    // (f1'): s f(s) > 0 away from 0, odd symmetry.
    if b == 0.0 {
        let mut w = Worst::new();
        for s in linspace(guard, s_max, grid_count) {
            w.add(nl.f(s), s, nl.f(s));
        }
        let mut check = w.check(HypId::F1Prime, "f > 0 on (0, s_max]");
        let f0 = nl.f(0.0).abs();
        let mut odd_err: f64 = 0.0;
        for s in linspace(0.1 * s_max, s_max, 17) {
            odd_err = odd_err.max((nl.f(s) + nl.f(-s)).abs() / (1.0 + nl.f(s).abs()));
        }
        if f0 > 1e-12 || odd_err > 1e-12 {
            check.verdict = Verdict::Fail;
            check.note =
                format!("odd-symmetry gate violated: |f(0)|={f0:e}, odd residual={odd_err:e}");
        }
        checks.push(check);
    } else {
        checks.push(not_applicable(HypId::F1Prime, "requires b = 0"));
    }

    // (f3'): f(s) >= s f'(s) for s > 0, with strictness near 0. Linear f
    // satisfies it only with equality and is flagged not-applicable: it is
    // retained purely as an integrator calibration family.
    if b == 0.0 {
        let mut w = Worst::new();
        for s in linspace(guard, s_max, grid_count) {
            let lhs = nl.f(s);
            let rhs = s * nl.df(s);
            w.add(lhs - rhs, s, lhs.abs().max(rhs.abs()));
        }
        let mut strict: f64 = 0.0;
        let mut s = guard.max(1e-12);
        while s < 0.01 * s_max {
            strict = strict.max(nl.f(s) - s * nl.df(s));
            s *= 2.0;
        }
        let mut check = w.check(HypId::F3Prime, "f(s) - s f'(s) on (0, s_max]");
        if check.verdict == Verdict::Pass && strict <= 1e-12 {
            check.verdict = Verdict::NotApplicable;
            check.note = "holds with equality only (linear f); strictness fails near 0".to_string();
        }
        checks.push(check);
    } else {
        checks.push(not_applicable(HypId::F3Prime, "requires b = 0"));
    }

    let order: Vec<usize> = HypId::ALL
        .iter()
        .map(|id| checks.iter().position(|c| c.id == *id).unwrap())
        .collect();
    let checks = order.into_iter().map(|i| checks[i].clone()).collect();

    HypothesisReport {
        family: nl.spec_string(),
        n,
        s_max,
        grid_count,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent landmark oracle: plain bisection on F over [b, hi],
    /// relying only on big_f.
    fn beta_oracle(nl: &Nonlinearity, hi: f64) -> f64 {
        let mut lo = nl.b();
        let mut hi = hi;
        assert!(
            nl.big_f(lo) < 0.0 && nl.big_f(hi) > 0.0,
            "oracle bracket invalid"
        );
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if nl.big_f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn troy_landmarks() {
        let nl = Nonlinearity::troy();
        let want = 1.0 + std::f64::consts::SQRT_2 / 2.0;
        assert_eq!(nl.b(), 1.0);
        assert!((nl.beta() - want).abs() <= 1e-14 * want);
        let found = find_beta(&nl, 10.0).unwrap();
        assert!(
            (found - want).abs() <= 1e-12 * want,
            "find_beta gave {found}"
        );
        let oracle = beta_oracle(&nl, 10.0);
        assert!((found - oracle).abs() <= 1e-12 * want);
        assert!(nl.big_f(found).abs() <= 1e-12 * (1.0 + found));
    }

    #[test]
    fn power_diff_landmarks() {
        let nl = Nonlinearity::power_diff(3.0, 1.0).unwrap();
        let want = std::f64::consts::SQRT_2;
        assert!((nl.beta() - want).abs() <= 1e-14 * want);
        let found = find_beta(&nl, 10.0).unwrap();
        assert!((found - want).abs() <= 1e-12 * want);

        let nl = Nonlinearity::power_diff(0.8, 0.5).unwrap();
        let want = (1.8f64 / 1.5).powf(1.0 / 0.3);
        assert!((nl.beta() - want).abs() <= 1e-13 * want);
        let oracle = beta_oracle(&nl, 10.0);
        assert!((nl.beta() - oracle).abs() <= 1e-12 * want);
        assert!(nl.big_f(nl.beta()).abs() <= 1e-12 * (1.0 + nl.beta()));
    }

    #[test]
    fn pure_power_has_no_landmarks() {
        let nl = Nonlinearity::pure_power(0.5).unwrap();
        assert_eq!(nl.b(), 0.0);
        assert_eq!(nl.beta(), 0.0);
        assert_eq!(find_beta(&nl, 10.0).unwrap(), 0.0);
    }

    #[test]
    fn troy_piecewise_values() {
        let nl = Nonlinearity::troy();
        assert_eq!(nl.f(0.25), -0.25);
        assert_eq!(nl.f(0.75), -0.25);
        assert_eq!(nl.f(2.0), 1.0);
        assert_eq!(nl.big_f(0.25), -0.03125);
        assert_eq!(nl.big_f(0.5), -0.125);
        // continuity across the kink at 1/2: -(1/2)^2/2 = (1/2-1)^2/2 - 1/4
        assert_eq!(nl.big_f(0.5), 0.5 * 0.25 - 0.25);
        assert_eq!(nl.big_f(1.5), -0.125);
    }

    #[test]
    fn builtins_are_bitwise_odd() {
        for nl in [
            Nonlinearity::troy(),
            Nonlinearity::power_diff(3.0, 1.0).unwrap(),
            Nonlinearity::power_diff(0.8, 0.5).unwrap(),
            Nonlinearity::pure_power(0.5).unwrap(),
        ] {
            for s in [1e-8, 0.3, 0.5, 1.0, 1.4142, 2.0, 7.5] {
                assert_eq!(nl.f(s), -nl.f(-s), "f odd at {s} for {}", nl.spec_string());
                assert_eq!(nl.df(s), nl.df(-s), "f' even at {s}");
                assert_eq!(nl.big_f(s), nl.big_f(-s), "F even at {s}");
            }
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let nl = Nonlinearity::power_diff(0.8, 0.5).unwrap();
        for s in [0.3, 0.9, 1.7, 4.0] {
            let h = 1e-6 * s;
            let fd = (nl.f(s + h) - nl.f(s - h)) / (2.0 * h);
            assert!(
                (fd - nl.df(s)).abs() <= 1e-7 * (1.0 + nl.df(s).abs()),
                "at {s}"
            );
            let fd_f = (nl.big_f(s + h) - nl.big_f(s - h)) / (2.0 * h);
            assert!(
                (fd_f - nl.f(s)).abs() <= 1e-7 * (1.0 + nl.f(s).abs()),
                "F' at {s}"
            );
        }
    }

    #[test]
    fn troy_ratio_deriv_closed_form() {
        let nl = Nonlinearity::troy();
        for s in [0.6, 0.9, 1.2, 2.0, 5.0, 9.0] {
            let want = 0.5 + 1.0 / (4.0 * (s - 1.0) * (s - 1.0));
            let got = nl.ratio_deriv(s);
            assert!(
                (got - want).abs() <= 1e-12 * want,
                "at {s}: {got} vs {want}"
            );
        }
        for s in [0.1, 0.3, 0.45] {
            assert!(
                (nl.ratio_deriv(s) - 0.5).abs() <= 1e-14,
                "flat region at {s}"
            );
        }
    }

    #[test]
    fn power_diff_31_ratio_deriv_closed_form() {
        // (F/f)' = (4s^4 - 4s^2 + 8) / (16 (s^2 - 1)^2) for f = s^3 - s
        let nl = Nonlinearity::power_diff(3.0, 1.0).unwrap();
        for s in [0.4, 0.8, 1.3, 2.0, 6.0] {
            let s2 = s * s;
            let want = (4.0 * s2 * s2 - 4.0 * s2 + 8.0) / (16.0 * (s2 - 1.0) * (s2 - 1.0));
            let got = nl.ratio_deriv(s);
            assert!(
                (got - want).abs() <= 1e-11 * want.abs(),
                "at {s}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn hypotheses_troy_n3() {
        let nl = Nonlinearity::troy();
        let rep = check_hypotheses(&nl, 3.0, 10.0, 2000);
        for id in [
            HypId::F1,
            HypId::F2,
            HypId::F3,
            HypId::F4,
            HypId::F4Prime,
            HypId::F5,
            HypId::F6,
        ] {
            assert_eq!(
                rep.get(id).verdict,
                Verdict::Pass,
                "{id} should pass: {:?}",
                rep.get(id)
            );
        }
        for id in [HypId::F1Prime, HypId::F2Prime, HypId::F3Prime] {
            assert_eq!(rep.get(id).verdict, Verdict::NotApplicable, "{id}");
        }
        // slack of (f3) is identically beta - 1 = sqrt(2)/2 on [beta, s_max]
        let f3 = rep.get(HypId::F3);
        assert!((f3.margin - std::f64::consts::SQRT_2 / 2.0).abs() <= 1e-9);
        // (f4') slack: (F/f)' - 1/2 >= 0, exactly 0 on the inner linear piece
        let f4p = rep.get(HypId::F4Prime);
        assert!(
            f4p.margin >= -1e-15 && f4p.margin <= 1e-6,
            "margin {}",
            f4p.margin
        );
        // (f6): beta/(beta-1) = 1 + sqrt(2) against bound 3
        let f6 = rep.get(HypId::F6);
        assert!((f6.margin - (3.0 - (1.0 + std::f64::consts::SQRT_2))).abs() <= 1e-12);
        assert!(!rep.any_failed());
    }

    #[test]
    fn hypotheses_troy_n4() {
        let rep = check_hypotheses(&Nonlinearity::troy(), 4.0, 10.0, 2000);
        assert_eq!(rep.get(HypId::F4Prime).verdict, Verdict::Fail);
        // worst violation approaches 1/2 - 1 at large s
        assert!(rep.get(HypId::F4Prime).margin < -0.4);
        // at s = 3 the value is 1/2 + 1/16 < 1, a concrete violation point
        let nl = Nonlinearity::troy();
        assert!(nl.ratio_deriv(3.0) < 1.0);
        // (f4) with bound 1/4 still passes
        assert_eq!(rep.get(HypId::F4).verdict, Verdict::Pass);
        // beta/(beta-1) = 2.414... exceeds n/(n-2) = 2
        assert_eq!(rep.get(HypId::F6).verdict, Verdict::Fail);
    }

    #[test]
    fn hypotheses_power_diff_fractional_n3() {
        let nl = Nonlinearity::power_diff(0.8, 0.5).unwrap();
        let rep = check_hypotheses(&nl, 3.0, 10.0, 2000);
        assert_eq!(rep.get(HypId::F4Prime).verdict, Verdict::Pass);
        assert_eq!(rep.get(HypId::F1).verdict, Verdict::Pass);
        assert_eq!(rep.get(HypId::F2).verdict, Verdict::Pass);
        assert_eq!(rep.get(HypId::F5).verdict, Verdict::Pass);
    }

    #[test]
    fn hypotheses_pure_power() {
        let rep = check_hypotheses(&Nonlinearity::pure_power(0.5).unwrap(), 3.0, 10.0, 2000);
        for id in [HypId::F1Prime, HypId::F2Prime, HypId::F3Prime] {
            assert_eq!(
                rep.get(id).verdict,
                Verdict::Pass,
                "{id}: {:?}",
                rep.get(id)
            );
        }
        for id in [HypId::F1, HypId::F2, HypId::F3, HypId::F5, HypId::F6] {
            assert_eq!(rep.get(id).verdict, Verdict::NotApplicable, "{id}");
        }
        // strictness of (f3'): f - s f' = (1/2) s^{1/2} > 0
        assert_eq!(rep.get(HypId::F3Prime).verdict, Verdict::Pass);

        // linear calibration family: (f3') holds with equality only
        let rep = check_hypotheses(&Nonlinearity::pure_power(1.0).unwrap(), 3.0, 10.0, 2000);
        assert_eq!(rep.get(HypId::F3Prime).verdict, Verdict::NotApplicable);
        assert!(!rep.any_failed());
    }

    #[test]
    fn spec_strings_round_trip() {
        for spec in ["troy", "power_diff:p=3,q=1", "pure_power:q=0.5"] {
            let nl = Nonlinearity::from_spec(spec).unwrap();
            assert_eq!(nl.spec_string(), spec);
        }
        assert!(matches!(
            Nonlinearity::from_spec("fizz"),
            Err(Error::BadFamily(_))
        ));
        assert!(matches!(
            Nonlinearity::from_spec("power_diff:p=3"),
            Err(Error::BadParameter(_))
        ));
        assert!(matches!(
            Nonlinearity::from_spec("pure_power:q=0"),
            Err(Error::BadParameter(_))
        ));
        assert!(matches!(
            Nonlinearity::from_spec("pure_power:q=1.2"),
            Err(Error::BadParameter(_))
        ));
        assert!(matches!(
            Nonlinearity::from_spec("power_diff:p=1,q=2"),
            Err(Error::BadParameter(_))
        ));
        assert!(matches!(
            Nonlinearity::from_spec("power_diff:p=oops,q=1"),
            Err(Error::BadParameter(_))
        ));
    }

    #[test]
    fn find_beta_reports_missing_upper_zero() {
        // F(s) = -s e^{-s} stays negative for every s > 0, so no beta exists.
        let nl = Nonlinearity::custom(
            "damped",
            Arc::new(|s: f64| {
                let x = s.abs();
                let v = (x - 1.0) * (-x).exp();
                if s < 0.0 {
                    -v
                } else {
                    v
                }
            }),
            Arc::new(|s: f64| {
                let x = s.abs();
                (2.0 - x) * (-x).exp()
            }),
            Some(Arc::new(|s: f64| {
                let x = s.abs();
                -x * (-x).exp()
            })),
            1.0,
            false,
        );
        assert!(matches!(nl, Err(Error::NoBracket(_))));
    }

    #[test]
    fn custom_quadrature_fallback_matches_closed_form() {
        let nl = Nonlinearity::custom(
            "cubic",
            Arc::new(|s: f64| s * s * s - s),
            Arc::new(|s: f64| 3.0 * s * s - 1.0),
            None,
            1.0,
            false,
        )
        .unwrap();
        let reference = Nonlinearity::power_diff(3.0, 1.0).unwrap();
        assert!((nl.beta() - reference.beta()).abs() <= 1e-10 * reference.beta());
        for s in [0.3, 0.9, 1.8] {
            assert!((nl.big_f(s) - reference.big_f(s)).abs() <= 1e-11);
        }
    }

    #[test]
    fn report_serializes() {
        let rep = check_hypotheses(&Nonlinearity::troy(), 3.0, 10.0, 200);
        let js = serde_json::to_string(&rep).unwrap();
        assert!(js.contains("\"f4'\""));
        assert!(js.contains("not-applicable"));
    }
}
