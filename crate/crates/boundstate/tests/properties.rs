//! Randomized invariants: formatting round-trips, defining properties of
//! the family constants, energy descent, the similarity law, and branch
//! inversion on a shared deep trajectory.

use std::sync::{Arc, OnceLock};

use boundstate::{
    check_i_derivative, check_i_monotone, extract_branches, fmt17, integrate, integrate_until,
    render_scan, BranchDir, CheckStatus, Classification, EventKind, Extremum, Nonlinearity,
    Outcome, ProblemConfig, Trajectory, ZeroCrossing,
};
use proptest::prelude::*;

fn quiet(n: f64, alpha: f64) -> ProblemConfig {
    ProblemConfig {
        with_phi: false,
        ..ProblemConfig::new(n, alpha)
    }
}

fn deep_troy() -> &'static Arc<Trajectory> {
    static TRAJ: OnceLock<Arc<Trajectory>> = OnceLock::new();
    TRAJ.get_or_init(|| {
        let nl = Nonlinearity::troy();
        Arc::new(integrate(&nl, &quiet(3.0, 10.0)).expect("deep shot"))
    })
}

proptest! {
    #[test]
    fn seventeen_digit_format_round_trips(bits in any::<u64>()) {
        let x = f64::from_bits(bits);
        prop_assume!(x.is_finite());
        let back: f64 = fmt17(x).parse().expect("parse back");
        prop_assert_eq!(back.to_bits(), x.to_bits());
    }
}

proptest! {
    #[test]
    fn beta_solves_the_area_balance(q in 0.2f64..2.0, gap in 0.5f64..3.0) {
        let p = q + gap;
        let nl = Nonlinearity::power_diff(p, q).expect("valid exponents");
        let (b, beta) = (nl.b(), nl.beta());
        prop_assert!(b > 0.0 && beta > b);
        // beta balances the signed area of f; between b and beta the
        // primitive is still negative while f itself is already positive
        prop_assert!(nl.big_f(beta).abs() <= 1e-12 * nl.big_f(b).abs().max(1.0));
        let mid = 0.5 * (b + beta);
        prop_assert!(nl.f(mid) > 0.0);
        prop_assert!(nl.big_f(mid) < 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn energy_descends_for_random_shots(
        pick in 0usize..3,
        n in 2.0f64..4.0,
        lift in 0.3f64..5.0,
    ) {
        let nl = match pick {
            0 => Nonlinearity::troy(),
            1 => Nonlinearity::power_diff(3.0, 1.0).expect("cubic"),
            _ => Nonlinearity::pure_power(1.0).expect("linear"),
        };
        let traj = integrate(&nl, &quiet(n, nl.b() + lift)).expect("shot");
        let mono = check_i_monotone(&traj);
        prop_assert!(
            matches!(mono.status, CheckStatus::Pass),
            "energy rose: margin {:e} at r={}", mono.margin, mono.location
        );
        let law = check_i_derivative(&traj);
        prop_assert!(
            matches!(law.status, CheckStatus::Pass),
            "derivative law: margin {:e} at r={}", law.margin, law.location
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn first_zero_obeys_the_similarity_law(q in 0.3f64..1.0, alpha in 0.5f64..4.0) {
        let nl = Nonlinearity::pure_power(q).expect("valid exponent");
        let first_zero = |a: f64| -> f64 {
            let mut cfg = quiet(3.0, a);
            cfg.r_max = 40.0;
            let traj = integrate_until(&nl, &cfg, |t| {
                t.events.iter().any(|e| e.kind == EventKind::UZero)
            })
            .expect("shot");
            let z = traj.events_of(EventKind::UZero).next().expect("zero").r;
            z
        };
        let z_unit = first_zero(1.0);
        let z = first_zero(alpha);
        let reduced = z * alpha.powf(-(1.0 - q) / 2.0);
        prop_assert!(
            (reduced - z_unit).abs() <= 1e-6 * z_unit,
            "reduced zero {reduced} vs {z_unit} (q={q}, alpha={alpha})"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn branch_inversion_round_trips(pick in 0usize..4, frac in 0.001f64..0.999) {
        let t = deep_troy();
        let branches: Vec<_> = extract_branches(t, t.nl.beta())
            .into_iter()
            .filter(|br| br.dir == BranchDir::Decreasing)
            .collect();
        prop_assume!(!branches.is_empty());
        let br = &branches[pick % branches.len()];
        let s = br.s_min() + frac * (br.s_max() - br.s_min());
        let (r, y) = br.r_of_s(s).expect("inversion");
        prop_assert!(br.r_lo <= r && r <= br.r_hi);
        prop_assert!(
            (y[0] - s).abs() <= 1e-9 * f64::max(1.0, s.abs()),
            "u(r(s)) = {} vs s = {s}", y[0]
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn dense_energy_stays_between_node_values(frac in 0.0f64..1.0) {
        let t = deep_troy();
        let r = t.nodes[0].r + frac * (t.nodes.last().unwrap().r - t.nodes[0].r);
        let idx = match t.nodes.binary_search_by(|nd| nd.r.partial_cmp(&r).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        let hi = t.i_at_node(idx);
        let lo = t.i_at_node((idx + 1).min(t.nodes.len() - 1));
        let y = t.eval(r).expect("dense eval");
        let i_r = y[1] * y[1] + 2.0 * t.nl.big_f(y[0]);
        let slack = 1e-8 * (1.0 + t.i_at_node(0).abs());
        prop_assert!(
            i_r <= hi + slack && i_r >= lo - slack,
            "I({r}) = {i_r} outside [{lo}, {hi}]"
        );
    }
}

fn synthetic_row(alpha: f64, zeros: &[f64], extrema: &[(f64, f64)]) -> Classification {
    Classification {
        alpha,
        outcome: Outcome::LandsP {
            level: zeros.len() + 1,
        },
        zeros: zeros
            .iter()
            .map(|&r| ZeroCrossing { r, slope: -0.1 })
            .collect(),
        extrema: extrema
            .iter()
            .map(|&(r, value)| Extremum {
                r,
                value,
                i_value: 0.0,
            })
            .collect(),
        i_at_stop: -1.0,
        final_r: 50.0,
        final_state: [0.0; 4],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn scan_rendering_keeps_shape_for_ragged_rows(
        alphas in proptest::collection::vec(1.0f64..100.0, 1..8),
        k_max in 1usize..5,
    ) {
        let rows: Vec<Classification> = alphas
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let zeros: Vec<f64> = (0..i % (k_max + 1)).map(|j| 2.0 + j as f64).collect();
                synthetic_row(a, &zeros, &[(0.0, a)])
            })
            .collect();
        let text = render_scan(&rows, k_max, &[("command", "scan".to_string())]);
        let lines: Vec<&str> = text.lines().collect();
        let data: Vec<&&str> = lines.iter().filter(|l| !l.starts_with('#')).collect();
        prop_assert_eq!(data.len(), rows.len() + 1, "header plus one line per row");
        let columns = 3 + 3 * k_max;
        for line in &data {
            prop_assert_eq!(line.split(',').count(), columns, "ragged line: {}", line);
        }
        // the alpha column reproduces its input bit for bit
        for (row, line) in rows.iter().zip(&data[1..]) {
            let first: f64 = line.split(',').next().unwrap().parse().expect("alpha cell");
            prop_assert_eq!(first.to_bits(), row.alpha.to_bits());
        }
    }
}
