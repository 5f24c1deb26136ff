//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Exits 0 regardless of the outcome so `cargo test` reports the run; set
//! `ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails. Pass criterion
//! numbers as arguments to run a subset: `cargo test --test acceptance -- 2 9`.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rug::ops::Pow;

use shadow_energy::harness::{
    self, compare_methods, fit_exp_rate, parse_rational, run_experiment, sweep_parameter,
    ExperimentConfig, ProblemSpec, Rational,
};
use shadow_energy::integrator::{
    augmented_step, integrate, jacobian_determinant, observed_order, plain_step, PhaseState,
};
use shadow_energy::problems;
use shadow_energy::shadow::{self, OrderPolicy, RichardsonDiagonal};
use shadow_energy::{Precision, SchemeId, XReal};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn sci(x: &XReal) -> String {
    format!("{:.3e}", x.to_f64())
}

fn grid(denominators: impl IntoIterator<Item = u64>) -> Vec<String> {
    denominators.into_iter().map(|k| format!("1/{k}")).collect()
}

fn config(problem: ProblemSpec, scheme: SchemeId, t_end: &str, hs: &[String], policy: OrderPolicy) -> ExperimentConfig {
    let hs: Vec<&str> = hs.iter().map(String::as_str).collect();
    ExperimentConfig::new(problem, scheme)
        .with_horizon(t_end)
        .and_then(|c| c.with_steps(&hs))
        .expect("valid config")
        .with_policy(policy)
}

fn pendulum(p0: &str) -> ProblemSpec {
    ProblemSpec::Pendulum { p0: p0.into() }
}

fn kepler(ecc: &str) -> ProblemSpec {
    ProblemSpec::Kepler { ecc: ecc.into() }
}

fn henon_heiles(p1: &str) -> ProblemSpec {
    ProblemSpec::HenonHeiles { p1: p1.into() }
}

fn scan() -> OrderPolicy {
    OrderPolicy::FullScan { cap: 200 }
}

fn rel_close(a: &XReal, b: &XReal, tol: &XReal) -> bool {
    let diff = (a.clone() - b).abs();
    let scale = a.clone().abs().max(&b.clone().abs());
    diff <= tol.clone() * scale || diff.is_zero()
}

/// Criterion 1: Recurrence diagonal against the explicit closed form and against the
/// central-difference weights, on a pendulum trajectory.
fn diagonal_equivalence() -> Outcome {
    let prec = Precision::new(120).unwrap();
    let ham = problems::pendulum(&prec);
    let init = problems::pendulum_initial(&prec, &prec.one());
    let h = prec.ratio(1, 10);
    let traj = integrate(&ham, &shadow_energy::integrator::stormer_verlet(&prec), &init, &h, 200)
        .expect("pendulum integrates");
    let tol = prec.int(10).pow(-(120 - 15));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = prec.zero();
    let mut ok = true;
    for _ in 0..20 {
        let n = rng.gen_range(40..=160i64);
        let diag = shadow::richardson_diagonal(&traj, n, 40).expect("interior index");
        // combined differences s(t_n + jh) - s(t_n - jh)
        let diffs: Vec<XReal> = diag
            .first_column
            .iter()
            .enumerate()
            .map(|(i, t)| t.clone() * &h * (2 * (i as u32 + 1)))
            .collect();
        for m in 1..=40 {
            let rec = diag.entry(m).unwrap();
            let closed = shadow::closed_form_entry(&prec, &diag.first_column, m, m);
            let weights = shadow::central_diff_weights(&prec, m, &h);
            let mut weighted = prec.zero();
            for (w, d) in weights.iter().zip(&diffs) {
                weighted += w.clone() * d;
            }
            for other in [&closed, &weighted] {
                let rel = (rec.clone() - other).abs() / rec.clone().abs();
                if rel > worst {
                    worst = rel;
                }
                ok &= rel_close(rec, other, &tol);
            }
        }
    }
    outcome(ok, format!("max relative difference {} (tol 1e-105)", sci(&worst)))
}

/// Criterion 2: Optimal-order derivative of 1/(1+t²) decays like exp(-c/h) with c ≥ 0.8π.
fn derivative_accuracy() -> Outcome {
    let prec = Precision::new(120).unwrap();
    // t = 0 is a symmetry point where every central difference is exactly 0,
    // so the decay is measured at t0 = 1/2 (same strip half-width 1).
    let t0 = prec.ratio(1, 2);
    let y = |t: XReal| prec.one() / (prec.one() + t.square());
    let exact = -(t0.clone() * 2u32) / (prec.one() + t0.clone().square()).square();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut errs = Vec::new();
    for k in [5i64, 10, 20] {
        let h = prec.ratio(1, k);
        let column: Vec<XReal> = (1..=200u32)
            .map(|j| {
                let d = h.clone() * j;
                (y(t0.clone() + &d) - y(t0.clone() - &d)) / (d * 2u32)
            })
            .collect();
        let diag = RichardsonDiagonal::from_first_column(0, &column);
        let est = shadow::select_order(&diag, scan()).expect("200 entries");
        let err = (est.value - &exact).abs();
        errs.push(format!("1/h={k}: {} (m*={})", sci(&err), est.m_star));
        xs.push(prec.int(k));
        ys.push(err.ln());
    }
    let fit = harness::linear_fit(&prec, &xs, &ys);
    let c = fit.c.to_f64();
    outcome(c >= 0.8 * PI, format!("rate {c:.3} vs 0.8π = {:.3}; {}", 0.8 * PI, errs.join(", ")))
}

/// Criterion 3: Pendulum drift curve at fixed order 40, and drift against fixed order.
fn pendulum_drift() -> Outcome {
    let hs = grid([4, 6, 8, 12, 16, 24, 32]);
    let cfg = config(pendulum("1"), SchemeId::StormerVerlet, "100", &hs, OrderPolicy::Fixed(40));
    let res = run_experiment(&cfg).expect("valid config");
    let fit = match fit_exp_rate(&res.curve) {
        Ok(f) => f,
        Err(e) => return outcome(false, format!("fit failed: {e}")),
    };
    let rel = fit.relative_residual.to_f64();
    let curve_ok = res.faults.is_empty() && rel < 0.10 && fit.c > 0;

    let h8 = grid([8]);
    let mut drifts = Vec::new();
    for m in [2, 5, 10, 20, 40] {
        let cfg = config(pendulum("1"), SchemeId::StormerVerlet, "100", &h8, OrderPolicy::Fixed(m));
        let r = run_experiment(&cfg).expect("valid config");
        drifts.push(r.curve.rows[0].drift.to_f64());
    }
    let monotone = drifts.windows(2).all(|w| w[1] <= w[0] * 1.05);
    outcome(
        curve_ok && monotone,
        format!(
            "c = {:.3}, relative residual {:.2}% (< 10%); fixed m 2..40 at h=1/8: {:?} non-increasing: {monotone}",
            fit.c.to_f64(),
            100.0 * rel,
            drifts.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>()
        ),
    )
}

/// Criterion 4: Pendulum drift is non-decreasing in p0 at h = 1/8.
fn pendulum_sweep() -> Outcome {
    let cfg = config(pendulum("1"), SchemeId::StormerVerlet, "100", &grid([8]), OrderPolicy::Fixed(40));
    let grid_p0 = ["0.2", "0.5", "1.0", "1.5"];
    let res = sweep_parameter(&cfg, &grid_p0).expect("valid sweep");
    let drifts: Vec<f64> = res.rows.iter().map(|r| r.drift.to_f64()).collect();
    let ok = res.faults.is_empty()
        && drifts.len() == grid_p0.len()
        && drifts.windows(2).all(|w| w[1] >= w[0] * 0.9);
    outcome(
        ok,
        format!("drift over p0 {grid_p0:?}: {:?}", drifts.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>()),
    )
}

/// Local minima of |q| over `0..=steps` of a trajectory.
fn perihelia(cfg: &ExperimentConfig, h: &Rational, steps: usize) -> Vec<i64> {
    let prec = cfg.precision().unwrap();
    let traj = harness::integrate_cell(cfg, &prec, h, steps).expect("kepler integrates");
    let r: Vec<XReal> = (0..=steps as i64)
        .map(|n| {
            let s = traj.state(n).unwrap();
            (s.q[0].clone().square() + s.q[1].clone().square()).sqrt()
        })
        .collect();
    let mut out = vec![0];
    for i in 1..r.len() - 1 {
        if r[i] < r[i - 1] && r[i] <= r[i + 1] {
            out.push(i as i64);
        }
    }
    out
}

/// Criterion 5: Kepler drift curve under the windowed policy and high m* near perihelion.
fn kepler_drift() -> Outcome {
    let hs = grid(4..=20);
    let cfg = config(kepler("0.6"), SchemeId::StormerVerlet, "100", &hs, OrderPolicy::windowed(200));
    let res = run_experiment(&cfg).expect("valid config");
    let fit = match fit_exp_rate(&res.curve) {
        Ok(f) => f,
        Err(e) => return outcome(false, format!("fit failed: {e}")),
    };
    let rel = fit.relative_residual.to_f64();
    let h20 = parse_rational("1/20").unwrap();
    let series = &res.series.iter().find(|(h, _)| *h == h20).expect("h = 1/20 ran").1;
    let peri = perihelia(&cfg, &h20, 2000);
    let high: Vec<i64> = series.estimates.iter().filter(|e| e.m_star > 50).map(|e| e.n).collect();
    let near = high.iter().filter(|n| peri.iter().any(|p| (*n - p).abs() <= 5)).count();
    let ok = res.faults.is_empty() && rel < 0.15 && fit.c > 0 && near > 0;
    outcome(
        ok,
        format!(
            "c = {:.3}, relative residual {:.2}% (< 15%); h=1/20: {} indices with m* > 50, {near} within 5 steps of perihelion (max m* {})",
            fit.c.to_f64(),
            100.0 * rel,
            high.len(),
            series.max_order()
        ),
    )
}

/// Criterion 6: Same decay constant for all three schemes; SV drift smallest.
fn method_comparison() -> Outcome {
    let hs = grid(4..=20);
    let cfg = config(kepler("0.6"), SchemeId::StormerVerlet, "100", &hs, scan());
    let schemes = [SchemeId::StormerVerlet, SchemeId::Yoshida4, SchemeId::BlanesMoan4];
    let cmp = compare_methods(&cfg, &schemes, false).expect("valid comparison");
    let mut cs = Vec::new();
    for s in &cmp.schemes {
        match &s.fit {
            Ok(f) => cs.push(f.c.to_f64()),
            Err(e) => return outcome(false, format!("{} fit failed: {e}", s.scheme)),
        }
    }
    let spread = cs.iter().cloned().fold(f64::MIN, f64::max) / cs.iter().cloned().fold(f64::MAX, f64::min);
    let h10 = parse_rational("1/10").unwrap();
    let at = |id: SchemeId| cmp.get(id).and_then(|s| s.curve.row(&h10)).map(|r| r.drift.to_f64());
    let (sv, yo, bm) = (
        at(SchemeId::StormerVerlet).unwrap_or(f64::NAN),
        at(SchemeId::Yoshida4).unwrap_or(f64::NAN),
        at(SchemeId::BlanesMoan4).unwrap_or(f64::NAN),
    );
    let (ry, rb) = (yo / sv, bm / sv);
    let ok = cmp.faults.is_empty()
        && spread <= 1.10
        && (1.5..=6.0).contains(&ry)
        && (2.0..=8.0).contains(&rb);
    outcome(
        ok,
        format!(
            "c sv/yoshida4/bm4 = {:.3}/{:.3}/{:.3}, max/min {spread:.3} (≤ 1.10); at h=1/10 yoshida4/sv {ry:.2} in [1.5,6], bm4/sv {rb:.2} in [2,8]",
            cs[0], cs[1], cs[2]
        ),
    )
}

/// Criterion 7: Windowed policy against the full scan on Kepler, h = 1/20.
fn windowed_vs_scan() -> Outcome {
    let hs = grid([20]);
    let run = |policy| {
        let cfg = config(kepler("0.6"), SchemeId::StormerVerlet, "100", &hs, policy);
        run_experiment(&cfg).expect("valid config")
    };
    let w = run(OrderPolicy::windowed(200));
    let s = run(scan());
    let (ws, ss) = (&w.series[0].1, &s.series[0].1);
    let same = ws
        .estimates
        .iter()
        .zip(&ss.estimates)
        .filter(|(a, b)| a.m_star == b.m_star)
        .count();
    let frac = same as f64 / ss.estimates.len() as f64;
    let (dw, ds) = (&w.curve.rows[0].drift, &s.curve.rows[0].drift);
    let rel = ((dw.clone() - ds).abs() / ds).to_f64();
    outcome(
        frac >= 0.95 && rel < 0.01,
        format!(
            "same m* at {:.1}% of indices (≥ 95%); drift windowed {} vs scan {}, relative difference {:.1}% (< 1%)",
            100.0 * frac,
            sci(dw),
            sci(ds),
            100.0 * rel
        ),
    )
}

/// Criterion 8: Hénon–Heiles drift curve, threshold sweep and round-off floor.
fn henon_heiles_drift() -> Outcome {
    let ks = [2u64, 3, 4, 5, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24, 26, 28, 30];
    let hs = grid(ks);
    let cfg = config(henon_heiles("0.1"), SchemeId::StormerVerlet, "100", &hs, scan());
    let res = run_experiment(&cfg).expect("valid config");
    let fit = match fit_exp_rate(&res.curve) {
        Ok(f) => f,
        Err(e) => return outcome(false, format!("fit failed: {e}")),
    };
    let rel = fit.relative_residual.to_f64();
    let floor_ok = res.curve.rows.iter().all(|r| {
        let inv = r.h.recip();
        if inv > Rational::from_integer(20) {
            r.below_floor
        } else {
            !r.below_floor
        }
    });
    let flagged: Vec<String> = res
        .curve
        .rows
        .iter()
        .filter(|r| r.below_floor)
        .map(|r| r.h.recip().to_string())
        .collect();

    let p1s = ["0.36", "0.37", "0.38", "0.39", "0.40", "0.41", "0.42", "0.43", "0.44", "0.45", "0.46"];
    let sweep_cfg = config(henon_heiles("0.1"), SchemeId::StormerVerlet, "100", &grid([4]), scan());
    let sweep = sweep_parameter(&sweep_cfg, &p1s).expect("valid sweep");
    let d: Vec<f64> = sweep.rows.iter().map(|r| r.drift.to_f64()).collect();
    let (jump, at) = d
        .windows(2)
        .enumerate()
        .map(|(i, w)| ((w[1] / w[0]).max(w[0] / w[1]), i))
        .fold((0.0, 0), |acc, x| if x.0 > acc.0 { x } else { acc });
    let sweep_ok = sweep.faults.is_empty() && d.len() == p1s.len() && jump <= 3.0;
    outcome(
        res.faults.is_empty() && rel < 0.15 && fit.c > 0 && floor_ok && sweep_ok,
        format!(
            "c = {:.3}, relative residual {:.2}% (< 15%, {} points); floor flagged at 1/h = {} (want exactly 1/h > 20); largest adjacent p1 ratio {jump:.2} between {} and {} (≤ 3)",
            fit.c.to_f64(),
            100.0 * rel,
            fit.points,
            flagged.join(","),
            p1s[at],
            p1s[at + 1]
        ),
    )
}

/// Criterion 9: Free particle drift is exactly zero for Störmer–Verlet (and at
/// round-off for the schemes with irrational coefficients); harmonic drift
/// is at round-off.
fn exact_cases() -> Outcome {
    let hs = grid([2, 4, 8, 16]);
    let floor = harness::roundoff_floor(&Precision::new(120).unwrap());
    let mut sv_exact = true;
    let mut others_floor = true;
    let mut worst_other = Precision::new(120).unwrap().zero();
    for policy in [
        OrderPolicy::Fixed(2),
        OrderPolicy::Fixed(10),
        OrderPolicy::FullScan { cap: 50 },
        OrderPolicy::windowed(50),
    ] {
        for id in SchemeId::ALL {
            let cfg = config(ProblemSpec::Free { p0: "1".into() }, id, "10", &hs, policy);
            let r = run_experiment(&cfg).expect("valid config");
            let ok = r.faults.is_empty();
            if id == SchemeId::StormerVerlet {
                sv_exact &= ok && r.curve.rows.iter().all(|row| row.drift.is_zero());
            } else {
                for row in &r.curve.rows {
                    if row.drift > worst_other {
                        worst_other = row.drift.clone();
                    }
                }
                others_floor &= ok && r.curve.rows.iter().all(|row| row.drift < floor);
            }
        }
    }
    let free_ok = sv_exact && others_floor;
    let cfg = config(
        ProblemSpec::Harmonic { p0: "1".into() },
        SchemeId::StormerVerlet,
        "100",
        &["1/10".to_string()],
        OrderPolicy::windowed(200),
    );
    let r = run_experiment(&cfg).expect("valid config");
    let hd = &r.curve.rows[0].drift;
    let harmonic_ok = r.faults.is_empty() && *hd <= Precision::new(120).unwrap().int(10).pow(-30);
    outcome(
        free_ok && harmonic_ok,
        format!("free particle sv all zero: {sv_exact}, yoshida4/bm4 max {} (< 1e-105); harmonic drift at h=1/10: {} (≤ 1e-30)", sci(&worst_other), sci(hd)),
    )
}

/// Criterion 10: β-passivity, unit Jacobian determinant, observed order, determinism.
fn structural() -> Outcome {
    let prec = Precision::new(120).unwrap();
    let h = prec.ratio(1, 10);
    let specs: Vec<ProblemSpec> = ["pendulum", "kepler", "henon-heiles", "free", "harmonic"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let mut passive = true;
    let mut worst_det = prec.zero();
    let fd = prec.int(10).pow(-40);
    for spec in &specs {
        let (ham, init) = spec.build(&prec).unwrap();
        for id in SchemeId::ALL {
            let scheme = id.build(&prec);
            let mut a = PhaseState::initial(&init);
            let mut b = a.clone();
            for k in 0..50 {
                a = augmented_step(&ham, &scheme, &a, &h).unwrap();
                b = plain_step(&ham, &scheme, &b, &h).unwrap();
                passive &= a.p == b.p && a.q == b.q;
                if k % 10 == 0 {
                    let det = jacobian_determinant(&ham, &scheme, &a, &h, &fd).unwrap();
                    let dev = (det - 1u32).abs();
                    if dev > worst_det {
                        worst_det = dev;
                    }
                }
            }
        }
    }
    let det_ok = worst_det <= prec.int(10).pow(-20);

    let low = Precision::new(40).unwrap();
    let mut order_ok = true;
    let mut orders = Vec::new();
    for spec in &specs[..3] {
        let (ham, init) = spec.build(&low).unwrap();
        for id in SchemeId::ALL {
            let scheme = id.build(&low);
            match observed_order(&ham, &scheme, &init, &low.int(10)) {
                Ok(o) => {
                    let o = o.to_f64();
                    order_ok &= (o - scheme.declared_order as f64).abs() <= 0.2;
                    orders.push(format!("{}/{id} {o:.2}", spec.name()));
                }
                Err(e) => {
                    order_ok = false;
                    orders.push(format!("{}/{id} {e}", spec.name()));
                }
            }
        }
    }

    // identical bytes across repeated runs and different thread counts
    let render = |threads: usize| -> Vec<u8> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut buf = Vec::new();
            let cfg = config(kepler("0.6"), SchemeId::Yoshida4, "10", &grid([8, 10]), OrderPolicy::windowed(60));
            let r = run_experiment(&cfg).unwrap();
            r.curve.write_csv(&mut buf).unwrap();
            for (_, s) in &r.series {
                s.write_csv(&mut buf).unwrap();
            }
            let sweep_cfg = config(pendulum("1"), SchemeId::StormerVerlet, "10", &grid([4]), OrderPolicy::Fixed(20));
            sweep_parameter(&sweep_cfg, &["0.5", "1", "1.5"]).unwrap().write_csv(&mut buf).unwrap();
            let trace = harness::trace_energy(&cfg, &parse_rational("1/8").unwrap()).unwrap();
            trace.write_csv(&mut buf).unwrap();
            let prec = cfg.precision().unwrap();
            let traj = harness::integrate_cell(&cfg, &prec, &parse_rational("1/8").unwrap(), 80).unwrap();
            traj.write_csv(&mut buf).unwrap();
            buf
        })
    };
    let first = render(1);
    let deterministic = first == render(1) && first == render(4);

    outcome(
        passive && det_ok && order_ok && deterministic,
        format!(
            "β-passive: {passive}; max |det - 1| = {} (≤ 1e-20); orders {}; deterministic CSV: {deterministic}",
            sci(&worst_det),
            orders.join(", ")
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("diagonal equals closed form and weighted sum", diagonal_equivalence),
        ("exponentially accurate derivative", derivative_accuracy),
        ("pendulum drift curve", pendulum_drift),
        ("pendulum momentum sweep", pendulum_sweep),
        ("kepler drift curve", kepler_drift),
        ("method comparison", method_comparison),
        ("windowed vs full scan", windowed_vs_scan),
        ("henon-heiles drift", henon_heiles_drift),
        ("exact cases", exact_cases),
        ("structural invariants", structural),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let o = check();
        ran += 1;
        if !o.passed {
            failed += 1;
        }
        println!(
            "{} {id:>2} {name} [{:.1}s]: {}",
            if o.passed { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
