//! Experiment driver: drift-versus-step-size curves, parameter sweeps,
//! per-step energy traces, method comparisons and exponential rate fits.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use num_rational::Ratio;
use rayon::prelude::*;
use rug::ops::Pow;
use thiserror::Error;

use crate::integrator::{integrate_padded, least_squares_slope, SchemeId, Trajectory};
use crate::problems::{self, InitialState, ProblemError, SeparableHamiltonian};
use crate::shadow::{self, OrderPolicy, ShadowError, ShadowSeries};
use crate::xnum::{Precision, XReal, XnumError, DEFAULT_DIGITS};

/// Exact step size or time horizon, parsed from `0.05` or `1/20`.
pub type Rational = Ratio<u64>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Precision(#[from] XnumError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Shadow(#[from] ShadowError),
    #[error("T = {t} is not a whole number of steps of h = {h}")]
    FractionalSteps { t: Rational, h: Rational },
    #[error("invalid rational {0:?}")]
    Rational(String),
    #[error("no step sizes given")]
    NoSteps,
    #[error("step size must be positive")]
    ZeroStep,
    #[error("need at least {need} usable points above the round-off floor, have {have}")]
    TooFewPoints { need: usize, have: usize },
    #[error("compare needs at least two schemes, got {0}")]
    TooFewSchemes(usize),
    #[error("empty parameter grid")]
    EmptyGrid,
    #[error("trace requires stride 1")]
    TraceStride,
    #[error("{0}")]
    Fault(Fault),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Parses `a/b` or a plain decimal such as `0.05` into an exact ratio.
pub fn parse_rational(s: &str) -> Result<Rational, HarnessError> {
    let bad = || HarnessError::Rational(s.to_string());
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let num: u64 = num.trim().parse().map_err(|_| bad())?;
        let den: u64 = den.trim().parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(num, den));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 18 {
        return Err(bad());
    }
    let den = 10u64.pow(frac.len() as u32);
    let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
    let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
    let num = int
        .checked_mul(den)
        .and_then(|x| x.checked_add(frac))
        .ok_or_else(bad)?;
    Ok(Ratio::new(num, den))
}

fn rational_value(prec: &Precision, r: &Rational) -> XReal {
    prec.int(*r.numer() as i64) / prec.int(*r.denom() as i64)
}

fn steps_for(t_end: &Rational, h: &Rational) -> Result<usize, HarnessError> {
    if *h.numer() == 0 {
        return Err(HarnessError::ZeroStep);
    }
    let n = t_end / h;
    if !n.is_integer() {
        return Err(HarnessError::FractionalSteps { t: *t_end, h: *h });
    }
    Ok(n.to_integer() as usize)
}

/// Problem and its initial-data parameter (kept as the decimal text it was
/// given in, so outputs can echo it exactly).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProblemSpec {
    Pendulum { p0: String },
    Kepler { ecc: String },
    HenonHeiles { p1: String },
    /// Free particle in one dimension started at `q = 0`.
    Free { p0: String },
    /// One-dimensional oscillator `U = q²/2` started at `q = 0`.
    Harmonic { p0: String },
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Pendulum { .. } => "pendulum",
            ProblemSpec::Kepler { .. } => "kepler",
            ProblemSpec::HenonHeiles { .. } => "henon-heiles",
            ProblemSpec::Free { .. } => "free",
            ProblemSpec::Harmonic { .. } => "harmonic",
        }
    }

    pub fn parameter(&self) -> &str {
        match self {
            ProblemSpec::Pendulum { p0 }
            | ProblemSpec::Free { p0 }
            | ProblemSpec::Harmonic { p0 } => p0,
            ProblemSpec::Kepler { ecc } => ecc,
            ProblemSpec::HenonHeiles { p1 } => p1,
        }
    }

    /// Same problem with a different initial-data parameter.
    pub fn with_parameter(&self, value: &str) -> Self {
        let v = value.to_string();
        match self {
            ProblemSpec::Pendulum { .. } => ProblemSpec::Pendulum { p0: v },
            ProblemSpec::Kepler { .. } => ProblemSpec::Kepler { ecc: v },
            ProblemSpec::HenonHeiles { .. } => ProblemSpec::HenonHeiles { p1: v },
            ProblemSpec::Free { .. } => ProblemSpec::Free { p0: v },
            ProblemSpec::Harmonic { .. } => ProblemSpec::Harmonic { p0: v },
        }
    }

    pub fn build(
        &self,
        prec: &Precision,
    ) -> Result<(SeparableHamiltonian, InitialState), HarnessError> {
        let param = prec.parse(self.parameter())?;
        Ok(match self {
            ProblemSpec::Pendulum { .. } => (
                problems::pendulum(prec),
                problems::pendulum_initial(prec, &param),
            ),
            ProblemSpec::Kepler { .. } => (
                problems::kepler(prec),
                problems::kepler_initial(prec, &param)?,
            ),
            ProblemSpec::HenonHeiles { .. } => (
                problems::henon_heiles(prec),
                problems::henon_heiles_initial(prec, &param),
            ),
            ProblemSpec::Free { .. } => (
                problems::free_particle(prec, 1)?,
                InitialState::new(prec, vec![param], vec![prec.zero()]),
            ),
            ProblemSpec::Harmonic { .. } => (
                problems::harmonic(prec, 1)?,
                InitialState::new(prec, vec![param], vec![prec.zero()]),
            ),
        })
    }
}

/// One experiment: a problem, a scheme, a horizon and a list of step sizes.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub scheme: SchemeId,
    pub t_end: Rational,
    pub step_sizes: Vec<Rational>,
    pub digits: u32,
    pub policy: OrderPolicy,
    pub stride: usize,
    /// Pad the trajectory on both sides so every index in `[0, T]` has the
    /// full order range. Off reproduces boundary clamping.
    pub pad: bool,
    /// Record wall time in the drift curve (otherwise 0, keeping outputs
    /// bit-reproducible).
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn new(problem: ProblemSpec, scheme: SchemeId) -> Self {
        ExperimentConfig {
            problem,
            scheme,
            t_end: Ratio::from_integer(100),
            step_sizes: Vec::new(),
            digits: DEFAULT_DIGITS,
            policy: OrderPolicy::default(),
            stride: 1,
            pad: true,
            timing: false,
        }
    }

    pub fn with_steps(mut self, steps: &[&str]) -> Result<Self, HarnessError> {
        self.step_sizes = steps.iter().map(|s| parse_rational(s)).collect::<Result<_, _>>()?;
        Ok(self)
    }

    pub fn with_horizon(mut self, t_end: &str) -> Result<Self, HarnessError> {
        self.t_end = parse_rational(t_end)?;
        Ok(self)
    }

    pub fn with_policy(mut self, policy: OrderPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn precision(&self) -> Result<Precision, HarnessError> {
        Ok(Precision::new(self.digits)?)
    }

    /// Checks the invariants: precision, whole steps, valid policy.
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.precision()?;
        self.policy.validate()?;
        if self.step_sizes.is_empty() {
            return Err(HarnessError::NoSteps);
        }
        for h in &self.step_sizes {
            steps_for(&self.t_end, h)?;
        }
        if self.stride == 0 {
            return Err(ShadowError::ZeroStride.into());
        }
        Ok(())
    }

    /// Drifts below this are indistinguishable from arithmetic noise.
    pub fn roundoff_floor(&self) -> XReal {
        roundoff_floor(&Precision::new(self.digits).unwrap_or_default())
    }
}

/// `10^{-(P-15)}`.
pub fn roundoff_floor(prec: &Precision) -> XReal {
    prec.int(10).pow(-(prec.digits() as i32 - 15))
}

/// Points within this factor of the round-off floor are excluded from rate
/// fits: `10^{1.5}`.
pub fn fit_exclusion_threshold(prec: &Precision) -> XReal {
    roundoff_floor(prec) * prec.int(10).pow(prec.ratio(3, 2))
}

/// Something that failed inside a sweep cell; the rest of the sweep carries
/// on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fault {
    pub problem: String,
    pub parameter: String,
    pub scheme: SchemeId,
    pub h: Rational,
    pub message: String,
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({}) scheme {} h = {}: {}",
            self.problem, self.parameter, self.scheme, self.h, self.message
        )
    }
}

/// Drift at one step size.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftRow {
    pub h: Rational,
    pub drift: XReal,
    pub max_m: usize,
    pub seconds: f64,
    /// Drift lies below the round-off floor.
    pub below_floor: bool,
}

/// Drift rows ordered by strictly decreasing `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftCurve {
    pub precision: Precision,
    pub rows: Vec<DriftRow>,
}

impl DriftCurve {
    /// Writes `h,drift,max_m,seconds`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["h", "drift", "max_m", "seconds"])?;
        for r in &self.rows {
            w.write_record([
                self.precision.format(&rational_value(&self.precision, &r.h)),
                self.precision.format(&r.drift),
                r.max_m.to_string(),
                format!("{:.6}", r.seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn row(&self, h: &Rational) -> Option<&DriftRow> {
        self.rows.iter().find(|r| r.h == *h)
    }
}

/// Outcome of one (problem, scheme, h) cell.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub h: Rational,
    pub series: ShadowSeries,
    pub row: DriftRow,
}

/// Result of [`run_experiment`].
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub curve: DriftCurve,
    /// Series per successful step size, in curve order.
    pub series: Vec<(Rational, ShadowSeries)>,
    pub faults: Vec<Fault>,
}

fn fault(config: &ExperimentConfig, h: Rational, message: String) -> Fault {
    Fault {
        problem: config.problem.name().into(),
        parameter: config.problem.parameter().into(),
        scheme: config.scheme,
        h,
        message,
    }
}

/// Integrates `config.problem` at step `h` over `steps` steps, padded as the
/// config asks.
pub fn integrate_cell(
    config: &ExperimentConfig,
    prec: &Precision,
    h: &Rational,
    steps: usize,
) -> Result<Trajectory, Fault> {
    let (ham, init) = config
        .problem
        .build(prec)
        .map_err(|e| fault(config, *h, e.to_string()))?;
    let scheme = config.scheme.build(prec);
    let hv = rational_value(prec, h);
    let pad = if config.pad { config.policy.max_order() } else { 0 };
    integrate_padded(&ham, &scheme, &init, &hv, steps, pad)
        .map_err(|e| fault(config, *h, e.to_string()))
}

fn run_cell(
    config: &ExperimentConfig,
    prec: &Precision,
    h: Rational,
    steps: usize,
) -> Result<CellResult, Fault> {
    let started = Instant::now();
    let traj = integrate_cell(config, prec, &h, steps)?;
    let series = shadow::shadow_series(&traj, config.policy, config.stride)
        .map_err(|e| fault(config, h, e.to_string()))?;
    let drift = shadow::drift(&series).map_err(|e| fault(config, h, e.to_string()))?;
    let seconds = if config.timing {
        started.elapsed().as_secs_f64()
    } else {
        0.0
    };
    let below_floor = drift < roundoff_floor(prec);
    Ok(CellResult {
        h,
        row: DriftRow {
            h,
            max_m: series.max_order(),
            drift,
            seconds,
            below_floor,
        },
        series,
    })
}

fn run_with_steps(
    config: &ExperimentConfig,
    step_counts: impl Fn(&Rational) -> Result<usize, HarnessError> + Sync,
) -> Result<ExperimentResult, HarnessError> {
    config.policy.validate()?;
    let prec = config.precision()?;
    if config.step_sizes.is_empty() {
        return Err(HarnessError::NoSteps);
    }
    let mut hs = config.step_sizes.clone();
    hs.sort_by(|a, b| b.cmp(a));
    hs.dedup();
    let planned: Vec<(Rational, usize)> = hs
        .iter()
        .map(|h| step_counts(h).map(|n| (*h, n)))
        .collect::<Result<_, _>>()?;
    let cells: Vec<Result<CellResult, Fault>> = planned
        .into_par_iter()
        .map(|(h, n)| run_cell(config, &prec, h, n))
        .collect();
    let mut rows = Vec::new();
    let mut series = Vec::new();
    let mut faults = Vec::new();
    for cell in cells {
        match cell {
            Ok(c) => {
                rows.push(c.row);
                series.push((c.h, c.series));
            }
            Err(f) => faults.push(f),
        }
    }
    Ok(ExperimentResult {
        curve: DriftCurve {
            precision: prec,
            rows,
        },
        series,
        faults,
    })
}

/// For every step size: integrate, compute the shadow series and its drift.
/// A failure at one `h` is recorded as a fault and the curve continues.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    config.validate()?;
    run_with_steps(config, |h| steps_for(&config.t_end, h))
}

/// Least-squares fit `ln(drift) = intercept - c / h`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateFit {
    pub c: XReal,
    pub intercept: XReal,
    /// Euclidean norm of the residuals in `ln(drift)`.
    pub residual: XReal,
    /// `residual / ‖ln(drift) - mean‖`, i.e. `sqrt(1 - R²)`; zero when the
    /// drifts are all equal.
    pub relative_residual: XReal,
    pub points: usize,
}

/// Minimum points for a rate fit.
pub const MIN_FIT_POINTS: usize = 3;

/// Fits the exponential decay rate, skipping points near the round-off
/// floor.
pub fn fit_exp_rate(curve: &DriftCurve) -> Result<RateFit, HarnessError> {
    let prec = &curve.precision;
    let cutoff = fit_exclusion_threshold(prec);
    let usable: Vec<&DriftRow> = curve.rows.iter().filter(|r| r.drift > cutoff).collect();
    if usable.len() < MIN_FIT_POINTS {
        return Err(HarnessError::TooFewPoints {
            need: MIN_FIT_POINTS,
            have: usable.len(),
        });
    }
    let xs: Vec<XReal> = usable
        .iter()
        .map(|r| rational_value(prec, &r.h.recip()))
        .collect();
    let ys: Vec<XReal> = usable.iter().map(|r| r.drift.clone().ln()).collect();
    Ok(linear_fit(prec, &xs, &ys))
}

/// Fits `y = intercept - c x`.
pub fn linear_fit(prec: &Precision, xs: &[XReal], ys: &[XReal]) -> RateFit {
    let n = xs.len() as u32;
    let slope = least_squares_slope(xs, ys);
    let mut mx = prec.zero();
    let mut my = prec.zero();
    for (x, y) in xs.iter().zip(ys) {
        mx += x;
        my += y;
    }
    mx /= n;
    my /= n;
    let intercept = my.clone() - slope.clone() * &mx;
    let mut ss_res = prec.zero();
    let mut ss_tot = prec.zero();
    for (x, y) in xs.iter().zip(ys) {
        let fit = intercept.clone() + slope.clone() * x;
        ss_res += (y.clone() - fit).square();
        ss_tot += (y.clone() - &my).square();
    }
    let residual = ss_res.sqrt();
    let flat = ys.iter().all(|y| *y == ys[0]);
    let relative_residual = if residual.is_zero() || flat {
        prec.zero()
    } else {
        residual.clone() / ss_tot.sqrt()
    };
    RateFit {
        c: -slope,
        intercept,
        residual,
        relative_residual,
        points: xs.len(),
    }
}

/// One cell of a parameter sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub parameter: String,
    pub h: Rational,
    pub drift: XReal,
    pub max_m: usize,
    pub below_floor: bool,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub precision: Precision,
    pub rows: Vec<SweepRow>,
    pub faults: Vec<Fault>,
}

impl SweepResult {
    /// Writes `parameter,h,drift,max_m`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let prec = &self.precision;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["parameter", "h", "drift", "max_m"])?;
        for r in &self.rows {
            w.write_record([
                r.parameter.clone(),
                prec.format(&rational_value(prec, &r.h)),
                prec.format(&r.drift),
                r.max_m.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Drifts for one step size in grid order; faulted points are `None`.
    pub fn drifts_at(&self, grid: &[&str], h: &Rational) -> Vec<Option<XReal>> {
        grid.iter()
            .map(|p| {
                self.rows
                    .iter()
                    .find(|r| r.parameter == *p && r.h == *h)
                    .map(|r| r.drift.clone())
            })
            .collect()
    }
}

/// Drift for each initial-data parameter in `grid` at every step size of
/// `config`. Faults are recorded and the sweep continues.
pub fn sweep_parameter(
    config: &ExperimentConfig,
    grid: &[&str],
) -> Result<SweepResult, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::EmptyGrid);
    }
    config.validate()?;
    let prec = config.precision()?;
    let results: Vec<Result<ExperimentResult, HarnessError>> = grid
        .par_iter()
        .map(|p| {
            let mut cfg = config.clone();
            cfg.problem = config.problem.with_parameter(p);
            run_experiment(&cfg)
        })
        .collect();
    let mut rows = Vec::new();
    let mut faults = Vec::new();
    for (param, res) in grid.iter().zip(results) {
        match res {
            Ok(r) => {
                rows.extend(r.curve.rows.into_iter().map(|row| SweepRow {
                    parameter: param.to_string(),
                    h: row.h,
                    drift: row.drift,
                    max_m: row.max_m,
                    below_floor: row.below_floor,
                }));
                faults.extend(r.faults);
            }
            // bad parameter (e.g. ecc ≥ 1): fault on every h
            Err(e) => faults.extend(config.step_sizes.iter().map(|h| Fault {
                problem: config.problem.name().into(),
                parameter: param.to_string(),
                scheme: config.scheme,
                h: *h,
                message: e.to_string(),
            })),
        }
    }
    Ok(SweepResult {
        precision: prec,
        rows,
        faults,
    })
}

/// Per-step modified-energy change.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub n: i64,
    pub t: XReal,
    /// `H̄(t_n) - H̄(t_first)`.
    pub accumulated: XReal,
    /// `|H̄(t_n) - H̄(t_{n-1})|`, zero on the first row.
    pub instantaneous: XReal,
    pub m_star: usize,
}

#[derive(Clone, Debug)]
pub struct EnergyTrace {
    pub precision: Precision,
    pub rows: Vec<TraceRow>,
}

impl EnergyTrace {
    /// Writes `t,accumulated,instantaneous,m_star`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let prec = &self.precision;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "accumulated", "instantaneous", "m_star"])?;
        for r in &self.rows {
            w.write_record([
                prec.format(&r.t),
                prec.format(&r.accumulated),
                prec.format(&r.instantaneous),
                r.m_star.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the per-step trace from a stride-1 series.
pub fn trace_from_series(series: &ShadowSeries) -> Result<EnergyTrace, HarnessError> {
    if series.stride != 1 {
        return Err(HarnessError::TraceStride);
    }
    let first = series.estimates.first().ok_or(ShadowError::EmptySeries)?;
    let prec = series.precision;
    let mut rows = Vec::with_capacity(series.estimates.len());
    let mut prev = &first.value;
    for e in &series.estimates {
        rows.push(TraceRow {
            n: e.n,
            t: series.h.clone() * e.n,
            accumulated: e.value.clone() - &first.value,
            instantaneous: (e.value.clone() - prev).abs(),
            m_star: e.m_star,
        });
        prev = &e.value;
    }
    Ok(EnergyTrace {
        precision: prec,
        rows,
    })
}

/// Per-step trace of the modified energy at a single step size.
pub fn trace_energy(config: &ExperimentConfig, h: &Rational) -> Result<EnergyTrace, HarnessError> {
    if config.stride != 1 {
        return Err(HarnessError::TraceStride);
    }
    let mut cfg = config.clone();
    cfg.step_sizes = vec![*h];
    let mut result = run_experiment(&cfg)?;
    if let Some(f) = result.faults.pop() {
        return Err(HarnessError::Fault(f));
    }
    let (_, series) = result.series.pop().expect("one successful cell");
    trace_from_series(&series)
}

/// Drift curve and rate fit for one scheme of a comparison.
#[derive(Clone, Debug)]
pub struct SchemeComparison {
    pub scheme: SchemeId,
    /// Step sizes actually used (scaled in equal-cost mode).
    pub curve: DriftCurve,
    pub fit: Result<RateFit, String>,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub schemes: Vec<SchemeComparison>,
    pub faults: Vec<Fault>,
}

impl Comparison {
    pub fn get(&self, scheme: SchemeId) -> Option<&SchemeComparison> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }

    /// Writes `scheme,h,drift,max_m`.
    pub fn write_drifts<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scheme", "h", "drift", "max_m"])?;
        for s in &self.schemes {
            let prec = &s.curve.precision;
            for r in &s.curve.rows {
                w.write_record([
                    s.scheme.to_string(),
                    prec.format(&rational_value(prec, &r.h)),
                    prec.format(&r.drift),
                    r.max_m.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `scheme,c,intercept,residual,relative_residual,points`.
    pub fn write_rates<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scheme", "c", "intercept", "residual", "relative_residual", "points"])?;
        for s in &self.schemes {
            let prec = &s.curve.precision;
            match &s.fit {
                Ok(f) => w.write_record([
                    s.scheme.to_string(),
                    prec.format(&f.c),
                    prec.format(&f.intercept),
                    prec.format(&f.residual),
                    prec.format(&f.relative_residual),
                    f.points.to_string(),
                ])?,
                Err(e) => w.write_record([s.scheme.to_string(), String::new(), String::new(), String::new(), String::new(), format!("0 ({e})")])?,
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the same experiment with each scheme. With `equal_cost`, scheme
/// `s` steps with `h · evals(s)` (force evaluations per step) so every
/// scheme does the same work, taking `floor(T / h_s)` steps.
pub fn compare_methods(
    config: &ExperimentConfig,
    schemes: &[SchemeId],
    equal_cost: bool,
) -> Result<Comparison, HarnessError> {
    if schemes.len() < 2 {
        return Err(HarnessError::TooFewSchemes(schemes.len()));
    }
    let prec = config.precision()?;
    if !equal_cost {
        config.validate()?;
    }
    let mut out = Vec::new();
    let mut faults = Vec::new();
    for &scheme in schemes {
        let mut cfg = config.clone();
        cfg.scheme = scheme;
        let result = if equal_cost {
            let k = scheme.build(&prec).force_evaluations() as u64;
            cfg.step_sizes = config.step_sizes.iter().map(|h| h * k).collect();
            let t_end = config.t_end;
            run_with_steps(&cfg, |h| {
                if *h.numer() == 0 {
                    return Err(HarnessError::ZeroStep);
                }
                Ok((t_end / h).to_integer() as usize)
            })?
        } else {
            run_experiment(&cfg)?
        };
        let fit = fit_exp_rate(&result.curve).map_err(|e| e.to_string());
        faults.extend(result.faults);
        out.push(SchemeComparison {
            scheme,
            curve: result.curve,
            fit,
        });
    }
    Ok(Comparison {
        schemes: out,
        faults,
    })
}

fn file_tag(h: &Rational) -> String {
    if *h.denom() == 1 {
        format!("h{}", h.numer())
    } else {
        format!("h{}_{}", h.numer(), h.denom())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes `drift.csv` and one `series_h*.csv` per step size into `dir`.
pub fn write_experiment(dir: &Path, result: &ExperimentResult) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let drift_path = dir.join("drift.csv");
    result.curve.write_csv(create(&drift_path)?)?;
    written.push(drift_path);
    for (h, series) in &result.series {
        let path = dir.join(format!("series_{}.csv", file_tag(h)));
        series.write_csv(create(&path)?)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes `trajectory_h*.csv` for a trajectory.
pub fn write_trajectory(dir: &Path, h: &Rational, traj: &Trajectory) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("trajectory_{}.csv", file_tag(h)));
    traj.write_csv(create(&path)?)?;
    Ok(path)
}

/// Result of one self-check.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl FromStr for ProblemSpec {
    type Err = String;

    /// `pendulum`, `kepler`, `henon-heiles`, `free` or `harmonic` with the
    /// default parameter (p0 = 1, ecc = 0.6, p1 = 0.1).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "pendulum" => ProblemSpec::Pendulum { p0: "1".into() },
            "kepler" => ProblemSpec::Kepler { ecc: "0.6".into() },
            "henon-heiles" => ProblemSpec::HenonHeiles { p1: "0.1".into() },
            "free" => ProblemSpec::Free { p0: "1".into() },
            "harmonic" => ProblemSpec::Harmonic { p0: "1".into() },
            other => return Err(format!("unknown problem {other:?}")),
        })
    }
}

/// Quick structural checks: β-passivity, unit Jacobian determinant,
/// determinism, gradient consistency, free-particle exactness and
/// recurrence/closed-form agreement.
pub fn self_check(prec: &Precision) -> Vec<CheckOutcome> {
    use crate::integrator::{augmented_step, jacobian_determinant, plain_step, PhaseState};

    let mut out = Vec::new();
    let h = prec.parse("0.1").expect("literal");
    let specs: Vec<ProblemSpec> = ["pendulum", "kepler", "henon-heiles", "free", "harmonic"]
        .iter()
        .map(|s| s.parse().expect("known problem"))
        .collect();

    let mut passive = true;
    let mut worst_det = prec.zero();
    for spec in &specs {
        let (ham, init) = spec.build(prec).expect("catalog problem");
        for id in SchemeId::ALL {
            let scheme = id.build(prec);
            let mut a = PhaseState::initial(&init);
            let mut b = a.clone();
            for _ in 0..20 {
                a = augmented_step(&ham, &scheme, &a, &h).expect("step");
                b = plain_step(&ham, &scheme, &b, &h).expect("step");
                passive &= a.p == b.p && a.q == b.q;
            }
            let fd = prec.int(10).pow(-30);
            let det = jacobian_determinant(&ham, &scheme, &a, &h, &fd).expect("step");
            let dev = (det - 1u32).abs();
            if dev > worst_det {
                worst_det = dev;
            }
        }
    }
    out.push(CheckOutcome {
        name: "beta-passivity",
        passed: passive,
        detail: "(p, q) identical with and without the β equation".into(),
    });
    let det_tol = prec.int(10).pow(-20);
    out.push(CheckOutcome {
        name: "unit-jacobian",
        passed: worst_det <= det_tol,
        detail: format!("max |det - 1| = {}", crate::xnum::format_digits(&worst_det, 6)),
    });

    let det_cfg = ExperimentConfig::new(specs[0].clone(), SchemeId::StormerVerlet)
        .with_horizon("5")
        .and_then(|c| c.with_steps(&["1/4"]))
        .map(|c| c.with_policy(OrderPolicy::windowed(40)));
    let deterministic = match det_cfg {
        Ok(mut cfg) => {
            cfg.digits = prec.digits();
            let render = |cfg: &ExperimentConfig| -> Option<Vec<u8>> {
                let r = run_experiment(cfg).ok()?;
                let mut buf = Vec::new();
                r.curve.write_csv(&mut buf).ok()?;
                r.series[0].1.write_csv(&mut buf).ok()?;
                Some(buf)
            };
            let a = render(&cfg);
            a.is_some() && a == render(&cfg)
        }
        Err(_) => false,
    };
    out.push(CheckOutcome {
        name: "determinism",
        passed: deterministic,
        detail: "identical config gives byte-identical CSV".into(),
    });

    let mut grad_ok = true;
    let step = prec.int(10).pow(-(prec.digits() as i32) / 3);
    let tol = prec.int(10).pow(-(prec.digits() as i32 - 20).max(6) / 2);
    for spec in &specs {
        let (ham, _) = spec.build(prec).expect("catalog problem");
        let q: Vec<XReal> = (0..ham.dim())
            .map(|i| prec.parse(["0.7", "-0.45"][i % 2]).expect("literal"))
            .collect();
        let grad = ham.gradient(&q).expect("regular point");
        for i in 0..ham.dim() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += &step;
            qm[i] -= &step;
            let fd = (ham.potential(&qp).expect("regular") - ham.potential(&qm).expect("regular"))
                / (step.clone() * 2u32);
            let scale = grad[i].clone().abs().max(&prec.one());
            grad_ok &= (fd - &grad[i]).abs() <= tol.clone() * scale;
        }
    }
    out.push(CheckOutcome {
        name: "gradient-consistency",
        passed: grad_ok,
        detail: "central difference of U matches ∇U".into(),
    });

    let free_cfg = ExperimentConfig::new(ProblemSpec::Free { p0: "1".into() }, SchemeId::StormerVerlet)
        .with_horizon("10")
        .and_then(|c| c.with_steps(&["1/2", "1/4"]));
    let free_zero = free_cfg
        .ok()
        .and_then(|mut c| {
            c.digits = prec.digits();
            run_experiment(&c).ok()
        })
        .is_some_and(|r| r.faults.is_empty() && r.curve.rows.iter().all(|row| row.drift.is_zero()));
    out.push(CheckOutcome {
        name: "free-particle-exact",
        passed: free_zero,
        detail: "zero drift when U ≡ 0".into(),
    });

    let column: Vec<XReal> = (1..=12).map(|j| prec.one() / prec.int(j * j + 1)).collect();
    let diag = shadow::RichardsonDiagonal::from_first_column(0, &column);
    let mut cf_ok = true;
    for m in 1..=12 {
        let cf = shadow::closed_form_entry(prec, &column, m, m);
        let rel = (cf - &diag.entries[m - 1]).abs();
        cf_ok &= rel <= prec.int(10).pow(-(prec.digits() as i32 - 15));
    }
    out.push(CheckOutcome {
        name: "closed-form-diagonal",
        passed: cf_ok,
        detail: "recurrence diagonal equals the explicit weighted sum".into(),
    });
    out
}
