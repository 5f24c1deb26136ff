//! Explicit splitting integrators with the Skeel auxiliary variable.
//!
//! One step runs the kick-first stage loop
//!
//! ```text
//! p̂_s = p̂_{s-1} - h a_s ∇U(q̂_{s-1})
//! β̂_s = β̂_{s-1} - h a_s (q̂_{s-1}ᵀ∇U(q̂_{s-1}) + 2 U(q̂_{s-1}))
//! q̂_s = q̂_{s-1} + h b_s M⁻¹ p̂_s
//! ```
//!
//! for `s = 1..S`. β never feeds back into `(p, q)`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rug::ops::Pow;
use thiserror::Error;

use crate::problems::{dot, InitialState, PotentialEval, ProblemError, SeparableHamiltonian};
use crate::xnum::{Precision, XReal};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("stage {stage}: {source}")]
    Potential {
        stage: usize,
        #[source]
        source: ProblemError,
    },
    #[error("state dimension {got} does not match problem dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value after stage {stage}")]
    NonFinite { stage: usize },
}

/// Integration aborted; `partial` holds every state computed before the
/// failing step.
#[derive(Debug, Error)]
#[error("integration failed at step {step}: {source}")]
pub struct IntegrateError {
    pub step: i64,
    #[source]
    pub source: StepError,
    pub partial: Box<Trajectory>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrderError {
    #[error("order indeterminate: the scheme is exact on this problem")]
    Indeterminate,
    #[error("integration failed while measuring order: {0}")]
    Integration(String),
}

/// Built-in splitting schemes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemeId {
    StormerVerlet,
    Yoshida4,
    BlanesMoan4,
}

impl SchemeId {
    pub const ALL: [SchemeId; 3] = [SchemeId::StormerVerlet, SchemeId::Yoshida4, SchemeId::BlanesMoan4];

    pub fn build(self, prec: &Precision) -> SplittingScheme {
        match self {
            SchemeId::StormerVerlet => stormer_verlet(prec),
            SchemeId::Yoshida4 => yoshida4(prec),
            SchemeId::BlanesMoan4 => blanes_moan4(prec),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::StormerVerlet => "sv",
            SchemeId::Yoshida4 => "yoshida4",
            SchemeId::BlanesMoan4 => "bm4",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sv" => Ok(SchemeId::StormerVerlet),
            "yoshida4" => Ok(SchemeId::Yoshida4),
            "bm4" => Ok(SchemeId::BlanesMoan4),
            other => Err(format!("unknown scheme {other:?} (expected sv, yoshida4 or bm4)")),
        }
    }
}

/// Kick coefficients `a_s` and drift coefficients `b_s` of an S-stage
/// kick-first splitting.
#[derive(Clone, Debug, PartialEq)]
pub struct SplittingScheme {
    pub name: String,
    pub kicks: Vec<XReal>,
    pub drifts: Vec<XReal>,
    pub declared_order: u32,
}

impl SplittingScheme {
    pub fn stages(&self) -> usize {
        self.kicks.len()
    }

    /// Potential gradient evaluations per step once the evaluation at the
    /// end of one step is reused at the start of the next.
    pub fn force_evaluations(&self) -> usize {
        // one fresh position per nonzero drift
        self.drifts.iter().filter(|b| !b.is_zero()).count().max(1)
    }

    pub fn kick_sum(&self) -> XReal {
        sum(&self.kicks)
    }

    pub fn drift_sum(&self) -> XReal {
        sum(&self.drifts)
    }
}

fn sum(v: &[XReal]) -> XReal {
    let mut acc = XReal::new(v[0].prec());
    for x in v {
        acc += x;
    }
    acc
}

/// Kick–drift–kick leapfrog: `a = (½, ½)`, `b = (1, 0)`.
pub fn stormer_verlet(prec: &Precision) -> SplittingScheme {
    SplittingScheme {
        name: "sv".into(),
        kicks: vec![prec.ratio(1, 2), prec.ratio(1, 2)],
        drifts: vec![prec.one(), prec.zero()],
        declared_order: 2,
    }
}

/// Yoshida's triple jump of leapfrog, `w1 ∘ w0 ∘ w1` with
/// `w1 = 1/(2 - 2^{1/3})`, `w0 = -2^{1/3}/(2 - 2^{1/3})`.
pub fn yoshida4(prec: &Precision) -> SplittingScheme {
    let (w1, w0) = yoshida_weights(prec);
    let half = |x: XReal| x / 2u32;
    SplittingScheme {
        name: "yoshida4".into(),
        kicks: vec![
            half(w1.clone()),
            half(w1.clone() + &w0),
            half(w0.clone() + &w1),
            half(w1.clone()),
        ],
        drifts: vec![w1.clone(), w0, w1, prec.zero()],
        declared_order: 4,
    }
}

/// Outer and inner weights `(w1, w0)` of the triple jump.
pub fn yoshida_weights(prec: &Precision) -> (XReal, XReal) {
    let cbrt2 = prec.int(2).cbrt();
    let denom = prec.int(2) - &cbrt2;
    let w1 = prec.one() / &denom;
    let w0 = -cbrt2 / &denom;
    (w1, w0)
}

/// Blanes–Moan optimised six-stage fourth-order Runge–Kutta–Nyström
/// splitting (SRKN₆ᵇ), force-first and symmetric. The free parameters carry
/// the published 15-digit values; the closing coefficients are fixed by
/// consistency, so the scheme is exactly consistent and symplectic at any
/// precision.
pub fn blanes_moan4(prec: &Precision) -> SplittingScheme {
    let c = |s: &str| prec.parse(s).expect("literal coefficient");
    let b1 = c("0.0829844064174052");
    let b2 = c("0.396309801498368");
    let b3 = c("-0.0390563049223486");
    let a1 = c("0.245298957184271");
    let a2 = c("0.604872665711080");
    let a3 = prec.ratio(1, 2) - (a1.clone() + &a2);
    let b4 = prec.one() - (b1.clone() + &b2 + &b3) * 2u32;
    SplittingScheme {
        name: "bm4".into(),
        kicks: vec![
            b1.clone(),
            b2.clone(),
            b3.clone(),
            b4,
            b3,
            b2,
            b1,
        ],
        drifts: vec![a1.clone(), a2.clone(), a3.clone(), a3, a2, a1, prec.zero()],
        declared_order: 4,
    }
}

/// Augmented phase-space point `(p, q, β)` at step index `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub p: Vec<XReal>,
    pub q: Vec<XReal>,
    pub beta: XReal,
    pub n: i64,
}

impl PhaseState {
    pub fn initial(init: &InitialState) -> Self {
        PhaseState {
            p: init.p0.clone(),
            q: init.q0.clone(),
            beta: init.beta0.clone(),
            n: 0,
        }
    }

    /// `t_n = n h`.
    pub fn time(&self, h: &XReal) -> XReal {
        h.clone() * self.n
    }

    fn is_finite(&self) -> bool {
        self.beta.is_finite() && self.p.iter().chain(&self.q).all(|x| x.is_finite())
    }
}

/// Step direction and whether β is carried.
#[derive(Clone, Copy)]
struct StepMode {
    backward: bool,
    with_beta: bool,
}

/// Potential evaluation known to belong to the current stage position.
type EvalCache = Option<PotentialEval>;

fn eval_at(
    ham: &SeparableHamiltonian,
    q: &[XReal],
    cache: &mut EvalCache,
    stage: usize,
) -> Result<PotentialEval, StepError> {
    if let Some(e) = cache.take() {
        return Ok(e);
    }
    ham.evaluate(q)
        .map_err(|source| StepError::Potential { stage, source })
}

// Kick part of the homogeneous extension: β' = qᵀU_q − 2U, so each kick
// subtracts h·a·(2U − qᵀU_q). With the opposite sign on qᵀU_q the recovered
// quantity would be H + qᵀU_q instead of H.
fn beta_rate(q: &[XReal], eval: &PotentialEval) -> XReal {
    eval.value.clone() * 2u32 - dot(q, &eval.gradient)
}

fn kick(
    p: &mut [XReal],
    beta: &mut XReal,
    q: &[XReal],
    eval: &PotentialEval,
    ha: &XReal,
    sign: i32,
    with_beta: bool,
) {
    // sign = -1: p -= ha ∇U (forward); sign = +1 undoes it.
    for (pi, gi) in p.iter_mut().zip(&eval.gradient) {
        let delta = ha.clone() * gi;
        if sign < 0 {
            *pi -= delta;
        } else {
            *pi += delta;
        }
    }
    if with_beta {
        let delta = ha.clone() * beta_rate(q, eval);
        if sign < 0 {
            *beta -= delta;
        } else {
            *beta += delta;
        }
    }
}

fn drift(q: &mut [XReal], p: &[XReal], minv: &[XReal], hb: &XReal, sign: i32) {
    for ((qi, pi), mi) in q.iter_mut().zip(p).zip(minv) {
        let delta = hb.clone() * mi * pi;
        if sign > 0 {
            *qi += delta;
        } else {
            *qi -= delta;
        }
    }
}

fn step_impl(
    ham: &SeparableHamiltonian,
    scheme: &SplittingScheme,
    state: &PhaseState,
    h: &XReal,
    mode: StepMode,
    cache: &mut EvalCache,
) -> Result<PhaseState, StepError> {
    let d = ham.dim();
    for v in [&state.p, &state.q] {
        if v.len() != d {
            *cache = None;
            return Err(StepError::Dimension {
                expected: d,
                got: v.len(),
            });
        }
    }
    let mut p = state.p.clone();
    let mut q = state.q.clone();
    let mut beta = state.beta.clone();
    let minv = ham.inverse_mass();
    let stages = scheme.stages();

    if !mode.backward {
        for s in 0..stages {
            let a = &scheme.kicks[s];
            let b = &scheme.drifts[s];
            let eval = eval_at(ham, &q, cache, s + 1)?;
            if !a.is_zero() {
                let ha = h.clone() * a;
                kick(&mut p, &mut beta, &q, &eval, &ha, -1, mode.with_beta);
            }
            if b.is_zero() {
                *cache = Some(eval);
            } else {
                let hb = h.clone() * b;
                drift(&mut q, &p, minv, &hb, 1);
            }
        }
    } else {
        for s in (0..stages).rev() {
            let a = &scheme.kicks[s];
            let b = &scheme.drifts[s];
            if !b.is_zero() {
                *cache = None;
                let hb = h.clone() * b;
                drift(&mut q, &p, minv, &hb, -1);
            }
            let eval = eval_at(ham, &q, cache, s + 1)?;
            if !a.is_zero() {
                let ha = h.clone() * a;
                kick(&mut p, &mut beta, &q, &eval, &ha, 1, mode.with_beta);
            }
            *cache = Some(eval);
        }
    }

    let next = PhaseState {
        p,
        q,
        beta,
        n: if mode.backward { state.n - 1 } else { state.n + 1 },
    };
    if !next.is_finite() {
        *cache = None;
        return Err(StepError::NonFinite { stage: stages });
    }
    Ok(next)
}

/// One step of the augmented scheme.
pub fn augmented_step(
    ham: &SeparableHamiltonian,
    scheme: &SplittingScheme,
    state: &PhaseState,
    h: &XReal,
) -> Result<PhaseState, StepError> {
    let mode = StepMode {
        backward: false,
        with_beta: true,
    };
    step_impl(ham, scheme, state, h, mode, &mut None)
}

/// One step of the plain scheme; β is copied through untouched.
pub fn plain_step(
    ham: &SeparableHamiltonian,
    scheme: &SplittingScheme,
    state: &PhaseState,
    h: &XReal,
) -> Result<PhaseState, StepError> {
    let mode = StepMode {
        backward: false,
        with_beta: false,
    };
    step_impl(ham, scheme, state, h, mode, &mut None)
}

/// Exact inverse of [`augmented_step`]: runs the stages in reverse with
/// each sub-flow undone, landing on the state whose forward step is
/// `state` (up to rounding).
pub fn inverse_augmented_step(
    ham: &SeparableHamiltonian,
    scheme: &SplittingScheme,
    state: &PhaseState,
    h: &XReal,
) -> Result<PhaseState, StepError> {
    let mode = StepMode {
        backward: true,
        with_beta: true,
    };
    step_impl(ham, scheme, state, h, mode, &mut None)
}

/// Uniformly spaced augmented states `t_n = n h` for `n = first..=last`.
///
/// The nominal run covers `0..=steps`; padded trajectories extend it by
/// inverse steps before `n = 0` and extra forward steps after `n = steps`,
/// so central differences are available at every nominal index.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub problem: SeparableHamiltonian,
    pub scheme: SplittingScheme,
    pub h: XReal,
    first: i64,
    steps: usize,
    states: Vec<PhaseState>,
}

impl Trajectory {
    /// Index of the earliest stored state.
    pub fn first_index(&self) -> i64 {
        self.first
    }

    /// Index of the latest stored state.
    pub fn last_index(&self) -> i64 {
        self.first + self.states.len() as i64 - 1
    }

    /// Nominal number of steps `N`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn states(&self) -> &[PhaseState] {
        &self.states
    }

    pub fn state(&self, n: i64) -> Option<&PhaseState> {
        let idx = n.checked_sub(self.first)?;
        usize::try_from(idx).ok().and_then(|i| self.states.get(i))
    }

    /// Writes `n,t,p_1..p_d,q_1..q_d,beta` rows at full precision.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let prec = *self.problem.precision();
        let d = self.problem.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["n".to_string(), "t".to_string()];
        header.extend((1..=d).map(|i| format!("p_{i}")));
        header.extend((1..=d).map(|i| format!("q_{i}")));
        header.push("beta".into());
        w.write_record(&header)?;
        for s in &self.states {
            let mut row = vec![s.n.to_string(), prec.format(&s.time(&self.h))];
            row.extend(s.p.iter().chain(&s.q).map(|x| prec.format(x)));
            row.push(prec.format(&s.beta));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Integrates `steps` augmented steps from `init`.
pub fn integrate(
    ham: &SeparableHamiltonian,
    scheme: &SplittingScheme,
    init: &InitialState,
    h: &XReal,
    steps: usize,
) -> Result<Trajectory, IntegrateError> {
    integrate_padded(ham, scheme, init, h, steps, 0)
}

/// Integrates `steps` augmented steps from `init` and extends the run by
/// `pad` steps on each side (inverse steps before `n = 0`).
pub fn integrate_padded(
    ham: &SeparableHamiltonian,
    scheme: &SplittingScheme,
    init: &InitialState,
    h: &XReal,
    steps: usize,
    pad: usize,
) -> Result<Trajectory, IntegrateError> {
    let start = PhaseState::initial(init);
    let mut traj = Trajectory {
        problem: ham.clone(),
        scheme: scheme.clone(),
        h: h.clone(),
        first: 0,
        steps,
        states: Vec::with_capacity(steps + 2 * pad + 1),
    };
    let fail = |traj: Trajectory, step: i64, source| IntegrateError {
        step,
        source,
        partial: Box::new(traj),
    };

    // backward padding, stored in reverse then flipped
    let mut before = Vec::with_capacity(pad);
    let mut cache = None;
    let back = StepMode {
        backward: true,
        with_beta: true,
    };
    let mut cur = start.clone();
    for _ in 0..pad {
        match step_impl(ham, scheme, &cur, h, back, &mut cache) {
            Ok(prev) => {
                before.push(prev.clone());
                cur = prev;
            }
            Err(e) => {
                before.reverse();
                traj.first = -(before.len() as i64);
                traj.states = before;
                traj.states.push(start);
                return Err(fail(traj, cur.n, e));
            }
        }
    }
    before.reverse();
    traj.first = -(before.len() as i64);
    traj.states = before;
    traj.states.push(start);

    let fwd = StepMode {
        backward: false,
        with_beta: true,
    };
    let mut cache = None;
    for _ in 0..steps + pad {
        let last = traj.states.last().expect("nonempty");
        match step_impl(ham, scheme, last, h, fwd, &mut cache) {
            Ok(next) => traj.states.push(next),
            Err(e) => {
                let n = last.n;
                return Err(fail(traj, n, e));
            }
        }
    }
    Ok(traj)
}

/// `(p, q)` after `steps` plain steps.
fn endpoint(
    ham: &SeparableHamiltonian,
    scheme: &SplittingScheme,
    init: &InitialState,
    h: &XReal,
    steps: usize,
) -> Result<PhaseState, StepError> {
    let mode = StepMode {
        backward: false,
        with_beta: false,
    };
    let mut cache = None;
    let mut s = PhaseState::initial(init);
    for _ in 0..steps {
        s = step_impl(ham, scheme, &s, h, mode, &mut cache)?;
    }
    Ok(s)
}

/// Number of step halvings in [`observed_order`].
pub const ORDER_LEVELS: u32 = 5;

/// Least-squares slope of `ln(error)` against `ln(h)` for the global
/// position error at time `t_end`, over `h = t_end/100 · 2^{-k}`,
/// `k = 0..5`, against a reference run at the finest `h / 64`. Errors at
/// the round-off level `10^{-(P-15)}` make the order indeterminate.
pub fn observed_order(
    ham: &SeparableHamiltonian,
    scheme: &SplittingScheme,
    init: &InitialState,
    t_end: &XReal,
) -> Result<XReal, OrderError> {
    let integration = |e: StepError| OrderError::Integration(e.to_string());
    let base_steps = 100usize;
    let finest = base_steps << (ORDER_LEVELS - 1);
    let ref_steps = finest * 64;
    let h_ref = t_end.clone() / ref_steps as u64;
    let reference = endpoint(ham, scheme, init, &h_ref, ref_steps).map_err(integration)?;

    // errors at this level are round-off, not truncation
    let digits = ham.precision().digits() as i32;
    let noise = XReal::with_val(h_ref.prec(), 10).pow(-(digits - 15).max(1));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in 0..ORDER_LEVELS {
        let steps = base_steps << k;
        let h = t_end.clone() / steps as u64;
        let end = endpoint(ham, scheme, init, &h, steps).map_err(integration)?;
        let mut err2 = XReal::new(h.prec());
        for (a, b) in end.q.iter().zip(&reference.q) {
            err2 += (a.clone() - b).square();
        }
        let err = err2.sqrt();
        if err <= noise {
            return Err(OrderError::Indeterminate);
        }
        xs.push(h.ln());
        ys.push(err.ln());
    }
    Ok(least_squares_slope(&xs, &ys))
}

pub(crate) fn least_squares_slope(xs: &[XReal], ys: &[XReal]) -> XReal {
    let n = xs.len() as u32;
    let prec = xs[0].prec();
    let mut mx = XReal::new(prec);
    let mut my = XReal::new(prec);
    for (x, y) in xs.iter().zip(ys) {
        mx += x;
        my += y;
    }
    mx /= n;
    my /= n;
    let mut sxy = XReal::new(prec);
    let mut sxx = XReal::new(prec);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x.clone() - &mx;
        sxy += dx.clone() * (y.clone() - &my);
        sxx += dx.square();
    }
    sxy / sxx
}

/// Determinant of the central finite-difference Jacobian of one step with
/// respect to `(p, q)`.
pub fn jacobian_determinant(
    ham: &SeparableHamiltonian,
    scheme: &SplittingScheme,
    state: &PhaseState,
    h: &XReal,
    fd_step: &XReal,
) -> Result<XReal, StepError> {
    let d = ham.dim();
    let mut columns = Vec::with_capacity(2 * d);
    for k in 0..2 * d {
        let mut plus = state.clone();
        let mut minus = state.clone();
        if k < d {
            plus.p[k] += fd_step;
            minus.p[k] -= fd_step;
        } else {
            plus.q[k - d] += fd_step;
            minus.q[k - d] -= fd_step;
        }
        let fp = plain_step(ham, scheme, &plus, h)?;
        let fm = plain_step(ham, scheme, &minus, h)?;
        let two_fd = fd_step.clone() * 2u32;
        let col: Vec<XReal> = fp
            .p
            .iter()
            .chain(&fp.q)
            .zip(fm.p.iter().chain(&fm.q))
            .map(|(a, b)| (a.clone() - b) / &two_fd)
            .collect();
        columns.push(col);
    }
    // columns[k][i] = ∂out_i/∂in_k; det is transpose-invariant.
    Ok(determinant(columns))
}

/// Gaussian elimination with partial pivoting.
pub(crate) fn determinant(mut a: Vec<Vec<XReal>>) -> XReal {
    let n = a.len();
    let prec = a[0][0].prec();
    let mut det = XReal::with_val(prec, 1);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                a[i][col]
                    .clone()
                    .abs()
                    .partial_cmp(&a[j][col].clone().abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("nonempty range");
        if a[pivot][col].is_zero() {
            return XReal::new(prec);
        }
        if pivot != col {
            a.swap(pivot, col);
            det = -det;
        }
        let piv = a[col][col].clone();
        det *= &piv;
        let (upper, lower) = a.split_at_mut(col + 1);
        let pivot_row = &upper[col];
        for row in lower.iter_mut() {
            let factor = row[col].clone() / &piv;
            for (x, y) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= factor.clone() * y;
            }
        }
    }
    det
}
