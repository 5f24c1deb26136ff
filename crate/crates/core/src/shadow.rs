//! Modified-energy recovery by Richardson extrapolation of central
//! differences.
//!
//! At a trajectory index `n` the first column of the table is
//!
//! ```text
//! T_{j,1} = ½(-q_nᵀ(p_{n+j} - p_{n-j}) + p_nᵀ(q_{n+j} - q_{n-j}) - (β_{n+j} - β_{n-j})) / (2jh)
//! ```
//!
//! and the table is filled by `T_{j,k+1} = T_{j,k} + (T_{j,k} - T_{j-1,k}) / ((1 - k/j)² - 1)`.
//! The diagonal `T_{m,m}` is the `2m`-point central difference of the
//! scalar series whose derivative is the modified energy.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::integrator::Trajectory;
use crate::problems::dot;
use crate::xnum::{Precision, XReal};

/// Cap on the adaptive order.
pub const DEFAULT_ORDER_CAP: usize = 200;

/// Width of the windowed stopping test.
pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShadowError {
    #[error("index {n}: order {requested} needs {requested} samples on each side, only {available} available")]
    Boundary {
        n: i64,
        requested: usize,
        available: usize,
    },
    #[error("order must be at least 1")]
    ZeroOrder,
    #[error("need at least two diagonal entries to estimate the error, got {0}")]
    TooFewEntries(usize),
    #[error("trajectory too short: no interior index admits order 2")]
    TooShort,
    #[error("empty shadow series")]
    EmptySeries,
    #[error("stride must be positive")]
    ZeroStride,
    #[error("invalid order policy: {0}")]
    Policy(String),
}

/// Number of samples available on both sides of `n`.
pub fn available_order(traj: &Trajectory, n: i64) -> usize {
    let left = n - traj.first_index();
    let right = traj.last_index() - n;
    left.min(right).max(0) as usize
}

fn check_order(traj: &Trajectory, n: i64, j: usize) -> Result<(), ShadowError> {
    if j == 0 {
        return Err(ShadowError::ZeroOrder);
    }
    let available = available_order(traj, n);
    if j > available {
        return Err(ShadowError::Boundary {
            n,
            requested: j,
            available,
        });
    }
    Ok(())
}

fn first_column_unchecked(traj: &Trajectory, n: i64, j: usize) -> XReal {
    let centre = traj.state(n).expect("checked index");
    let fwd = traj.state(n + j as i64).expect("checked index");
    let back = traj.state(n - j as i64).expect("checked index");
    let dp: Vec<XReal> = fwd.p.iter().zip(&back.p).map(|(a, b)| a.clone() - b).collect();
    let dq: Vec<XReal> = fwd.q.iter().zip(&back.q).map(|(a, b)| a.clone() - b).collect();
    let mut num = dot(&centre.p, &dq) - dot(&centre.q, &dp);
    num -= fwd.beta.clone() - &back.beta;
    let span = traj.h.clone() * (4 * j as u64);
    num / span
}

/// First-column entry `T_{j,1}` at index `n`.
pub fn first_column_entry(traj: &Trajectory, n: i64, j: usize) -> Result<XReal, ShadowError> {
    check_order(traj, n, j)?;
    Ok(first_column_unchecked(traj, n, j))
}

/// Rolling Richardson table: holds only the latest row.
#[derive(Clone, Debug, Default)]
pub struct RichardsonTable {
    row: Vec<XReal>,
    first_column: Vec<XReal>,
    diagonal: Vec<XReal>,
}

impl RichardsonTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `T_{j,1}` for the next `j` and returns the new diagonal
    /// entry `T_{j,j}`.
    pub fn push(&mut self, t_j1: XReal) -> &XReal {
        let j = self.row.len() as u64 + 1;
        let mut next = Vec::with_capacity(j as usize);
        next.push(t_j1.clone());
        for k in 1..j {
            let cur = &next[k as usize - 1];
            // 1/((1 - k/j)² - 1) = -j²/(k(2j - k))
            let mut diff = cur.clone() - &self.row[k as usize - 1];
            diff *= j * j;
            diff /= k * (2 * j - k);
            let val = cur.clone() - diff;
            next.push(val);
        }
        self.first_column.push(t_j1);
        self.diagonal.push(next.last().expect("nonempty row").clone());
        self.row = next;
        self.diagonal.last().expect("just pushed")
    }

    pub fn len(&self) -> usize {
        self.diagonal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonal.is_empty()
    }

    pub fn diagonal(&self) -> &[XReal] {
        &self.diagonal
    }

    pub fn first_column(&self) -> &[XReal] {
        &self.first_column
    }
}

/// Diagonal `T_{m,m}`, `m = 1..=m_max`, of the table centred at `center`.
#[derive(Clone, Debug, PartialEq)]
pub struct RichardsonDiagonal {
    pub center: i64,
    /// `entries[m - 1] = T_{m,m}`.
    pub entries: Vec<XReal>,
    /// `first_column[j - 1] = T_{j,1}`.
    pub first_column: Vec<XReal>,
}

impl RichardsonDiagonal {
    /// Runs the recurrence over an explicit first column.
    pub fn from_first_column(center: i64, first_column: &[XReal]) -> Self {
        let mut table = RichardsonTable::new();
        for t in first_column {
            table.push(t.clone());
        }
        RichardsonDiagonal {
            center,
            entries: table.diagonal,
            first_column: table.first_column,
        }
    }

    /// `T_{m,m}` for 1-based `m`.
    pub fn entry(&self, m: usize) -> Option<&XReal> {
        m.checked_sub(1).and_then(|i| self.entries.get(i))
    }

    /// `|T_{m,m} - T_{m-1,m-1}|` for `m ≥ 2`.
    pub fn error_estimate(&self, m: usize) -> Option<XReal> {
        if m < 2 {
            return None;
        }
        let a = self.entry(m)?;
        let b = self.entry(m - 1)?;
        Some((a.clone() - b).abs())
    }
}

/// Richardson diagonal up to `m_max` at index `n`.
pub fn richardson_diagonal(
    traj: &Trajectory,
    n: i64,
    m_max: usize,
) -> Result<RichardsonDiagonal, ShadowError> {
    check_order(traj, n, m_max)?;
    let column: Vec<XReal> = (1..=m_max).map(|j| first_column_unchecked(traj, n, j)).collect();
    Ok(RichardsonDiagonal::from_first_column(n, &column))
}

/// Weights `w_j`, `j = 1..=m`, of the `2m`-point central difference
/// `D_m y(0) = Σ w_j (y(jh) - y(-jh))`:
/// `w_j = (-1)^{j+1} (m!)² / (j h (m-j)! (m+j)!)`.
pub fn central_diff_weights(prec: &Precision, m: usize, h: &XReal) -> Vec<XReal> {
    let m32 = m as u32;
    let mfact2 = prec.factorial(m32).square();
    (1..=m32)
        .map(|j| {
            let denom = prec.factorial(m32 - j) * prec.factorial(m32 + j) * h * j;
            let w = mfact2.clone() / denom;
            if j % 2 == 1 {
                w
            } else {
                -w
            }
        })
        .collect()
}

/// Falling factorial `n (n-1) ... (n-k+1)`.
fn falling_factorial(prec: &Precision, n: i64, k: usize) -> XReal {
    let mut acc = prec.one();
    for i in 0..k as i64 {
        acc *= n - i;
    }
    acc
}

/// Table entry `T_{j,k}` as an explicit combination of the first column
/// (`first_column[i - 1] = T_{i,1}`), independent of the recurrence.
pub fn closed_form_entry(prec: &Precision, first_column: &[XReal], j: usize, k: usize) -> XReal {
    assert!(1 <= k && k <= j && j <= first_column.len(), "need 1 ≤ k ≤ j ≤ len");
    let jk2 = falling_factorial(prec, j as i64, k).square();
    let mut acc = prec.zero();
    for i in 1..=k {
        let denom = prec.factorial(i as u32 - 1)
            * prec.factorial((k - i) as u32)
            * falling_factorial(prec, (2 * j - k + i) as i64, k)
            * (j - k + i) as u64;
        let coeff = jk2.clone() * 2u32 / denom;
        let term = coeff * &first_column[j - k + i - 1];
        if i % 2 == 1 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    acc
}

/// How the extrapolation order is chosen at each index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderPolicy {
    /// Always `T_{m,m}`.
    Fixed(usize),
    /// Minimise the error estimate over `m = 2..=cap`.
    FullScan { cap: usize },
    /// Scan until the windowed error maximum stops decreasing, then
    /// minimise over what was computed.
    Windowed { cap: usize, window: usize },
}

impl Default for OrderPolicy {
    fn default() -> Self {
        OrderPolicy::Windowed {
            cap: DEFAULT_ORDER_CAP,
            window: DEFAULT_WINDOW,
        }
    }
}

impl OrderPolicy {
    pub fn windowed(cap: usize) -> Self {
        OrderPolicy::Windowed {
            cap,
            window: DEFAULT_WINDOW,
        }
    }

    /// Largest order the policy can ask for.
    pub fn max_order(&self) -> usize {
        match *self {
            OrderPolicy::Fixed(m) => m,
            OrderPolicy::FullScan { cap } | OrderPolicy::Windowed { cap, .. } => cap,
        }
    }

    pub fn validate(&self) -> Result<(), ShadowError> {
        match *self {
            OrderPolicy::Fixed(0) => Err(ShadowError::ZeroOrder),
            OrderPolicy::FullScan { cap } | OrderPolicy::Windowed { cap, .. } if cap < 2 => {
                Err(ShadowError::Policy(format!("order cap {cap} below 2")))
            }
            OrderPolicy::Windowed { window: 0, .. } => {
                Err(ShadowError::Policy("window must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for OrderPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            OrderPolicy::Fixed(m) => write!(f, "fixed:{m}"),
            OrderPolicy::FullScan { cap } => write!(f, "scan:{cap}"),
            OrderPolicy::Windowed { cap, window } if window == DEFAULT_WINDOW => {
                write!(f, "window:{cap}")
            }
            OrderPolicy::Windowed { cap, window } => write!(f, "window:{cap}:{window}"),
        }
    }
}

impl FromStr for OrderPolicy {
    type Err = ShadowError;

    /// `fixed:M`, `scan:CAP` or `window:CAP[:WIDTH]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ShadowError::Policy(s.to_string());
        let mut parts = s.split(':');
        let kind = parts.next().ok_or_else(bad)?;
        let mut num = || -> Result<usize, ShadowError> {
            parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())
        };
        let policy = match kind {
            "fixed" => OrderPolicy::Fixed(num()?),
            "scan" => OrderPolicy::FullScan { cap: num()? },
            "window" => {
                let cap = num()?;
                let window = num().unwrap_or(DEFAULT_WINDOW);
                OrderPolicy::Windowed { cap, window }
            }
            _ => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        policy.validate()?;
        Ok(policy)
    }
}

/// Modified-energy value at one index.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowEstimate {
    pub n: i64,
    pub value: XReal,
    pub m_star: usize,
    /// `|T_{m*,m*} - T_{m*-1,m*-1}|`; absent when `m* = 1`.
    pub error_estimate: Option<XReal>,
    /// The order range was cut short by the end of the trajectory.
    pub truncated_by_boundary: bool,
}

/// Incremental order selection over a growing diagonal.
struct OrderSelector {
    policy: OrderPolicy,
    limit: usize,
    diagonal: Vec<XReal>,
    errors: Vec<XReal>,
    stopped: bool,
}

impl OrderSelector {
    fn new(policy: OrderPolicy, limit: usize) -> Self {
        OrderSelector {
            policy,
            limit,
            diagonal: Vec::new(),
            errors: Vec::new(),
            stopped: false,
        }
    }

    fn wants_more(&self) -> bool {
        !self.stopped && self.diagonal.len() < self.limit
    }

    fn feed(&mut self, t_mm: XReal) {
        if let Some(prev) = self.diagonal.last() {
            self.errors.push((t_mm.clone() - prev).abs());
        }
        self.diagonal.push(t_mm);
        if let OrderPolicy::Windowed { window, .. } = self.policy {
            let m = self.diagonal.len();
            // errors[i] belongs to order i + 2
            if m >= window + 3 {
                let err = |j: usize| &self.errors[j - 2];
                let older = (m - window - 1..m).map(err).max_by(cmp_xreal).expect("window");
                let newer = (m - window..=m).map(err).max_by(cmp_xreal).expect("window");
                if older <= newer {
                    self.stopped = true;
                }
            }
        }
    }

    fn finish(self, n: i64, truncated: bool) -> Result<ShadowEstimate, ShadowError> {
        let len = self.diagonal.len();
        match self.policy {
            OrderPolicy::Fixed(m) => {
                if m > len {
                    return Err(ShadowError::Boundary {
                        n,
                        requested: m,
                        available: len,
                    });
                }
                Ok(ShadowEstimate {
                    n,
                    value: self.diagonal[m - 1].clone(),
                    m_star: m,
                    error_estimate: m.checked_sub(2).map(|i| self.errors[i].clone()),
                    truncated_by_boundary: truncated,
                })
            }
            OrderPolicy::FullScan { .. } | OrderPolicy::Windowed { .. } => {
                if len < 2 {
                    return Err(ShadowError::TooFewEntries(len));
                }
                let mut best = 0;
                for (i, e) in self.errors.iter().enumerate() {
                    if *e < self.errors[best] {
                        best = i;
                    }
                }
                Ok(ShadowEstimate {
                    n,
                    value: self.diagonal[best + 1].clone(),
                    m_star: best + 2,
                    error_estimate: Some(self.errors[best].clone()),
                    truncated_by_boundary: truncated,
                })
            }
        }
    }
}

fn cmp_xreal(a: &&XReal, b: &&XReal) -> std::cmp::Ordering {
    a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal)
}

/// Picks the order per `policy` from a precomputed diagonal. Ties in the
/// error estimate go to the smaller order.
pub fn select_order(
    diagonal: &RichardsonDiagonal,
    policy: OrderPolicy,
) -> Result<ShadowEstimate, ShadowError> {
    policy.validate()?;
    let len = diagonal.entries.len();
    if len < 2 && !matches!(policy, OrderPolicy::Fixed(_)) {
        return Err(ShadowError::TooFewEntries(len));
    }
    let limit = policy.max_order().min(len);
    let mut sel = OrderSelector::new(policy, limit);
    for t in &diagonal.entries {
        if !sel.wants_more() {
            break;
        }
        sel.feed(t.clone());
    }
    sel.finish(diagonal.center, false)
}

/// `T_{m,m}` at index `n` with its successive-difference error estimate.
pub fn shadow_fixed(traj: &Trajectory, n: i64, m: usize) -> Result<ShadowEstimate, ShadowError> {
    let diag = richardson_diagonal(traj, n, m)?;
    select_order(&diag, OrderPolicy::Fixed(m))
}

/// Estimate at index `n`, computing table rows only as far as the policy
/// needs. The order range is clamped to the samples available around `n`.
pub fn estimate_at(
    traj: &Trajectory,
    n: i64,
    policy: OrderPolicy,
) -> Result<ShadowEstimate, ShadowError> {
    policy.validate()?;
    let available = available_order(traj, n);
    let wanted = policy.max_order();
    let limit = wanted.min(available);
    let truncated = limit < wanted;
    let policy = match policy {
        OrderPolicy::Fixed(m) if m > limit => OrderPolicy::Fixed(limit.max(1)),
        p => p,
    };
    if limit == 0 {
        return Err(ShadowError::Boundary {
            n,
            requested: 1,
            available,
        });
    }
    let mut table = RichardsonTable::new();
    let mut sel = OrderSelector::new(policy, limit);
    let mut j = 1;
    while sel.wants_more() {
        let t = first_column_unchecked(traj, n, j);
        sel.feed(table.push(t).clone());
        j += 1;
    }
    sel.finish(n, truncated)
}

/// Modified-energy estimates along a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowSeries {
    pub h: XReal,
    pub precision: Precision,
    pub policy: OrderPolicy,
    pub stride: usize,
    pub estimates: Vec<ShadowEstimate>,
}

/// Indices evaluated by [`shadow_series`]: the nominal run `0..=N`, less
/// any index without two samples on each side.
pub fn evaluation_window(traj: &Trajectory) -> Option<(i64, i64)> {
    const MIN_ORDER: i64 = 2;
    let lo = 0.max(traj.first_index() + MIN_ORDER);
    let hi = (traj.steps() as i64).min(traj.last_index() - MIN_ORDER);
    (lo <= hi).then_some((lo, hi))
}

/// Estimates at every `stride`-th index of [`evaluation_window`].
pub fn shadow_series(
    traj: &Trajectory,
    policy: OrderPolicy,
    stride: usize,
) -> Result<ShadowSeries, ShadowError> {
    if stride == 0 {
        return Err(ShadowError::ZeroStride);
    }
    policy.validate()?;
    let (lo, hi) = evaluation_window(traj).ok_or(ShadowError::TooShort)?;
    let indices: Vec<i64> = (lo..=hi).step_by(stride).collect();
    let estimates = indices
        .into_par_iter()
        .map(|n| estimate_at(traj, n, policy))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ShadowSeries {
        h: traj.h.clone(),
        precision: *traj.problem.precision(),
        policy,
        stride,
        estimates,
    })
}

impl ShadowSeries {
    pub fn values(&self) -> impl Iterator<Item = &XReal> {
        self.estimates.iter().map(|e| &e.value)
    }

    pub fn max_order(&self) -> usize {
        self.estimates.iter().map(|e| e.m_star).max().unwrap_or(0)
    }

    /// Writes `n,t,value,m_star,error_estimate,truncated` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let prec = &self.precision;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "t", "value", "m_star", "error_estimate", "truncated"])?;
        for e in &self.estimates {
            let t = self.h.clone() * e.n;
            w.write_record([
                e.n.to_string(),
                prec.format(&t),
                prec.format(&e.value),
                e.m_star.to_string(),
                e.error_estimate.as_ref().map(|x| prec.format(x)).unwrap_or_default(),
                e.truncated_by_boundary.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Maximum minus minimum of the modified energy over the series.
pub fn drift(series: &ShadowSeries) -> Result<XReal, ShadowError> {
    drift_of(series.values())
}

/// Maximum minus minimum of a sequence of values.
pub fn drift_of<'a>(values: impl IntoIterator<Item = &'a XReal>) -> Result<XReal, ShadowError> {
    let mut it = values.into_iter();
    let first = it.next().ok_or(ShadowError::EmptySeries)?;
    let (mut lo, mut hi) = (first, first);
    for v in it {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    Ok(hi.clone() - lo)
}
