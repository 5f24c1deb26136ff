//! Separable Hamiltonians `H = ½ pᵀM⁻¹p + U(q)` and their initial data.

use std::fmt;

use thiserror::Error;

use crate::xnum::{Precision, XReal};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("potential is singular at q = 0")]
    Singular,
    #[error("eccentricity {0} outside [0, 1)")]
    Eccentricity(String),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("inverse mass entries must be positive")]
    NonPositiveMass,
}

/// Which closed-form potential a Hamiltonian carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PotentialKind {
    /// `U ≡ 0`.
    Free,
    /// `U(q) = -cos q`.
    Pendulum,
    /// `U(q) = -1/|q|` in the plane.
    Kepler,
    /// `U(q) = ½(q1² + q2² + 2 q1² q2 - ⅔ q2³)`.
    HenonHeiles,
    /// `U(q) = ½ |q|²`.
    Harmonic,
}

impl fmt::Display for PotentialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            PotentialKind::Free => "free",
            PotentialKind::Pendulum => "pendulum",
            PotentialKind::Kepler => "kepler",
            PotentialKind::HenonHeiles => "henon-heiles",
            PotentialKind::Harmonic => "harmonic",
        };
        f.write_str(name)
    }
}

/// Potential value and gradient at one position.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialEval {
    pub value: XReal,
    pub gradient: Vec<XReal>,
}

/// A separable Hamiltonian with constant diagonal mass matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableHamiltonian {
    kind: PotentialKind,
    inverse_mass: Vec<XReal>,
    prec: Precision,
}

/// Starting point of an augmented trajectory; the Skeel variable always
/// starts at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialState {
    pub p0: Vec<XReal>,
    pub q0: Vec<XReal>,
    pub beta0: XReal,
}

impl InitialState {
    pub fn new(prec: &Precision, p0: Vec<XReal>, q0: Vec<XReal>) -> Self {
        InitialState {
            p0,
            q0,
            beta0: prec.zero(),
        }
    }
}

impl SeparableHamiltonian {
    fn with_unit_mass(prec: &Precision, kind: PotentialKind, dim: usize) -> Self {
        SeparableHamiltonian {
            kind,
            inverse_mass: vec![prec.one(); dim],
            prec: *prec,
        }
    }

    /// Replaces the (unit) inverse mass with a positive diagonal.
    pub fn with_inverse_mass(mut self, inverse_mass: Vec<XReal>) -> Result<Self, ProblemError> {
        if inverse_mass.len() != self.dim() {
            return Err(ProblemError::Dimension {
                expected: self.dim(),
                got: inverse_mass.len(),
            });
        }
        if inverse_mass.iter().any(|m| *m <= 0) {
            return Err(ProblemError::NonPositiveMass);
        }
        self.inverse_mass = inverse_mass;
        Ok(self)
    }

    pub fn kind(&self) -> PotentialKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.inverse_mass.len()
    }

    pub fn precision(&self) -> &Precision {
        &self.prec
    }

    pub fn inverse_mass(&self) -> &[XReal] {
        &self.inverse_mass
    }

    fn check_dim(&self, v: &[XReal]) -> Result<(), ProblemError> {
        if v.len() != self.dim() {
            return Err(ProblemError::Dimension {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// `U(q)`.
    pub fn potential(&self, q: &[XReal]) -> Result<XReal, ProblemError> {
        Ok(self.evaluate(q)?.value)
    }

    /// `∇U(q)`.
    pub fn gradient(&self, q: &[XReal]) -> Result<Vec<XReal>, ProblemError> {
        Ok(self.evaluate(q)?.gradient)
    }

    /// Potential and gradient together, sharing the transcendental work.
    pub fn evaluate(&self, q: &[XReal]) -> Result<PotentialEval, ProblemError> {
        self.check_dim(q)?;
        let prec = &self.prec;
        let eval = match self.kind {
            PotentialKind::Free => PotentialEval {
                value: prec.zero(),
                gradient: vec![prec.zero(); q.len()],
            },
            PotentialKind::Pendulum => {
                let (sin, cos) = q[0].clone().sin_cos(prec.zero());
                PotentialEval {
                    value: -cos,
                    gradient: vec![sin],
                }
            }
            PotentialKind::Kepler => {
                let r2 = q[0].clone().square() + q[1].clone().square();
                if r2.is_zero() {
                    return Err(ProblemError::Singular);
                }
                let inv_r = r2.clone().recip_sqrt();
                let inv_r3 = inv_r.clone() / &r2;
                PotentialEval {
                    gradient: vec![inv_r3.clone() * &q[0], inv_r3 * &q[1]],
                    value: -inv_r,
                }
            }
            PotentialKind::HenonHeiles => {
                let (x, y) = (&q[0], &q[1]);
                let x2 = x.clone().square();
                let y2 = y.clone().square();
                // ½(x² + y²) + x²y - ⅓y³
                let mut value = (x2.clone() + &y2) / 2u32;
                value += x2.clone() * y;
                value -= y2.clone() * y / 3u32;
                let gx = x.clone() + x.clone() * y * 2u32;
                let gy = y.clone() + &x2 - &y2;
                PotentialEval {
                    value,
                    gradient: vec![gx, gy],
                }
            }
            PotentialKind::Harmonic => {
                let value = dot(q, q) / 2u32;
                PotentialEval {
                    value,
                    gradient: q.to_vec(),
                }
            }
        };
        Ok(eval)
    }

    /// `½ Σ M⁻¹ᵢ pᵢ² + U(q)`.
    pub fn energy(&self, p: &[XReal], q: &[XReal]) -> Result<XReal, ProblemError> {
        self.check_dim(p)?;
        let mut kinetic = self.prec.zero();
        for (pi, mi) in p.iter().zip(&self.inverse_mass) {
            kinetic += pi.clone().square() * mi;
        }
        Ok(kinetic / 2u32 + self.potential(q)?)
    }
}

pub(crate) fn dot(a: &[XReal], b: &[XReal]) -> XReal {
    let mut acc = XReal::new(a.first().map_or(64, |x| x.prec()));
    for (x, y) in a.iter().zip(b) {
        acc += x.clone() * y;
    }
    acc
}

/// `H = p²/2 - cos q`.
pub fn pendulum(prec: &Precision) -> SeparableHamiltonian {
    SeparableHamiltonian::with_unit_mass(prec, PotentialKind::Pendulum, 1)
}

/// Pendulum released from `q = 0` with momentum `p0`.
pub fn pendulum_initial(prec: &Precision, p0: &XReal) -> InitialState {
    InitialState::new(prec, vec![prec.round(p0)], vec![prec.zero()])
}

/// Planar Kepler problem `H = ½|p|² - 1/|q|`.
pub fn kepler(prec: &Precision) -> SeparableHamiltonian {
    SeparableHamiltonian::with_unit_mass(prec, PotentialKind::Kepler, 2)
}

/// Kepler orbit of eccentricity `ecc` started at perihelion, on the energy
/// level `H = -½`.
pub fn kepler_initial(prec: &Precision, ecc: &XReal) -> Result<InitialState, ProblemError> {
    if ecc.is_nan() || *ecc < 0 || *ecc >= 1 {
        return Err(ProblemError::Eccentricity(crate::xnum::format_digits(ecc, 20)));
    }
    let e = prec.round(ecc);
    let q1 = prec.one() - &e;
    let p2 = ((prec.one() + &e) / &q1).sqrt();
    Ok(InitialState::new(
        prec,
        vec![prec.zero(), p2],
        vec![q1, prec.zero()],
    ))
}

/// Hénon–Heiles system.
pub fn henon_heiles(prec: &Precision) -> SeparableHamiltonian {
    SeparableHamiltonian::with_unit_mass(prec, PotentialKind::HenonHeiles, 2)
}

/// Hénon–Heiles initial data `q1 = q2 = p2 = 0` with momentum `p1`.
pub fn henon_heiles_initial(prec: &Precision, p1: &XReal) -> InitialState {
    InitialState::new(
        prec,
        vec![prec.round(p1), prec.zero()],
        vec![prec.zero(), prec.zero()],
    )
}

/// `U ≡ 0` in `d` dimensions; splitting methods integrate it exactly.
pub fn free_particle(prec: &Precision, d: usize) -> Result<SeparableHamiltonian, ProblemError> {
    if d == 0 {
        return Err(ProblemError::ZeroDimension);
    }
    Ok(SeparableHamiltonian::with_unit_mass(prec, PotentialKind::Free, d))
}

/// Linear oscillator `U = ½|q|²` in `d` dimensions.
pub fn harmonic(prec: &Precision, d: usize) -> Result<SeparableHamiltonian, ProblemError> {
    if d == 0 {
        return Err(ProblemError::ZeroDimension);
    }
    Ok(SeparableHamiltonian::with_unit_mass(prec, PotentialKind::Harmonic, d))
}
