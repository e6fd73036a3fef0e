//! Parameter types shared by every other module.
//!
//! Units are fixed: time in µs, the noise `n(t)` and `delta` in rad/µs,
//! `drive_norm` in rad²/µs³ and frequencies in rad/µs.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative tolerance on `omega0 * t_c - 1` below which damping is critical.
pub const CRITICAL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// First-order (Ornstein-Uhlenbeck) noise, `m = 0`.
    Markovian,
    /// Stochastically driven damped oscillator, `m != 0`.
    SecondOrder,
}

/// Which of the two mutually derivable strength parameters stays fixed when
/// `t_c` or `omega0` changes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hold {
    Delta,
    DriveNorm,
}

/// Physical parameters of a noise model in canonical units.
///
/// `delta` and `drive_norm` are tied by
/// `delta² = t_c/2 · drive_norm` (Markovian) or
/// `delta² = t_c/(4 omega0²) · drive_norm` (second order).
/// Construct from either one; the other is derived.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NoiseParamsDoc", into = "NoiseParamsDoc")]
pub struct NoiseParams {
    kind: NoiseKind,
    delta: f64,
    t_c: f64,
    omega0: f64,
    drive_norm: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseParamsDoc {
    kind: NoiseKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    t_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    omega0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    drive_norm: Option<f64>,
}

impl From<NoiseParams> for NoiseParamsDoc {
    fn from(p: NoiseParams) -> Self {
        NoiseParamsDoc {
            kind: p.kind,
            delta: Some(p.delta),
            t_c: p.t_c,
            omega0: match p.kind {
                NoiseKind::Markovian => None,
                NoiseKind::SecondOrder => Some(p.omega0),
            },
            drive_norm: Some(p.drive_norm),
        }
    }
}

impl TryFrom<NoiseParamsDoc> for NoiseParams {
    type Error = Error;

    fn try_from(d: NoiseParamsDoc) -> Result<Self> {
        let omega0 = match (d.kind, d.omega0) {
            (NoiseKind::Markovian, None) => 0.0,
            (NoiseKind::Markovian, Some(_)) => {
                return Err(invalid("omega0", "only allowed for second_order noise"))
            }
            (NoiseKind::SecondOrder, Some(w)) => w,
            (NoiseKind::SecondOrder, None) => {
                return Err(invalid("omega0", "required for second_order noise"))
            }
        };
        match (d.delta, d.drive_norm) {
            (Some(delta), None) => NoiseParams::from_delta(d.kind, delta, d.t_c, omega0),
            (None, Some(drive)) => NoiseParams::from_drive_norm(d.kind, drive, d.t_c, omega0),
            (Some(delta), Some(drive)) => {
                let p = NoiseParams::from_delta(d.kind, delta, d.t_c, omega0)?;
                let scale = drive.abs().max(p.drive_norm.abs()).max(f64::MIN_POSITIVE);
                if (p.drive_norm - drive).abs() > 1e-12 * scale {
                    return Err(invalid(
                        "drive_norm",
                        format!("inconsistent with delta (expected {})", p.drive_norm),
                    ));
                }
                Ok(NoiseParams {
                    drive_norm: drive,
                    ..p
                })
            }
            (None, None) => Err(invalid("delta", "one of delta or drive_norm is required")),
        }
    }
}

fn check_common(kind: NoiseKind, t_c: f64, omega0: f64) -> Result<()> {
    if !(t_c.is_finite() && t_c > 0.0) {
        return Err(invalid("t_c", format!("must be finite and > 0, got {t_c}")));
    }
    if kind == NoiseKind::SecondOrder && !(omega0.is_finite() && omega0 > 0.0) {
        return Err(invalid(
            "omega0",
            format!("must be finite and > 0 for second-order noise (omega0 = 0 is unconfined motion), got {omega0}"),
        ));
    }
    Ok(())
}

/// `delta² / drive_norm` for the given model.
fn variance_per_drive(kind: NoiseKind, t_c: f64, omega0: f64) -> f64 {
    match kind {
        NoiseKind::Markovian => t_c / 2.0,
        NoiseKind::SecondOrder => t_c / (4.0 * omega0 * omega0),
    }
}

impl NoiseParams {
    pub fn from_delta(kind: NoiseKind, delta: f64, t_c: f64, omega0: f64) -> Result<Self> {
        check_common(kind, t_c, omega0)?;
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(invalid("delta", format!("must be finite and >= 0, got {delta}")));
        }
        let omega0 = if kind == NoiseKind::Markovian { 0.0 } else { omega0 };
        let drive_norm = delta * delta / variance_per_drive(kind, t_c, omega0);
        Ok(NoiseParams {
            kind,
            delta,
            t_c,
            omega0,
            drive_norm,
        })
    }

    pub fn from_drive_norm(kind: NoiseKind, drive_norm: f64, t_c: f64, omega0: f64) -> Result<Self> {
        check_common(kind, t_c, omega0)?;
        if !(drive_norm.is_finite() && drive_norm >= 0.0) {
            return Err(invalid(
                "drive_norm",
                format!("must be finite and >= 0, got {drive_norm}"),
            ));
        }
        let omega0 = if kind == NoiseKind::Markovian { 0.0 } else { omega0 };
        let delta = (drive_norm * variance_per_drive(kind, t_c, omega0)).sqrt();
        Ok(NoiseParams {
            kind,
            delta,
            t_c,
            omega0,
            drive_norm,
        })
    }

    pub fn markovian(delta: f64, t_c: f64) -> Result<Self> {
        Self::from_delta(NoiseKind::Markovian, delta, t_c, 0.0)
    }

    pub fn second_order(drive_norm: f64, t_c: f64, omega0: f64) -> Result<Self> {
        Self::from_drive_norm(NoiseKind::SecondOrder, drive_norm, t_c, omega0)
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn variance(&self) -> f64 {
        self.delta * self.delta
    }
    pub fn t_c(&self) -> f64 {
        self.t_c
    }
    /// Zero for Markovian noise.
    pub fn omega0(&self) -> f64 {
        self.omega0
    }
    pub fn drive_norm(&self) -> f64 {
        self.drive_norm
    }
    /// Damping coefficient `2/t_c`.
    pub fn beta(&self) -> f64 {
        2.0 / self.t_c
    }

    /// The strength parameter the figures of merit usually keep fixed:
    /// `delta` for Markovian noise, `drive_norm` for second-order noise.
    pub fn natural_hold(&self) -> Hold {
        match self.kind {
            NoiseKind::Markovian => Hold::Delta,
            NoiseKind::SecondOrder => Hold::DriveNorm,
        }
    }

    fn rebuild(&self, t_c: f64, omega0: f64, hold: Hold) -> Result<Self> {
        match hold {
            Hold::Delta => Self::from_delta(self.kind, self.delta, t_c, omega0),
            Hold::DriveNorm => Self::from_drive_norm(self.kind, self.drive_norm, t_c, omega0),
        }
    }

    pub fn with_t_c(&self, t_c: f64, hold: Hold) -> Result<Self> {
        self.rebuild(t_c, self.omega0, hold)
    }

    pub fn with_omega0(&self, omega0: f64, hold: Hold) -> Result<Self> {
        if self.kind == NoiseKind::Markovian {
            return Err(Error::NotSecondOrder);
        }
        self.rebuild(self.t_c, omega0, hold)
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::from_delta(self.kind, delta, self.t_c, self.omega0)
    }

    pub fn with_drive_norm(&self, drive_norm: f64) -> Result<Self> {
        Self::from_drive_norm(self.kind, drive_norm, self.t_c, self.omega0)
    }

    /// Multiplies the noise amplitude by `c` (volts to rad/µs, say):
    /// `delta` scales by `c`, `drive_norm` by `c²`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(invalid("coupling", format!("must be finite and >= 0, got {c}")));
        }
        Ok(NoiseParams {
            delta: self.delta * c,
            drive_norm: self.drive_norm * c * c,
            ..*self
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Underdamped,
    Critical,
    Overdamped,
}

/// Damping classification of a second-order model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DampingRegime {
    pub regime: Regime,
    /// `sqrt(omega0² - t_c⁻²)`, zero unless underdamped.
    pub omega: f64,
    /// `sqrt(t_c⁻² - omega0²)`, zero unless overdamped.
    pub alpha: f64,
}

pub fn derive(params: &NoiseParams) -> Result<DampingRegime> {
    if params.kind != NoiseKind::SecondOrder {
        return Err(Error::NotSecondOrder);
    }
    let w0 = params.omega0;
    let g = 1.0 / params.t_c;
    let x = w0 * params.t_c;
    if (x - 1.0).abs() < CRITICAL_TOL {
        return Ok(DampingRegime {
            regime: Regime::Critical,
            omega: 0.0,
            alpha: 0.0,
        });
    }
    // (w0 - g)(w0 + g) avoids cancellation in w0² - g² near the boundary.
    let d = (w0 - g) * (w0 + g);
    if x > 1.0 {
        Ok(DampingRegime {
            regime: Regime::Underdamped,
            omega: d.sqrt(),
            alpha: 0.0,
        })
    } else {
        Ok(DampingRegime {
            regime: Regime::Overdamped,
            omega: 0.0,
            alpha: (-d).sqrt(),
        })
    }
}

/// How the noise process is prepared relative to the start of the measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", try_from = "InitialConditionDoc")]
pub enum InitialCondition {
    Equilibrium,
    /// `n(0) = 0` (and `n'(0) = 0` for second-order noise).
    Quenched,
    /// Quenched a time `t_d` before the measurement starts.
    DelayedQuench { t_d: f64 },
    /// Markovian noise whose correlation time switches from `t_a` to `t_b`
    /// at `t_s`, with `delta` unchanged.
    SwitchedTc { t_a: f64, t_b: f64, t_s: f64 },
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum Mode {
    Equilibrium,
    Quenched,
    DelayedQuench,
    SwitchedTc,
}

// Flat form so that stray fields are rejected for every mode.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialConditionDoc {
    mode: Mode,
    t_d: Option<f64>,
    t_a: Option<f64>,
    t_b: Option<f64>,
    t_s: Option<f64>,
}

impl TryFrom<InitialConditionDoc> for InitialCondition {
    type Error = Error;

    fn try_from(d: InitialConditionDoc) -> Result<Self> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| invalid(name, "missing for this mode"));
        let allowed: &[&str] = match d.mode {
            Mode::Equilibrium | Mode::Quenched => &[],
            Mode::DelayedQuench => &["t_d"],
            Mode::SwitchedTc => &["t_a", "t_b", "t_s"],
        };
        for (name, v) in [("t_d", d.t_d), ("t_a", d.t_a), ("t_b", d.t_b), ("t_s", d.t_s)] {
            if v.is_some() && !allowed.contains(&name) {
                return Err(invalid(name, "not used by this mode"));
            }
        }
        let ic = match d.mode {
            Mode::Equilibrium => InitialCondition::Equilibrium,
            Mode::Quenched => InitialCondition::Quenched,
            Mode::DelayedQuench => InitialCondition::DelayedQuench { t_d: need(d.t_d, "t_d")? },
            Mode::SwitchedTc => InitialCondition::SwitchedTc {
                t_a: need(d.t_a, "t_a")?,
                t_b: need(d.t_b, "t_b")?,
                t_s: need(d.t_s, "t_s")?,
            },
        };
        ic.check_fields()?;
        Ok(ic)
    }
}

impl InitialCondition {
    /// `Q = exp(-2 t_d / t_c)`: 1 for a quench at `t = 0`, 0 at equilibrium.
    pub fn quench_weight(&self, t_c: f64) -> Option<f64> {
        match *self {
            InitialCondition::Equilibrium => Some(0.0),
            InitialCondition::Quenched => Some(1.0),
            InitialCondition::DelayedQuench { t_d } => Some((-2.0 * t_d / t_c).exp()),
            InitialCondition::SwitchedTc { .. } => None,
        }
    }

    fn check_fields(&self) -> Result<()> {
        match *self {
            InitialCondition::DelayedQuench { t_d } => {
                if !(t_d.is_finite() && t_d >= 0.0) {
                    return Err(invalid("t_d", format!("must be finite and >= 0, got {t_d}")));
                }
            }
            InitialCondition::SwitchedTc { t_a, t_b, t_s } => {
                for (name, v) in [("t_a", t_a), ("t_b", t_b)] {
                    if !(v.is_finite() && v > 0.0) {
                        return Err(invalid(name, format!("must be finite and > 0, got {v}")));
                    }
                }
                if !(t_s.is_finite() && t_s >= 0.0) {
                    return Err(invalid("t_s", format!("must be finite and >= 0, got {t_s}")));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Uniform sampling grid `t_k = k * dt`, `k = 0..n_points`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TimeGridDoc")]
pub struct TimeGrid {
    dt: f64,
    n_points: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TimeGridDoc {
    dt: f64,
    n_points: usize,
}

impl TryFrom<TimeGridDoc> for TimeGrid {
    type Error = Error;
    fn try_from(d: TimeGridDoc) -> Result<Self> {
        TimeGrid::new(d.dt, d.n_points)
    }
}

impl TimeGrid {
    pub fn new(dt: f64, n_points: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid("dt", format!("must be finite and > 0, got {dt}")));
        }
        if n_points == 0 {
            return Err(invalid("n_points", "must be positive"));
        }
        Ok(TimeGrid { dt, n_points })
    }

    /// Grid from 0 to (about) `t_max` inclusive.
    pub fn covering(dt: f64, t_max: f64) -> Result<Self> {
        if !(t_max.is_finite() && t_max >= 0.0) {
            return Err(invalid("t_max", format!("must be finite and >= 0, got {t_max}")));
        }
        Self::new(dt, (t_max / dt).round() as usize + 1)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn n_points(&self) -> usize {
        self.n_points
    }
    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
    pub fn t_max(&self) -> f64 {
        self.t(self.n_points - 1)
    }
    pub fn times(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.t(k)).collect()
    }
}

/// Checks that `(params, ic)` is a combination with closed-form analytics.
///
/// Accepted: Markovian noise with any initial condition; underdamped
/// second-order noise at equilibrium or quenched.
pub fn validate(params: &NoiseParams, ic: &InitialCondition) -> Result<()> {
    check_common(params.kind, params.t_c, params.omega0)?;
    if !(params.delta.is_finite() && params.delta >= 0.0) {
        return Err(invalid("delta", "must be finite and >= 0"));
    }
    ic.check_fields()?;
    if params.kind == NoiseKind::SecondOrder {
        match ic {
            InitialCondition::SwitchedTc { .. } => {
                return Err(Error::Unsupported(
                    "switched correlation time requires Markovian noise".into(),
                ))
            }
            InitialCondition::DelayedQuench { .. } => {
                return Err(Error::Unsupported(
                    "delayed quench is only defined for Markovian noise".into(),
                ))
            }
            _ => {}
        }
        let d = derive(params)?;
        if d.regime != Regime::Underdamped {
            return Err(Error::OutOfScope(format!(
                "{:?} damping (omega0 * t_c = {}) has no closed-form correlation",
                d.regime,
                params.omega0 * params.t_c
            )));
        }
    }
    Ok(())
}
