//! Closed-form two-time correlation functions and equilibrium spectra.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{derive, validate, InitialCondition, NoiseKind, NoiseParams};

/// `sin(omega t) / omega`, by series when `omega t` is tiny so it stays
/// regular as `omega -> 0`.
pub(crate) fn sin_over(omega: f64, t: f64) -> f64 {
    let x = omega * t;
    if x.abs() < 1e-6 {
        t * (1.0 - x * x / 6.0)
    } else {
        x.sin() / omega
    }
}

/// A noise model paired with its preparation, checked to have a closed form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    pub params: NoiseParams,
    pub ic: InitialCondition,
}

impl CorrelationSpec {
    pub fn new(params: NoiseParams, ic: InitialCondition) -> Result<Self> {
        validate(&params, &ic)?;
        Ok(CorrelationSpec { params, ic })
    }

    /// Effective oscillation frequency, zero for Markovian noise.
    pub(crate) fn omega(&self) -> f64 {
        match self.params.kind() {
            NoiseKind::Markovian => 0.0,
            NoiseKind::SecondOrder => derive(&self.params).map(|d| d.omega).unwrap_or(0.0),
        }
    }

    /// `<n(t1) n(t2)>`. Assumes a value built by [`CorrelationSpec::new`].
    pub fn eval(&self, t1: f64, t2: f64) -> f64 {
        let p = &self.params;
        let v = p.variance();
        let tc = p.t_c();
        let d = (t1 - t2).abs();
        match p.kind() {
            NoiseKind::Markovian => match self.ic {
                InitialCondition::SwitchedTc { t_a, t_b, t_s } => {
                    let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
                    let expo = if hi <= t_s {
                        (hi - lo) / t_a
                    } else if lo >= t_s {
                        (hi - lo) / t_b
                    } else {
                        (t_s - lo) / t_a + (hi - t_s) / t_b
                    };
                    v * (-expo).exp()
                }
                ic => {
                    let q = ic.quench_weight(tc).unwrap_or(0.0);
                    v * ((-d / tc).exp() - q * (-(t1 + t2) / tc).exp())
                }
            },
            NoiseKind::SecondOrder => {
                let om = self.omega();
                let stationary = v * (-d / tc).exp() * ((om * d).cos() + sin_over(om, d) / tc);
                match self.ic {
                    InitialCondition::Quenched => {
                        let tr = (om * (t1 - t2)).cos()
                            + 2.0 * sin_over(om, t1) * sin_over(om, t2) / (tc * tc)
                            + sin_over(om, t1 + t2) / tc;
                        stationary - v * (-(t1 + t2) / tc).exp() * tr
                    }
                    _ => stationary,
                }
            }
        }
    }
}

/// Checked evaluation of `<n(t1) n(t2)>`.
pub fn corr(spec: &CorrelationSpec, t1: f64, t2: f64) -> Result<f64> {
    if !(t1 >= 0.0 && t2 >= 0.0) {
        return Err(invalid("t", format!("times must be >= 0, got ({t1}, {t2})")));
    }
    validate(&spec.params, &spec.ic)?;
    Ok(spec.eval(t1, t2))
}

/// Equilibrium spectral density, normalized so that its integral over the
/// whole real line equals `delta²`.
pub fn spectral_density(params: &NoiseParams, omega: f64) -> f64 {
    let v = params.variance();
    let tc = params.t_c();
    match params.kind() {
        NoiseKind::Markovian => v / PI * tc / (1.0 + tc * tc * omega * omega),
        NoiseKind::SecondOrder => {
            let w0 = params.omega0();
            let w2 = omega * omega;
            let den = (w2 - w0 * w0).powi(2) + 4.0 * w2 / (tc * tc);
            2.0 * v * w0 * w0 / (PI * tc) / den
        }
    }
}

/// Frequency of the spectral maximum on `omega >= 0`.
pub fn spectral_peak(params: &NoiseParams) -> f64 {
    match params.kind() {
        NoiseKind::Markovian => 0.0,
        NoiseKind::SecondOrder => {
            let w0 = params.omega0();
            let tc = params.t_c();
            (w0 * w0 - 2.0 / (tc * tc)).max(0.0).sqrt()
        }
    }
}

/// Stationary position spectrum of a damped quantum oscillator at
/// temperature `temp` (`hbar = k_B = 1`):
/// `2/(m t_c) · omega coth(omega/2T) / ((omega² - omega0²)² + 4 omega²/t_c²)`.
///
/// This is in the unnormalized transform convention; it equals `pi` times
/// the normalized classical density at high temperature. See
/// [`qho_classical_ratio`].
pub fn qho_spectral_density(mass: f64, t_c: f64, omega0: f64, temp: f64, omega: f64) -> Result<f64> {
    if !(temp > 0.0) {
        return Err(invalid("T", format!("temperature must be > 0, got {temp}")));
    }
    let x = omega / (2.0 * temp);
    // omega coth(omega / 2T), with its limit 2T at omega = 0.
    let w_coth = if x.abs() < 1e-8 {
        2.0 * temp * (1.0 + x * x / 3.0)
    } else {
        omega / x.tanh()
    };
    let w2 = omega * omega;
    let den = (w2 - omega0 * omega0).powi(2) + 4.0 * w2 / (t_c * t_c);
    Ok(2.0 / (mass * t_c) * w_coth / den)
}

/// Ratio of the quantum oscillator spectrum to the classical second-order
/// density with driving `A = 4 T Gamma` (`Gamma = 2m / t_c`), after removing
/// the `pi` between the two transform conventions. Tends to 1 when
/// `omega << T`.
pub fn qho_classical_ratio(mass: f64, t_c: f64, omega0: f64, temp: f64, omega: f64) -> Result<f64> {
    let gamma = 2.0 * mass / t_c;
    let drive_norm = 4.0 * temp * gamma / (mass * mass);
    let p = NoiseParams::second_order(drive_norm, t_c, omega0)?;
    let q = qho_spectral_density(mass, t_c, omega0, temp, omega)?;
    Ok(q / (PI * spectral_density(&p, omega)))
}

/// Second moments of the initial bath magnetization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitCov {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl InitCov {
    pub fn zero() -> Self {
        InitCov {
            xx: 0.0,
            yy: 0.0,
            xy: 0.0,
        }
    }

    /// Lower Cholesky factor `[[l11, 0], [l21, l22]]`; errors unless PSD.
    pub fn cholesky(&self) -> Result<[f64; 3]> {
        let tol = 1e-12 * (self.xx.abs() + self.yy.abs()).max(f64::MIN_POSITIVE);
        if !(self.xx >= 0.0 && self.yy >= 0.0 && self.xy * self.xy <= self.xx * self.yy + tol) {
            return Err(invalid("init_cov", "must be positive semi-definite"));
        }
        let l11 = self.xx.sqrt();
        let l21 = if l11 > 0.0 { self.xy / l11 } else { 0.0 };
        let l22 = (self.yy - l21 * l21).max(0.0).sqrt();
        Ok([l11, l21, l22])
    }
}

/// Rotating spin bath: `I' = [[-1/t_c, W], [-W, -1/t_c]] I + eta` with
/// isotropic white noise of strength `a`; the sensor sees `n = I_x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinBathSpec {
    pub omega_rot: f64,
    pub t_c: f64,
    pub a: f64,
    pub init_cov: InitCov,
}

impl SpinBathSpec {
    /// Bath started from its stationary distribution.
    pub fn equilibrium(omega_rot: f64, t_c: f64, a: f64) -> Self {
        let v = a * t_c / 2.0;
        SpinBathSpec {
            omega_rot,
            t_c,
            a,
            init_cov: InitCov { xx: v, yy: v, xy: 0.0 },
        }
    }

    /// Stationary variance of each component, `a t_c / 2`.
    pub fn variance(&self) -> f64 {
        self.a * self.t_c / 2.0
    }

    pub fn check(&self) -> Result<()> {
        if !(self.t_c.is_finite() && self.t_c > 0.0) {
            return Err(invalid("t_c", "must be finite and > 0"));
        }
        if !(self.omega_rot.is_finite() && self.omega_rot >= 0.0) {
            return Err(invalid("omega_rot", "must be finite and >= 0"));
        }
        if !(self.a.is_finite() && self.a >= 0.0) {
            return Err(invalid("a", "must be finite and >= 0"));
        }
        self.init_cov.cholesky().map(|_| ())
    }
}

pub fn corr_rotating_bath(spec: &SpinBathSpec, t1: f64, t2: f64) -> f64 {
    let v = spec.variance();
    let w = spec.omega_rot;
    let tc = spec.t_c;
    let d = t1 - t2;
    let s = t1 + t2;
    let c = spec.init_cov;
    let stationary = v * (-d.abs() / tc).exp() * (w * d).cos();
    let transient = ((c.xx + c.yy) / 2.0 - v) * (w * d).cos()
        + (c.xx - c.yy) / 2.0 * (w * s).cos()
        + c.xy * (w * s).sin();
    stationary + (-s / tc).exp() * transient
}

/// Spin bath whose `x` axis neither relaxes nor is driven, mixed by Larmor
/// precession `omega0` with a `y` axis relaxing at `2/t_c` and driven by
/// white noise of strength `a` through `sigma_y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymmetricBathSpec {
    pub t_c: f64,
    pub omega0: f64,
    pub sigma_y: f64,
    pub a: f64,
    /// Deterministic `(I_x, I_y)` at `t = 0`.
    #[serde(default)]
    pub init: [f64; 2],
}

impl AsymmetricBathSpec {
    /// Effective mass `m = 1 / (omega0 sigma_y)`.
    pub fn mass(&self) -> f64 {
        1.0 / (self.omega0 * self.sigma_y)
    }

    /// The equivalent second-order model: `drive_norm = a / m²`.
    pub fn to_noise_params(&self) -> Result<NoiseParams> {
        if !(self.sigma_y.is_finite() && self.sigma_y > 0.0) {
            return Err(invalid("sigma_y", "must be finite and > 0"));
        }
        if !(self.a.is_finite() && self.a >= 0.0) {
            return Err(invalid("a", "must be finite and >= 0"));
        }
        let m = self.mass();
        NoiseParams::second_order(self.a / (m * m), self.t_c, self.omega0)
    }
}
