//! Attenuation factor `chi(t)`, its asymptotic forms, and the Ramsey signal
//! `S(t) = exp(-chi(t))`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::correlation::{sin_over, CorrelationSpec};
use crate::curve::{Provenance, RamseyCurve};
use crate::error::{invalid, Error, Result};
use crate::model::{derive, validate, InitialCondition, NoiseKind, NoiseParams, TimeGrid};

/// Below this value of `omega0 * t` the underdamped branches are summed as
/// a power series instead of the closed form, which cancels badly there.
const SERIES_SWITCH: f64 = 0.5;
const SERIES_TERMS: usize = 48;

/// What `chi(t)` is computed for.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChiSpec {
    pub params: NoiseParams,
    pub ic: InitialCondition,
    /// Independent white-noise dephasing, adding `t / extra_t2star` to chi.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_t2star: Option<f64>,
}

impl ChiSpec {
    pub fn new(params: NoiseParams, ic: InitialCondition) -> Result<Self> {
        validate(&params, &ic)?;
        Ok(ChiSpec {
            params,
            ic,
            extra_t2star: None,
        })
    }

    pub fn with_t2star(mut self, t2star: f64) -> Result<Self> {
        if !(t2star.is_finite() && t2star > 0.0) {
            return Err(invalid("extra_t2star", "must be finite and > 0"));
        }
        self.extra_t2star = Some(t2star);
        Ok(self)
    }

    pub fn correlation(&self) -> CorrelationSpec {
        CorrelationSpec {
            params: self.params,
            ic: self.ic,
        }
    }

    fn check(&self) -> Result<()> {
        validate(&self.params, &self.ic)?;
        if let Some(t2) = self.extra_t2star {
            if !(t2.is_finite() && t2 > 0.0) {
                return Err(invalid("extra_t2star", "must be finite and > 0"));
            }
        }
        Ok(())
    }

    fn envelope(&self, t: f64) -> f64 {
        self.extra_t2star.map_or(0.0, |t2| t / t2)
    }
}

/// `x - (1 - e^{-x})`: equilibrium Markovian chi in units of `delta² t_c²`.
fn markov_eq_unit(x: f64) -> f64 {
    if x < 0.1 {
        // sum_{n>=2} (-x)^n / n!
        let mut term = x * x / 2.0;
        let mut sum = 0.0;
        for n in 2..30 {
            sum += term;
            term *= -x / (n + 1) as f64;
        }
        sum
    } else {
        x + (-x).exp_m1()
    }
}

/// `x - (3/2 - 2e^{-x} + e^{-2x}/2)`: quenched Markovian chi in units of
/// `delta² t_c²`.
fn markov_qu_unit(x: f64) -> f64 {
    if x < 0.1 {
        // sum_{n>=3} (-1)^n (2 - 2^{n-1}) x^n / n!
        let mut sum = 0.0;
        let mut xn_over_fact = x * x * x / 6.0;
        for n in 3..40 {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (2.0 - 2f64.powi(n as i32 - 1)) * xn_over_fact;
            xn_over_fact *= x / (n + 1) as f64;
        }
        sum
    } else {
        x + 2.0 * (-x).exp_m1() - 0.5 * (-2.0 * x).exp_m1()
    }
}

/// Taylor coefficients of solutions of `y'' + (2/t_c) y' + omega0² y = 0`.
fn oscillator_coeffs(y0: f64, y1: f64, t_c: f64, omega0: f64) -> [f64; SERIES_TERMS] {
    let mut a = [0.0; SERIES_TERMS];
    a[0] = y0;
    a[1] = y1;
    for n in 0..SERIES_TERMS - 2 {
        let nf = n as f64;
        a[n + 2] = -((2.0 / t_c) * (nf + 1.0) * a[n + 1] + omega0 * omega0 * a[n])
            / ((nf + 2.0) * (nf + 1.0));
    }
    a
}

fn poly(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Power-series chi for underdamped noise, valid for small `omega0 t`.
fn underdamped_series(p: &NoiseParams, t: f64, quenched: bool) -> f64 {
    let (tc, w0) = (p.t_c(), p.omega0());
    if quenched {
        // chi = drive/2 ∫₀ᵗ K(u)² du with K = ∫ G and G(0)=0, G'(0)=1.
        let g = oscillator_coeffs(0.0, 1.0, tc, w0);
        let mut k = [0.0; SERIES_TERMS + 1];
        for n in 0..SERIES_TERMS {
            k[n + 1] = g[n] / (n + 1) as f64;
        }
        let mut chi = [0.0; SERIES_TERMS + 1];
        for m in 0..SERIES_TERMS {
            let mut c = 0.0;
            for i in 0..=m {
                c += k[i] * k[m - i];
            }
            chi[m + 1] = c / (m + 1) as f64;
        }
        0.5 * p.drive_norm() * poly(&chi, t)
    } else {
        // chi = delta² ∫₀ᵗ (t - s) h(s) ds with h(0)=1, h'(0)=0.
        let h = oscillator_coeffs(1.0, 0.0, tc, w0);
        let mut chi = [0.0; SERIES_TERMS + 2];
        for n in 0..SERIES_TERMS {
            chi[n + 2] = h[n] / ((n + 1) * (n + 2)) as f64;
        }
        p.variance() * poly(&chi, t)
    }
}

fn underdamped_eq_closed(p: &NoiseParams, om: f64, t: f64) -> f64 {
    let v = p.variance();
    let (tc, w0) = (p.t_c(), p.omega0());
    let g2 = 1.0 / (tc * tc);
    let w4 = w0.powi(4);
    let osc = (om * om - 3.0 * g2) * (om * t).cos() + (3.0 * om * om - g2) / tc * sin_over(om, t);
    2.0 * v / (tc * w0 * w0) * t - v / w4 * osc * (-t / tc).exp() + v * (om * om - 3.0 * g2) / w4
}

/// Quench transient, grouped so that every `1/Omega²` pole cancels.
fn underdamped_tr_closed(p: &NoiseParams, om: f64, t: f64) -> f64 {
    let v = p.variance();
    let (tc, w0) = (p.t_c(), p.omega0());
    let g2 = 1.0 / (tc * tc);
    let o2 = om * om;
    let pp = o2 + 5.0 * g2;
    let r = 3.0 * o2 - g2;
    let u = 3.0 * g2 - o2;
    let vv = o2 - 3.0 * g2;
    let s1 = sin_over(om, t);
    let s2 = sin_over(om, 2.0 * t);
    let e1 = (-t / tc).exp();
    let bracket = (pp / 2.0 - r * g2 * s1 * s1 + u / (2.0 * tc) * s2) * e1 * e1
        + (-pp * (om * t).cos() + vv / tc * s1) * e1
        + pp / 2.0;
    -v / w0.powi(4) * bracket
}

fn underdamped_chi(p: &NoiseParams, t: f64, quenched: bool) -> f64 {
    if p.omega0() * t < SERIES_SWITCH {
        return underdamped_series(p, t, quenched);
    }
    let om = derive(p).map(|d| d.omega).unwrap_or(0.0);
    let eq = underdamped_eq_closed(p, om, t);
    if quenched {
        eq + underdamped_tr_closed(p, om, t)
    } else {
        eq
    }
}

fn markov_switched(v: f64, t_a: f64, t_b: f64, t_s: f64, t: f64) -> f64 {
    if t <= t_s {
        return v * t_a * t_a * markov_eq_unit(t / t_a);
    }
    let after = t - t_s;
    v * (t_a * t_a * markov_eq_unit(t_s / t_a)
        + t_b * t_b * markov_eq_unit(after / t_b)
        + t_a * t_b * (-(-t_s / t_a).exp_m1()) * (-(-after / t_b).exp_m1()))
}

/// Noise part of chi, without the extra envelope. Assumes a validated `ChiSpec`.
fn chi_noise(spec: &ChiSpec, t: f64) -> f64 {
    let p = &spec.params;
    let v = p.variance();
    let tc = p.t_c();
    match p.kind() {
        NoiseKind::Markovian => match spec.ic {
            InitialCondition::SwitchedTc { t_a, t_b, t_s } => markov_switched(v, t_a, t_b, t_s, t),
            ic => {
                let q = ic.quench_weight(tc).unwrap_or(0.0);
                let x = t / tc;
                let eq = if q < 1.0 { markov_eq_unit(x) } else { 0.0 };
                let qu = if q > 0.0 { markov_qu_unit(x) } else { 0.0 };
                v * tc * tc * ((1.0 - q) * eq + q * qu)
            }
        },
        NoiseKind::SecondOrder => underdamped_chi(p, t, spec.ic == InitialCondition::Quenched),
    }
}

/// Attenuation factor `chi(t) = ∬ <n(t1) n(t2)>` in closed form.
pub fn chi(spec: &ChiSpec, t: f64) -> Result<f64> {
    spec.check()?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("t", format!("must be finite and >= 0, got {t}")));
    }
    Ok(chi_noise(spec, t) + spec.envelope(t))
}

/// Evaluates chi on many times with a single validation.
pub fn chi_many(spec: &ChiSpec, times: &[f64]) -> Result<Vec<f64>> {
    spec.check()?;
    times
        .iter()
        .map(|&t| {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(invalid("t", format!("must be finite and >= 0, got {t}")));
            }
            Ok(chi_noise(spec, t) + spec.envelope(t))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesOrder {
    ShortTime,
    LongTime,
}

/// One term `coefficient * t^power`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesTerm {
    pub power: u32,
    pub coefficient: f64,
}

/// Short-time polynomial and long-time line of chi for one spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub short_time: Vec<SeriesTerm>,
    /// Power of the first neglected short-time term.
    pub short_time_next_power: u32,
    pub long_time_slope: f64,
    pub long_time_offset: f64,
}

pub fn series_report(spec: &ChiSpec) -> Result<SeriesReport> {
    spec.check()?;
    let p = &spec.params;
    let v = p.variance();
    let tc = p.t_c();
    let term = |power, coefficient| SeriesTerm { power, coefficient };
    let (mut short, next, slope, offset) = match (p.kind(), spec.ic) {
        (NoiseKind::Markovian, InitialCondition::SwitchedTc { .. }) => {
            return Err(Error::Unsupported(
                "no tabulated expansion for switched correlation time".into(),
            ))
        }
        (NoiseKind::Markovian, ic) => {
            let q = ic.quench_weight(tc).unwrap_or(0.0);
            let mut s = Vec::new();
            if q < 1.0 {
                s.push(term(2, (1.0 - q) * v / 2.0));
            }
            s.push(term(3, -(1.0 - q) * v / (6.0 * tc) + q * v / (3.0 * tc)));
            (s, 4, v * tc, -(1.0 + q / 2.0) * v * tc * tc)
        }
        (NoiseKind::SecondOrder, ic) => {
            let om = derive(p)?.omega;
            let w0 = p.omega0();
            let w4 = w0.powi(4);
            let g2 = 1.0 / (tc * tc);
            let slope = 2.0 * v / (tc * w0 * w0);
            let eq_offset = v * (om * om - 3.0 * g2) / w4;
            if ic == InitialCondition::Quenched {
                let tr_offset = -v * (om * om + 5.0 * g2) / (2.0 * w4);
                (
                    vec![term(5, v * w0 * w0 / (10.0 * tc))],
                    6,
                    slope,
                    eq_offset + tr_offset,
                )
            } else {
                (
                    vec![
                        term(2, v / 2.0),
                        term(4, -v * w0 * w0 / 24.0),
                        term(5, v * w0 * w0 / (60.0 * tc)),
                    ],
                    6,
                    slope,
                    eq_offset,
                )
            }
        }
    };
    let mut slope = slope;
    if let Some(t2) = spec.extra_t2star {
        short.insert(0, term(1, 1.0 / t2));
        slope += 1.0 / t2;
    }
    Ok(SeriesReport {
        short_time: short,
        short_time_next_power: next,
        long_time_slope: slope,
        long_time_offset: offset,
    })
}

/// Short- or long-time approximation of chi.
pub fn chi_series(spec: &ChiSpec, t: f64, order: SeriesOrder) -> Result<f64> {
    let r = series_report(spec)?;
    Ok(match order {
        SeriesOrder::ShortTime => r
            .short_time
            .iter()
            .map(|s| s.coefficient * t.powi(s.power as i32))
            .sum(),
        SeriesOrder::LongTime => r.long_time_slope * t + r.long_time_offset,
    })
}

/// `S(t_k) = exp(-chi(t_k))` on a uniform grid.
pub fn ramsey_signal(spec: &ChiSpec, grid: &TimeGrid) -> Result<RamseyCurve> {
    ramsey_signal_at(spec, &grid.times())
}

/// `S(t) = exp(-chi(t))` at arbitrary times.
pub fn ramsey_signal_at(spec: &ChiSpec, times: &[f64]) -> Result<RamseyCurve> {
    let chis = chi_many(spec, times)?;
    let signal = chis.iter().map(|c| (-c).exp()).collect();
    RamseyCurve::new(times.to_vec(), signal, None, Provenance::Analytic)
}

/// `2 pi k / Omega` for `k = 1..=k_max`: where equilibrium underdamped noise
/// produces revivals.
pub fn revival_peak_times(spec: &ChiSpec, k_max: usize) -> Result<Vec<f64>> {
    spec.check()?;
    if spec.params.kind() != NoiseKind::SecondOrder || spec.ic != InitialCondition::Equilibrium {
        return Err(Error::Unsupported(
            "revivals require equilibrium second-order noise".into(),
        ));
    }
    let om = derive(&spec.params)?.omega;
    Ok((1..=k_max).map(|k| 2.0 * PI * k as f64 / om).collect())
}
