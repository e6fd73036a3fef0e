//! Regime witnesses read off a Ramsey curve: the short-time power law of
//! `-ln S`, collapse-and-revival peaks, and a combined label.

use serde::{Deserialize, Serialize};

use crate::curve::RamseyCurve;
use crate::error::{Error, Result};
use crate::ramsey::{series_report, ChiSpec};

/// Default exponent window on `chî = -ln S`.
pub const WINDOW_LO: f64 = 1e-3;
pub const WINDOW_HI: f64 = 0.1;
/// Smallest half-width of a consistency check on an exponent.
pub const MIN_MARGIN: f64 = 0.25;
const MIN_WINDOW_POINTS: usize = 6;
const MIN_REVIVAL_POINTS: usize = 50;
const SMOOTH: usize = 5;
const PROMINENCE_FACTOR: f64 = 3.0;
const NOISE_RADIUS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    pub exponent: f64,
    pub stderr: f64,
    pub n_points: usize,
    pub window: [f64; 2],
}

impl ExponentEstimate {
    /// `max(2 SE, MIN_MARGIN)`.
    pub fn margin(&self) -> f64 {
        (2.0 * self.stderr).max(MIN_MARGIN)
    }

    pub fn consistent_with(&self, k: f64) -> bool {
        (self.exponent - k).abs() <= self.margin()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Straight-line fit `y = a + b x`, returning `(a, b, se_b)`.
///
/// With weights the slope error is scaled by `max(1, reduced chi2)`; without,
/// it comes from the residual scatter.
fn line_fit(x: &[f64], y: &[f64], w: Option<&[f64]>) -> (f64, f64, f64) {
    let n = x.len();
    let wt = |i: usize| w.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..n).map(wt).sum();
    let mx = (0..n).map(|i| wt(i) * x[i]).sum::<f64>() / sw;
    let my = (0..n).map(|i| wt(i) * y[i]).sum::<f64>() / sw;
    let sxx: f64 = (0..n).map(|i| wt(i) * (x[i] - mx).powi(2)).sum();
    let sxy: f64 = (0..n).map(|i| wt(i) * (x[i] - mx) * (y[i] - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rss: f64 = (0..n).map(|i| wt(i) * (y[i] - a - b * x[i]).powi(2)).sum();
    let dof = (n as f64 - 2.0).max(1.0);
    let var_b = match w {
        Some(_) => (rss / dof).max(1.0) / sxx,
        None => rss / dof / sxx,
    };
    (a, b, var_b.sqrt())
}

/// [`short_time_exponent_in`] with the default window.
pub fn short_time_exponent(curve: &RamseyCurve) -> Result<ExponentEstimate> {
    short_time_exponent_in(curve, WINDOW_HI)
}

/// Slope of `ln(-ln S)` against `ln t` over the points whose `chî` lies in
/// `[max(3 noise_floor, 1e-3), hi]`, where `noise_floor` is the median
/// stderr (0 without error bars).
///
/// The window is the first contiguous run of points inside it. The reported
/// error adds, in quadrature, half the drift of the local slope between the
/// first and last thirds of the window's `ln t` span. On noiseless curves this
/// is the only error there is: it measures how far the next-order term bends
/// the log-log line inside the window.
pub fn short_time_exponent_in(curve: &RamseyCurve, hi: f64) -> Result<ExponentEstimate> {
    let floor = curve.stderr.as_ref().map_or(0.0, |se| median(se.clone()));
    let lo = (3.0 * floor).max(WINDOW_LO);
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    for i in 0..curve.len() {
        let (t, s) = (curve.times[i], curve.signal[i]);
        if !(t > 0.0 && s > 0.0) {
            continue;
        }
        let c = -s.ln();
        // Only the first rise through the window counts.
        if c > hi && !x.is_empty() {
            break;
        }
        if c >= lo && c <= hi {
            x.push(t.ln());
            y.push(c.ln());
            if let Some(se) = &curve.stderr {
                // d ln(chî) = dS / (S chî).
                let sd = (se[i] / (s * c)).max(1e-12);
                w.push(1.0 / (sd * sd));
            }
        }
    }
    let n = x.len();
    if n < MIN_WINDOW_POINTS || hi <= lo {
        return Err(Error::WindowTooSmall { usable: n });
    }
    let weights = curve.stderr.as_ref().map(|_| w.as_slice());
    let (_, k, se_stat) = line_fit(&x, &y, weights);
    // Thirds of the ln t span, the regression axis.
    let span = x[n - 1] - x[0];
    let first = x.iter().take_while(|&&v| v <= x[0] + span / 3.0).count().max(2);
    let last = x.iter().rev().take_while(|&&v| v >= x[n - 1] - span / 3.0).count().max(2);
    let local = |r: std::ops::Range<usize>| line_fit(&x[r.clone()], &y[r], None).1;
    let drift = (local(n - last..n) - local(0..first)).abs();
    Ok(ExponentEstimate {
        exponent: k,
        stderr: (se_stat * se_stat + drift * drift).sqrt(),
        n_points: n,
        window: [lo, hi],
    })
}

/// Ratio of the leading short-time term of `chi` to the next one, at the
/// time where the leading term alone equals `chi_hi`. `None` when only one
/// term is known.
pub fn window_margin(spec: &ChiSpec, chi_hi: f64) -> Result<Option<f64>> {
    let rep = series_report(spec)?;
    let terms = &rep.short_time;
    let Some(lead) = terms.iter().find(|t| t.coefficient != 0.0) else {
        return Ok(None);
    };
    let t = (chi_hi / lead.coefficient.abs()).powf(1.0 / lead.power as f64);
    let next: f64 = terms
        .iter()
        .filter(|s| s.power > lead.power)
        .map(|s| s.coefficient * t.powi(s.power as i32))
        .sum();
    if next == 0.0 {
        return Ok(None);
    }
    Ok(Some(chi_hi / next.abs()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Revival {
    pub time: f64,
    pub prominence: f64,
    /// Prominence a peak needed to count.
    pub threshold: f64,
}

fn smooth(s: &[f64]) -> Vec<f64> {
    let h = SMOOTH / 2;
    let n = s.len();
    (0..n)
        .map(|i| {
            let a = i.saturating_sub(h);
            let b = (i + h + 1).min(n);
            s[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect()
}

/// Peaks of the 5-point moving average of `S` whose prominence exceeds three
/// times the local noise: the largest stderr within five points, or without
/// error bars the median absolute step between neighbours.
pub fn detect_revivals(curve: &RamseyCurve) -> Vec<Revival> {
    let n = curve.len();
    if n < MIN_REVIVAL_POINTS {
        return Vec::new();
    }
    let sm = smooth(&curve.signal);
    let scale = curve.signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let global = median(curve.signal.windows(2).map(|w| (w[1] - w[0]).abs()).collect()).max(1e-9 * scale);
    let mut out = Vec::new();
    for i in 1..n - 1 {
        if !(sm[i] > sm[i - 1] && sm[i] >= sm[i + 1]) {
            continue;
        }
        // Topographic prominence: the higher of the two saddles.
        let mut left = sm[i];
        for j in (0..i).rev() {
            if sm[j] > sm[i] {
                break;
            }
            left = left.min(sm[j]);
        }
        let mut right = sm[i];
        for &v in &sm[i + 1..] {
            if v > sm[i] {
                break;
            }
            right = right.min(v);
        }
        let prominence = sm[i] - left.max(right);
        let noise = match &curve.stderr {
            Some(se) => {
                let a = i.saturating_sub(NOISE_RADIUS);
                let b = (i + NOISE_RADIUS + 1).min(n);
                se[a..b].iter().fold(0.0f64, |m, v| m.max(*v)).max(1e-9 * scale)
            }
            None => global,
        };
        let threshold = PROMINENCE_FACTOR * noise;
        if prominence > threshold {
            out.push(Revival {
                time: curve.times[i],
                prominence,
                threshold,
            });
        }
    }
    out
}

/// Second finite difference of `S` at the grid points nearest `times`.
/// Near zero at a revival when the noise was quenched well before the
/// measurement.
pub fn revival_curvature(curve: &RamseyCurve, times: &[f64]) -> Vec<(f64, f64)> {
    let n = curve.len();
    let mut out = Vec::new();
    for &t in times {
        let i = match curve.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => i,
            Err(i) => {
                if i > 0 && (i == n || t - curve.times[i - 1] < curve.times[i] - t) {
                    i - 1
                } else {
                    i
                }
            }
        };
        if i == 0 || i + 1 >= n {
            continue;
        }
        let h1 = curve.times[i] - curve.times[i - 1];
        let h2 = curve.times[i + 1] - curve.times[i];
        let s = &curve.signal;
        let d2 = 2.0 * (h1 * s[i + 1] - (h1 + h2) * s[i] + h2 * s[i - 1]) / (h1 * h2 * (h1 + h2));
        out.push((curve.times[i], d2));
    }
    out
}

/// Straight line `chî ≈ offset + slope t` through the second half of the
/// curve, restricted to points with `S > 1e-3`. Returns `(slope, offset)`.
///
/// Offsets differ between regimes but only on an absolute signal scale, so
/// this is reported and never used by [`classify`].
pub fn long_time_offset(curve: &RamseyCurve) -> Option<(f64, f64)> {
    let n = curve.len();
    let (x, y): (Vec<f64>, Vec<f64>) = (n / 2..n)
        .filter(|&i| curve.signal[i] > 1e-3)
        .map(|i| (curve.times[i], -curve.signal[i].ln()))
        .unzip();
    if x.len() < 3 {
        return None;
    }
    let (a, b, _) = line_fit(&x, &y, None);
    Some((b, a))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preparation {
    /// The sensor sees the noise as it happens to be.
    AsPrepared,
    /// The noise was deliberately quenched at the start.
    QuenchedPrepared,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stationarity {
    Stationary,
    NonStationary,
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Memory {
    Markovian,
    NonMarkovian,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub witness: String,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub stationarity: Stationarity,
    pub memory: Memory,
    pub evidence: Vec<Evidence>,
}

impl RegimeLabel {
    pub fn verdict(&self) -> String {
        let st = match self.stationarity {
            Stationarity::Stationary => "stationary",
            Stationarity::NonStationary => "non-stationary",
            Stationarity::Inconclusive => "stationarity inconclusive",
        };
        let me = match self.memory {
            Memory::Markovian => "Markovian",
            Memory::NonMarkovian => "non-Markovian",
            Memory::Inconclusive => "memory inconclusive",
        };
        let mut s = format!("{st}, {me}\n");
        for e in &self.evidence {
            s.push_str(&format!("  {:<40} {:>12.5} (threshold {:.5})\n", e.witness, e.value, e.threshold));
        }
        s
    }
}

/// Combines the witnesses of one or two curves.
///
/// Memory: non-Markovian on any revival, or on an exponent consistent with
/// `>= 4`; Markovian when no curve revives and an exponent is consistent with
/// 3. Stationarity, from as-prepared curves only: stationary when the exponent
/// is consistent with 2, non-stationary when it is consistent with `>= 3` and
/// clear of 2. "Consistent" means within `max(2 SE, 0.25)`.
pub fn classify(curves: &[(RamseyCurve, Preparation)]) -> RegimeLabel {
    let mut evidence = Vec::new();
    let mut revived = false;
    let mut any_markov_exp = false;
    let mut any_high_exp = false;
    let mut stationary = false;
    let mut nonstationary = false;
    for (idx, (curve, prep)) in curves.iter().enumerate() {
        let tag = match prep {
            Preparation::AsPrepared => "as-prepared",
            Preparation::QuenchedPrepared => "quenched",
        };
        if let Some(r) = detect_revivals(curve).first() {
            revived = true;
            evidence.push(Evidence {
                witness: format!("revival prominence, curve {idx} ({tag}) at t = {:.4}", r.time),
                value: r.prominence,
                threshold: r.threshold,
            });
        }
        let Ok(k) = short_time_exponent(curve) else {
            continue;
        };
        let m = k.margin();
        let mut note = |what: &str, threshold: f64| {
            evidence.push(Evidence {
                witness: format!("short-time exponent {what}, curve {idx} ({tag})"),
                value: k.exponent,
                threshold,
            })
        };
        if k.exponent >= 4.0 - m {
            any_high_exp = true;
            note(">= 4", 4.0 - m);
        } else if k.consistent_with(3.0) {
            any_markov_exp = true;
            note("~ 3", 3.0);
        }
        if *prep == Preparation::AsPrepared {
            if k.consistent_with(2.0) {
                stationary = true;
                note("~ 2", 2.0);
            } else if k.exponent >= 3.0 - m && k.exponent - m > 2.0 {
                nonstationary = true;
                note("> 2", 2.0 + m);
            }
        }
    }
    let memory = if revived || any_high_exp {
        Memory::NonMarkovian
    } else if any_markov_exp {
        Memory::Markovian
    } else {
        Memory::Inconclusive
    };
    let stationarity = match (stationary, nonstationary) {
        (true, false) => Stationarity::Stationary,
        (false, true) => Stationarity::NonStationary,
        _ => Stationarity::Inconclusive,
    };
    RegimeLabel {
        stationarity,
        memory,
        evidence,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::Provenance;
    use crate::model::{InitialCondition, NoiseParams, TimeGrid};
    use crate::ramsey::{ramsey_signal, ramsey_signal_at};

    fn log_times(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a * (b / a).powf(i as f64 / (n - 1) as f64)).collect()
    }

    fn markov(ic: InitialCondition) -> ChiSpec {
        ChiSpec::new(NoiseParams::markovian(0.8, 2.5).unwrap(), ic).unwrap()
    }

    #[test]
    fn markovian_exponents() {
        let t = log_times(1e-3, 5.0, 400);
        let eq = ramsey_signal_at(&markov(InitialCondition::Equilibrium), &t).unwrap();
        let k = short_time_exponent(&eq).unwrap();
        assert!(k.consistent_with(2.0) && (k.exponent - 2.0).abs() < 0.1, "{k:?}");
        // At t_c = 2.5 the window top reaches t ~ 0.4 t_c and the t⁴ term
        // bends the line; t_c = 10 keeps it within 0.1.
        let qu = ramsey_signal_at(&markov(InitialCondition::Quenched), &t).unwrap();
        assert!(short_time_exponent(&qu).unwrap().consistent_with(3.0));
        let slow = ChiSpec::new(NoiseParams::markovian(0.8, 10.0).unwrap(), InitialCondition::Quenched).unwrap();
        let k = short_time_exponent(&ramsey_signal_at(&slow, &t).unwrap()).unwrap();
        assert!((k.exponent - 3.0).abs() < 0.1, "{k:?}");
    }

    #[test]
    fn narrower_window_approaches_leading_order() {
        let t = log_times(1e-3, 5.0, 800);
        let qu = ramsey_signal_at(&markov(InitialCondition::Quenched), &t).unwrap();
        let wide = short_time_exponent_in(&qu, 0.1).unwrap();
        let narrow = short_time_exponent_in(&qu, 0.01).unwrap();
        assert!((narrow.exponent - 3.0).abs() < (wide.exponent - 3.0).abs());
    }

    #[test]
    fn flat_curve_has_no_window() {
        let c = RamseyCurve::new(log_times(0.01, 1.0, 60), vec![1.0; 60], None, Provenance::External).unwrap();
        assert!(matches!(short_time_exponent(&c), Err(Error::WindowTooSmall { usable: 0 })));
        assert!(detect_revivals(&c).is_empty());
        let l = classify(&[(c, Preparation::AsPrepared)]);
        assert_eq!(l.stationarity, Stationarity::Inconclusive);
        assert_eq!(l.memory, Memory::Inconclusive);
    }

    #[test]
    fn markovian_curve_has_no_revivals() {
        let c = ramsey_signal(&markov(InitialCondition::Equilibrium), &TimeGrid::new(0.01, 500).unwrap()).unwrap();
        assert!(detect_revivals(&c).is_empty());
    }

    #[test]
    fn short_curves_yield_no_revivals() {
        let s: Vec<f64> = (0..40).map(|i| (i as f64).cos()).collect();
        let c = RamseyCurve::new((0..40).map(|i| i as f64).collect(), s, None, Provenance::External).unwrap();
        assert!(detect_revivals(&c).is_empty());
    }

    #[test]
    fn synthetic_peak_is_found() {
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 0.01).collect();
        let s: Vec<f64> = t.iter().map(|x| 0.5 + 0.3 * (-(x - 1.0f64).powi(2) / 0.01).exp()).collect();
        let c = RamseyCurve::new(t, s, None, Provenance::External).unwrap();
        let r = detect_revivals(&c);
        assert_eq!(r.len(), 1);
        assert!((r[0].time - 1.0).abs() < 0.011);
    }

    #[test]
    fn curvature_of_parabola() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let s: Vec<f64> = t.iter().map(|x| 1.0 - 0.5 * x * x).collect();
        let c = RamseyCurve::new(t, s, None, Provenance::External).unwrap();
        let d = revival_curvature(&c, &[2.03]);
        assert!((d[0].0 - 2.0).abs() < 1e-12);
        assert!((d[0].1 + 1.0).abs() < 1e-9);
    }

    #[test]
    fn long_time_slope_of_markovian_curve() {
        let spec = ChiSpec::new(NoiseParams::markovian(0.3, 2.5).unwrap(), InitialCondition::Equilibrium).unwrap();
        let c = ramsey_signal(&spec, &TimeGrid::new(0.1, 200).unwrap()).unwrap();
        let (slope, offset) = long_time_offset(&c).unwrap();
        let rep = series_report(&spec).unwrap();
        assert!((slope - rep.long_time_slope).abs() < 0.05 * rep.long_time_slope);
        assert!(offset < 0.0);
    }

    #[test]
    fn margin_is_large_at_window_top() {
        let m = window_margin(&markov(InitialCondition::Equilibrium), WINDOW_HI).unwrap().unwrap();
        assert!(m > 10.0, "{m}");
    }
}
