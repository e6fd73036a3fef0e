//! Weighted least-squares fits of `S = amplitude · e^{-χ(t)}` to one or more
//! Ramsey curves, with t-scores and dependencies for every parameter.
//!
//! Positive parameters are optimized in log coordinates by a box-clamped
//! Levenberg-Marquardt iteration. Starting points come from a log-spaced grid
//! search followed by jittered restarts.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::curve::RamseyCurve;
use crate::error::{invalid, Error, Result};
use crate::model::{Hold, InitialCondition, NoiseKind};
use crate::ramsey::{chi_many, ChiSpec};
use crate::rng::realization_stream;

const STARTS: usize = 8;
const GRID_POINTS: usize = 5;
const MAX_ITER: usize = 300;
const STDERR_FLOOR: f64 = 1e-6;
/// Lower edge of a log-scaled box whose nominal lower bound is 0, relative to
/// the upper bound.
const ZERO_FLOOR: f64 = 1e-12;
/// Full grid search up to this many candidates, then one axis at a time.
const MAX_GRID: usize = 3125;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamName {
    Delta,
    TC,
    DriveNorm,
    Omega0,
    TD,
    TS,
    TA,
    TB,
    ExtraT2star,
    Coupling,
    AmplitudeScale,
}

impl ParamName {
    pub const ALL: [ParamName; 11] = [
        ParamName::Delta,
        ParamName::TC,
        ParamName::DriveNorm,
        ParamName::Omega0,
        ParamName::TD,
        ParamName::TS,
        ParamName::TA,
        ParamName::TB,
        ParamName::ExtraT2star,
        ParamName::Coupling,
        ParamName::AmplitudeScale,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::Delta => "delta",
            ParamName::TC => "t_c",
            ParamName::DriveNorm => "drive_norm",
            ParamName::Omega0 => "omega0",
            ParamName::TD => "t_d",
            ParamName::TS => "t_s",
            ParamName::TA => "t_a",
            ParamName::TB => "t_b",
            ParamName::ExtraT2star => "extra_t2star",
            ParamName::Coupling => "coupling",
            ParamName::AmplitudeScale => "amplitude_scale",
        }
    }

    fn is_time(self) -> bool {
        matches!(
            self,
            ParamName::TC | ParamName::TD | ParamName::TS | ParamName::TA | ParamName::TB | ParamName::ExtraT2star
        )
    }

    /// Whether this parameter changes the model of `spec`.
    fn used_by(self, spec: &ChiSpec) -> bool {
        match self {
            ParamName::Omega0 => spec.params.kind() == NoiseKind::SecondOrder,
            ParamName::TD => matches!(spec.ic, InitialCondition::DelayedQuench { .. }),
            ParamName::TS | ParamName::TA | ParamName::TB => matches!(spec.ic, InitialCondition::SwitchedTc { .. }),
            // The correlation time of a switched model is set by t_a and t_b.
            ParamName::TC => !matches!(spec.ic, InitialCondition::SwitchedTc { .. }),
            _ => true,
        }
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let alias = match s {
            "tc" => "t_c",
            "td" => "t_d",
            "ts" => "t_s",
            "ta" => "t_a",
            "tb" => "t_b",
            "drive" => "drive_norm",
            "amplitude" => "amplitude_scale",
            "t2star" => "extra_t2star",
            other => other,
        };
        ParamName::ALL
            .into_iter()
            .find(|p| p.as_str() == alias)
            .ok_or_else(|| invalid("free", format!("unknown parameter `{s}`")))
    }
}

/// A curve and the model it is compared with. Values in `model` serve as the
/// fixed values of every parameter that is not free.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub curve: RamseyCurve,
    pub model: ChiSpec,
    #[serde(default = "unit")]
    pub amplitude_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl Dataset {
    pub fn new(curve: RamseyCurve, model: ChiSpec) -> Self {
        Dataset {
            curve,
            model,
            amplitude_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitProblem {
    pub datasets: Vec<Dataset>,
    pub free: Vec<ParamName>,
    /// Free parameters taking one common value in every dataset. Others get
    /// one value per dataset.
    #[serde(default)]
    pub shared: Vec<ParamName>,
    #[serde(default)]
    pub bounds: BTreeMap<ParamName, [f64; 2]>,
    #[serde(default)]
    pub initial: BTreeMap<ParamName, f64>,
}

impl FitProblem {
    pub fn new(datasets: Vec<Dataset>, free: Vec<ParamName>) -> Self {
        FitProblem {
            datasets,
            free,
            shared: Vec::new(),
            bounds: BTreeMap::new(),
            initial: BTreeMap::new(),
        }
    }

    pub fn shared(mut self, shared: Vec<ParamName>) -> Self {
        self.shared = shared;
        self
    }

    pub fn bound(mut self, p: ParamName, lo: f64, hi: f64) -> Self {
        self.bounds.insert(p, [lo, hi]);
        self
    }

    pub fn initial(mut self, p: ParamName, v: f64) -> Self {
        self.initial.insert(p, v);
        self
    }
}

/// One optimized coordinate.
#[derive(Clone, Debug)]
struct Slot {
    name: ParamName,
    label: String,
    /// Log-coordinate box.
    lo: f64,
    hi: f64,
    initial: Option<f64>,
}

struct Prepared<'a> {
    problem: &'a FitProblem,
    slots: Vec<Slot>,
    /// Per dataset: `(slot, name)` assignments.
    assign: Vec<Vec<(usize, ParamName)>>,
    weights: Vec<Vec<f64>>,
    weighted: bool,
    n_data: usize,
}

fn hold_rule(free: &[ParamName]) -> Result<Option<Hold>> {
    let d = free.contains(&ParamName::Delta);
    let a = free.contains(&ParamName::DriveNorm);
    match (d, a) {
        (true, true) => Err(invalid(
            "free",
            "delta and drive_norm determine each other; free at most one",
        )),
        (true, false) => Ok(Some(Hold::Delta)),
        (false, true) => Ok(Some(Hold::DriveNorm)),
        (false, false) => Ok(None),
    }
}

fn prepare(problem: &FitProblem) -> Result<Prepared<'_>> {
    if problem.datasets.is_empty() {
        return Err(invalid("datasets", "at least one dataset is required"));
    }
    if problem.free.is_empty() {
        return Err(invalid("free", "at least one free parameter is required"));
    }
    hold_rule(&problem.free)?;
    for (i, p) in problem.free.iter().enumerate() {
        if problem.free[..i].contains(p) {
            return Err(invalid("free", format!("`{p}` listed twice")));
        }
    }
    for s in &problem.shared {
        if !problem.free.contains(s) {
            return Err(invalid("shared", format!("`{s}` is shared but not free")));
        }
    }
    let mut t_max: f64 = 0.0;
    let mut dt_min = f64::INFINITY;
    for d in &problem.datasets {
        if d.curve.len() < 2 {
            return Err(invalid("datasets", "every curve needs at least two points"));
        }
        t_max = t_max.max(*d.curve.times.last().unwrap());
        for w in d.curve.times.windows(2) {
            dt_min = dt_min.min(w[1] - w[0]);
        }
    }
    let mut slots = Vec::new();
    let mut assign = vec![Vec::new(); problem.datasets.len()];
    for &name in &problem.free {
        let users: Vec<usize> = (0..problem.datasets.len())
            .filter(|&i| name.used_by(&problem.datasets[i].model))
            .collect();
        if users.is_empty() {
            return Err(invalid(name.as_str(), "free but not used by any dataset's model"));
        }
        let [lo, hi] = match problem.bounds.get(&name) {
            Some(&b) => b,
            None if name.is_time() => [dt_min, 1e3 * t_max],
            None if name == ParamName::AmplitudeScale || name == ParamName::Coupling => [1e-3, 1e3],
            None => [0.0, std::f64::consts::PI / dt_min],
        };
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi > lo) {
            return Err(invalid(
                name.as_str(),
                format!("bounds must be finite, ordered and >= 0, got [{lo}, {hi}]"),
            ));
        }
        let lo = lo.max(ZERO_FLOOR * hi);
        let initial = problem.initial.get(&name).copied();
        if let Some(v) = initial {
            if !(v >= lo && v <= hi) {
                return Err(invalid(name.as_str(), format!("initial value {v} outside [{lo}, {hi}]")));
            }
        }
        let groups: Vec<Vec<usize>> = if problem.shared.contains(&name) || users.len() == 1 {
            vec![users]
        } else {
            users.into_iter().map(|u| vec![u]).collect()
        };
        let many = groups.len() > 1;
        for g in groups {
            let label = if many {
                format!("{name}[{}]", g[0])
            } else {
                name.as_str().to_string()
            };
            for &d in &g {
                assign[d].push((slots.len(), name));
            }
            slots.push(Slot {
                name,
                label,
                lo: lo.ln(),
                hi: hi.ln(),
                initial: initial.map(f64::ln),
            });
        }
    }
    let n_data: usize = problem.datasets.iter().map(|d| d.curve.len()).sum();
    if n_data < 5 * slots.len() {
        return Err(invalid(
            "datasets",
            format!("{n_data} points for {} free parameters; need 5 per parameter", slots.len()),
        ));
    }
    let weighted = problem.datasets.iter().all(|d| d.curve.stderr.is_some());
    let weights = problem
        .datasets
        .iter()
        .map(|d| match (&d.curve.stderr, weighted) {
            (Some(se), true) => se.iter().map(|s| 1.0 / s.max(STDERR_FLOOR).powi(2)).collect(),
            _ => vec![1.0; d.curve.len()],
        })
        .collect();
    Ok(Prepared {
        problem,
        slots,
        assign,
        weights,
        weighted,
        n_data,
    })
}

/// Model of dataset `d` with the free values in `theta` (linear units).
fn dataset_model(prep: &Prepared, d: usize, theta: &[f64]) -> Result<(ChiSpec, f64)> {
    let ds = &prep.problem.datasets[d];
    let mut spec = ds.model;
    let mut amp = ds.amplitude_scale;
    let hold = hold_rule(&prep.problem.free)?.unwrap_or_else(|| spec.params.natural_hold());
    let val = |n: ParamName| prep.assign[d].iter().find(|(_, m)| *m == n).map(|&(s, _)| theta[s]);
    if let Some(v) = val(ParamName::TC) {
        spec.params = spec.params.with_t_c(v, hold)?;
    }
    if let Some(v) = val(ParamName::Omega0) {
        spec.params = spec.params.with_omega0(v, hold)?;
    }
    if let Some(v) = val(ParamName::Delta) {
        spec.params = spec.params.with_delta(v)?;
    }
    if let Some(v) = val(ParamName::DriveNorm) {
        spec.params = spec.params.with_drive_norm(v)?;
    }
    if let Some(v) = val(ParamName::Coupling) {
        spec.params = spec.params.scaled(v)?;
    }
    if let Some(v) = val(ParamName::TD) {
        spec.ic = InitialCondition::DelayedQuench { t_d: v };
    }
    if let InitialCondition::SwitchedTc { t_a, t_b, t_s } = spec.ic {
        spec.ic = InitialCondition::SwitchedTc {
            t_a: val(ParamName::TA).unwrap_or(t_a),
            t_b: val(ParamName::TB).unwrap_or(t_b),
            t_s: val(ParamName::TS).unwrap_or(t_s),
        };
    }
    if let Some(v) = val(ParamName::ExtraT2star) {
        spec = spec.with_t2star(v)?;
    }
    if let Some(v) = val(ParamName::AmplitudeScale) {
        amp = v;
    }
    let checked = ChiSpec::new(spec.params, spec.ic)?;
    let checked = match spec.extra_t2star {
        Some(t) => checked.with_t2star(t)?,
        None => checked,
    };
    Ok((checked, amp))
}

/// Weighted residuals `sqrt(w) (data - model)` for log coordinates `u`.
fn residuals(prep: &Prepared, u: &[f64]) -> Option<Vec<f64>> {
    let theta: Vec<f64> = u.iter().map(|x| x.exp()).collect();
    let mut r = Vec::with_capacity(prep.n_data);
    for (d, ds) in prep.problem.datasets.iter().enumerate() {
        let (spec, amp) = dataset_model(prep, d, &theta).ok()?;
        let chi = chi_many(&spec, &ds.curve.times).ok()?;
        for ((c, s), w) in chi.iter().zip(&ds.curve.signal).zip(&prep.weights[d]) {
            let v = w.sqrt() * (s - amp * (-c).exp());
            if !v.is_finite() {
                return None;
            }
            r.push(v);
        }
    }
    Some(r)
}

fn objective(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn clamp(prep: &Prepared, u: &mut [f64]) {
    for (x, s) in u.iter_mut().zip(&prep.slots) {
        *x = x.clamp(s.lo, s.hi);
    }
}

/// Jacobian of the weighted model (not residual) in log coordinates, by
/// central differences that stay inside the box.
fn jacobian(prep: &Prepared, u: &[f64], r0: &[f64]) -> Option<DMatrix<f64>> {
    let p = u.len();
    let mut j = DMatrix::zeros(r0.len(), p);
    for k in 0..p {
        let h = 1e-6 * (1.0 + u[k].abs());
        let (lo, hi) = (prep.slots[k].lo, prep.slots[k].hi);
        let up = (u[k] + h).min(hi);
        let dn = (u[k] - h).max(lo);
        let eval = |x: f64| {
            let mut v = u.to_vec();
            v[k] = x;
            if x == u[k] {
                Some(r0.to_vec())
            } else {
                residuals(prep, &v)
            }
        };
        let (rp, rm) = (eval(up)?, eval(dn)?);
        let span = up - dn;
        if span <= 0.0 {
            continue;
        }
        for i in 0..r0.len() {
            // r = sqrt(w)(data - model), so d(model)/du = -dr/du.
            j[(i, k)] = -(rp[i] - rm[i]) / span;
        }
    }
    Some(j)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    /// Objective after each accepted step of the winning start.
    pub objective_history: Vec<f64>,
    pub starts: usize,
}

struct Run {
    u: Vec<f64>,
    obj: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

fn levenberg_marquardt(prep: &Prepared, u0: &[f64]) -> Option<Run> {
    let mut u = u0.to_vec();
    clamp(prep, &mut u);
    let mut r = residuals(prep, &u)?;
    let mut obj = objective(&r);
    let mut history = vec![obj];
    let mut lambda = 1e-3;
    let p = u.len();
    for it in 1..=MAX_ITER {
        let j = match jacobian(prep, &u, &r) {
            Some(j) => j,
            None => break,
        };
        let a = j.transpose() * &j;
        let g = j.transpose() * DVector::from_column_slice(&r);
        let mut accepted = false;
        while lambda < 1e16 {
            let mut m = a.clone();
            for k in 0..p {
                m[(k, k)] += lambda * a[(k, k)].max(1e-12);
            }
            let step = match m.cholesky() {
                Some(c) => c.solve(&g),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut trial: Vec<f64> = u.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
            clamp(prep, &mut trial);
            let moved: f64 = trial.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if moved < 1e-14 * (1.0 + u.iter().map(|x| x.abs()).fold(0.0, f64::max)) {
                return Some(Run {
                    u,
                    obj,
                    iterations: it,
                    converged: true,
                    history,
                });
            }
            if let Some(rt) = residuals(prep, &trial) {
                let ot = objective(&rt);
                if ot < obj {
                    let gain = obj - ot;
                    u = trial;
                    r = rt;
                    obj = ot;
                    history.push(obj);
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if gain <= 1e-12 * obj || moved < 1e-10 {
                        return Some(Run {
                            u,
                            obj,
                            iterations: it,
                            converged: true,
                            history,
                        });
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: a stationary point of the box.
            return Some(Run {
                u,
                obj,
                iterations: it,
                converged: true,
                history,
            });
        }
    }
    Some(Run {
        u,
        obj,
        iterations: MAX_ITER,
        converged: false,
        history,
    })
}

fn grid_start(prep: &Prepared) -> Vec<f64> {
    let cands: Vec<Vec<f64>> = prep
        .slots
        .iter()
        .map(|s| match s.initial {
            Some(v) => vec![v],
            None => (0..GRID_POINTS)
                .map(|i| s.lo + (s.hi - s.lo) * (i as f64 + 0.5) / GRID_POINTS as f64)
                .collect(),
        })
        .collect();
    let eval = |u: &[f64]| residuals(prep, u).map_or(f64::INFINITY, |r| objective(&r));
    let total: usize = cands.iter().map(Vec::len).product();
    let mut best: Vec<f64> = cands.iter().map(|c| c[c.len() / 2]).collect();
    if total <= MAX_GRID {
        let mut best_obj = f64::INFINITY;
        let mut idx = vec![0usize; cands.len()];
        for _ in 0..total {
            let u: Vec<f64> = idx.iter().zip(&cands).map(|(&i, c)| c[i]).collect();
            let o = eval(&u);
            if o < best_obj {
                best_obj = o;
                best = u;
            }
            for (k, i) in idx.iter_mut().enumerate() {
                *i += 1;
                if *i < cands[k].len() {
                    break;
                }
                *i = 0;
            }
        }
    } else {
        for (k, c) in cands.iter().enumerate() {
            let mut best_obj = f64::INFINITY;
            let mut pick = best[k];
            for &x in c {
                let mut u = best.clone();
                u[k] = x;
                let o = eval(&u);
                if o < best_obj {
                    best_obj = o;
                    pick = x;
                }
            }
            best[k] = pick;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: ParamName,
    /// `name`, or `name[i]` for a per-dataset copy.
    pub label: String,
    pub value: f64,
    pub stderr: f64,
    pub t_value: f64,
    pub p_value: f64,
    pub dependency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimates: Vec<Estimate>,
    pub covariance: Vec<Vec<f64>>,
    pub objective: f64,
    pub reduced_chi2: f64,
    pub n_data: usize,
    /// Whether error bars came from the data (`true`) or from the scatter
    /// about the fit.
    pub weighted: bool,
    pub convergence: Convergence,
}

impl FitResult {
    pub fn get(&self, label: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.label == label)
    }
}

fn dependencies(cov: &DMatrix<f64>, info: &DMatrix<f64>) -> Vec<f64> {
    let p = cov.nrows();
    (0..p)
        .map(|i| {
            if p == 1 {
                return 0.0;
            }
            let d = 1.0 - 1.0 / (cov[(i, i)] * info[(i, i)]);
            if d.is_finite() {
                d.clamp(0.0, 1.0)
            } else {
                1.0
            }
        })
        .collect()
}

/// Fits `problem`. Starting points: the best of a log-spaced grid (or the
/// given initial values), plus seven jittered copies of it.
pub fn fit(problem: &FitProblem) -> Result<FitResult> {
    let prep = prepare(problem)?;
    let p = prep.slots.len();
    let u0 = grid_start(&prep);
    let starts: Vec<Vec<f64>> = (0..STARTS)
        .map(|s| {
            if s == 0 {
                return u0.clone();
            }
            let mut rng = realization_stream(0x5eed_f17, s as u64);
            u0.iter()
                .zip(&prep.slots)
                .map(|(x, sl)| {
                    let z: f64 = rng.sample(StandardNormal);
                    (x + 0.5 * z).clamp(sl.lo, sl.hi)
                })
                .collect()
        })
        .collect();
    let runs: Vec<Option<Run>> = starts.par_iter().map(|u| levenberg_marquardt(&prep, u)).collect();
    let norm = |r: &Run| r.u.iter().map(|x| x.exp().powi(2)).sum::<f64>();
    let mut best: Option<Run> = None;
    for run in runs.into_iter().flatten() {
        best = match best {
            None => Some(run),
            Some(b) => {
                let tie = (run.obj - b.obj).abs() <= 1e-9 * b.obj.abs().max(1e-300);
                if (tie && norm(&run) < norm(&b)) || (!tie && run.obj < b.obj) {
                    Some(run)
                } else {
                    Some(b)
                }
            }
        };
    }
    let best = best.ok_or_else(|| invalid("initial", "model cannot be evaluated at any starting point"))?;
    let theta: Vec<f64> = best.u.iter().map(|x| x.exp()).collect();
    if !best.converged {
        return Err(Error::FitNonConvergence {
            iterations: best.iterations,
            objective: best.obj,
            best: prep.slots.iter().zip(&theta).map(|(s, v)| (s.label.clone(), *v)).collect(),
        });
    }

    // Information matrix in linear units: J_theta = J_u / theta.
    let r = residuals(&prep, &best.u).expect("best point evaluates");
    let ju = jacobian(&prep, &best.u, &r).expect("best point evaluates");
    let mut jt = ju.clone();
    for k in 0..p {
        jt.column_mut(k).scale_mut(1.0 / theta[k]);
    }
    let info = jt.transpose() * &jt;
    let dof = prep.n_data.saturating_sub(p);
    let reduced_chi2 = if dof > 0 { best.obj / dof as f64 } else { f64::NAN };
    let inverse = info.clone().try_inverse().filter(|c| c.iter().all(|x| x.is_finite()));
    let cov = match inverse {
        Some(c) if (0..p).all(|i| c[(i, i)] > 0.0) => c,
        _ => {
            let pinv = info
                .clone()
                .pseudo_inverse(1e-300)
                .unwrap_or_else(|_| DMatrix::from_element(p, p, f64::INFINITY));
            let dep = dependencies(&pinv, &info);
            return Err(Error::Unidentifiable {
                dependency: prep
                    .slots
                    .iter()
                    .zip(dep)
                    .map(|(s, d)| (s.label.clone(), if p == 1 { 1.0 } else { d }))
                    .collect(),
            });
        }
    };
    let scale = if prep.weighted || !reduced_chi2.is_finite() { 1.0 } else { reduced_chi2 };
    let cov = 0.5 * (&cov + cov.transpose());
    // Scale-free, so computed before the chi² rescaling.
    let dep = dependencies(&cov, &info);
    let cov = cov * scale;
    let tdist = StudentsT::new(0.0, 1.0, dof.max(1) as f64).expect("positive degrees of freedom");
    let estimates = prep
        .slots
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let se = cov[(k, k)].sqrt();
            let t = theta[k] / se;
            Estimate {
                name: s.name,
                label: s.label.clone(),
                value: theta[k],
                stderr: se,
                t_value: t,
                p_value: (2.0 * (1.0 - tdist.cdf(t.abs()))).clamp(0.0, 1.0),
                dependency: dep[k],
            }
        })
        .collect();
    Ok(FitResult {
        estimates,
        covariance: (0..p).map(|i| (0..p).map(|j| cov[(i, j)]).collect()).collect(),
        objective: best.obj,
        reduced_chi2,
        n_data: prep.n_data,
        weighted: prep.weighted,
        convergence: Convergence {
            converged: true,
            iterations: best.iterations,
            objective_history: best.history,
            starts: STARTS,
        },
    })
}

/// Model curve of dataset `index` at the fitted values.
pub fn fitted_model(problem: &FitProblem, result: &FitResult, index: usize) -> Result<ChiSpec> {
    let prep = prepare(problem)?;
    if index >= problem.datasets.len() {
        return Err(Error::IndexOutOfRange {
            index,
            len: problem.datasets.len(),
        });
    }
    let theta: Vec<f64> = result.estimates.iter().map(|e| e.value).collect();
    if theta.len() != prep.slots.len() {
        return Err(invalid("estimates", "result does not belong to this problem"));
    }
    Ok(dataset_model(&prep, index, &theta)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityEntry {
    pub label: String,
    pub t_value: f64,
    pub p_value: f64,
    pub dependency: f64,
    /// `p > 0.05` or `dependency > 0.99`.
    pub unidentified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub degrees_of_freedom: usize,
    pub entries: Vec<IdentifiabilityEntry>,
}

impl IdentifiabilityReport {
    pub fn get(&self, label: &str) -> Option<&IdentifiabilityEntry> {
        self.entries.iter().find(|e| e.label == label)
    }
}

pub fn identifiability_report(result: &FitResult) -> IdentifiabilityReport {
    IdentifiabilityReport {
        degrees_of_freedom: result.n_data.saturating_sub(result.estimates.len()),
        entries: result
            .estimates
            .iter()
            .map(|e| IdentifiabilityEntry {
                label: e.label.clone(),
                t_value: e.t_value,
                p_value: e.p_value,
                dependency: e.dependency,
                unidentified: e.p_value > 0.05 || e.dependency > 0.99,
            })
            .collect(),
    }
}

/// Fixed-width table of fitted values, optionally next to injected ones.
pub fn render_table(result: &FitResult, injected: &BTreeMap<String, f64>) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>12} {:>12} {:>12} {:>9} {:>9} {:>10}  {}",
        "parameter", "injected", "fitted", "stderr", "t", "p", "dependency", "flag"
    );
    let report = identifiability_report(result);
    for (e, r) in result.estimates.iter().zip(&report.entries) {
        let inj = injected
            .get(&e.label)
            .map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(
            s,
            "{:<16} {:>12} {:>12.6} {:>12.6} {:>9.3} {:>9.3e} {:>10.5}  {}",
            e.label,
            inj,
            e.value,
            e.stderr,
            e.t_value,
            e.p_value,
            e.dependency,
            if r.unidentified { "unidentified" } else { "" }
        );
    }
    let _ = writeln!(
        s,
        "n = {}, reduced chi2 = {:.4}, iterations = {}",
        result.n_data, result.reduced_chi2, result.convergence.iterations
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::Provenance;
    use crate::model::NoiseParams;

    fn times() -> Vec<f64> {
        (1..=100).map(|k| 0.025 * k as f64).collect()
    }

    fn curve(spec: &ChiSpec, se: Option<f64>) -> RamseyCurve {
        let t = times();
        let s = chi_many(spec, &t).unwrap().iter().map(|c| (-c).exp()).collect();
        RamseyCurve::new(t.clone(), s, se.map(|v| vec![v; t.len()]), Provenance::External).unwrap()
    }

    fn markov(delta: f64, tc: f64, ic: InitialCondition) -> ChiSpec {
        ChiSpec::new(NoiseParams::markovian(delta, tc).unwrap(), ic).unwrap()
    }

    #[test]
    fn names_parse() {
        assert_eq!("tc".parse::<ParamName>().unwrap(), ParamName::TC);
        assert_eq!("drive_norm".parse::<ParamName>().unwrap(), ParamName::DriveNorm);
        assert!("bogus".parse::<ParamName>().is_err());
        let json = serde_json::to_string(&ParamName::ExtraT2star).unwrap();
        assert_eq!(json, "\"extra_t2star\"");
    }

    #[test]
    fn recovers_noiseless_t_c() {
        let truth = markov(0.8, 2.5, InitialCondition::Quenched);
        let guess = markov(0.8, 1.0, InitialCondition::Quenched);
        let prob = FitProblem::new(vec![Dataset::new(curve(&truth, None), guess)], vec![ParamName::TC]);
        let r = fit(&prob).unwrap();
        let e = r.get("t_c").unwrap();
        assert!((e.value - 2.5).abs() < 1e-4 * 2.5, "{}", e.value);
        assert_eq!(e.dependency, 0.0);
        let h = &r.convergence.objective_history;
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn both_strengths_free_is_rejected() {
        let s = markov(0.8, 2.5, InitialCondition::Equilibrium);
        let prob = FitProblem::new(
            vec![Dataset::new(curve(&s, None), s)],
            vec![ParamName::Delta, ParamName::DriveNorm],
        );
        assert!(matches!(fit(&prob), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn unused_parameter_is_rejected() {
        let s = markov(0.8, 2.5, InitialCondition::Equilibrium);
        let prob = FitProblem::new(vec![Dataset::new(curve(&s, None), s)], vec![ParamName::TD]);
        assert!(fit(&prob).is_err());
        let prob = FitProblem::new(vec![Dataset::new(curve(&s, None), s)], vec![ParamName::TC])
            .bound(ParamName::TC, 5.0, 1.0);
        assert!(fit(&prob).is_err());
    }

    #[test]
    fn amplitude_and_t2star_nuisances() {
        let truth = markov(0.8, 2.5, InitialCondition::Equilibrium).with_t2star(3.0).unwrap();
        let mut c = curve(&truth, None);
        c.signal.iter_mut().for_each(|s| *s *= 0.9);
        let guess = markov(0.8, 2.5, InitialCondition::Equilibrium);
        let prob = FitProblem::new(
            vec![Dataset::new(c, guess)],
            vec![ParamName::AmplitudeScale, ParamName::ExtraT2star],
        );
        let r = fit(&prob).unwrap();
        assert!((r.get("amplitude_scale").unwrap().value - 0.9).abs() < 1e-6);
        assert!((r.get("extra_t2star").unwrap().value - 3.0).abs() < 1e-4);
    }

    #[test]
    fn per_dataset_copies_when_not_shared() {
        let a = markov(0.8, 2.0, InitialCondition::Equilibrium);
        let b = markov(0.8, 4.0, InitialCondition::Equilibrium);
        let g = markov(0.8, 1.0, InitialCondition::Equilibrium);
        let prob = FitProblem::new(
            vec![Dataset::new(curve(&a, None), g), Dataset::new(curve(&b, None), g)],
            vec![ParamName::TC],
        );
        let r = fit(&prob).unwrap();
        assert!((r.get("t_c[0]").unwrap().value - 2.0).abs() < 2e-4);
        assert!((r.get("t_c[1]").unwrap().value - 4.0).abs() < 4e-4);
    }

    #[test]
    fn weighting_scale_leaves_estimates() {
        let truth = markov(0.8, 2.5, InitialCondition::Quenched);
        let mut c = curve(&truth, Some(0.01));
        let mut rng = realization_stream(1, 0);
        c.signal.iter_mut().for_each(|s| *s += 0.01 * rng.sample::<f64, _>(StandardNormal));
        let guess = markov(0.8, 1.0, InitialCondition::Quenched);
        let run = |k: f64| {
            let mut cc = c.clone();
            cc.stderr = Some(vec![0.01 * k; cc.len()]);
            fit(&FitProblem::new(vec![Dataset::new(cc, guess)], vec![ParamName::TC, ParamName::Delta])).unwrap()
        };
        let (a, b) = (run(1.0), run(3.0));
        for (x, y) in a.estimates.iter().zip(&b.estimates) {
            assert!((x.value - y.value).abs() < 1e-6 * x.value);
            assert!((y.stderr / x.stderr - 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn report_renders() {
        let truth = markov(0.8, 2.5, InitialCondition::Quenched);
        let prob = FitProblem::new(
            vec![Dataset::new(curve(&truth, Some(0.01)), truth)],
            vec![ParamName::TC],
        );
        let r = fit(&prob).unwrap();
        let mut inj = BTreeMap::new();
        inj.insert("t_c".to_string(), 2.5);
        let t = render_table(&r, &inj);
        assert!(t.starts_with("parameter"));
        assert!(t.contains("2.500000"));
        let rep = identifiability_report(&r);
        assert!(!rep.get("t_c").unwrap().unidentified);
        let back: FitResult = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back.estimates.len(), 1);
    }
}
