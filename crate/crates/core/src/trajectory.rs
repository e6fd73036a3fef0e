//! Seeded noise realizations.
//!
//! Markovian noise is the average of `M = round(t_c/dt)` sequences that each
//! keep their value from one step to the next with probability
//! `exp(-dt/t_c)` and otherwise draw a fresh Gaussian value. Second-order
//! noise is a Riemann-sum convolution of exponentially correlated driving
//! with the oscillator Green's function. The two spin baths are integrated
//! with Euler-Maruyama.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use nalgebra::{Matrix2, Matrix4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{AsymmetricBathSpec, SpinBathSpec};
use crate::error::{invalid, Error, Result};
use crate::model::{derive, InitialCondition, NoiseKind, NoiseParams, Regime, TimeGrid};
use crate::rng::{realization_stream, Stream};

/// Default step for Markovian generation, µs.
pub const DEFAULT_DT_MARKOVIAN: f64 = 0.004;
/// Default step for second-order generation, µs.
pub const DEFAULT_DT_SECOND_ORDER: f64 = 0.001;

/// What process to draw realizations from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSource {
    Langevin {
        params: NoiseParams,
        ic: InitialCondition,
    },
    RotatingBath {
        bath: SpinBathSpec,
        #[serde(default)]
        integrator: Integrator,
        /// Euler-Maruyama steps per grid interval.
        #[serde(default = "one")]
        substeps: usize,
    },
    AsymmetricBath {
        bath: AsymmetricBathSpec,
        #[serde(default)]
        integrator: Integrator,
        #[serde(default = "one")]
        substeps: usize,
    },
}

/// Time stepping for the two-component bath equations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Exact Gaussian transition of the linear equation over each grid step.
    #[default]
    Exact,
    /// Euler-Maruyama with `substeps` steps per grid interval. Its damping is
    /// off by about `h omega² / 2`, which matters once `omega t_c >> 1`.
    EulerMaruyama,
}

fn one() -> usize {
    1
}

/// One realization request: `(source, grid, seed, realization_index)` fixes
/// the output bit for bit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub source: NoiseSource,
    pub grid: TimeGrid,
    pub seed: u64,
    pub realization_index: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    /// Non-fatal adjustments, e.g. a switch time snapped to the grid.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_us,n")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", self.grid.t(k), v)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum MarkovMode {
    Equilibrium,
    Quenched,
    Switched { ln_pa: f64, ks: usize },
}

#[derive(Clone, Copy, Debug)]
struct MarkovPlan {
    n_total: usize,
    discard: usize,
    m: u64,
    delta_m: f64,
    /// `ln p_ret = -dt/t_c` (`-dt/t_b` after a switch).
    ln_p: f64,
    mode: MarkovMode,
}

#[derive(Clone, Copy, Debug)]
struct SecondOrderPlan {
    rot: (f64, f64),
    omega: f64,
    dt: f64,
    eta_sd: f64,
    rho: f64,
    equilibrium: bool,
    delta: f64,
    omega0: f64,
    t_c: f64,
}

#[derive(Clone, Copy, Debug)]
enum Plan {
    Markov(MarkovPlan),
    SecondOrder(SecondOrderPlan),
    Linear { step: LinearStep, init: Init2 },
}

#[derive(Clone, Copy, Debug)]
enum Init2 {
    Fixed([f64; 2]),
    /// Cholesky factor of the initial covariance.
    Gaussian([f64; 3]),
}

/// A validated source on a grid, ready to produce realizations cheaply.
#[derive(Clone, Debug)]
pub struct Generator {
    plan: Plan,
    grid: TimeGrid,
    seed: u64,
    warnings: Vec<String>,
}

fn snap(name: &str, t: f64, dt: f64, warnings: &mut Vec<String>) -> usize {
    let k = (t / dt).round();
    if (k * dt - t).abs() > 1e-9 * dt.max(t) {
        warnings.push(format!("{name} = {t} µs is not on the grid; snapped to {} µs", k * dt));
    }
    k as usize
}

fn check_bath_step(dt: f64, substeps: usize, omega: f64) -> Result<()> {
    if substeps == 0 {
        return Err(invalid("substeps", "must be >= 1"));
    }
    if omega > 0.0 {
        let limit = 2.0 * PI / (10.0 * omega);
        if dt > limit {
            return Err(invalid(
                "dt",
                format!("grid too coarse: {dt} exceeds 2*pi/(10*omega) = {limit}"),
            ));
        }
    }
    Ok(())
}

impl Generator {
    pub fn new(source: &NoiseSource, grid: TimeGrid, seed: u64) -> Result<Self> {
        let mut warnings = Vec::new();
        let dt = grid.dt();
        let plan = match *source {
            NoiseSource::Langevin { params, ic } => match params.kind() {
                NoiseKind::Markovian => Plan::Markov(markov_plan(&params, &ic, &grid, &mut warnings)?),
                NoiseKind::SecondOrder => Plan::SecondOrder(second_order_plan(&params, &ic, dt)?),
            },
            NoiseSource::RotatingBath {
                bath,
                integrator,
                substeps,
            } => {
                bath.check()?;
                check_bath_step(dt, substeps, bath.omega_rot)?;
                let g = 1.0 / bath.t_c;
                let w = bath.omega_rot;
                let a = Matrix2::new(-g, w, -w, -g);
                let d = Matrix2::identity() * bath.a;
                Plan::Linear {
                    step: LinearStep::new(a, d, dt, integrator, substeps),
                    init: Init2::Gaussian(bath.init_cov.cholesky()?),
                }
            }
            NoiseSource::AsymmetricBath {
                bath,
                integrator,
                substeps,
            } => {
                bath.to_noise_params()?;
                check_bath_step(dt, substeps, bath.omega0)?;
                let w = bath.omega0;
                let a = Matrix2::new(0.0, w, -w, -2.0 / bath.t_c);
                let d = Matrix2::new(0.0, 0.0, 0.0, bath.sigma_y * bath.sigma_y * bath.a);
                Plan::Linear {
                    step: LinearStep::new(a, d, dt, integrator, substeps),
                    init: Init2::Fixed(bath.init),
                }
            }
        };
        Ok(Generator {
            plan,
            grid,
            seed,
            warnings,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Writes realization `index` into `out` (resized to the grid length).
    pub fn fill(&self, index: u64, out: &mut Vec<f64>) {
        let mut rng = realization_stream(self.seed, index);
        let n = self.grid.n_points();
        match &self.plan {
            Plan::Markov(p) => markov_fill(p, &mut rng, out),
            Plan::SecondOrder(p) => second_order_fill(p, n, &mut rng, out),
            Plan::Linear { step, init } => linear_fill(step, init, n, &mut rng, out),
        }
    }

    pub fn generate(&self, index: u64) -> Trajectory {
        let mut values = Vec::new();
        self.fill(index, &mut values);
        Trajectory {
            grid: self.grid,
            values,
            warnings: self.warnings.clone(),
        }
    }
}

fn markov_plan(
    params: &NoiseParams,
    ic: &InitialCondition,
    grid: &TimeGrid,
    warnings: &mut Vec<String>,
) -> Result<MarkovPlan> {
    let dt = grid.dt();
    let n = grid.n_points();
    let tc = params.t_c();
    let m_of = |t: f64, name: &str| -> Result<u64> {
        let m = (t / dt).round();
        if m < 1.0 {
            return Err(Error::GridTooCoarse(format!(
                "{name} = {t} µs with dt = {dt} µs gives M = round({name}/dt) < 1"
            )));
        }
        Ok(m as u64)
    };
    let (m, ln_p, mode, discard) = match *ic {
        InitialCondition::Equilibrium => (m_of(tc, "t_c")?, -dt / tc, MarkovMode::Equilibrium, 0),
        InitialCondition::Quenched => (m_of(tc, "t_c")?, -dt / tc, MarkovMode::Quenched, 0),
        InitialCondition::DelayedQuench { t_d } => {
            if !(t_d.is_finite() && t_d >= 0.0) {
                return Err(invalid("t_d", "must be finite and >= 0"));
            }
            let nd = snap("t_d", t_d, dt, warnings);
            (m_of(tc, "t_c")?, -dt / tc, MarkovMode::Quenched, nd)
        }
        InitialCondition::SwitchedTc { t_a, t_b, t_s } => {
            if !(t_a > 0.0 && t_b > 0.0 && t_s >= 0.0) {
                return Err(invalid("t_a", "switch times must be positive"));
            }
            m_of(t_a.min(t_b), if t_a < t_b { "t_a" } else { "t_b" })?;
            let ks = snap("t_s", t_s, dt, warnings);
            (
                m_of(t_a.max(t_b), "t_c")?,
                -dt / t_b,
                MarkovMode::Switched { ln_pa: -dt / t_a, ks },
                0,
            )
        }
    };
    Ok(MarkovPlan {
        n_total: n + discard,
        discard,
        m,
        delta_m: params.delta() * (m as f64).sqrt(),
        ln_p,
        mode,
    })
}

fn normal(rng: &mut Stream) -> f64 {
    rng.sample(StandardNormal)
}

/// Number of steps until the next resample, `>= 1`.
fn geometric(rng: &mut Stream, ln_p: f64) -> usize {
    let u = 1.0 - rng.random::<f64>();
    let g = (u.ln() / ln_p).ceil();
    if g < 1.0 {
        1
    } else if g > 1e15 {
        usize::MAX / 2
    } else {
        g as usize
    }
}

fn markov_fill(p: &MarkovPlan, rng: &mut Stream, out: &mut Vec<f64>) {
    let n = p.n_total;
    let mut diff = vec![0.0; n + 1];
    let last = n - 1;
    match p.mode {
        MarkovMode::Switched { ln_pa, ks } => {
            let next = |rng: &mut Stream, k: usize| -> usize {
                if k < ks {
                    let g = geometric(rng, ln_pa);
                    if k + g <= ks {
                        return k + g;
                    }
                    ks.saturating_add(geometric(rng, p.ln_p))
                } else {
                    k.saturating_add(geometric(rng, p.ln_p))
                }
            };
            for _ in 0..p.m {
                let mut v = p.delta_m * normal(rng);
                diff[0] += v;
                let mut k = next(rng, 0);
                while k <= last {
                    let nv = p.delta_m * normal(rng);
                    diff[k] += nv - v;
                    v = nv;
                    k = next(rng, k);
                }
            }
        }
        MarkovMode::Equilibrium | MarkovMode::Quenched => {
            let quenched = matches!(p.mode, MarkovMode::Quenched);
            // Only sequences that resample at least once need individual
            // treatment; the rest contribute a constant.
            let any_jump = if last == 0 {
                0.0
            } else {
                -(last as f64 * p.ln_p).exp_m1()
            };
            let k_jump = if any_jump <= 0.0 {
                0
            } else if any_jump >= 1.0 {
                p.m
            } else {
                Binomial::new(p.m, any_jump)
                    .expect("valid binomial")
                    .sample(rng)
            };
            if !quenched && k_jump < p.m {
                diff[0] += p.delta_m * ((p.m - k_jump) as f64).sqrt() * normal(rng);
            }
            let sd = |k: usize| -> f64 {
                if quenched {
                    // Keeps Var = delta_m² (1 - p^{2k}) at every step.
                    p.delta_m * (1.0 + ((2 * k - 1) as f64 * p.ln_p).exp()).sqrt()
                } else {
                    p.delta_m
                }
            };
            for _ in 0..k_jump {
                let mut v = if quenched { 0.0 } else { p.delta_m * normal(rng) };
                diff[0] += v;
                // First resample, conditioned to fall inside the grid.
                let u: f64 = rng.random();
                let g = ((-u * any_jump).ln_1p() / p.ln_p).ceil();
                let mut k = if g < 1.0 { 1 } else { (g as usize).min(last) };
                loop {
                    let nv = sd(k) * normal(rng);
                    diff[k] += nv - v;
                    v = nv;
                    k = k.saturating_add(geometric(rng, p.ln_p));
                    if k > last {
                        break;
                    }
                }
            }
        }
    }
    let inv_m = 1.0 / p.m as f64;
    out.clear();
    out.reserve(n - p.discard);
    let mut acc = 0.0;
    for (k, d) in diff.iter().take(n).enumerate() {
        acc += d;
        if k >= p.discard {
            out.push(acc * inv_m);
        }
    }
    if matches!(p.mode, MarkovMode::Quenched) && p.discard == 0 {
        out[0] = 0.0;
    }
}

fn second_order_plan(params: &NoiseParams, ic: &InitialCondition, dt: f64) -> Result<SecondOrderPlan> {
    let d = derive(params)?;
    if d.regime != Regime::Underdamped {
        return Err(Error::OutOfScope(format!(
            "second-order generation needs underdamped noise, got {:?}",
            d.regime
        )));
    }
    let equilibrium = match ic {
        InitialCondition::Equilibrium => true,
        InitialCondition::Quenched => false,
        _ => {
            return Err(Error::Unsupported(
                "second-order generation supports equilibrium or quenched preparation".into(),
            ))
        }
    };
    let limit = 2.0 * PI / (10.0 * params.omega0());
    if dt > limit {
        return Err(Error::RiemannNotConverged { dt, limit });
    }
    let tc = params.t_c();
    let decay = (-dt / tc).exp();
    // Driving with correlation exp(-|i-j|) between grid samples. Its
    // variance makes sum_l <eta_0 eta_l> dt equal drive_norm, i.e. the same
    // integrated strength as the white noise it stands in for.
    let rho = (-1.0f64).exp();
    let eta_var = params.drive_norm() / dt * 0.5f64.tanh();
    Ok(SecondOrderPlan {
        rot: (decay * (d.omega * dt).cos(), decay * (d.omega * dt).sin()),
        omega: d.omega,
        dt,
        eta_sd: eta_var.sqrt(),
        rho,
        equilibrium,
        delta: params.delta(),
        omega0: params.omega0(),
        t_c: tc,
    })
}

fn second_order_fill(p: &SecondOrderPlan, n: usize, rng: &mut Stream, out: &mut Vec<f64>) {
    out.clear();
    out.reserve(n);
    // Homogeneous part Re[(a - i b) e^{z t}] with z = -1/t_c + i Omega.
    let (mut hr, mut hi) = if p.equilibrium {
        let n0 = p.delta * normal(rng);
        let n0p = p.omega0 * p.delta * normal(rng);
        (n0, -(n0p + n0 / p.t_c) / p.omega)
    } else {
        (0.0, 0.0)
    };
    let (cr, ci) = p.rot;
    let innov = (1.0 - p.rho * p.rho).sqrt() * p.eta_sd;
    let mut eta = p.eta_sd * normal(rng);
    let (mut sr, mut si) = (0.0f64, 0.0f64);
    out.push(hr);
    for _ in 1..n {
        let ar = sr + eta * p.dt;
        sr = cr * ar - ci * si;
        si = ci * ar + cr * si;
        let h = cr * hr - ci * hi;
        hi = ci * hr + cr * hi;
        hr = h;
        out.push(si / p.omega + hr);
        eta = p.rho * eta + innov * normal(rng);
    }
}

/// Lower Cholesky factor `[l11, l21, l22]` of a 2x2 positive semidefinite
/// matrix.
fn chol2(xx: f64, xy: f64, yy: f64) -> [f64; 3] {
    let l11 = xx.max(0.0).sqrt();
    let l21 = if l11 > 0.0 { xy / l11 } else { 0.0 };
    let l22 = (yy - l21 * l21).max(0.0).sqrt();
    [l11, l21, l22]
}

/// `X' = A X + noise` with diffusion matrix `D`.
#[derive(Clone, Copy, Debug)]
enum LinearStep {
    /// Exact transition over one grid interval.
    Exact { phi: Matrix2<f64>, chol: [f64; 3] },
    EulerMaruyama { a: Matrix2<f64>, h: f64, chol: [f64; 3], substeps: usize },
}

impl LinearStep {
    fn new(a: Matrix2<f64>, d: Matrix2<f64>, dt: f64, integrator: Integrator, substeps: usize) -> Self {
        match integrator {
            Integrator::Exact => {
                // Van Loan: exp([[-A, D], [0, A^T]] dt) = [[., Phi^-1 Q], [0, Phi^T]].
                let mut c = Matrix4::zeros();
                c.fixed_view_mut::<2, 2>(0, 0).copy_from(&(-a * dt));
                c.fixed_view_mut::<2, 2>(0, 2).copy_from(&(d * dt));
                c.fixed_view_mut::<2, 2>(2, 2).copy_from(&(a.transpose() * dt));
                let e = c.exp();
                let phi: Matrix2<f64> = e.fixed_view::<2, 2>(2, 2).transpose();
                let q = phi * e.fixed_view::<2, 2>(0, 2);
                let q = 0.5 * (q + q.transpose());
                LinearStep::Exact {
                    phi,
                    chol: chol2(q[(0, 0)], q[(1, 0)], q[(1, 1)]),
                }
            }
            Integrator::EulerMaruyama => {
                let h = dt / substeps as f64;
                LinearStep::EulerMaruyama {
                    a,
                    h,
                    chol: chol2(d[(0, 0)] * h, d[(1, 0)] * h, d[(1, 1)] * h),
                    substeps,
                }
            }
        }
    }

    fn advance(&self, x: &mut [f64; 2], rng: &mut Stream) {
        let kick = |c: &[f64; 3], rng: &mut Stream| {
            let (z1, z2) = (normal(rng), normal(rng));
            [c[0] * z1, c[1] * z1 + c[2] * z2]
        };
        match self {
            LinearStep::Exact { phi, chol } => {
                let k = kick(chol, rng);
                let nx = phi[(0, 0)] * x[0] + phi[(0, 1)] * x[1] + k[0];
                let ny = phi[(1, 0)] * x[0] + phi[(1, 1)] * x[1] + k[1];
                *x = [nx, ny];
            }
            LinearStep::EulerMaruyama { a, h, chol, substeps } => {
                for _ in 0..*substeps {
                    let k = kick(chol, rng);
                    let nx = x[0] + h * (a[(0, 0)] * x[0] + a[(0, 1)] * x[1]) + k[0];
                    let ny = x[1] + h * (a[(1, 0)] * x[0] + a[(1, 1)] * x[1]) + k[1];
                    *x = [nx, ny];
                }
            }
        }
    }
}

fn linear_fill(step: &LinearStep, init: &Init2, n: usize, rng: &mut Stream, out: &mut Vec<f64>) {
    let mut x = match *init {
        Init2::Fixed(x0) => x0,
        Init2::Gaussian(c) => {
            let (z1, z2) = (normal(rng), normal(rng));
            [c[0] * z1, c[1] * z1 + c[2] * z2]
        }
    };
    out.clear();
    out.reserve(n);
    out.push(x[0]);
    for _ in 1..n {
        step.advance(&mut x, rng);
        out.push(x[0]);
    }
}

fn langevin_kind(spec: &GenSpec) -> Option<NoiseKind> {
    match spec.source {
        NoiseSource::Langevin { params, .. } => Some(params.kind()),
        _ => None,
    }
}

/// Markovian realization via averaged retain-or-resample sequences.
pub fn gen_markovian(spec: &GenSpec) -> Result<Trajectory> {
    if langevin_kind(spec) != Some(NoiseKind::Markovian) {
        return Err(invalid("source", "gen_markovian needs Markovian Langevin noise"));
    }
    Ok(Generator::new(&spec.source, spec.grid, spec.seed)?.generate(spec.realization_index))
}

/// Second-order realization via the Green's-function Riemann sum.
pub fn gen_second_order(spec: &GenSpec) -> Result<Trajectory> {
    if langevin_kind(spec) != Some(NoiseKind::SecondOrder) {
        return Err(Error::NotSecondOrder);
    }
    Ok(Generator::new(&spec.source, spec.grid, spec.seed)?.generate(spec.realization_index))
}

pub fn gen_rotating_bath(spec: &GenSpec) -> Result<Trajectory> {
    if !matches!(spec.source, NoiseSource::RotatingBath { .. }) {
        return Err(invalid("source", "expected a rotating bath"));
    }
    Ok(Generator::new(&spec.source, spec.grid, spec.seed)?.generate(spec.realization_index))
}

pub fn gen_asymmetric_bath(spec: &GenSpec) -> Result<Trajectory> {
    if !matches!(spec.source, NoiseSource::AsymmetricBath { .. }) {
        return Err(invalid("source", "expected an asymmetric bath"));
    }
    Ok(Generator::new(&spec.source, spec.grid, spec.seed)?.generate(spec.realization_index))
}

/// Any source.
pub fn generate(spec: &GenSpec) -> Result<Trajectory> {
    Ok(Generator::new(&spec.source, spec.grid, spec.seed)?.generate(spec.realization_index))
}

/// Free second-order evolution from `(n0, n0')`, in all three damping
/// regimes. Continuous across the critical boundary.
pub fn homogeneous_solution(n0: f64, n0p: f64, t: f64, params: &NoiseParams) -> Result<f64> {
    let d = derive(params)?;
    let tc = params.t_c();
    let b = n0p + n0 / tc;
    let e = (-t / tc).exp();
    let v = match d.regime {
        Regime::Underdamped => {
            let x = d.omega * t;
            let s = if x.abs() < 1e-6 {
                t * (1.0 - x * x / 6.0)
            } else {
                x.sin() / d.omega
            };
            b * s + n0 * x.cos()
        }
        Regime::Overdamped => {
            let x = d.alpha * t;
            let s = if x.abs() < 1e-6 {
                t * (1.0 + x * x / 6.0)
            } else {
                x.sinh() / d.alpha
            };
            b * s + n0 * x.cosh()
        }
        Regime::Critical => b * t + n0,
    };
    Ok(v * e)
}

/// A materialized set of realizations, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub grid: TimeGrid,
    pub seed: u64,
    pub n_realizations: usize,
    pub values: Vec<f64>,
}

impl Ensemble {
    /// Realizations `0..n` of `gen`, computed in parallel in index order.
    pub fn generate(gen: &Generator, n: usize) -> Ensemble {
        let np = gen.grid().n_points();
        let mut values = vec![0.0; n * np];
        values.par_chunks_mut(np).enumerate().for_each(|(i, row)| {
            let mut buf = Vec::with_capacity(np);
            gen.fill(i as u64, &mut buf);
            row.copy_from_slice(&buf);
        });
        Ensemble {
            grid: gen.grid(),
            seed: gen.seed(),
            n_realizations: n,
            values,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let np = self.grid.n_points();
        &self.values[i * np..(i + 1) * np]
    }

    /// Header `{dt: f64, n_points: u64, n_realizations: u64, seed: u64}`
    /// followed by the values, all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.grid.dt().to_le_bytes())?;
        w.write_all(&(self.grid.n_points() as u64).to_le_bytes())?;
        w.write_all(&(self.n_realizations as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Ensemble> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let dt = f64::from_le_bytes(next(&mut r)?);
        let np = u64::from_le_bytes(next(&mut r)?) as usize;
        let nr = u64::from_le_bytes(next(&mut r)?) as usize;
        let seed = u64::from_le_bytes(next(&mut r)?);
        let grid = TimeGrid::new(dt, np)?;
        let total = np
            .checked_mul(nr)
            .ok_or_else(|| invalid("n_realizations", "header size overflow"))?;
        let mut values = Vec::with_capacity(total);
        for _ in 0..total {
            values.push(f64::from_le_bytes(next(&mut r)?));
        }
        Ok(Ensemble {
            grid,
            seed,
            n_realizations: nr,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn markov_gen(ic: InitialCondition, tc: f64, dt: f64, n: usize) -> Generator {
        let params = NoiseParams::markovian(0.8, tc).unwrap();
        Generator::new(&NoiseSource::Langevin { params, ic }, TimeGrid::new(dt, n).unwrap(), 11).unwrap()
    }

    #[test]
    fn quenched_starts_at_zero() {
        let g = markov_gen(InitialCondition::Quenched, 2.5, 0.004, 300);
        for i in 0..20 {
            assert_eq!(g.generate(i).values[0], 0.0);
        }
        let p = NoiseParams::second_order(3.456, 20.0, 6.0).unwrap();
        let so = Generator::new(
            &NoiseSource::Langevin {
                params: p,
                ic: InitialCondition::Quenched,
            },
            TimeGrid::new(0.001, 100).unwrap(),
            3,
        )
        .unwrap();
        assert_eq!(so.generate(0).values[0], 0.0);
    }

    #[test]
    fn deterministic_per_index() {
        let g = markov_gen(InitialCondition::Equilibrium, 2.5, 0.004, 200);
        assert_eq!(g.generate(5).values, g.generate(5).values);
        assert_ne!(g.generate(5).values, g.generate(6).values);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let params = NoiseParams::markovian(0.8, 0.001).unwrap();
        let src = NoiseSource::Langevin {
            params,
            ic: InitialCondition::Equilibrium,
        };
        let r = Generator::new(&src, TimeGrid::new(0.004, 10).unwrap(), 0);
        assert!(matches!(r, Err(Error::GridTooCoarse(_))));

        let p = NoiseParams::second_order(1.0, 20.0, 6.0).unwrap();
        let src = NoiseSource::Langevin {
            params: p,
            ic: InitialCondition::Equilibrium,
        };
        let r = Generator::new(&src, TimeGrid::new(0.2, 10).unwrap(), 0);
        assert!(matches!(r, Err(Error::RiemannNotConverged { .. })));

        let od = NoiseParams::second_order(1.0, 1.0, 0.5).unwrap();
        let src = NoiseSource::Langevin {
            params: od,
            ic: InitialCondition::Equilibrium,
        };
        assert!(Generator::new(&src, TimeGrid::new(0.001, 10).unwrap(), 0).is_err());
    }

    #[test]
    fn switch_time_snaps_with_warning() {
        let g = markov_gen(
            InitialCondition::SwitchedTc {
                t_a: 0.015,
                t_b: 0.15,
                t_s: 0.2485,
            },
            1.0,
            0.001,
            400,
        );
        assert_eq!(g.warnings().len(), 1);
        assert!(g.generate(0).warnings[0].contains("t_s"));
    }

    #[test]
    fn delayed_quench_zero_matches_quenched() {
        let a = markov_gen(InitialCondition::Quenched, 2.5, 0.004, 100);
        let b = markov_gen(InitialCondition::DelayedQuench { t_d: 0.0 }, 2.5, 0.004, 100);
        assert_eq!(a.generate(3).values, b.generate(3).values);
    }

    #[test]
    fn recursive_riemann_sum_matches_direct_sum() {
        let p = NoiseParams::second_order(3.456, 20.0, 6.0).unwrap();
        let plan = second_order_plan(&p, &InitialCondition::Quenched, 0.01).unwrap();
        let n = 200;
        let mut rng = realization_stream(9, 0);
        let mut fast = Vec::new();
        second_order_fill(&plan, n, &mut rng, &mut fast);
        // Replay the same driving sequence and convolve directly.
        let mut rng = realization_stream(9, 0);
        let innov = (1.0 - plan.rho * plan.rho).sqrt() * plan.eta_sd;
        let mut eta = vec![plan.eta_sd * normal(&mut rng)];
        for _ in 1..n {
            let prev = *eta.last().unwrap();
            eta.push(plan.rho * prev + innov * normal(&mut rng));
        }
        let om = plan.omega;
        let green = |t: f64| (om * t).sin() * (-t / 20.0f64).exp() / om;
        for k in [1usize, 7, 50, 199] {
            let direct: f64 = (0..k).map(|j| green((k - j) as f64 * 0.01) * eta[j] * 0.01).sum();
            assert!((fast[k] - direct).abs() < 1e-12 * direct.abs().max(1e-6), "{k}");
        }
    }

    #[test]
    fn homogeneous_examples() {
        let under = NoiseParams::second_order(1.0, 20.0, 6.0).unwrap();
        let over = NoiseParams::second_order(1.0, 1.0, 0.5).unwrap();
        let crit = NoiseParams::second_order(1.0, 1.0, 1.0).unwrap();
        for p in [&under, &over, &crit] {
            assert_eq!(homogeneous_solution(1.3, -0.2, 0.0, p).unwrap(), 1.3);
        }
        let om = derive(&under).unwrap().omega;
        for t in [0.1, 1.0, 4.0] {
            let h = homogeneous_solution(1.0, -1.0 / 20.0, t, &under).unwrap();
            assert!((h - (om * t).cos() * (-t / 20.0f64).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn homogeneous_continuous_at_critical_boundary() {
        let tc = 1.0;
        let crit = NoiseParams::second_order(1.0, tc, 1.0).unwrap();
        // omega * t = 1e-8 at t = 1 needs omega0² = 1 + 1e-16.
        let w0 = (1.0f64 + 1e-16).sqrt().max(1.0 + 2e-9);
        let near = NoiseParams::second_order(1.0, tc, w0).unwrap();
        let d = derive(&near).unwrap();
        assert_eq!(d.regime, Regime::Underdamped);
        for t in [0.5, 1.0, 3.0] {
            let a = homogeneous_solution(0.7, 0.3, t, &near).unwrap();
            let b = homogeneous_solution(0.7, 0.3, t, &crit).unwrap();
            assert!((a - b).abs() < 1e-7 * b.abs(), "{t}: {a} {b}");
        }
        let o = NoiseParams::second_order(1.0, tc, 1.0 - 2e-9).unwrap();
        for t in [0.5, 1.0, 3.0] {
            let a = homogeneous_solution(0.7, 0.3, t, &o).unwrap();
            let b = homogeneous_solution(0.7, 0.3, t, &crit).unwrap();
            assert!((a - b).abs() < 1e-7 * b.abs());
        }
    }

    #[test]
    fn rotating_bath_without_noise_rotates() {
        let bath = SpinBathSpec {
            omega_rot: 2.0 * PI,
            t_c: 1e12,
            a: 0.0,
            init_cov: crate::correlation::InitCov { xx: 1.0, yy: 0.0, xy: 0.0 },
        };
        let g = Generator::new(
            &NoiseSource::RotatingBath { bath, integrator: Integrator::Exact, substeps: 1 },
            TimeGrid::new(0.01, 101).unwrap(),
            0,
        )
        .unwrap();
        let tr = g.generate(0);
        // I_y(0) = 0, so the orbit is I_x(0) cos(Omega t).
        let s = tr.values[0];
        assert!(s != 0.0);
        for k in [25, 50, 100] {
            let t = k as f64 * 0.01;
            assert!((tr.values[k] - s * (2.0 * PI * t).cos()).abs() < 1e-10 * s.abs());
        }
    }

    #[test]
    fn asymmetric_bath_without_noise_is_homogeneous() {
        let bath = AsymmetricBathSpec {
            t_c: 5.0,
            omega0: 3.0,
            sigma_y: 1.0,
            a: 0.0,
            init: [1.0, 0.0],
        };
        let g = Generator::new(
            &NoiseSource::AsymmetricBath { bath, integrator: Integrator::Exact, substeps: 1 },
            TimeGrid::new(0.01, 201).unwrap(),
            0,
        )
        .unwrap();
        let tr = g.generate(0);
        let p = bath.to_noise_params().unwrap();
        for k in [0, 50, 100, 200] {
            let h = homogeneous_solution(1.0, 0.0, k as f64 * 0.01, &p).unwrap();
            assert!((tr.values[k] - h).abs() < 1e-10, "{k}");
        }
    }

    #[test]
    fn euler_maruyama_converges_to_exact_under_step_halving() {
        let bath = AsymmetricBathSpec {
            t_c: 5.0,
            omega0: 3.0,
            sigma_y: 1.0,
            a: 0.0,
            init: [1.0, 0.0],
        };
        let grid = TimeGrid::new(0.02, 101).unwrap();
        let run = |integrator, substeps| {
            Generator::new(&NoiseSource::AsymmetricBath { bath, integrator, substeps }, grid, 0)
                .unwrap()
                .generate(0)
                .values[100]
        };
        let exact = run(Integrator::Exact, 1);
        let e1 = (run(Integrator::EulerMaruyama, 8) - exact).abs();
        let e2 = (run(Integrator::EulerMaruyama, 16) - exact).abs();
        assert!(e1 < 0.05 && (e1 / e2 - 2.0).abs() < 0.2, "{e1} {e2}");
    }

    #[test]
    fn exact_bath_step_has_stationary_variance() {
        let bath = SpinBathSpec::equilibrium(30.0, 2.0, 0.7);
        let g = Generator::new(
            &NoiseSource::RotatingBath {
                bath,
                integrator: Integrator::Exact,
                substeps: 1,
            },
            TimeGrid::new(0.01, 2).unwrap(),
            0,
        )
        .unwrap();
        if let Plan::Linear {
            step: LinearStep::Exact { phi, chol },
            ..
        } = g.plan
        {
            // Stationary covariance v I must be preserved: phi phi^T v + Q = v I.
            let v = bath.variance();
            let q00 = chol[0] * chol[0];
            let keep = (phi * phi.transpose())[(0, 0)];
            assert!((keep * v + q00 - v).abs() < 1e-12 * v);
        } else {
            panic!("expected exact step");
        }
    }

    #[test]
    fn binary_round_trip() {
        let g = markov_gen(InitialCondition::Equilibrium, 2.5, 0.004, 50);
        let e = Ensemble::generate(&g, 7);
        let mut buf = Vec::new();
        e.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 7 * 50 * 8);
        assert_eq!(Ensemble::read_binary(&buf[..]).unwrap(), e);
        assert!(Ensemble::read_binary(&buf[..40]).is_err());
    }
}
