//! Phase accumulation, ensemble Ramsey averages and empirical correlations.
//!
//! Ensemble sums are reduced over a fixed binary tree of realization
//! ranges, so a result is bit-identical for any number of worker threads.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::curve::{Provenance, RamseyCurve};
use crate::error::{invalid, Error, Result};
use crate::ramsey::{chi_many, ChiSpec};
use crate::rng::realization_stream;
use crate::trajectory::{Ensemble, Generator, Trajectory};

/// Realizations handled sequentially at a leaf of the reduction tree.
const LEAF: usize = 64;

/// Trapezoidal `∫₀^{t_k} n dt` for every grid point, written into `out`.
pub fn phase_path(values: &[f64], dt: f64, out: &mut Vec<f64>) {
    out.clear();
    out.reserve(values.len());
    let mut phi = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        phi += 0.5 * dt * (w[0] + w[1]);
        out.push(phi);
    }
    out.truncate(values.len());
}

/// Accumulated phase `φ(t_index)` of one trajectory.
pub fn accumulate_phase(traj: &Trajectory, t_index: usize) -> Result<f64> {
    let n = traj.values.len();
    if t_index >= n {
        return Err(Error::IndexOutOfRange { index: t_index, len: n });
    }
    let v = &traj.values[..=t_index];
    let inner: f64 = v.iter().sum::<f64>() - 0.5 * (v[0] + v[t_index]);
    Ok(if t_index == 0 { 0.0 } else { traj.grid.dt() * inner })
}

/// Sums `f(i, acc)` over realizations `lo..hi` on the fixed tree.
fn tree_reduce<F>(lo: usize, hi: usize, width: usize, f: &F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    if hi - lo <= LEAF {
        let mut acc = vec![0.0; width];
        for i in lo..hi {
            f(i, &mut acc);
        }
        return acc;
    }
    let mid = lo + (hi - lo) / 2;
    let (mut a, b) = rayon::join(|| tree_reduce(lo, mid, width, f), || tree_reduce(mid, hi, width, f));
    for (x, y) in a.iter_mut().zip(&b) {
        *x += y;
    }
    a
}

fn mean_and_se(sum: f64, sum2: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum2 - sum * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// `S(t_k)` as the mean of `cos φ(t_k)` over realizations `0..n`, with the
/// standard error of the mean.
pub fn simulate_ramsey(gen: &Generator, n_realizations: usize) -> Result<RamseyCurve> {
    if n_realizations < 2 {
        return Err(Error::TooFewRealizations {
            needed: 2,
            got: n_realizations,
        });
    }
    let grid = gen.grid();
    let np = grid.n_points();
    let dt = grid.dt();
    let sums = tree_reduce(0, n_realizations, 2 * np, &|i, acc: &mut [f64]| {
        let mut values = Vec::with_capacity(np);
        let mut phi = Vec::with_capacity(np);
        gen.fill(i as u64, &mut values);
        phase_path(&values, dt, &mut phi);
        // Accumulate 1 - cos φ: near φ = 0 every cosine rounds to 1 and its
        // spread is lost.
        for (k, p) in phi.iter().enumerate() {
            let u = 2.0 * (0.5 * p).sin().powi(2);
            acc[k] += u;
            acc[np + k] += u * u;
        }
    });
    let mut signal = Vec::with_capacity(np);
    let mut stderr = Vec::with_capacity(np);
    for k in 0..np {
        let (m, se) = mean_and_se(sums[k], sums[np + k], n_realizations);
        signal.push(1.0 - m);
        stderr.push(se);
    }
    RamseyCurve::new(grid.times(), signal, Some(stderr), Provenance::MonteCarlo)
}

/// Sample mean of `n(t₁) n(t₂)` with its standard error.
pub fn empirical_correlation(ensemble: &Ensemble, t1_index: usize, t2_index: usize) -> Result<(f64, f64)> {
    let np = ensemble.grid.n_points();
    for idx in [t1_index, t2_index] {
        if idx >= np {
            return Err(Error::IndexOutOfRange { index: idx, len: np });
        }
    }
    let n = ensemble.n_realizations;
    if n < 100 {
        return Err(Error::TooFewRealizations { needed: 100, got: n });
    }
    let (mut s, mut s2) = (0.0, 0.0);
    for i in 0..n {
        let r = ensemble.row(i);
        let p = r[t1_index] * r[t2_index];
        s += p;
        s2 += p * p;
    }
    Ok(mean_and_se(s, s2, n))
}

/// Per-point moments of an ensemble and its two-time covariance on every
/// `stride`-th grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_realizations: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub stride: usize,
    /// Row-major `m × m` covariance for `m = ceil(n_points / stride)`.
    pub covariance: Vec<f64>,
}

impl EnsembleStats {
    pub fn from_ensemble(e: &Ensemble, stride: usize) -> Result<Self> {
        let n = e.n_realizations;
        if n < 2 {
            return Err(Error::TooFewRealizations { needed: 2, got: n });
        }
        let stride = stride.max(1);
        let np = e.grid.n_points();
        let idx: Vec<usize> = (0..np).step_by(stride).collect();
        let m = idx.len();
        let nf = n as f64;
        let mut mean = vec![0.0; np];
        for i in 0..n {
            for (a, v) in mean.iter_mut().zip(e.row(i)) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= nf);
        let mut variance = vec![0.0; np];
        let mut covariance = vec![0.0; m * m];
        for i in 0..n {
            let r = e.row(i);
            for k in 0..np {
                let d = r[k] - mean[k];
                variance[k] += d * d;
            }
            for (a, &ia) in idx.iter().enumerate() {
                let da = r[ia] - mean[ia];
                for (b, &ib) in idx.iter().enumerate().skip(a) {
                    covariance[a * m + b] += da * (r[ib] - mean[ib]);
                }
            }
        }
        variance.iter_mut().for_each(|v| *v /= nf - 1.0);
        for a in 0..m {
            for b in a..m {
                let v = covariance[a * m + b] / (nf - 1.0);
                covariance[a * m + b] = v;
                covariance[b * m + a] = v;
            }
        }
        Ok(EnsembleStats {
            n_realizations: n,
            mean,
            variance,
            stride,
            covariance,
        })
    }
}

/// One compared pair in a correlation check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub t1: f64,
    pub t2: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub expected: f64,
}

impl CorrelationPoint {
    /// `|empirical - expected|` in units of the standard error.
    pub fn z(&self) -> f64 {
        let d = (self.empirical - self.expected).abs();
        if self.stderr > 0.0 {
            d / self.stderr
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n_realizations: usize,
    pub points: Vec<CorrelationPoint>,
    pub max_z: f64,
    /// Largest `|empirical - expected|`.
    pub max_abs_deviation: f64,
}

impl CorrelationReport {
    /// Every point within `k·SE + abs_slack` of its expected value.
    pub fn passes(&self, k: f64, abs_slack: f64) -> bool {
        self.points
            .iter()
            .all(|p| (p.empirical - p.expected).abs() <= k * p.stderr + abs_slack)
    }
}

/// Streams realizations `0..n` of `gen` and compares `⟨n(t_i) n(t_j)⟩`
/// against `expected(t_i, t_j)` for all `i ≥ j` among `probe` indices.
/// Nothing is materialized beyond one trajectory per worker.
pub fn correlation_check<F>(gen: &Generator, n_realizations: usize, probe: &[usize], expected: F) -> Result<CorrelationReport>
where
    F: Fn(f64, f64) -> f64,
{
    if n_realizations < 100 {
        return Err(Error::TooFewRealizations {
            needed: 100,
            got: n_realizations,
        });
    }
    let grid = gen.grid();
    let np = grid.n_points();
    if let Some(&bad) = probe.iter().find(|&&k| k >= np) {
        return Err(Error::IndexOutOfRange { index: bad, len: np });
    }
    let pairs: Vec<(usize, usize)> = probe
        .iter()
        .enumerate()
        .flat_map(|(a, &i)| probe[..=a].iter().map(move |&j| (i, j)))
        .collect();
    let w = pairs.len();
    let sums = tree_reduce(0, n_realizations, 2 * w, &|r, acc: &mut [f64]| {
        let mut values = Vec::with_capacity(np);
        gen.fill(r as u64, &mut values);
        for (q, &(i, j)) in pairs.iter().enumerate() {
            let p = values[i] * values[j];
            acc[q] += p;
            acc[w + q] += p * p;
        }
    });
    let points: Vec<CorrelationPoint> = pairs
        .iter()
        .enumerate()
        .map(|(q, &(i, j))| {
            let (m, se) = mean_and_se(sums[q], sums[w + q], n_realizations);
            let (t1, t2) = (grid.t(i), grid.t(j));
            CorrelationPoint {
                t1,
                t2,
                empirical: m,
                stderr: se,
                expected: expected(t1, t2),
            }
        })
        .collect();
    let max_z = points.iter().map(CorrelationPoint::z).fold(0.0, f64::max);
    let max_abs_deviation = points
        .iter()
        .map(|p| (p.empirical - p.expected).abs())
        .fold(0.0, f64::max);
    Ok(CorrelationReport {
        n_realizations,
        points,
        max_z,
        max_abs_deviation,
    })
}

/// Realization count behind a synthetic measurement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 10⁴ realizations per point.
    Validation,
    /// 100 realizations per point, as in laboratory runs.
    Fidelity,
    Custom(u64),
}

impl Preset {
    pub fn realizations(self) -> u64 {
        match self {
            Preset::Validation => 10_000,
            Preset::Fidelity => 100,
            Preset::Custom(n) => n,
        }
    }
}

/// Analytic `e^{-χ}` plus Gaussian scatter with the spread the mean of
/// `n` cosines of a Gaussian phase would have:
/// `σ² = ((1 + e^{-4χ})/2 - e^{-2χ}) / n`.
///
/// Deterministic in `seed`; the result is marked external and carries `σ`
/// as its stderr.
pub fn synthetic_measurement(spec: &ChiSpec, times: &[f64], preset: Preset, seed: u64) -> Result<RamseyCurve> {
    let n = preset.realizations();
    if n < 2 {
        return Err(invalid("preset", "needs at least 2 realizations"));
    }
    let chis = chi_many(spec, times)?;
    let mut rng = realization_stream(seed, 0);
    let mut signal = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for &c in &chis {
        let s = (-c).exp();
        let var = (0.5 * (1.0 + (-4.0 * c).exp()) - s * s).max(0.0) / n as f64;
        let sd = var.sqrt();
        let z: f64 = rng.sample(StandardNormal);
        signal.push(s + sd * z);
        stderr.push(sd);
    }
    RamseyCurve::new(times.to_vec(), signal, Some(stderr), Provenance::External)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InitialCondition, NoiseParams, TimeGrid};
    use crate::trajectory::NoiseSource;

    fn traj(values: Vec<f64>, dt: f64) -> Trajectory {
        Trajectory {
            grid: TimeGrid::new(dt, values.len()).unwrap(),
            values,
            warnings: vec![],
        }
    }

    #[test]
    fn phase_of_constant_is_exact() {
        let tr = traj(vec![0.7; 101], 0.01);
        for k in [0, 1, 50, 100] {
            let p = accumulate_phase(&tr, k).unwrap();
            assert!((p - 0.7 * 0.01 * k as f64).abs() < 1e-14);
        }
        assert!(accumulate_phase(&tr, 101).is_err());
        assert_eq!(accumulate_phase(&traj(vec![0.0; 5], 0.1), 4).unwrap(), 0.0);
    }

    #[test]
    fn phase_of_cosine_is_second_order() {
        let w = 3.0;
        let err = |dt: f64| {
            let n = (2.0 / dt).round() as usize + 1;
            let tr = traj((0..n).map(|k| (w * k as f64 * dt).cos()).collect(), dt);
            (accumulate_phase(&tr, n - 1).unwrap() - (w * 2.0).sin() / w).abs()
        };
        let (e1, e2) = (err(0.01), err(0.005));
        assert!(e1 < 1e-4);
        assert!((e1 / e2 - 4.0).abs() < 0.2, "{}", e1 / e2);
        let mut path = Vec::new();
        phase_path(&[1.0, 1.0, 1.0], 0.5, &mut path);
        assert_eq!(path, vec![0.0, 0.5, 1.0]);
    }

    fn gen(delta: f64, seed: u64) -> Generator {
        let params = NoiseParams::markovian(delta, 2.5).unwrap();
        Generator::new(
            &NoiseSource::Langevin {
                params,
                ic: InitialCondition::Equilibrium,
            },
            TimeGrid::new(0.02, 50).unwrap(),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_gives_unit_signal() {
        let c = simulate_ramsey(&gen(0.0, 1), 10).unwrap();
        assert!(c.signal.iter().all(|&s| s == 1.0));
        assert!(c.stderr.unwrap().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn independent_of_worker_count() {
        let g = gen(0.8, 3);
        let run = |w| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .unwrap()
                .install(|| simulate_ramsey(&g, 500).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn white_ensemble_is_uncorrelated() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let n = 5000;
        let mut values = Vec::with_capacity(n * 4);
        let mut rng = realization_stream(5, 0);
        for _ in 0..n * 4 {
            values.push(rng.sample::<f64, _>(StandardNormal));
        }
        let e = Ensemble {
            grid,
            seed: 5,
            n_realizations: n,
            values,
        };
        let (m, se) = empirical_correlation(&e, 1, 3).unwrap();
        assert!(m.abs() <= 5.0 * se);
        let (v, _) = empirical_correlation(&e, 2, 2).unwrap();
        assert!((v - 1.0).abs() < 0.1);
        assert!(empirical_correlation(&e, 0, 4).is_err());
        let small = Ensemble {
            n_realizations: 50,
            values: e.values[..200].to_vec(),
            ..e.clone()
        };
        assert!(matches!(
            empirical_correlation(&small, 0, 1),
            Err(Error::TooFewRealizations { .. })
        ));
        let st = EnsembleStats::from_ensemble(&e, 2).unwrap();
        assert_eq!(st.covariance.len(), 4);
        assert!((st.covariance[0] - st.variance[0]).abs() < 1e-12);
    }

    #[test]
    fn synthetic_noise_scale() {
        let spec = ChiSpec::new(NoiseParams::markovian(0.8, 10.0).unwrap(), InitialCondition::Equilibrium).unwrap();
        let times: Vec<f64> = (1..=100).map(|k| 0.025 * k as f64).collect();
        let a = synthetic_measurement(&spec, &times, Preset::Fidelity, 7).unwrap();
        let b = synthetic_measurement(&spec, &times, Preset::Fidelity, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.provenance, Provenance::External);
        let se = a.stderr.as_ref().unwrap();
        // chi large: the spread approaches that of one cosine of a uniform phase.
        assert!((se[99] - (0.5f64 / 100.0).sqrt()).abs() < 0.01);
    }
}
