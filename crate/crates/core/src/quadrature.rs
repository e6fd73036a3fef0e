//! Globally adaptive Gauss-Kronrod (7/15) quadrature.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Integral estimate with its error estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Estimate {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    Estimate {
        value: kron * h,
        error: ((kron - gauss) * h).abs(),
    }
}

/// Limits for [`integrate`].
#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Tolerance {
    pub fn relative(rel: f64) -> Self {
        Tolerance {
            abs: 0.0,
            rel,
            max_intervals: 4000,
        }
    }
}

/// Integrates `f` over `[a, b]`, first splitting at `breaks` that fall inside
/// the interval. Stops once the summed error estimate is below
/// `max(tol.abs, tol.rel * |value|)`; errors with the best estimate otherwise.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: Tolerance,
) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut cuts = vec![lo];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > lo && x < hi).collect();
    inner.sort_by(|x, y| x.total_cmp(y));
    inner.dedup();
    cuts.extend(inner);
    cuts.push(hi);

    let mut parts: Vec<(f64, f64, Estimate)> = cuts
        .windows(2)
        .map(|w| (w[0], w[1], gk15(&mut f, w[0], w[1])))
        .collect();
    loop {
        let value: f64 = parts.iter().map(|p| p.2.value).sum();
        let error: f64 = parts.iter().map(|p| p.2.error).sum();
        let goal = tol.abs.max(tol.rel * value.abs());
        if error <= goal {
            return Ok(Estimate {
                value: sign * value,
                error,
            });
        }
        let (idx, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2.error.total_cmp(&y.1 .2.error))
            .expect("at least one interval");
        let (l, r, _) = parts[idx];
        let m = 0.5 * (l + r);
        if parts.len() >= tol.max_intervals || !(m > l && m < r) {
            return Err(Error::QuadratureNonConvergence {
                estimate: sign * value,
                error,
            });
        }
        parts[idx] = (l, m, gk15(&mut f, l, m));
        parts.push((m, r, gk15(&mut f, m, r)));
    }
}

/// Integral of `f` over the whole real line via `x = scale * tan(theta)`.
/// `f` must decay at least as fast as `x⁻²`.
pub fn integrate_real_line<F: FnMut(f64) -> f64>(mut f: F, scale: f64, rel: f64) -> Result<f64> {
    let g = |th: f64| {
        let c = th.cos();
        if c <= 0.0 {
            // Only reached at the endpoints, which Gauss-Kronrod never samples.
            return 0.0;
        }
        let x = scale * th.tan();
        f(x) * scale / (c * c)
    };
    integrate(g, -FRAC_PI_2, FRAC_PI_2, &[0.0], Tolerance::relative(rel)).map(|e| e.value)
}

/// Options for [`chi_quadrature_oracle`].
#[derive(Clone, Debug)]
pub struct OracleOptions {
    pub tol: f64,
    /// Times where the correlation has kinks (a switch time, say).
    pub breakpoints: Vec<f64>,
    pub max_intervals: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            tol: 1e-7,
            breakpoints: Vec::new(),
            max_intervals: 4000,
        }
    }
}

/// `chi(t) = ∫₀ᵗ dt₁ ∫₀^{t₁} dt₂ corr(t₁, t₂)` by nested adaptive quadrature
/// over the triangle, independent of any closed form.
///
/// A coarse pass fixes the absolute scale; the refined pass then budgets a
/// tenth of the tolerance to the inner integrals.
pub fn chi_quadrature_oracle<F: Fn(f64, f64) -> f64>(corr: F, t: f64, opts: &OracleOptions) -> Result<Estimate> {
    if !(opts.tol > 0.0 && opts.tol <= 1e-3) {
        return Err(crate::error::invalid("tol", "must lie in (0, 1e-3]"));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(crate::error::invalid("t", "must be finite and >= 0"));
    }
    if t == 0.0 {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let breaks = &opts.breakpoints;

    // Magnitude of the integrand, for an absolute floor when chi is ~0.
    let mut cmax: f64 = 0.0;
    for i in 0..=8 {
        for j in 0..=i {
            let t1 = t * i as f64 / 8.0;
            let t2 = t * j as f64 / 8.0;
            cmax = cmax.max(corr(t1, t2).abs());
        }
    }
    let floor = 1e-14 * cmax * t * t;

    let pass = |rel: f64, abs_outer: f64| -> Result<Estimate> {
        // Absolute only: chi can be far smaller than the inner integrals
        // when the correlation oscillates, so a relative inner goal would
        // overspend the budget.
        let abs_inner = (0.1 * abs_outer / t).max(1e-14 * cmax * t);
        let mut inner_err = 0.0;
        let mut failed: Option<Error> = None;
        let outer = integrate(
            |t1| {
                let inner = integrate(
                    |t2| corr(t1, t2),
                    0.0,
                    t1,
                    breaks,
                    Tolerance {
                        abs: abs_inner,
                        rel: 0.0,
                        max_intervals: opts.max_intervals,
                    },
                );
                match inner {
                    Ok(e) => {
                        inner_err = f64::max(inner_err, e.error);
                        e.value
                    }
                    Err(Error::QuadratureNonConvergence { estimate, error }) => {
                        inner_err = f64::max(inner_err, error);
                        if failed.is_none() {
                            failed = Some(Error::QuadratureNonConvergence { estimate, error });
                        }
                        estimate
                    }
                    Err(e) => {
                        failed = Some(e);
                        f64::NAN
                    }
                }
            },
            0.0,
            t,
            breaks,
            Tolerance {
                abs: abs_outer,
                rel,
                max_intervals: opts.max_intervals,
            },
        );
        let outer = outer?;
        let error = outer.error + inner_err * t;
        if failed.is_some() || error > abs_outer.max(rel * outer.value.abs()) * 1.5 {
            return Err(Error::QuadratureNonConvergence {
                estimate: outer.value,
                error,
            });
        }
        Ok(Estimate {
            value: outer.value,
            error,
        })
    };

    let coarse = pass(1e-4, floor)?;
    pass(opts.tol, (opts.tol * coarse.value.abs()).max(floor))
}
