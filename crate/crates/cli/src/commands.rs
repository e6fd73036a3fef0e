//! Subcommand execution. Each command writes its artifacts into the output
//! directory and then a manifest listing them.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use noise_witness::classifier::{classify, Preparation};
use noise_witness::correlation::{corr_rotating_bath, spectral_density, AsymmetricBathSpec, CorrelationSpec, SpinBathSpec};
use noise_witness::fitting::{self, Dataset, FitProblem, ParamName};
use noise_witness::montecarlo::{correlation_check, empirical_correlation, simulate_ramsey};
use noise_witness::quadrature::{chi_quadrature_oracle, OracleOptions};
use noise_witness::ramsey::{chi, chi_many, ramsey_signal, series_report, ChiSpec};
use noise_witness::trajectory::{
    Ensemble, Generator, Integrator, NoiseSource, DEFAULT_DT_MARKOVIAN, DEFAULT_DT_SECOND_ORDER,
};
use noise_witness::{InitialCondition, NoiseKind, NoiseParams, RamseyCurve, TimeGrid};
use serde::Serialize;

use crate::args::*;
use crate::manifest;
use crate::Failure;

pub const SEED_ENV: &str = "NOISE_WITNESS_SEED";

type Res<T> = std::result::Result<T, Failure>;

/// Fills in everything taken from the environment so that the stored command
/// replays without it.
pub fn resolve(mut cmd: Command) -> Res<Command> {
    let seed = match &mut cmd {
        Command::Generate(a) => Some(&mut a.seed),
        Command::Correlate(a) => Some(&mut a.seed),
        Command::Simulate(a) => Some(&mut a.seed),
        Command::Validate(a) => Some(&mut a.seed),
        _ => None,
    };
    if let Some(s) = seed {
        if s.seed.is_none() {
            s.seed = Some(match std::env::var(SEED_ENV) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map_err(|_| Failure::usage(format!("{SEED_ENV}: not an unsigned integer: `{v}`")))?,
                Err(_) => 0,
            });
        }
    }
    Ok(cmd)
}

/// What a command produced: files relative to the output directory and,
/// for validation and fits, an optional failure that still leaves artifacts.
pub struct Outcome {
    pub files: Vec<String>,
    pub failure: Option<String>,
}

pub fn execute(cmd: &Command, out: &Path) -> Res<()> {
    let outcome = run(cmd, out)?;
    manifest::write(cmd, out, &outcome.files)?;
    match outcome.failure {
        Some(msg) => Err(Failure::failed(msg)),
        None => Ok(()),
    }
}

pub fn run(cmd: &Command, out: &Path) -> Res<Outcome> {
    fs::create_dir_all(out)?;
    match cmd {
        Command::Generate(a) => generate(a, out),
        Command::Correlate(a) => correlate(a, out),
        Command::Analytic(a) => analytic(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Oracle(a) => oracle(a, out),
        Command::Fit(a) => fit(a, out),
        Command::Classify(a) => classify_cmd(a, out),
        Command::Validate(a) => validate(a, out),
    }
}

// ---------------------------------------------------------------- building

fn kind(k: KindArg) -> NoiseKind {
    match k {
        KindArg::Markovian => NoiseKind::Markovian,
        KindArg::SecondOrder => NoiseKind::SecondOrder,
    }
}

fn t_c(n: &NoiseArgs) -> Option<f64> {
    n.tc.or(n.beta.map(|b| 2.0 / b))
}

fn check_coupling(n: &NoiseArgs) -> Res<()> {
    if !(n.coupling.is_finite() && n.coupling > 0.0) {
        return Err(Failure::usage(format!("--coupling: must be finite and > 0, got {}", n.coupling)));
    }
    if let Some(b) = n.beta {
        if !(b.is_finite() && b > 0.0) {
            return Err(Failure::usage(format!("--beta: must be finite and > 0, got {b}")));
        }
    }
    Ok(())
}

/// Canonical-unit parameters from the volt-denominated flags.
fn params(n: &NoiseArgs) -> Res<NoiseParams> {
    check_coupling(n)?;
    let tc = t_c(n).ok_or_else(|| Failure::usage("--tc: required (or --beta)"))?;
    let k = kind(n.kind);
    let omega0 = match k {
        NoiseKind::SecondOrder => n
            .omega0
            .ok_or_else(|| Failure::usage("--omega0: required for second-order noise"))?,
        NoiseKind::Markovian => 0.0,
    };
    let c = n.coupling;
    Ok(match (n.delta, n.drive) {
        (Some(d), None) => NoiseParams::from_delta(k, c * d, tc, omega0)?,
        (None, Some(a)) => NoiseParams::from_drive_norm(k, c * c * a, tc, omega0)?,
        _ => return Err(Failure::usage("--delta: exactly one of --delta or --drive is required")),
    })
}

fn ic(i: IcArg, a: &IcArgs) -> Res<InitialCondition> {
    let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| Failure::usage(format!("{flag}: required for this --ic")));
    let stray = |ok: &[&str]| -> Res<()> {
        for (flag, v) in [("--td", a.td), ("--ta", a.ta), ("--tb", a.tb), ("--ts", a.ts)] {
            if v.is_some() && !ok.contains(&flag) {
                return Err(Failure::usage(format!("{flag}: not used by this --ic")));
            }
        }
        Ok(())
    };
    Ok(match i {
        IcArg::Equilibrium => {
            stray(&[])?;
            InitialCondition::Equilibrium
        }
        IcArg::Quenched => {
            stray(&[])?;
            InitialCondition::Quenched
        }
        IcArg::DelayedQuench => {
            stray(&["--td"])?;
            InitialCondition::DelayedQuench {
                t_d: need(a.td, "--td")?,
            }
        }
        IcArg::SwitchedTc => {
            stray(&["--ta", "--tb", "--ts"])?;
            InitialCondition::SwitchedTc {
                t_a: need(a.ta, "--ta")?,
                t_b: need(a.tb, "--tb")?,
                t_s: need(a.ts, "--ts")?,
            }
        }
    })
}

fn chi_spec(n: &NoiseArgs, i: &IcArgs) -> Res<ChiSpec> {
    Ok(ChiSpec::new(params(n)?, ic(i.ic, i)?)?)
}

fn default_dt(n: &NoiseArgs, s: Option<&SourceArgs>) -> f64 {
    match (n.kind, s.map(|s| s.source)) {
        (KindArg::Markovian, None | Some(SourceArg::Langevin)) => DEFAULT_DT_MARKOVIAN,
        _ => DEFAULT_DT_SECOND_ORDER,
    }
}

fn grid(g: &GridArgs, n: &NoiseArgs, s: Option<&SourceArgs>) -> Res<TimeGrid> {
    let dt = g.dt.unwrap_or_else(|| default_dt(n, s));
    Ok(TimeGrid::covering(dt, g.tmax)?)
}

/// The generator's source plus the two-time function it should reproduce
/// and the stationary variance used to scale slack.
struct Built {
    source: NoiseSource,
    expected: Box<dyn Fn(f64, f64) -> f64 + Sync>,
    variance: f64,
}

fn build_source(n: &NoiseArgs, i: &IcArgs, s: &SourceArgs) -> Res<Built> {
    let integrator = match s.integrator {
        IntegratorArg::Exact => Integrator::Exact,
        IntegratorArg::EulerMaruyama => Integrator::EulerMaruyama,
    };
    match s.source {
        SourceArg::Langevin => {
            let p = params(n)?;
            let ic = ic(i.ic, i)?;
            let spec = CorrelationSpec::new(p, ic)?;
            Ok(Built {
                source: NoiseSource::Langevin { params: p, ic },
                expected: Box::new(move |a, b| spec.eval(a, b)),
                variance: p.variance(),
            })
        }
        SourceArg::RotatingBath => {
            check_coupling(n)?;
            if i.ic != IcArg::Equilibrium {
                return Err(Failure::usage("--ic: the rotating bath starts from its stationary state"));
            }
            let tc = t_c(n).ok_or_else(|| Failure::usage("--tc: required (or --beta)"))?;
            let w = s
                .omega_rot
                .ok_or_else(|| Failure::usage("--omega-rot: required for the rotating bath"))?;
            // Stationary variance a t_c / 2 sets a from --delta when --bath-a is absent.
            let a = match (s.bath_a, n.delta) {
                (Some(a), _) => a,
                (None, Some(d)) => 2.0 * (n.coupling * d).powi(2) / tc,
                (None, None) => return Err(Failure::usage("--bath-a: required (or --delta)")),
            };
            let bath = SpinBathSpec::equilibrium(w, tc, a);
            bath.check()?;
            Ok(Built {
                source: NoiseSource::RotatingBath {
                    bath,
                    integrator,
                    substeps: s.substeps,
                },
                expected: Box::new(move |a, b| corr_rotating_bath(&bath, a, b)),
                variance: bath.variance(),
            })
        }
        SourceArg::AsymmetricBath => {
            check_coupling(n)?;
            if i.ic != IcArg::Quenched {
                return Err(Failure::usage("--ic: the asymmetric bath starts at rest, use --ic quenched"));
            }
            let tc = t_c(n).ok_or_else(|| Failure::usage("--tc: required (or --beta)"))?;
            let w = n
                .omega0
                .ok_or_else(|| Failure::usage("--omega0: required for the asymmetric bath"))?;
            // drive_norm = a / m² with m = 1 / (omega0 sigma_y).
            let scale = (w * s.sigma_y).powi(2);
            let a = match (s.bath_a, n.delta, n.drive) {
                (Some(a), _, _) => a,
                (None, None, Some(d)) => n.coupling * n.coupling * d / scale,
                (None, Some(d), None) => {
                    NoiseParams::from_delta(NoiseKind::SecondOrder, n.coupling * d, tc, w)?.drive_norm() / scale
                }
                _ => return Err(Failure::usage("--bath-a: required (or --delta / --drive)")),
            };
            let bath = AsymmetricBathSpec {
                t_c: tc,
                omega0: w,
                sigma_y: s.sigma_y,
                a,
                init: [0.0, 0.0],
            };
            let p = bath.to_noise_params()?;
            let spec = CorrelationSpec::new(p, InitialCondition::Quenched)?;
            Ok(Built {
                source: NoiseSource::AsymmetricBath {
                    bath,
                    integrator,
                    substeps: s.substeps,
                },
                expected: Box::new(move |a, b| spec.eval(a, b)),
                variance: p.variance(),
            })
        }
    }
}

fn seed(s: &SeedArgs) -> u64 {
    s.seed.unwrap_or(0)
}

fn generator(b: &Built, g: TimeGrid, seed: u64) -> Res<Generator> {
    let gen = Generator::new(&b.source, g, seed)?;
    for w in gen.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(gen)
}

/// `points` grid indices spread evenly from the first to the last sample.
fn probes(g: &TimeGrid, points: usize) -> Res<Vec<usize>> {
    if points < 2 {
        return Err(Failure::usage("--points: must be at least 2"));
    }
    let last = g.n_points() - 1;
    let mut idx: Vec<usize> = (0..points)
        .map(|k| ((k * last) as f64 / (points - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    Ok(idx)
}

// ---------------------------------------------------------------- output

fn create(out: &Path, name: &str) -> Res<BufWriter<File>> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn write_json<T: Serialize>(out: &Path, name: &str, v: &T) -> Res<()> {
    let mut w = create(out, name)?;
    serde_json::to_writer_pretty(&mut w, v)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_curve(out: &Path, name: &str, c: &RamseyCurve) -> Res<()> {
    let mut w = create(out, name)?;
    c.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn done(files: &[&str]) -> Res<Outcome> {
    Ok(Outcome {
        files: files.iter().map(|s| s.to_string()).collect(),
        failure: None,
    })
}

// ---------------------------------------------------------------- commands

fn generate(a: &GenerateArgs, out: &Path) -> Res<Outcome> {
    if a.n == 0 {
        return Err(Failure::usage("--n: must be at least 1"));
    }
    let b = build_source(&a.noise, &a.ic, &a.source)?;
    let gen = generator(&b, grid(&a.grid, &a.noise, Some(&a.source))?, seed(&a.seed))?;
    match (a.n, a.format) {
        (1, FormatArg::Csv) => {
            let mut w = create(out, "trajectory.csv")?;
            gen.generate(0).write_csv(&mut w)?;
            w.flush()?;
            done(&["trajectory.csv"])
        }
        (n, FormatArg::Csv) => {
            let e = Ensemble::generate(&gen, n);
            let mut w = create(out, "ensemble.csv")?;
            writeln!(w, "realization,t_us,n")?;
            for r in 0..n {
                for (k, v) in e.row(r).iter().enumerate() {
                    writeln!(w, "{r},{},{v}", e.grid.t(k))?;
                }
            }
            w.flush()?;
            done(&["ensemble.csv"])
        }
        (n, FormatArg::Binary) => {
            let e = Ensemble::generate(&gen, n);
            let mut w = create(out, "ensemble.bin")?;
            e.write_binary(&mut w)?;
            w.flush()?;
            done(&["ensemble.bin"])
        }
    }
}

fn correlate(a: &CorrelateArgs, out: &Path) -> Res<Outcome> {
    let b = build_source(&a.noise, &a.ic, &a.source)?;
    let g = grid(&a.grid, &a.noise, Some(&a.source))?;
    let idx = probes(&g, a.points)?;
    let ens = if a.empirical {
        Some(Ensemble::generate(&generator(&b, g, seed(&a.seed))?, a.n))
    } else {
        None
    };
    let mut w = create(out, "correlation.csv")?;
    if ens.is_some() {
        writeln!(w, "t1_us,t2_us,corr,empirical,stderr")?;
    } else {
        writeln!(w, "t1_us,t2_us,corr")?;
    }
    for &i in &idx {
        for &j in &idx {
            let (t1, t2) = (g.t(i), g.t(j));
            let c = (b.expected)(t1, t2);
            match &ens {
                Some(e) => {
                    let (m, se) = empirical_correlation(e, i, j)?;
                    writeln!(w, "{t1},{t2},{c},{m},{se}")?;
                }
                None => writeln!(w, "{t1},{t2},{c}")?,
            }
        }
    }
    w.flush()?;
    let mut files = vec!["correlation.csv"];
    // The spectrum only exists for stationary Langevin noise.
    if let NoiseSource::Langevin {
        params: p,
        ic: InitialCondition::Equilibrium,
    } = b.source
    {
        let w_max = 5.0 * (1.0 / p.t_c()).max(p.omega0());
        let mut w = create(out, "spectrum.csv")?;
        writeln!(w, "omega,spectral_density")?;
        for k in 0..=200 {
            let om = w_max * k as f64 / 200.0;
            writeln!(w, "{om},{}", spectral_density(&p, om))?;
        }
        w.flush()?;
        files.push("spectrum.csv");
    }
    done(&files)
}

fn analytic(a: &AnalyticArgs, out: &Path) -> Res<Outcome> {
    let mut spec = chi_spec(&a.noise, &a.ic)?;
    if let Some(t2) = a.t2star {
        spec = spec.with_t2star(t2)?;
    }
    let g = grid(&a.grid, &a.noise, None)?;
    let times = g.times();
    write_curve(out, "ramsey.csv", &ramsey_signal(&spec, &g)?)?;
    let chis = chi_many(&spec, &times)?;
    let mut w = create(out, "chi.csv")?;
    writeln!(w, "t_us,chi")?;
    for (t, c) in times.iter().zip(&chis) {
        writeln!(w, "{t},{c}")?;
    }
    w.flush()?;
    match series_report(&spec) {
        Ok(r) => {
            write_json(out, "series.json", &r)?;
            done(&["ramsey.csv", "chi.csv", "series.json"])
        }
        Err(noise_witness::Error::Unsupported(m)) => {
            eprintln!("note: no series expansion: {m}");
            done(&["ramsey.csv", "chi.csv"])
        }
        Err(e) => Err(e.into()),
    }
}

fn simulate(a: &SimulateArgs, out: &Path) -> Res<Outcome> {
    let b = build_source(&a.noise, &a.ic, &a.source)?;
    let gen = generator(&b, grid(&a.grid, &a.noise, Some(&a.source))?, seed(&a.seed))?;
    write_curve(out, "ramsey.csv", &simulate_ramsey(&gen, a.n)?)?;
    done(&["ramsey.csv"])
}

fn oracle(a: &OracleArgs, out: &Path) -> Res<Outcome> {
    let spec = chi_spec(&a.noise, &a.ic)?;
    if a.points == 0 {
        return Err(Failure::usage("--points: must be at least 1"));
    }
    if !(a.tmax.is_finite() && a.tmax > 0.0) {
        return Err(Failure::usage("--tmax: must be finite and > 0"));
    }
    let corr = spec.correlation();
    let breakpoints = match spec.ic {
        InitialCondition::SwitchedTc { t_s, .. } => vec![t_s],
        _ => Vec::new(),
    };
    let opts = OracleOptions {
        tol: a.tol,
        breakpoints,
        ..OracleOptions::default()
    };
    let mut w = create(out, "oracle.csv")?;
    writeln!(w, "t_us,chi_oracle,error,chi_closed,rel_diff")?;
    for k in 1..=a.points {
        let t = a.tmax * k as f64 / a.points as f64;
        let est = chi_quadrature_oracle(|x, y| corr.eval(x, y), t, &opts)?;
        let closed = chi(&spec, t)?;
        let rel = if closed != 0.0 {
            (est.value - closed).abs() / closed.abs()
        } else {
            est.value.abs()
        };
        writeln!(w, "{t},{},{},{closed},{rel}", est.value, est.error)?;
    }
    w.flush()?;
    done(&["oracle.csv"])
}

fn parse_kv(s: &str, flag: &str) -> Res<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Failure::usage(format!("{flag}: expected name=value, got `{s}`")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn parse_num(s: &str, flag: &str) -> Res<f64> {
    s.parse()
        .map_err(|_| Failure::usage(format!("{flag}: not a number: `{s}`")))
}

fn parse_param(s: &str, flag: &str) -> Res<ParamName> {
    s.parse()
        .map_err(|_| Failure::usage(format!("{flag}: unknown parameter `{s}`")))
}

/// Preparation named by a file when none is given on the command line.
fn ic_from_name(p: &Path) -> IcArg {
    let name = p.file_name().map(|s| s.to_string_lossy().to_lowercase()).unwrap_or_default();
    if name.contains("quench") {
        IcArg::Quenched
    } else {
        IcArg::Equilibrium
    }
}

fn read_curve(p: &Path, normalize: bool) -> Res<RamseyCurve> {
    let f = File::open(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
    let c = RamseyCurve::read_csv(std::io::BufReader::new(f))
        .map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
    Ok(if normalize { c.normalized_to_max()? } else { c })
}

/// Model template for a fit: given values, with placeholders for free
/// parameters nobody specified.
fn fit_model(a: &FitArgs, free: &[ParamName], ic_arg: IcArg) -> Res<ChiSpec> {
    let is_free = |p: ParamName| free.contains(&p);
    let mut n = a.noise.clone();
    check_coupling(&n)?;
    if n.delta.is_none() && n.drive.is_none() {
        if is_free(ParamName::Delta) || is_free(ParamName::DriveNorm) {
            n.delta = Some(1.0 / n.coupling);
        } else {
            return Err(Failure::usage("--delta: required unless delta or drive_norm is free"));
        }
    }
    if t_c(&n).is_none() {
        n.tc = Some(1.0);
    }
    if n.kind == KindArg::SecondOrder && n.omega0.is_none() {
        if is_free(ParamName::Omega0) {
            n.omega0 = Some(1.0);
        } else {
            return Err(Failure::usage("--omega0: required unless omega0 is free"));
        }
    }
    let mut i = a.ic.clone();
    let placeholder = |v: Option<f64>, p: ParamName| if v.is_none() && is_free(p) { Some(1.0) } else { v };
    match ic_arg {
        IcArg::DelayedQuench => i.td = placeholder(i.td, ParamName::TD),
        IcArg::SwitchedTc => {
            i.ta = placeholder(i.ta, ParamName::TA);
            i.tb = placeholder(i.tb, ParamName::TB);
            i.ts = placeholder(i.ts, ParamName::TS);
        }
        _ => {
            i.td = None;
            i.ta = None;
            i.tb = None;
            i.ts = None;
        }
    }
    let mut spec = ChiSpec::new(params(&n)?, ic(ic_arg, &i)?)?;
    match a.t2star {
        Some(t) => spec = spec.with_t2star(t)?,
        None if is_free(ParamName::ExtraT2star) => spec = spec.with_t2star(1.0)?,
        None => {}
    }
    Ok(spec)
}

#[derive(Serialize)]
struct FitRecord<'a> {
    files: Vec<String>,
    ics: Vec<IcArg>,
    result: &'a fitting::FitResult,
    identifiability: fitting::IdentifiabilityReport,
}

fn fit(a: &FitArgs, out: &Path) -> Res<Outcome> {
    let free: Vec<ParamName> = a.free.iter().map(|s| parse_param(s, "--free")).collect::<Res<_>>()?;
    let shared: Vec<ParamName> = a.share.iter().map(|s| parse_param(s, "--share")).collect::<Res<_>>()?;
    let ics: Vec<IcArg> = match a.ics.len() {
        0 => {
            let v: Vec<IcArg> = a.files.iter().map(|p| ic_from_name(p)).collect();
            eprintln!("note: preparations taken from file names: {v:?}");
            v
        }
        1 => vec![a.ics[0]; a.files.len()],
        n if n == a.files.len() => a.ics.clone(),
        n => {
            return Err(Failure::usage(format!(
                "--ics: {n} values for {} files",
                a.files.len()
            )))
        }
    };
    let mut bounds = BTreeMap::new();
    for s in &a.bounds {
        let (k, v) = parse_kv(s, "--bound")?;
        let (lo, hi) = v
            .split_once(':')
            .ok_or_else(|| Failure::usage(format!("--bound: expected name=lo:hi, got `{s}`")))?;
        bounds.insert(parse_param(&k, "--bound")?, [parse_num(lo, "--bound")?, parse_num(hi, "--bound")?]);
    }
    let mut initial = BTreeMap::new();
    for s in &a.inits {
        let (k, v) = parse_kv(s, "--init")?;
        initial.insert(parse_param(&k, "--init")?, parse_num(&v, "--init")?);
    }
    let mut injected = BTreeMap::new();
    for s in &a.injected {
        let (k, v) = parse_kv(s, "--injected")?;
        injected.insert(k, parse_num(&v, "--injected")?);
    }

    let mut datasets = Vec::new();
    for (p, &i) in a.files.iter().zip(&ics) {
        datasets.push(Dataset::new(read_curve(p, a.normalize)?, fit_model(a, &free, i)?));
    }
    let groups: Vec<Vec<usize>> = if a.joint {
        vec![(0..datasets.len()).collect()]
    } else {
        (0..datasets.len()).map(|i| vec![i]).collect()
    };

    let mut files = Vec::new();
    let mut records = Vec::new();
    let mut report = String::new();
    let mut failure = None;
    for (gi, group) in groups.iter().enumerate() {
        let problem = FitProblem {
            datasets: group.iter().map(|&i| datasets[i].clone()).collect(),
            free: free.clone(),
            shared: if a.joint { shared.clone() } else { Vec::new() },
            bounds: bounds.clone(),
            initial: initial.clone(),
        };
        let names: Vec<String> = group.iter().map(|&i| a.files[i].display().to_string()).collect();
        report.push_str(&format!("# {}\n", names.join(" + ")));
        match fitting::fit(&problem) {
            Ok(result) => {
                report.push_str(&fitting::render_table(&result, &injected));
                report.push('\n');
                for (k, &i) in group.iter().enumerate() {
                    let model = fitting::fitted_model(&problem, &result, k)?;
                    let c = &datasets[i].curve;
                    let scale = match result.get(ParamName::AmplitudeScale.as_str()) {
                        Some(e) if group.len() == 1 || shared.contains(&ParamName::AmplitudeScale) => e.value,
                        _ => result
                            .get(&format!("{}[{k}]", ParamName::AmplitudeScale))
                            .map_or(problem.datasets[k].amplitude_scale, |e| e.value),
                    };
                    let mut fitted = noise_witness::ramsey::ramsey_signal_at(&model, &c.times)?;
                    fitted.signal.iter_mut().for_each(|s| *s *= scale);
                    let name = format!("fit_curve_{i}.csv");
                    write_curve(out, &name, &fitted)?;
                    files.push(name);
                }
                records.push(serde_json::json!(FitRecord {
                    files: names,
                    ics: group.iter().map(|&i| ics[i]).collect(),
                    identifiability: fitting::identifiability_report(&result),
                    result: &result,
                }));
            }
            Err(e) => {
                let f = Failure::from(e);
                if f.code != 1 {
                    return Err(f);
                }
                report.push_str(&format!("fit failed: {}\n\n", f.message));
                records.push(serde_json::json!({ "files": names, "error": f.message }));
                failure.get_or_insert(format!("fit {gi} failed: {}", f.message));
            }
        }
    }
    write_json(out, "fit.json", &serde_json::json!({ "fits": records }))?;
    let mut w = create(out, "fit_report.txt")?;
    w.write_all(report.as_bytes())?;
    w.flush()?;
    print!("{report}");
    files.insert(0, "fit_report.txt".into());
    files.insert(0, "fit.json".into());
    Ok(Outcome { files, failure })
}

fn classify_cmd(a: &ClassifyArgs, out: &Path) -> Res<Outcome> {
    let hints: Vec<HintArg> = match a.hints.len() {
        0 => vec![HintArg::AsPrepared; a.files.len()],
        1 => vec![a.hints[0]; a.files.len()],
        n if n == a.files.len() => a.hints.clone(),
        n => return Err(Failure::usage(format!("--hints: {n} values for {} files", a.files.len()))),
    };
    let mut curves = Vec::new();
    for (p, h) in a.files.iter().zip(hints) {
        let prep = match h {
            HintArg::AsPrepared => Preparation::AsPrepared,
            HintArg::Quenched => Preparation::QuenchedPrepared,
        };
        curves.push((read_curve(p, a.normalize)?, prep));
    }
    let label = classify(&curves);
    write_json(out, "label.json", &label)?;
    print!("{}", label.verdict());
    done(&["label.json"])
}

#[derive(Serialize)]
struct ValidationSummary {
    pass: bool,
    n_realizations: usize,
    seed: u64,
    k: f64,
    abs_slack: f64,
    max_z: f64,
    max_abs_deviation: f64,
    n_pairs: usize,
}

fn validate(a: &ValidateArgs, out: &Path) -> Res<Outcome> {
    if !(a.k.is_finite() && a.k > 0.0) {
        return Err(Failure::usage("--k: must be finite and > 0"));
    }
    if !(a.slack.is_finite() && a.slack >= 0.0) {
        return Err(Failure::usage("--slack: must be finite and >= 0"));
    }
    let b = build_source(&a.noise, &a.ic, &a.source)?;
    let g = grid(&a.grid, &a.noise, Some(&a.source))?;
    let gen = generator(&b, g, seed(&a.seed))?;
    let idx = probes(&g, a.points)?;
    let report = correlation_check(&gen, a.n, &idx, |x, y| (b.expected)(x, y))?;
    let abs_slack = a.slack * b.variance;
    let pass = report.passes(a.k, abs_slack);

    let mut w = create(out, "validation.csv")?;
    writeln!(w, "t1_us,t2_us,empirical,stderr,expected,z")?;
    for p in &report.points {
        writeln!(w, "{},{},{},{},{},{}", p.t1, p.t2, p.empirical, p.stderr, p.expected, p.z())?;
    }
    w.flush()?;
    let summary = ValidationSummary {
        pass,
        n_realizations: report.n_realizations,
        seed: seed(&a.seed),
        k: a.k,
        abs_slack,
        max_z: report.max_z,
        max_abs_deviation: report.max_abs_deviation,
        n_pairs: report.points.len(),
    };
    write_json(out, "validation.json", &summary)?;
    println!(
        "{}: {} pairs, {} realizations, max |dev| = {:.3e}, max z = {:.2} (limit {} SE + {:.3e})",
        if pass { "PASS" } else { "FAIL" },
        summary.n_pairs,
        summary.n_realizations,
        summary.max_abs_deviation,
        summary.max_z,
        a.k,
        abs_slack
    );
    Ok(Outcome {
        files: vec!["validation.json".into(), "validation.csv".into()],
        failure: (!pass).then(|| "validation failed: deviation beyond the allowed band".to_string()),
    })
}
