use noise_witness::correlation::{corr_rotating_bath, AsymmetricBathSpec, CorrelationSpec, SpinBathSpec};
use noise_witness::montecarlo::{correlation_check, simulate_ramsey};
use noise_witness::ramsey::{chi, ChiSpec};
use noise_witness::trajectory::{Generator, Integrator, NoiseSource};
use noise_witness::{InitialCondition, NoiseParams, TimeGrid};

fn probe(n: usize, m: usize) -> Vec<usize> {
    (0..m).map(|i| i * (n - 1) / (m - 1)).collect()
}

fn check(params: NoiseParams, ic: InitialCondition, grid: TimeGrid, n: usize, seed: u64) {
    let gen = Generator::new(&NoiseSource::Langevin { params, ic }, grid, seed).unwrap();
    let spec = CorrelationSpec::new(params, ic).unwrap();
    let rep = correlation_check(&gen, n, &probe(grid.n_points(), 8), |a, b| spec.eval(a, b)).unwrap();
    assert!(rep.passes(5.0, 0.0), "{ic:?}: max z {}", rep.max_z);
}

#[test]
fn markovian_correlations() {
    let p = NoiseParams::markovian(0.8, 2.5).unwrap();
    let grid = TimeGrid::new(0.004, 1251).unwrap();
    for ic in [
        InitialCondition::Equilibrium,
        InitialCondition::Quenched,
        InitialCondition::DelayedQuench { t_d: 1.0 },
        InitialCondition::SwitchedTc { t_a: 0.5, t_b: 2.0, t_s: 1.2 },
    ] {
        check(p, ic, grid, 3000, 21);
    }
}

#[test]
fn second_order_correlations() {
    let p = NoiseParams::second_order(3.456, 20.0, 6.0).unwrap();
    let grid = TimeGrid::new(0.001, 2001).unwrap();
    for ic in [InitialCondition::Equilibrium, InitialCondition::Quenched] {
        check(p, ic, grid, 3000, 22);
    }
}

#[test]
fn rotating_bath_matches_its_closed_form() {
    let bath = SpinBathSpec::equilibrium(20.0, 2.0, 0.5);
    let grid = TimeGrid::new(0.01, 201).unwrap();
    let gen = Generator::new(&NoiseSource::RotatingBath { bath, integrator: Integrator::Exact, substeps: 1 }, grid, 4).unwrap();
    let rep = correlation_check(&gen, 3000, &probe(201, 8), |a, b| corr_rotating_bath(&bath, a, b)).unwrap();
    assert!(rep.passes(5.0, 1e-2 * bath.variance()), "max z {}", rep.max_z);
}

#[test]
fn asymmetric_bath_matches_quenched_second_order() {
    let bath = AsymmetricBathSpec { t_c: 20.0, omega0: 6.0, sigma_y: 1.0, a: 3.456 / 36.0, init: [0.0, 0.0] };
    let params = bath.to_noise_params().unwrap();
    let spec = CorrelationSpec::new(params, InitialCondition::Quenched).unwrap();
    let grid = TimeGrid::new(0.01, 201).unwrap();
    let gen = Generator::new(&NoiseSource::AsymmetricBath { bath, integrator: Integrator::Exact, substeps: 1 }, grid, 5).unwrap();
    let rep = correlation_check(&gen, 3000, &probe(201, 8), |a, b| spec.eval(a, b)).unwrap();
    assert!(rep.passes(5.0, 0.0), "max z {}", rep.max_z);
}

#[test]
fn ramsey_mc_matches_analytic() {
    let p = NoiseParams::markovian(0.8, 2.5).unwrap();
    let grid = TimeGrid::new(0.004, 751).unwrap();
    for ic in [InitialCondition::Equilibrium, InitialCondition::Quenched] {
        let gen = Generator::new(&NoiseSource::Langevin { params: p, ic }, grid, 8).unwrap();
        let c = simulate_ramsey(&gen, 3000).unwrap();
        let spec = ChiSpec::new(p, ic).unwrap();
        let se = c.stderr.as_ref().unwrap();
        for k in (0..grid.n_points()).step_by(50) {
            let s = (-chi(&spec, c.times[k]).unwrap()).exp();
            assert!((c.signal[k] - s).abs() <= 4.0 * se[k] + 1e-12, "{ic:?} t={} {} vs {s}", c.times[k], c.signal[k]);
        }
    }
}
