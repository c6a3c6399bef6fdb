//! Public-API round trips: sample, measure, compare against the bounds.

use wassdiff_core::bounds::{bound_euler_ode, bound_heun};
use wassdiff_core::explosion::{explosion_probability_with, DEFAULT_MAX_REFINE, DEFAULT_THRESHOLD};
use wassdiff_core::samplers::run_sampler;
use wassdiff_core::target::sample_target;
use wassdiff_core::transport::{noise_floor, w2_1d};
use wassdiff_core::{Algorithm, BoundInputs, InitVariant, SamplerSpec, ScoreField, TargetDistribution, TimeGrid};

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

#[test]
fn ode_samplers_stay_below_their_bounds() {
    let tgt = TargetDistribution::two_dirac(1.0);
    let grid = TimeGrid::new(4.0, 0.5, 16).unwrap();
    let field = ScoreField::exact(tgt.clone());
    let inputs = BoundInputs::new(1, 1.0, 4.0, 0.5, 16).with_init(InitVariant::Crude);
    let n = 2048;
    let reference = sample_target(&tgt, n, 77).unwrap();
    let floor = noise_floor(&tgt, 0.0, n, 78).unwrap();
    for (alg, total) in [
        (Algorithm::EulerOde, bound_euler_ode(&inputs).unwrap().total),
        (Algorithm::Heun, bound_heun(&inputs.clone().with_lipschitz(4.0)).unwrap().total),
    ] {
        let out = run_sampler(&SamplerSpec::new(alg, field.clone(), grid).unwrap(), n, 5).unwrap();
        let w = w2_1d(&out, &reference).unwrap().with_noise_floor(floor);
        assert!(w.lower() <= total, "{alg}: {} > {total}", w.lower());
        assert!(w.value.is_finite());
    }
}

#[test]
fn sampler_output_ignores_thread_count() {
    let field = ScoreField::exact(TargetDistribution::two_dirac(0.7));
    let spec = SamplerSpec::new(Algorithm::EulerMaruyama, field, TimeGrid::new(3.0, 0.1, 64).unwrap()).unwrap();
    let one = pool(1).install(|| run_sampler(&spec, 500, 11).unwrap());
    let three = pool(3).install(|| run_sampler(&spec, 500, 11).unwrap());
    assert_eq!(one, three);
    assert_ne!(one, run_sampler(&spec, 500, 12).unwrap());
}

#[test]
fn unperturbed_ode_never_explodes() {
    let tgt = TargetDistribution::two_dirac(1.0);
    let grid = TimeGrid::new(10.0, 0.1, 99).unwrap();
    let st = explosion_probability_with(&tgt, 0.0, &grid, &[1.0], 200, 3, DEFAULT_THRESHOLD, DEFAULT_MAX_REFINE).unwrap();
    assert_eq!(st.anywhere.count, 0);
    assert_eq!(st.anywhere.trials, 200);
    let st = explosion_probability_with(&tgt, 1.0, &grid, &[5.0], 200, 3, DEFAULT_THRESHOLD, DEFAULT_MAX_REFINE).unwrap();
    assert!(st.anywhere.count > 0);
}
