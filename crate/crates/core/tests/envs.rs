use proptest::prelude::*;
use safedpa::dynlearn::{collect_random, Dataset};
use safedpa::envs::{check_safe, sample_config, wrap_angle, ConfigMode, ConfigSampler, Env, EnvConfig};
use safedpa::rng::seeded;

const ENVS: [&str; 6] = ["pendulum", "pendulum_hazard", "planar", "bicycle", "bicycle_real", "linear"];

#[test]
fn step_is_exactly_affine_in_the_action() {
    let mut rng = seeded(1);
    for id in ENVS {
        let env = Env::from_id(id).unwrap();
        let d = env.dims();
        let space = env.action_space();
        for _ in 0..1000 {
            let x = env.reset_collect(&mut rng);
            let e: Vec<f64> = (0..d.k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = space.sample(&mut rng);
            let (f, g) = env.true_f_g(&x, &e).unwrap();
            let ga = g.matvec(&a).unwrap();
            let next = env.step_x(&x, &a, &e).unwrap();
            for i in 0..d.n {
                let mut want = f[i] + ga[i];
                if env.angle_dims().contains(&i) {
                    want = wrap_angle(want);
                }
                assert!((next[i] - want).abs() < 1e-12, "{id}: {:?} vs f+ga", next);
            }
        }
    }
}

#[test]
fn pendulum_wind_and_actuation_constants() {
    let Env::Pendulum(p) = Env::from_id("pendulum").unwrap() else { unreachable!() };
    let env = Env::Pendulum(p.clone());
    let (_, g) = env.true_f_g(&[0.3, 0.1], &[0.0, 0.0]).unwrap();
    assert_eq!(g.get(0, 0), 0.0);
    assert!((g.get(1, 0) - p.dt / (p.mass * p.length * p.length)).abs() < 1e-15);
    let w = 0.7;
    let cfg = EnvConfig::directional(w, 0.0);
    let next = env.step_x(&[0.0, 0.0], &[0.0], &cfg.e).unwrap();
    let want = p.dt * w * p.length / (p.mass * p.length * p.length);
    assert!((next[1] - want).abs() < 1e-15);
}

#[test]
fn safety_check_examples() {
    let env = Env::from_id("pendulum").unwrap();
    let spec = env.safe_set();
    let (ok, h) = check_safe(&spec, &[0.0, 0.0]);
    assert!(ok);
    assert!((h - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    assert!(!check_safe(&spec, &[46f64.to_radians(), 0.0]).0);
    assert!(check_safe(&spec, &[std::f64::consts::FRAC_PI_4, 0.0]).0);
}

#[test]
fn reward_examples() {
    let env = Env::from_id("pendulum").unwrap();
    assert_eq!(env.reward(&[0.0, 0.0], &[0.0]), 0.0);
    assert!((env.reward(&[1.0, 0.0], &[0.0]) + 0.1).abs() < 1e-15);
}

#[test]
fn fixed_direction_encoding() {
    let env = Env::from_id("pendulum").unwrap();
    let mut rng = seeded(2);
    for _ in 0..3 {
        let c = sample_config(&env, ConfigMode::Fixed { deg: 45.0 }, &mut rng);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c.e[0] - h).abs() < 1e-15 && (c.e[1] - h).abs() < 1e-15);
    }
}

#[test]
fn per_step_directions_pass_chi_square() {
    let env = Env::from_id("pendulum").unwrap();
    let mut rng = seeded(3);
    let sampler = ConfigSampler::new(&env, ConfigMode::PerStepRandom, &mut rng);
    const BINS: usize = 36;
    const N: usize = 100_000;
    let mut counts = [0usize; BINS];
    for t in 0..N {
        let e = sampler.at(t, &mut rng).e;
        let deg = e[1].atan2(e[0]).to_degrees().rem_euclid(360.0);
        counts[((deg / 10.0) as usize).min(BINS - 1)] += 1;
    }
    let expect = N as f64 / BINS as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    // Upper 1% point of chi-square with 35 degrees of freedom.
    assert!(chi2 < 57.342, "chi2 = {chi2}");
}

#[test]
fn random_walk_actions_are_centered() {
    let env = Env::from_id("pendulum").unwrap();
    let data = collect_random(&env, 100_000, 4).unwrap();
    assert_eq!(data.len(), 100_000);
    let mean = data.items.iter().map(|t| t.a[0]).sum::<f64>() / data.len() as f64;
    // Uniform on [−10, 10]: sd 10/√3.
    let sd_mean = 10.0 / 3f64.sqrt() / (data.len() as f64).sqrt();
    assert!(mean.abs() < 3.0 * sd_mean, "mean {mean}");
    assert!(data.items.iter().all(|t| t.a[0].abs() <= 10.0));
}

#[test]
fn collection_is_reproducible_and_round_trips() {
    let env = Env::from_id("bicycle").unwrap();
    let a = collect_random(&env, 777, 5).unwrap();
    let b = collect_random(&env, 777, 5).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.trans");
    a.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, a);
    assert!(collect_random(&env, 0, 5).is_err());
}

proptest! {
    #[test]
    fn angles_stay_wrapped(th in -3.1f64..3.1, om in -20.0f64..20.0, u in -10.0f64..10.0, deg in 0.0f64..360.0) {
        let env = Env::from_id("pendulum").unwrap();
        let e = EnvConfig::directional(1.0, deg).e;
        let next = env.step_x(&[th, om], &[u], &e).unwrap();
        prop_assert!(next[0] > -std::f64::consts::PI && next[0] <= std::f64::consts::PI);
    }

    #[test]
    fn every_env_steps_to_finite_states(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        for id in ENVS {
            let env = Env::from_id(id).unwrap();
            let x = env.reset(&mut rng).x;
            let a = env.action_space().sample(&mut rng);
            let e = sample_config(&env, ConfigMode::PerEpisodeRandom, &mut rng).e;
            let next = env.step_x(&x, &a, &e).unwrap();
            prop_assert!(next.iter().all(|v| v.is_finite()));
        }
    }
}
