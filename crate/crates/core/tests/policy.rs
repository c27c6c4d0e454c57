use proptest::prelude::*;
use safedpa::dynlearn::OracleDynamics;
use safedpa::envs::{ConfigMode, Env, EnvConfig, Terminal};
use safedpa::policy::{load_episodes, rollout, save_episodes, train_pg, Policy, RlHyper, RolloutSpec};
use safedpa::rng::seeded;
use safedpa::safeguard::{LatentSource, SafeDpaRuntime};

fn pendulum() -> (Env, OracleDynamics) {
    let env = Env::from_id("pendulum").unwrap();
    let oracle = OracleDynamics { env: env.clone() };
    (env, oracle)
}

#[test]
fn analytic_pendulum_is_idle_at_rest_without_wind() {
    let (env, oracle) = pendulum();
    let pi = Policy::analytic(&env).unwrap();
    let a = pi.act(&[0.0, 0.0], Some(&[0.0, 0.0]), Some(&oracle), &mut seeded(0)).unwrap();
    assert!(a[0].abs() < 1e-9, "{a:?}");
}

#[test]
fn analytic_pendulum_cancels_horizontal_wind() {
    let (env, oracle) = pendulum();
    let Env::Pendulum(p) = &env else { unreachable!() };
    let pi = Policy::analytic(&env).unwrap();
    let z = EnvConfig::directional(1.0, 0.0).e;
    let a = pi.act(&[0.0, 0.0], Some(&z), Some(&oracle), &mut seeded(0)).unwrap();
    // Torque from a unit push at the bob is wind · length.
    assert!((a[0] + p.length).abs() < 1e-6, "{a:?}");
}

#[test]
fn analytic_controller_with_true_latent_stays_near_upright() {
    let (env, oracle) = pendulum();
    let pi = Policy::analytic(&env).unwrap();
    let rt = SafeDpaRuntime { env: &env, policy: &pi, model: &oracle, latent: LatentSource::Oracle, filter: None };
    for deg in (0..8).map(|i| 45.0 * i as f64) {
        let mut spec = RolloutSpec::new(ConfigMode::Fixed { deg }, 100, 11);
        spec.horizon = Some(300);
        for log in rollout(&rt, &spec).unwrap() {
            assert_ne!(log.terminal, Terminal::Violation);
            let worst = log.steps.iter().map(|s| s.x[0].abs()).fold(0.0, f64::max);
            assert!(worst < 10f64.to_radians(), "direction {deg}: peak angle {}", worst.to_degrees());
        }
    }
}

#[test]
fn rollouts_are_reproducible_and_round_trip() {
    let (env, oracle) = pendulum();
    let pi = Policy::random(&env);
    let rt = SafeDpaRuntime { env: &env, policy: &pi, model: &oracle, latent: LatentSource::Oracle, filter: None };
    let mut spec = RolloutSpec::new(ConfigMode::PerStepRandom, 6, 3);
    spec.horizon = Some(80);
    let a = rollout(&rt, &spec).unwrap();
    let b = rollout(&rt, &spec).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().any(|l| l.terminal == Terminal::Violation), "random torque should topple some episodes");
    for log in &a {
        assert!(log.steps.iter().all(|s| s.a_raw == s.a_safe));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.epis");
    save_episodes(&path, &a).unwrap();
    assert_eq!(load_episodes(&path).unwrap(), a);

    spec.episodes = 0;
    let none = rollout(&rt, &spec).unwrap();
    assert!(none.is_empty());
    save_episodes(&path, &none).unwrap();
    assert!(load_episodes(&path).unwrap().is_empty());
}

#[test]
fn neural_checkpoint_round_trip() {
    let (env, _) = pendulum();
    let pi = Policy::neural(&env, 2, vec![16], &mut seeded(5)).unwrap();
    let back = Policy::from_checkpoint(&pi.to_checkpoint(5)).unwrap();
    assert_eq!(back, pi);
    assert!(Policy::analytic(&Env::from_id("linear").unwrap()).is_err());
}

#[test]
fn policy_gradient_improves_balance_return() {
    let (env, oracle) = pendulum();
    let mut pi = Policy::neural(&env, 2, vec![32], &mut seeded(6)).unwrap();
    let h = RlHyper { total_steps: 120_000, steps_per_update: 2000, horizon: 200, lr: 1e-2, seed: 6, ..RlHyper::default() };
    let rep = train_pg(&env, &mut pi, &oracle, &h).unwrap();
    assert_eq!(rep.return_curve.len(), 60);
    assert_eq!(rep.steps, 120_000);
    let head: f64 = rep.return_curve[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = rep.return_curve[55..].iter().sum::<f64>() / 5.0;
    assert!(tail > head, "return {head} -> {tail}");
    let mut random = Policy::random(&env);
    assert!(train_pg(&env, &mut random, &oracle, &h).is_err());
}

proptest! {
    #[test]
    fn actions_stay_in_the_box(seed in any::<u64>(), th in -3.0f64..3.0, om in -8.0f64..8.0, deg in 0.0f64..360.0) {
        let (env, oracle) = pendulum();
        let z = EnvConfig::directional(1.0, deg).e;
        let mut rng = seeded(seed);
        let mut neural = Policy::neural(&env, 2, vec![8], &mut rng).unwrap();
        neural.sigma = 3.0;
        for pi in [Policy::random(&env), Policy::analytic(&env).unwrap(), neural] {
            let a = pi.act(&[th, om], Some(&z), Some(&oracle), &mut rng).unwrap();
            prop_assert!(pi.space.contains(&a), "{:?} {:?}", pi.kind, a);
        }
    }
}
