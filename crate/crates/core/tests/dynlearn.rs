use safedpa::dynlearn::{collect_random, eval_dyn, train_dyn, DynArch, DynHyper, DynModel, OracleDynamics};
use safedpa::envs::Env;
use safedpa::rng::seeded;

#[test]
fn linear_system_is_fit_exactly_by_affine_heads() {
    let env = Env::from_id("linear").unwrap();
    let data = collect_random(&env, 4000, 1).unwrap();
    let arch = DynArch { latent_dim: 2, encoder_hidden: vec![], head_hidden: vec![], ..Default::default() };
    let mut model = DynModel::new(&env, &arch, false, &mut seeded(2)).unwrap();
    let hyper = DynHyper { arch, epochs: 300, batch_size: 128, lr: 1e-2, seed: 3, ..Default::default() };
    let rep = train_dyn(&data, &mut model, &hyper).unwrap();
    assert!(rep.heldout.mse < 1e-6, "held-out mse {}", rep.heldout.mse);
}

#[test]
fn empty_and_zero_requests_fail() {
    let env = Env::from_id("linear").unwrap();
    assert!(collect_random(&env, 0, 1).is_err());
    let mut d = collect_random(&env, 5, 1).unwrap();
    d.items.clear();
    let mut model = DynModel::new(&env, &DynArch::default(), false, &mut seeded(2)).unwrap();
    assert!(train_dyn(&d, &mut model, &DynHyper::default()).is_err());
}

#[test]
fn oracle_model_has_zero_residual() {
    let env = Env::from_id("pendulum").unwrap();
    let data = collect_random(&env, 500, 4).unwrap();
    let refs: Vec<_> = data.items.iter().collect();
    let ev = eval_dyn(&OracleDynamics { env: env.clone() }, &refs).unwrap();
    assert!(ev.max_l1 < 1e-12);
    let one = eval_dyn(&OracleDynamics { env }, &refs[..1]).unwrap();
    assert_eq!(one.q99_l1, one.max_l1);
}

