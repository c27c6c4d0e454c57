//! Ground-truth control-affine simulators.
//!
//! Every model is a discrete map `x' = f(x, e) + g(x, e) a` obtained by one
//! Euler step, so [`Env::true_f_g`] reproduces [`Env::step`] exactly (up to
//! angle wrapping, which `step` applies and `true_f_g` does not).

mod bicycle;
mod linear;
mod pendulum;
mod planar;

use std::f64::consts::{PI, TAU};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use bicycle::BicycleParams;
pub use linear::LinearParams;
pub use pendulum::{pendulum_energy, PendulumParams, PendulumTask};
pub use planar::PlanarParams;

use crate::error::ensure;
use crate::rng::Rng;
use crate::safeguard::AffineBarrier;
use crate::tensor::DenseMatrix;
use crate::{Error, Result};

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        PI
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// State dimension.
    pub n: usize,
    /// Action dimension.
    pub m: usize,
    /// Environment-configuration dimension.
    pub k: usize,
}

/// Axis-aligned action box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ActionSpace {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        ensure!(lo.len() == hi.len() && !lo.is_empty(), Contract, "action bounds length mismatch");
        ensure!(lo.iter().zip(&hi).all(|(l, h)| l < h), Contract, "action box requires lo < hi");
        Ok(Self { lo, hi })
    }

    pub fn symmetric(bound: &[f64]) -> Self {
        Self { lo: bound.iter().map(|b| -b).collect(), hi: bound.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn clip(&self, a: &[f64]) -> Vec<f64> {
        a.iter().zip(self.lo.iter().zip(&self.hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect()
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim() && a.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn half_width(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (h - l)).collect()
    }

    /// `max_{a ∈ box} ‖a‖₁`.
    pub fn max_l1(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| l.abs().max(h.abs())).sum()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| rng.random_range(*l..=*h)).collect()
    }
}

/// Environment configuration `e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub e: Vec<f64>,
}

impl EnvConfig {
    /// `magnitude · (cos α, sin α)` with `α` in degrees.
    pub fn directional(magnitude: f64, deg: f64) -> Self {
        let a = deg.to_radians();
        Self { e: vec![magnitude * a.cos(), magnitude * a.sin()] }
    }

    pub fn zero(k: usize) -> Self {
        Self { e: vec![0.0; k] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub x: Vec<f64>,
    pub t: usize,
}

/// How `e` evolves during an episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ConfigMode {
    /// Fresh uniform direction at every step.
    PerStepRandom,
    /// One uniform direction per episode.
    PerEpisodeRandom,
    /// Constant direction, degrees.
    Fixed { deg: f64 },
    /// Direction rotating linearly with the step index.
    Schedule { start_deg: f64, deg_per_step: f64 },
}

/// Draws configurations for one episode under a [`ConfigMode`].
#[derive(Clone, Debug)]
pub struct ConfigSampler {
    mode: ConfigMode,
    magnitude: f64,
    k: usize,
    episode_deg: f64,
}

impl ConfigSampler {
    pub fn new(env: &Env, mode: ConfigMode, rng: &mut Rng) -> Self {
        let episode_deg = rng.random_range(0.0..360.0);
        Self { mode, magnitude: env.disturbance_magnitude(), k: env.dims().k, episode_deg }
    }

    pub fn at(&self, t: usize, rng: &mut Rng) -> EnvConfig {
        if self.k != 2 {
            return EnvConfig::zero(self.k);
        }
        let deg = match self.mode {
            ConfigMode::PerStepRandom => rng.random_range(0.0..360.0),
            ConfigMode::PerEpisodeRandom => self.episode_deg,
            ConfigMode::Fixed { deg } => deg,
            ConfigMode::Schedule { start_deg, deg_per_step } => start_deg + deg_per_step * t as f64,
        };
        EnvConfig::directional(self.magnitude, deg)
    }
}

/// One draw of `e` under `mode` at step 0.
pub fn sample_config(env: &Env, mode: ConfigMode, rng: &mut Rng) -> EnvConfig {
    let s = ConfigSampler::new(env, mode, rng);
    s.at(0, rng)
}

/// A constraint on the state. Affine barriers are the filter's language;
/// disks describe round hazards for the safety check itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Constraint {
    Affine(AffineBarrier),
    /// `‖(x_i, x_j) − center‖ − radius ≥ 0`.
    OutsideDisk { dims: [usize; 2], center: [f64; 2], radius: f64 },
}

impl Constraint {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Constraint::Affine(b) => b.value(x),
            Constraint::OutsideDisk { dims, center, radius } => {
                (x[dims[0]] - center[0]).hypot(x[dims[1]] - center[1]) - radius
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    /// Safe iff every constraint holds (intersection).
    All,
    /// Safe iff some constraint holds (union, e.g. either side of a band).
    Any,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafeSetSpec {
    pub label: String,
    pub constraints: Vec<Constraint>,
    pub combine: Combine,
}

/// `(is_safe, margin)`. For intersections the margin is the minimum
/// constraint value, for unions the maximum; safe iff margin ≥ 0.
pub fn check_safe(spec: &SafeSetSpec, x: &[f64]) -> (bool, f64) {
    let vals = spec.constraints.iter().map(|c| c.value(x));
    let h = match spec.combine {
        Combine::All => vals.fold(f64::INFINITY, f64::min),
        Combine::Any => vals.fold(f64::NEG_INFINITY, f64::max),
    };
    (h >= 0.0, h)
}

/// How an episode counts as a success.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SuccessRule {
    /// Goal predicate holds on each of the last `steps` states of a full-length episode.
    FinalWindow { steps: usize },
    /// Goal predicate holds for `steps` consecutive states; the episode ends there.
    Hold { steps: usize },
    /// Goal predicate holds once; the episode ends there.
    Reach,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Success,
    Timeout,
    Violation,
}

/// One step of an episode. `x` and `e` are the state and configuration the
/// action was chosen in; `h_min` and `violation` describe the state the
/// step led to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub x: Vec<f64>,
    pub e: Vec<f64>,
    pub a_raw: Vec<f64>,
    pub a_safe: Vec<f64>,
    pub r: f64,
    pub h_min: f64,
    pub violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
    pub final_x: Vec<f64>,
    pub terminal: Terminal,
}

impl EpisodeLog {
    pub fn violated(&self) -> bool {
        self.steps.iter().any(|s| s.violation)
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.r).sum()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Fraction of steps where the filter changed the action.
    pub fn filter_activity(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        let changed = self.steps.iter().filter(|s| s.a_raw != s.a_safe).count();
        changed as f64 / self.steps.len() as f64
    }
}

/// A simulator together with its task definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Env {
    Pendulum(PendulumParams),
    Planar(PlanarParams),
    Bicycle(BicycleParams),
    Linear(LinearParams),
}

impl Env {
    /// Known identifiers: `pendulum`, `pendulum_hazard`, `planar`,
    /// `bicycle`, `bicycle_real`, `linear`.
    pub fn from_id(id: &str) -> Result<Self> {
        Ok(match id {
            "pendulum" => Env::Pendulum(PendulumParams::default()),
            "pendulum_hazard" => Env::Pendulum(PendulumParams { task: PendulumTask::Hazard, ..Default::default() }),
            "planar" => Env::Planar(PlanarParams::default()),
            "bicycle" => Env::Bicycle(BicycleParams::sim()),
            "bicycle_real" => Env::Bicycle(BicycleParams::real()),
            "linear" => Env::Linear(LinearParams::default()),
            other => return Err(Error::Config(format!("unknown env id {other:?}"))),
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            Env::Pendulum(p) => match p.task {
                PendulumTask::Balance => "pendulum",
                PendulumTask::Hazard => "pendulum_hazard",
            },
            Env::Planar(_) => "planar",
            Env::Bicycle(p) if p.real => "bicycle_real",
            Env::Bicycle(_) => "bicycle",
            Env::Linear(_) => "linear",
        }
    }

    pub fn dims(&self) -> Dims {
        match self {
            Env::Pendulum(_) => Dims { n: 2, m: 1, k: 2 },
            Env::Planar(_) => Dims { n: 4, m: 2, k: 2 },
            Env::Bicycle(_) => Dims { n: 4, m: 2, k: 2 },
            Env::Linear(p) => p.dims(),
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            Env::Pendulum(p) => p.dt,
            Env::Planar(p) => p.dt,
            Env::Bicycle(p) => p.dt,
            Env::Linear(p) => p.dt,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            Env::Pendulum(p) => ActionSpace::symmetric(&[p.torque_max]),
            Env::Planar(p) => ActionSpace::symmetric(&[p.force_max, p.force_max]),
            Env::Bicycle(p) => ActionSpace { lo: vec![0.0, -p.steer_max], hi: vec![p.speed_max, p.steer_max] },
            Env::Linear(p) => ActionSpace::symmetric(&p.action_max),
        }
    }

    /// State indices holding angles (wrapped by `step`).
    pub fn angle_dims(&self) -> Vec<usize> {
        match self {
            Env::Pendulum(_) => vec![0],
            Env::Bicycle(_) => vec![2],
            _ => vec![],
        }
    }

    /// Position coordinates the dynamics do not depend on.
    pub fn translation_dims(&self) -> Vec<usize> {
        match self {
            Env::Planar(_) | Env::Bicycle(_) => vec![0, 1],
            _ => vec![],
        }
    }

    pub fn disturbance_magnitude(&self) -> f64 {
        match self {
            Env::Pendulum(p) => p.wind,
            Env::Planar(p) => p.force_mag,
            Env::Bicycle(p) => p.drag,
            Env::Linear(p) => p.e_mag,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Env::Pendulum(p) => p.horizon,
            Env::Planar(p) => p.horizon,
            Env::Bicycle(p) => p.horizon,
            Env::Linear(p) => p.horizon,
        }
    }

    fn check_inputs(&self, x: &[f64], a: Option<&[f64]>, e: &[f64]) -> Result<()> {
        let d = self.dims();
        ensure!(x.len() == d.n, Contract, "{}: state length {} != {}", self.id(), x.len(), d.n);
        ensure!(e.len() == d.k, Contract, "{}: config length {} != {}", self.id(), e.len(), d.k);
        if let Some(a) = a {
            ensure!(a.len() == d.m, Contract, "{}: action length {} != {}", self.id(), a.len(), d.m);
        }
        Ok(())
    }

    /// Drift `f(x, e)` and actuation `g(x, e)` of the discrete map, without
    /// angle wrapping.
    pub fn true_f_g(&self, x: &[f64], e: &[f64]) -> Result<(Vec<f64>, DenseMatrix)> {
        self.check_inputs(x, None, e)?;
        Ok(match self {
            Env::Pendulum(p) => p.f_g(x, e),
            Env::Planar(p) => p.f_g(x, e),
            Env::Bicycle(p) => p.f_g(x, e),
            Env::Linear(p) => p.f_g(x, e),
        })
    }

    /// Next state from raw vectors; angles wrapped.
    pub fn step_x(&self, x: &[f64], a: &[f64], e: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(x, Some(a), e)?;
        let (f, g) = self.true_f_g(x, e)?;
        let ga = g.matvec(a)?;
        let mut next: Vec<f64> = f.iter().zip(&ga).map(|(u, v)| u + v).collect();
        for i in self.angle_dims() {
            next[i] = wrap_angle(next[i]);
        }
        ensure!(next.iter().all(|v| v.is_finite()), Numeric, "{}: non-finite state", self.id());
        Ok(next)
    }

    pub fn step(&self, s: &EnvState, a: &[f64], cfg: &EnvConfig) -> Result<EnvState> {
        Ok(EnvState { x: self.step_x(&s.x, a, &cfg.e)?, t: s.t + 1 })
    }

    pub fn reward(&self, x: &[f64], a: &[f64]) -> f64 {
        match self {
            Env::Pendulum(p) => p.reward(x, a),
            Env::Planar(p) => p.reward(x),
            Env::Bicycle(p) => p.reward(x),
            Env::Linear(_) => -x.iter().map(|v| v * v).sum::<f64>(),
        }
    }

    /// The set whose membership defines a violation.
    pub fn safe_set(&self) -> SafeSetSpec {
        match self {
            Env::Pendulum(p) => p.safe_set(),
            Env::Planar(p) => p.safe_set(),
            Env::Bicycle(p) => p.safe_set(),
            Env::Linear(p) => p.safe_set(),
        }
    }

    /// Affine barriers enforced by the filter at state `x`. Their joint
    /// superlevel set is contained in [`Env::safe_set`]; some are state
    /// dependent (active side of a band, tangent plane of a disk).
    pub fn filter_barriers(&self, x: &[f64], eta: f64) -> Vec<AffineBarrier> {
        match self {
            Env::Pendulum(p) => p.filter_barriers(x, eta),
            Env::Planar(p) => p.filter_barriers(x, eta),
            Env::Bicycle(p) => p.filter_barriers(eta),
            Env::Linear(p) => p.filter_barriers(eta),
        }
    }

    pub fn goal_reached(&self, x: &[f64]) -> bool {
        match self {
            Env::Pendulum(p) => p.goal_reached(x),
            Env::Planar(p) => p.goal_reached(x),
            Env::Bicycle(p) => p.goal_reached(x),
            Env::Linear(_) => x.iter().all(|v| v.abs() < 0.1),
        }
    }

    pub fn success_rule(&self) -> SuccessRule {
        match self {
            Env::Pendulum(p) => p.success_rule(),
            Env::Planar(_) | Env::Bicycle(_) => SuccessRule::Reach,
            Env::Linear(_) => SuccessRule::FinalWindow { steps: 20 },
        }
    }

    /// Initial state of a task episode.
    pub fn reset(&self, rng: &mut Rng) -> EnvState {
        let x = match self {
            Env::Pendulum(p) => p.reset(rng),
            Env::Planar(p) => p.reset(rng),
            Env::Bicycle(p) => p.reset(rng),
            Env::Linear(p) => p.reset(rng),
        };
        EnvState { x, t: 0 }
    }

    /// Broad initial-state distribution used for random-walk data collection.
    pub fn reset_collect(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            Env::Pendulum(p) => p.reset_collect(rng),
            Env::Planar(p) => p.reset_collect(rng),
            Env::Bicycle(p) => p.reset_collect(rng),
            Env::Linear(p) => p.reset(rng),
        }
    }

    /// Whether random-walk collection may continue from `x`.
    pub fn collect_ok(&self, x: &[f64]) -> bool {
        match self {
            Env::Pendulum(p) => check_safe(&p.safe_set(), x).0,
            Env::Planar(p) => p.in_arena(x),
            Env::Bicycle(p) => p.in_arena(x),
            Env::Linear(p) => x.iter().all(|v| v.abs() <= p.collect_bound),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn unknown_id_is_config_error() {
        assert!(matches!(Env::from_id("cartpole"), Err(Error::Config(_))));
    }

    #[test]
    fn step_equals_f_plus_g_a() {
        let mut rng = seeded(1);
        for id in ["pendulum", "pendulum_hazard", "planar", "bicycle", "bicycle_real", "linear"] {
            let env = Env::from_id(id).unwrap();
            let sp = env.action_space();
            for _ in 0..1000 {
                let x = env.reset_collect(&mut rng);
                let e = sample_config(&env, ConfigMode::PerStepRandom, &mut rng).e;
                let a = sp.sample(&mut rng);
                let next = env.step_x(&x, &a, &e).unwrap();
                let (f, g) = env.true_f_g(&x, &e).unwrap();
                let ga = g.matvec(&a).unwrap();
                for i in 0..next.len() {
                    let mut d = next[i] - (f[i] + ga[i]);
                    if env.angle_dims().contains(&i) {
                        d = wrap_angle(d);
                    }
                    assert!(d.abs() < 1e-12, "{id} dim {i}: {d}");
                }
            }
        }
    }

    #[test]
    fn zero_action_gives_drift() {
        let env = Env::from_id("planar").unwrap();
        let x = vec![0.1, 0.2, 0.3, -0.4];
        let e = vec![0.2, -0.1];
        let (f, _) = env.true_f_g(&x, &e).unwrap();
        assert_eq!(env.step_x(&x, &[0.0, 0.0], &e).unwrap(), f);
    }

    #[test]
    fn fixed_mode_is_constant() {
        let env = Env::from_id("pendulum").unwrap();
        let mut rng = seeded(0);
        let s = ConfigSampler::new(&env, ConfigMode::Fixed { deg: 45.0 }, &mut rng);
        let w = 1.0 / 2f64.sqrt();
        for t in 0..5 {
            let c = s.at(t, &mut rng);
            assert!((c.e[0] - w).abs() < 1e-12 && (c.e[1] - w).abs() < 1e-12);
        }
    }

    #[test]
    fn per_step_random_is_reproducible() {
        let env = Env::from_id("pendulum").unwrap();
        let draw = |seed| {
            let mut rng = seeded(seed);
            let s = ConfigSampler::new(&env, ConfigMode::PerStepRandom, &mut rng);
            (0..20).map(|t| s.at(t, &mut rng).e).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn action_box_helpers() {
        let s = ActionSpace::new(vec![0.0, -0.5], vec![2.0, 0.5]).unwrap();
        assert_eq!(s.max_l1(), 2.5);
        assert_eq!(s.clip(&[3.0, -1.0]), vec![2.0, -0.5]);
        assert!(ActionSpace::new(vec![1.0], vec![1.0]).is_err());
    }
}
