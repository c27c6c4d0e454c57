use std::path::Path;

use serde_json::json;

use crate::envs::{ConfigMode, ConfigSampler, Dims, Env};
use crate::error::ensure;
use crate::rng::stream;
use crate::{io, Error, Result};

/// One environment step `(x, e, a, x_next)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub x: Vec<f64>,
    pub e: Vec<f64>,
    pub a: Vec<f64>,
    pub x_next: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub env_id: String,
    pub dims: Dims,
    pub seed: u64,
    pub items: Vec<Transition>,
}

/// Independent collection shards. Fixed so the data does not depend on
/// the number of worker threads.
const SHARDS: usize = 16;
/// Episode horizon of the random walk.
pub const COLLECT_HORIZON: usize = 200;

/// Random-walk data with `e` redrawn at every step.
pub fn collect_random(env: &Env, num_steps: usize, seed: u64) -> Result<Dataset> {
    collect_with_mode(env, num_steps, ConfigMode::PerStepRandom, seed)
}

/// Random-walk data: uniform actions, configurations drawn under `mode`,
/// episodes reset when the state leaves the collection region or after
/// [`COLLECT_HORIZON`] steps.
pub fn collect_with_mode(env: &Env, num_steps: usize, mode: ConfigMode, seed: u64) -> Result<Dataset> {
    ensure!(num_steps >= 1, Contract, "collect_random needs at least one step");
    let space = env.action_space();
    let shards = crate::par::par_map_range(SHARDS, |s| {
        let count = num_steps / SHARDS + usize::from(s < num_steps % SHARDS);
        let mut rng = stream(seed, "collect", s as u64);
        let mut out = Vec::with_capacity(count);
        let mut x = env.reset_collect(&mut rng);
        let mut sampler = ConfigSampler::new(env, mode, &mut rng);
        let mut t = 0;
        while out.len() < count {
            let e = sampler.at(t, &mut rng).e;
            let a = space.sample(&mut rng);
            let x_next = env.step_x(&x, &a, &e)?;
            out.push(Transition { x: x.clone(), e, a, x_next: x_next.clone() });
            t += 1;
            if t >= COLLECT_HORIZON || !env.collect_ok(&x_next) {
                x = env.reset_collect(&mut rng);
                sampler = ConfigSampler::new(env, mode, &mut rng);
                t = 0;
            } else {
                x = x_next;
            }
        }
        Ok::<_, Error>(out)
    });
    let mut items = Vec::with_capacity(num_steps);
    for s in shards {
        items.extend(s?);
    }
    Ok(Dataset { env_id: env.id().to_string(), dims: env.dims(), seed, items })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn record_len(&self) -> usize {
        2 * self.dims.n + self.dims.k + self.dims.m
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut flat = Vec::with_capacity(self.len() * self.record_len());
        for t in &self.items {
            flat.extend_from_slice(&t.x);
            flat.extend_from_slice(&t.e);
            flat.extend_from_slice(&t.a);
            flat.extend_from_slice(&t.x_next);
        }
        let header = json!({
            "env": self.env_id,
            "n": self.dims.n,
            "m": self.dims.m,
            "k": self.dims.k,
            "count": self.len(),
            "seed": self.seed,
            "record": ["x", "e", "a", "x_next"],
        });
        io::encode("trans", &header, &[&flat])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = io::decode(bytes)?;
        ensure!(c.kind == "trans", Format, "expected trans artifact, found {}", c.kind);
        let h = &c.header;
        let get = |k: &str| h[k].as_u64().map(|v| v as usize).ok_or_else(|| Error::Format(format!("header field {k} missing")));
        let dims = Dims { n: get("n")?, m: get("m")?, k: get("k")? };
        let count = get("count")?;
        let env_id = h["env"].as_str().ok_or_else(|| Error::Format("header field env missing".into()))?.to_string();
        let seed = h["seed"].as_u64().ok_or_else(|| Error::Format("header field seed missing".into()))?;
        ensure!(c.sections.len() == 1, Format, "trans artifact needs one section");
        let rl = 2 * dims.n + dims.k + dims.m;
        let flat = &c.sections[0];
        ensure!(flat.len() == count * rl, Format, "trans payload {} != {count} x {rl}", flat.len());
        let items = flat
            .chunks_exact(rl.max(1))
            .map(|r| {
                let (x, r) = r.split_at(dims.n);
                let (e, r) = r.split_at(dims.k);
                let (a, xn) = r.split_at(dims.m);
                Transition { x: x.to_vec(), e: e.to_vec(), a: a.to_vec(), x_next: xn.to_vec() }
            })
            .collect();
        Ok(Self { env_id, dims, seed, items })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(d) = path.parent() {
            std::fs::create_dir_all(d)?;
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Deterministic `(train, held_out)` split; `holdout` is the held-out fraction.
    pub fn split(&self, holdout: f64, seed: u64) -> (Vec<&Transition>, Vec<&Transition>) {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut stream(seed, "split", 0));
        let n_hold = ((self.len() as f64) * holdout).round() as usize;
        let n_hold = n_hold.min(self.len().saturating_sub(1));
        let (h, t) = idx.split_at(n_hold);
        (t.iter().map(|&i| &self.items[i]).collect(), h.iter().map(|&i| &self.items[i]).collect())
    }
}
