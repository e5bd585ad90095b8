//! Flow-matching action-chunk policy at toy scale.
//!
//! A small MLP `v(τ, X, o)` regresses the straight-line velocity `A − Z`
//! between noise `Z` and an action chunk `A`. Sampling integrates the field
//! with uniform Euler steps from `τ = 0` to `τ = 1`.

use crate::dataset::{ArrayBlock, DatasetError, Demonstration};
use crate::rng::{keyed_rng, stream};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Width of the sinusoidal `τ` embedding.
pub const TAU_EMBED: usize = 8;
pub const POLICY_FORMAT: &str = "mmdemo-policy";
pub const POLICY_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("no training data")]
    NoData,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// `τA + (1 − τ)Z`, elementwise.
pub fn interpolate(a: &[f64], z: &[f64], tau: f64) -> Vec<f64> {
    a.iter().zip(z).map(|(a, z)| tau * a + (1.0 - tau) * z).collect()
}

pub fn tau_embedding(tau: f64) -> [f64; TAU_EMBED] {
    let mut e = [0.0; TAU_EMBED];
    for k in 0..TAU_EMBED / 2 {
        let w = std::f64::consts::PI * (1 << k) as f64;
        e[2 * k] = (w * tau).sin();
        e[2 * k + 1] = (w * tau).cos();
    }
    e
}

/// Anything that can play the role of `v(τ, X, o)`.
pub trait VectorField {
    fn velocity(&self, tau: f64, x: &[f64], obs: &[f64]) -> Vec<f64>;
}

impl<F: Fn(f64, &[f64], &[f64]) -> Vec<f64>> VectorField for F {
    fn velocity(&self, tau: f64, x: &[f64], obs: &[f64]) -> Vec<f64> {
        self(tau, x, obs)
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowNet {
    pub obs_dim: usize,
    pub chunk_len: usize,
    /// Layer widths from input to output.
    pub sizes: Vec<usize>,
    /// Per layer: row-major weights `out × in`, then biases.
    pub params: Vec<f64>,
}

struct Cache {
    pre: Vec<DMatrix<f64>>,
    act: Vec<DMatrix<f64>>,
}

impl FlowNet {
    pub fn new(obs_dim: usize, chunk_len: usize, hidden: &[usize], seed: u64) -> Self {
        let mut sizes = vec![TAU_EMBED + chunk_len + obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(chunk_len);
        let mut rng = keyed_rng(seed, 0, stream::INIT);
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.gen_range(-bound..bound)));
            params.extend(std::iter::repeat(0.0).take(w[1]));
        }
        Self { obs_dim, chunk_len, sizes, params }
    }

    pub fn hidden(&self) -> &[usize] {
        &self.sizes[1..self.sizes.len() - 1]
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layer(&self, l: usize) -> (DMatrix<f64>, &[f64]) {
        let offset: usize = self.sizes.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum();
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let w = DMatrix::from_row_slice(o, i, &self.params[offset..offset + i * o]);
        (w, &self.params[offset + i * o..offset + i * o + o])
    }

    fn input(&self, taus: &[f64], xs: &[&[f64]], obs: &[&[f64]]) -> DMatrix<f64> {
        let b = taus.len();
        let mut m = DMatrix::zeros(self.sizes[0], b);
        for k in 0..b {
            let e = tau_embedding(taus[k]);
            let col = e.iter().chain(xs[k].iter()).chain(obs[k].iter());
            for (r, v) in col.enumerate() {
                m[(r, k)] = *v;
            }
        }
        m
    }

    fn forward_cached(&self, input: DMatrix<f64>) -> Cache {
        let layers = self.sizes.len() - 1;
        let mut pre = Vec::with_capacity(layers);
        let mut act = vec![input];
        for l in 0..layers {
            let (w, b) = self.layer(l);
            let mut z = &w * &act[l];
            for mut col in z.column_iter_mut() {
                for (v, bb) in col.iter_mut().zip(b) {
                    *v += bb;
                }
            }
            let a = if l + 1 < layers { z.map(silu) } else { z.clone() };
            pre.push(z);
            act.push(a);
        }
        Cache { pre, act }
    }

    /// Batched forward pass; returns one output row per example.
    pub fn forward(&self, taus: &[f64], xs: &[&[f64]], obs: &[&[f64]]) -> Vec<Vec<f64>> {
        let out = self.forward_cached(self.input(taus, xs, obs)).act.pop().expect("output layer");
        out.column_iter().map(|c| c.iter().copied().collect()).collect()
    }

    /// Gradient of `Σ_k ⟨dout_k, out_k⟩` with respect to the parameters.
    fn backward(&self, cache: &Cache, dout: DMatrix<f64>) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); layers];
        let mut delta = dout;
        for l in (0..layers).rev() {
            let a_prev = &cache.act[l];
            let gw = &delta * a_prev.transpose();
            let mut g = Vec::with_capacity(gw.len() + delta.nrows());
            for r in 0..gw.nrows() {
                g.extend(gw.row(r).iter());
            }
            g.extend(delta.column_sum().iter());
            grads[l] = g;
            if l > 0 {
                let (w, _) = self.layer(l);
                let mut back = w.transpose() * &delta;
                back.zip_apply(&cache.pre[l - 1], |d, z| *d *= silu_grad(z));
                delta = back;
            }
        }
        grads.concat()
    }
}

impl VectorField for FlowNet {
    fn velocity(&self, tau: f64, x: &[f64], obs: &[f64]) -> Vec<f64> {
        self.forward(&[tau], &[x], &[obs]).pop().expect("one example")
    }
}

/// A conditioning observation paired with a target chunk, both flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub chunk: Vec<f64>,
}

/// Loss and gradient for given `τ` and noise, averaged over the batch of
/// per-example squared norms.
pub fn fm_loss_fixed(net: &FlowNet, batch: &[&Sample], taus: &[f64], noise: &[Vec<f64>]) -> Result<(f64, Vec<f64>), FlowError> {
    if batch.is_empty() {
        return Err(FlowError::EmptyBatch);
    }
    for s in batch {
        if s.obs.len() != net.obs_dim || s.chunk.len() != net.chunk_len {
            return Err(FlowError::Dimension(format!(
                "sample ({}, {}) vs net ({}, {})",
                s.obs.len(),
                s.chunk.len(),
                net.obs_dim,
                net.chunk_len
            )));
        }
    }
    let xs: Vec<Vec<f64>> = batch.iter().zip(noise).zip(taus).map(|((s, z), t)| interpolate(&s.chunk, z, *t)).collect();
    let x_refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let o_refs: Vec<&[f64]> = batch.iter().map(|s| s.obs.as_slice()).collect();
    let cache = net.forward_cached(net.input(taus, &x_refs, &o_refs));
    let out = cache.act.last().expect("output");
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut dout = DMatrix::zeros(net.chunk_len, batch.len());
    for (k, s) in batch.iter().enumerate() {
        for r in 0..net.chunk_len {
            let e = out[(r, k)] - (s.chunk[r] - noise[k][r]);
            loss += e * e;
            dout[(r, k)] = 2.0 * e / n;
        }
    }
    Ok((loss / n, net.backward(&cache, dout)))
}

/// Draws `τ` from `{0, 1/levels, …, (levels−1)/levels}` and `Z ~ N(0, I)`.
pub fn draw_tau_noise(rng: &mut impl Rng, batch: usize, chunk_len: usize, levels: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let taus = (0..batch).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
    let noise = (0..batch).map(|_| (0..chunk_len).map(|_| rng.sample(StandardNormal)).collect()).collect();
    (taus, noise)
}

pub fn fm_loss(net: &FlowNet, batch: &[&Sample], levels: usize, seed: u64) -> Result<(f64, Vec<f64>), FlowError> {
    let mut rng = keyed_rng(seed, 0, stream::TRAIN_NOISE);
    let (taus, noise) = draw_tau_noise(&mut rng, batch.len(), net.chunk_len, levels);
    fm_loss_fixed(net, batch, &taus, &noise)
}

pub fn standard_normal(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = keyed_rng(seed, 0, stream::SAMPLE);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Euler integration of `field` from the given noise.
pub fn sample_actions_from(field: &impl VectorField, obs: &[f64], z: Vec<f64>, n_steps: usize) -> Vec<f64> {
    let mut x = z;
    let h = 1.0 / n_steps as f64;
    for k in 0..n_steps {
        let v = field.velocity(k as f64 * h, &x, obs);
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi += h * vi;
        }
    }
    x
}

pub fn sample_actions(field: &impl VectorField, obs: &[f64], chunk_len: usize, n_steps: usize, seed: u64) -> Vec<f64> {
    sample_actions_from(field, obs, standard_normal(chunk_len, seed), n_steps.max(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub peak_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Number of training `τ` levels.
    pub levels: usize,
    pub inference_steps: usize,
    pub horizon: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            total_steps: 5000,
            peak_lr: 1e-4,
            min_lr: 1e-6,
            warmup_steps: 500,
            weight_decay: 1e-6,
            clip_norm: 10.0,
            levels: 100,
            inference_steps: 10,
            horizon: 8,
            hidden: vec![128, 128, 128],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: &str| Err(FlowError::Config(m.into()));
        if self.batch_size == 0 || self.total_steps == 0 || self.levels == 0 || self.inference_steps == 0 || self.horizon == 0 {
            return bad("batch size, steps, levels, inference steps and horizon must be positive");
        }
        if self.warmup_steps >= self.total_steps {
            return bad("warmup must be shorter than training");
        }
        if !(self.peak_lr > 0.0 && self.min_lr > 0.0 && self.min_lr <= self.peak_lr) {
            return bad("need 0 < min_lr ≤ peak_lr");
        }
        if !(self.weight_decay >= 0.0 && self.clip_norm > 0.0) {
            return bad("weight decay must be non-negative and clip norm positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }

    /// Linear warmup to the peak, then cosine decay reaching `min_lr` at the last step.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak_lr * step as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - 1 - self.warmup_steps) as f64;
        if span <= 0.0 {
            return self.min_lr;
        }
        let p = ((step - self.warmup_steps) as f64 / span).min(1.0);
        self.min_lr + 0.5 * (self.peak_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, wd: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let update = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
            params[i] -= lr * (update + wd * params[i]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Sim,
    Real,
}

/// Source and index of every element of the batch at `step`.
pub fn draw_batch(seed: u64, step: usize, batch: usize, n_sim: usize, n_real: usize) -> Vec<(Source, usize)> {
    let mut rng = keyed_rng(seed, step as u64, stream::TRAIN_BATCH);
    (0..batch)
        .map(|_| {
            let src = match (n_sim > 0, n_real > 0) {
                (true, true) => {
                    if rng.gen_bool(0.5) {
                        Source::Sim
                    } else {
                        Source::Real
                    }
                }
                (true, false) => Source::Sim,
                _ => Source::Real,
            };
            let n = if src == Source::Sim { n_sim } else { n_real };
            (src, rng.gen_range(0..n))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Trains `net` on samples drawn from `sim` and `real` with equal probability.
pub fn co_train(mut net: FlowNet, sim: &[Sample], real: &[Sample], cfg: &TrainConfig) -> Result<(FlowNet, Vec<LossRecord>), FlowError> {
    cfg.validate()?;
    if sim.is_empty() && real.is_empty() {
        return Err(FlowError::NoData);
    }
    let mut opt = AdamW::new(net.num_params());
    let mut history = Vec::with_capacity(cfg.total_steps);
    for step in 0..cfg.total_steps {
        let picks = draw_batch(cfg.seed, step, cfg.batch_size, sim.len(), real.len());
        let batch: Vec<&Sample> = picks.iter().map(|(s, i)| if *s == Source::Sim { &sim[*i] } else { &real[*i] }).collect();
        let mut rng = keyed_rng(cfg.seed, step as u64, stream::TRAIN_NOISE);
        let (taus, noise) = draw_tau_noise(&mut rng, batch.len(), net.chunk_len, cfg.levels);
        let (loss, mut grad) = fm_loss_fixed(&net, &batch, &taus, &noise)?;
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > cfg.clip_norm {
            let s = cfg.clip_norm / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        let lr = cfg.lr_at(step);
        opt.step(&mut net.params, &grad, lr, cfg.weight_decay);
        history.push(LossRecord { step, loss, lr });
    }
    Ok((net, history))
}

pub fn write_loss_csv(history: &[LossRecord], path: &Path) -> Result<(), FlowError> {
    let io = |source| FlowError::Io { path: path.to_path_buf(), source };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "step,loss,lr").map_err(io)?;
    for r in history {
        writeln!(f, "{},{},{}", r.step, r.loss, r.lr).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Per-dimension affine normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0.0;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1.0;
            for j in 0..dim {
                sum[j] += r[j];
                sq[j] += r[j] * r[j];
            }
        }
        if n == 0.0 {
            return Self::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                if var.sqrt() < 1e-6 { 1.0 } else { var.sqrt() }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        x.iter().enumerate().map(|(i, v)| (v - self.mean[i % d]) / self.std[i % d]).collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        x.iter().enumerate().map(|(i, v)| v * self.std[i % d] + self.mean[i % d]).collect()
    }
}

/// Chunks every timestep of `demo`, padding past the end with the last action.
pub fn chunk_samples(demo: &Demonstration, horizon: usize) -> Vec<Sample> {
    let n = demo.steps.len();
    (0..n)
        .map(|t| Sample {
            obs: demo.steps[t].observation.iter().map(|v| *v as f64).collect(),
            chunk: (0..horizon).flat_map(|h| demo.steps[(t + h).min(n - 1)].action.iter().map(|v| *v as f64)).collect(),
        })
        .collect()
}

/// Anything that maps an observation to an `H × D` chunk.
pub trait ChunkPolicy {
    fn act(&self, obs: &[f64], seed: u64) -> Vec<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowPolicy {
    pub net: FlowNet,
    pub obs_norm: Normalizer,
    pub act_norm: Normalizer,
    pub horizon: usize,
    pub action_dim: usize,
    pub inference_steps: usize,
}

impl ChunkPolicy for FlowPolicy {
    fn act(&self, obs: &[f64], seed: u64) -> Vec<Vec<f64>> {
        let o = self.obs_norm.apply(obs);
        let x = sample_actions(&self.net, &o, self.net.chunk_len, self.inference_steps, seed);
        self.act_norm.invert(&x).chunks(self.action_dim).map(<[f64]>::to_vec).collect()
    }
}

/// Fits normalizers on both sources, then co-trains a fresh network.
pub fn train_policy(sim: &[Demonstration], real: &[Demonstration], cfg: &TrainConfig) -> Result<(FlowPolicy, Vec<LossRecord>), FlowError> {
    cfg.validate()?;
    let all: Vec<&Demonstration> = sim.iter().chain(real).collect();
    let first = all.first().ok_or(FlowError::NoData)?;
    let (obs_dim, action_dim) = (first.observation_dim(), first.action_dim());
    if all.iter().any(|d| d.observation_dim() != obs_dim || d.action_dim() != action_dim) {
        return Err(FlowError::Dimension("demonstrations disagree on observation or action width".into()));
    }
    let to_samples = |ds: &[Demonstration]| ds.iter().flat_map(|d| chunk_samples(d, cfg.horizon)).collect::<Vec<_>>();
    let (mut s, mut r) = (to_samples(sim), to_samples(real));
    let obs_norm = Normalizer::fit(s.iter().chain(&r).map(|x| x.obs.as_slice()), obs_dim);
    let act_norm = Normalizer::fit(s.iter().chain(&r).flat_map(|x| x.chunk.chunks(action_dim)), action_dim);
    for x in s.iter_mut().chain(r.iter_mut()) {
        x.obs = obs_norm.apply(&x.obs);
        x.chunk = act_norm.apply(&x.chunk);
    }
    let net = FlowNet::new(obs_dim, cfg.horizon * action_dim, &cfg.hidden, cfg.seed);
    let (net, history) = co_train(net, &s, &r, cfg)?;
    Ok((FlowPolicy { net, obs_norm, act_norm, horizon: cfg.horizon, action_dim, inference_steps: cfg.inference_steps }, history))
}

/// Writes a policy checkpoint directory: a manifest plus array blocks.
pub fn save_policy(policy: &FlowPolicy, cfg: &TrainConfig, dir: &Path) -> Result<(), FlowError> {
    let io = |source| FlowError::Io { path: dir.to_path_buf(), source };
    std::fs::create_dir_all(dir).map_err(io)?;
    ArrayBlock::from_f64(vec![policy.net.num_params()], &policy.net.params)?.write(&dir.join("params.mbrt"))?;
    let norm = |n: &Normalizer| ArrayBlock::from_f64(vec![2, n.mean.len()], &[n.mean.clone(), n.std.clone()].concat());
    norm(&policy.obs_norm)?.write(&dir.join("obs_norm.mbrt"))?;
    norm(&policy.act_norm)?.write(&dir.join("act_norm.mbrt"))?;
    let hidden: Vec<String> = policy.net.hidden().iter().map(usize::to_string).collect();
    let text = format!(
        "format = {POLICY_FORMAT}\nversion = {POLICY_VERSION}\nobs_dim = {}\naction_dim = {}\nhorizon = {}\nhidden = {}\ninference_steps = {}\nseed = {}\nbatch_size = {}\ntotal_steps = {}\npeak_lr = {}\nmin_lr = {}\nwarmup_steps = {}\nweight_decay = {}\nclip_norm = {}\nlevels = {}\n",
        policy.net.obs_dim,
        policy.action_dim,
        policy.horizon,
        hidden.join(","),
        policy.inference_steps,
        cfg.seed,
        cfg.batch_size,
        cfg.total_steps,
        cfg.peak_lr,
        cfg.min_lr,
        cfg.warmup_steps,
        cfg.weight_decay,
        cfg.clip_norm,
        cfg.levels
    );
    let path = dir.join("manifest.txt");
    std::fs::write(&path, text).map_err(|source| FlowError::Io { path, source })
}

pub fn load_policy(dir: &Path) -> Result<FlowPolicy, FlowError> {
    let path = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&path).map_err(|source| FlowError::Io { path: path.clone(), source })?;
    let m: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once(" = ")).collect();
    let get = |k: &str| m.get(k).copied().ok_or_else(|| FlowError::Config(format!("checkpoint manifest lacks {k}")));
    let num = |k: &str| get(k)?.parse::<usize>().map_err(|_| FlowError::Config(format!("bad {k}")));
    if get("format")? != POLICY_FORMAT {
        return Err(FlowError::Config("not a policy checkpoint".into()));
    }
    if num("version")? != POLICY_VERSION as usize {
        return Err(FlowError::Config("unsupported checkpoint version".into()));
    }
    let (obs_dim, action_dim, horizon) = (num("obs_dim")?, num("action_dim")?, num("horizon")?);
    let hidden = get("hidden")?
        .split(',')
        .map(|s| s.parse::<usize>().map_err(|_| FlowError::Config("bad hidden widths".into())))
        .collect::<Result<Vec<_>, _>>()?;
    let mut net = FlowNet::new(obs_dim, horizon * action_dim, &hidden, 0);
    let params = ArrayBlock::read(&dir.join("params.mbrt"))?;
    if params.data.len() != net.num_params() {
        return Err(FlowError::Dimension(format!("checkpoint holds {} parameters, architecture needs {}", params.data.len(), net.num_params())));
    }
    net.params = params.data.iter().map(|v| *v as f64).collect();
    let norm = |file: &str, dim: usize| -> Result<Normalizer, FlowError> {
        let b = ArrayBlock::read(&dir.join(file))?;
        if b.dims != [2, dim] {
            return Err(FlowError::Dimension(format!("{file} has shape {:?}", b.dims)));
        }
        let v: Vec<f64> = b.data.iter().map(|x| *x as f64).collect();
        Ok(Normalizer { mean: v[..dim].to_vec(), std: v[dim..].to_vec() })
    };
    Ok(FlowPolicy {
        obs_norm: norm("obs_norm.mbrt", obs_dim)?,
        act_norm: norm("act_norm.mbrt", action_dim)?,
        net,
        horizon,
        action_dim,
        inference_steps: num("inference_steps")?,
    })
}

/// A kinematic environment for closed-loop evaluation.
pub trait RolloutEnv {
    type State;
    fn reset(&self, episode: u64) -> Self::State;
    fn observe(&self, state: &Self::State) -> Vec<f64>;
    fn apply(&self, state: &mut Self::State, action: &[f64]);
    fn success(&self, state: &Self::State) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub episodes: usize,
    pub successes: usize,
}

impl EvalResult {
    pub fn rate(&self) -> f64 {
        if self.episodes == 0 { 0.0 } else { self.successes as f64 / self.episodes as f64 }
    }
}

/// Receding-horizon rollouts: each query executes the first `exec_horizon`
/// actions of the predicted chunk. An episode succeeds as soon as the
/// environment's predicate holds.
pub fn kinematic_rollout_eval<P: ChunkPolicy, E: RolloutEnv>(
    policy: &P,
    env: &E,
    episodes: u64,
    max_steps: usize,
    exec_horizon: usize,
    seed: u64,
) -> EvalResult {
    let mut successes = 0;
    for ep in 0..episodes {
        let mut state = env.reset(ep);
        let mut rng = keyed_rng(seed, ep, stream::EVAL);
        let mut steps = 0;
        let mut ok = env.success(&state);
        while !ok && steps < max_steps {
            let chunk = policy.act(&env.observe(&state), rng.gen());
            for a in chunk.iter().take(exec_horizon.max(1)) {
                env.apply(&mut state, a);
                steps += 1;
                ok = env.success(&state);
                if ok || steps >= max_steps {
                    break;
                }
            }
        }
        successes += ok as usize;
    }
    EvalResult { episodes: episodes as usize, successes }
}
