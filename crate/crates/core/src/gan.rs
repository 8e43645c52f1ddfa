//! Distributed GAN training over the formed UAV graph.
//!
//! Every agent owns a generator and a discriminator. In each synchronous
//! round an agent draws real samples, generates a batch, sends part of it to
//! its out-neighbours, and trains its discriminator on the mixture of its own
//! real samples and the generated samples received from its in-neighbours.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::channel::{ChannelSample, Rect};
use crate::error::{config, domain, Error, Result};
use crate::estimation::{Dataset, TimeWindow};
use crate::graph::NetGraph;
use crate::nnet::{logistic, AdamConfig, AdjointAt, DenseNet, Direction, OptimizerState, OutputActivation, LOG_FLOOR};
use crate::Point;

/// Width of a normalised channel sample: `(ue_x, ue_y, t, gain_db, phase)`.
pub const SAMPLE_WIDTH: usize = 5;

/// Maps channel samples onto `[-1, 1]^5` and back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationSpec {
    pub bounds: Rect,
    pub window: TimeWindow,
    pub gain_floor_db: f64,
    pub gain_ceiling_db: f64,
    /// Decoded gains below this level are read as NLOS.
    pub nlos_split_db: f64,
}

fn to_unit(v: f64, lo: f64, hi: f64) -> f64 {
    2.0 * (v - lo) / (hi - lo) - 1.0
}

fn from_unit(u: f64, lo: f64, hi: f64) -> f64 {
    lo + (u + 1.0) * 0.5 * (hi - lo)
}

impl NormalizationSpec {
    pub fn new(bounds: Rect, window: TimeWindow, gain_floor_db: f64, gain_ceiling_db: f64, nlos_split_db: f64) -> Result<Self> {
        if !(gain_floor_db < nlos_split_db && nlos_split_db < gain_ceiling_db) {
            return Err(config("gain range needs floor < NLOS split < ceiling"));
        }
        Ok(Self {
            bounds,
            window,
            gain_floor_db,
            gain_ceiling_db,
            nlos_split_db,
        })
    }

    /// Normalised vector and whether any coordinate had to be clamped.
    pub fn normalize(&self, s: &ChannelSample) -> ([f64; SAMPLE_WIDTH], bool) {
        let b = &self.bounds;
        let raw = [
            to_unit(s.y[0], b.x_min, b.x_max),
            to_unit(s.y[1], b.y_min, b.y_max),
            to_unit(s.t, self.window.start, self.window.end),
        ];
        let mut clamped = raw.iter().any(|v| v.abs() > 1.0);
        let magnitude = s.gain.norm();
        let (gain, phase) = if !s.los || magnitude == 0.0 {
            (-1.0, 0.0)
        } else {
            let db = 20.0 * magnitude.log10();
            clamped |= db > self.gain_ceiling_db || db < self.gain_floor_db;
            let db = db.clamp(self.gain_floor_db, self.gain_ceiling_db);
            (to_unit(db, self.gain_floor_db, self.gain_ceiling_db), s.gain.arg() / PI)
        };
        (
            [raw[0].clamp(-1.0, 1.0), raw[1].clamp(-1.0, 1.0), raw[2].clamp(-1.0, 1.0), gain, phase],
            clamped,
        )
    }

    /// Normalises a sample set; the count is the number of clamped samples.
    pub fn normalize_all(&self, samples: &[ChannelSample]) -> (Array2<f64>, usize) {
        let mut out = Array2::zeros((samples.len(), SAMPLE_WIDTH));
        let mut clamped = 0;
        for (mut row, s) in out.rows_mut().into_iter().zip(samples) {
            let (v, c) = self.normalize(s);
            row.iter_mut().zip(v).for_each(|(r, v)| *r = v);
            clamped += c as usize;
        }
        (out, clamped)
    }

    /// Inverse of [`NormalizationSpec::normalize`] for a UAV at `uav` and UEs
    /// at height `ue_height`. Coordinates are clamped to `[-1, 1]` first.
    pub fn denormalize(&self, v: &[f64], uav: Point, ue_height: f64) -> Result<ChannelSample> {
        if v.len() != SAMPLE_WIDTH {
            return Err(Error::Shape(format!("sample width {} != {SAMPLE_WIDTH}", v.len())));
        }
        let c = |i: usize| v[i].clamp(-1.0, 1.0);
        let b = &self.bounds;
        let db = from_unit(c(3), self.gain_floor_db, self.gain_ceiling_db);
        let los = db >= self.nlos_split_db;
        let gain = if los {
            Complex64::from_polar(10f64.powf(db / 20.0), c(4) * PI)
        } else {
            Complex64::new(0.0, 0.0)
        };
        Ok(ChannelSample {
            x: uav,
            y: [from_unit(c(0), b.x_min, b.x_max), from_unit(c(1), b.y_min, b.y_max), ue_height],
            t: from_unit(c(2), self.window.start, self.window.end),
            gain,
            los,
        })
    }
}

/// `(pi_i, [pi_ij])`: `pi_i = S_i / (S_i + eta sum S_j)` and
/// `pi_ij = eta S_j / (S_i + eta sum S_j)`.
pub fn mixture_weights(own_size: usize, neighbor_sizes: &[usize], share_ratio: f64) -> Result<(f64, Vec<f64>)> {
    if own_size == 0 || neighbor_sizes.contains(&0) {
        return Err(domain("dataset sizes must be positive"));
    }
    if !(share_ratio > 0.0 && share_ratio.is_finite()) {
        return Err(domain("share ratio must be positive"));
    }
    let denom = own_size as f64 + share_ratio * neighbor_sizes.iter().sum::<usize>() as f64;
    Ok((
        own_size as f64 / denom,
        neighbor_sizes.iter().map(|&s| share_ratio * s as f64 / denom).collect(),
    ))
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Per-round sample counts for a batch of `u`: each neighbour contributes
/// `round(pi_ij u)` generated samples and the local real share takes the
/// rest. Fails when the rounded shares exceed the batch.
pub fn batch_counts(batch: usize, own_size: usize, neighbor_sizes: &[usize], share_ratio: f64) -> Result<(usize, Vec<usize>)> {
    let (_, pis) = mixture_weights(own_size, neighbor_sizes, share_ratio)?;
    let shared: Vec<usize> = pis.iter().map(|p| round_half_up(p * batch as f64)).collect();
    let total: usize = shared.iter().sum();
    if total > batch {
        return Err(config(format!("neighbour shares {total} exceed the batch size {batch}")));
    }
    Ok((batch - total, shared))
}

/// Empirical `mean log D(mix) + mean log(1 - D(fake))`.
pub fn local_value(discriminator: &DenseNet, mix: ArrayView2<f64>, fake: ArrayView2<f64>) -> Result<f64> {
    let d_mix = discriminator.forward(mix)?;
    let d_fake = discriminator.forward(fake)?;
    Ok(value_from_outputs(&d_mix, &d_fake))
}

fn value_from_outputs(d_mix: &Array2<f64>, d_fake: &Array2<f64>) -> f64 {
    let real = d_mix.iter().map(|&d| d.max(LOG_FLOOR).ln()).sum::<f64>() / d_mix.len() as f64;
    let fake = d_fake.iter().map(|&d| (1.0 - d).max(LOG_FLOOR).ln()).sum::<f64>() / d_fake.len() as f64;
    real + fake
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Batch size `u`.
    pub batch_size: usize,
    pub rounds: usize,
    pub share_ratio: f64,
    pub latent_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub generator_adam: AdamConfig,
    pub discriminator_adam: AdamConfig,
    /// Discriminator steps per round.
    pub discriminator_steps: usize,
    /// Rounds between evaluator calls; 0 evaluates only after the last round.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            rounds: 2000,
            share_ratio: 1.4,
            latent_dim: 8,
            generator_hidden: vec![64, 64],
            discriminator_hidden: vec![64, 64],
            generator_adam: AdamConfig::default(),
            discriminator_adam: AdamConfig::default(),
            discriminator_steps: 1,
            eval_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 8 {
            return Err(config("batch size must be at least 8"));
        }
        if !(self.share_ratio > 0.0 && self.share_ratio.is_finite()) {
            return Err(config("share ratio must be positive"));
        }
        if self.latent_dim == 0 || self.discriminator_steps == 0 {
            return Err(config("latent dimension and discriminator steps must be positive"));
        }
        Ok(())
    }
}

fn agent_seed(seed: u64, agent: usize, stream: u64) -> u64 {
    let mut z = seed ^ (agent as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn latent_batch(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, dim), || rng.sample(StandardNormal))
}

/// One UAV's generator, discriminator and local dataset.
#[derive(Debug, Clone)]
pub struct GanAgent {
    pub id: usize,
    generator: DenseNet,
    discriminator: DenseNet,
    g_opt: OptimizerState,
    d_opt: OptimizerState,
    data: Array2<f64>,
    in_neighbors: Vec<usize>,
    out_neighbors: Vec<usize>,
    /// Real samples per round, then one count per in-neighbour.
    real_count: usize,
    inbox_counts: Vec<usize>,
    latent_dim: usize,
    rng: ChaCha8Rng,
}

impl GanAgent {
    pub fn generator(&self) -> &DenseNet {
        &self.generator
    }

    pub fn discriminator(&self) -> &DenseNet {
        &self.discriminator
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn in_neighbors(&self) -> &[usize] {
        &self.in_neighbors
    }

    pub fn out_neighbors(&self) -> &[usize] {
        &self.out_neighbors
    }

    pub fn real_count(&self) -> usize {
        self.real_count
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Generator and discriminator optimiser states.
    pub fn optimizers(&self) -> (&OptimizerState, &OptimizerState) {
        (&self.g_opt, &self.d_opt)
    }

    /// `n` generator samples from a dedicated stream, leaving the training
    /// stream untouched.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(agent_seed(seed, self.id, 3));
        let z = latent_batch(&mut rng, n, self.latent_dim);
        self.generator.forward(z.view())
    }

    /// Mean discriminator output over `real` and `fake` pooled.
    pub fn mean_discriminator(&self, real: ArrayView2<f64>, fake: ArrayView2<f64>) -> Result<f64> {
        let a = self.discriminator.forward(real)?;
        let b = self.discriminator.forward(fake)?;
        Ok((a.sum() + b.sum()) / (a.len() + b.len()) as f64)
    }
}

/// Builds one agent per graph node. `datasets[i]` holds node `i`'s
/// normalised real samples; mixture weights use the dataset row counts.
pub fn build_agents(datasets: Vec<Array2<f64>>, graph: &NetGraph, cfg: &TrainConfig) -> Result<Vec<GanAgent>> {
    cfg.validate()?;
    if datasets.len() != graph.nodes() || datasets.is_empty() {
        return Err(config(format!(
            "{} datasets for a graph of {} nodes",
            datasets.len(),
            graph.nodes()
        )));
    }
    let width = datasets[0].ncols();
    if width == 0 || datasets.iter().any(|d| d.ncols() != width || d.nrows() == 0) {
        return Err(config("datasets must be non-empty with a common sample width"));
    }
    let sizes: Vec<usize> = datasets.iter().map(|d| d.nrows()).collect();
    let mut g_sizes = vec![cfg.latent_dim];
    g_sizes.extend(&cfg.generator_hidden);
    g_sizes.push(width);
    let mut d_sizes = vec![width];
    d_sizes.extend(&cfg.discriminator_hidden);
    d_sizes.push(1);

    datasets
        .into_iter()
        .enumerate()
        .map(|(i, data)| {
            let in_neighbors = graph.in_neighbors(i);
            let neighbor_sizes: Vec<usize> = in_neighbors.iter().map(|&j| sizes[j]).collect();
            let (real_count, inbox_counts) = batch_counts(cfg.batch_size, sizes[i], &neighbor_sizes, cfg.share_ratio)?;
            let generator = DenseNet::init(&g_sizes, OutputActivation::Identity, agent_seed(cfg.seed, i, 0))?;
            let discriminator = DenseNet::init(&d_sizes, OutputActivation::Logistic, agent_seed(cfg.seed, i, 1))?;
            Ok(GanAgent {
                id: i,
                g_opt: OptimizerState::new(generator.param_count(), cfg.generator_adam),
                d_opt: OptimizerState::new(discriminator.param_count(), cfg.discriminator_adam),
                generator,
                discriminator,
                data,
                in_neighbors,
                out_neighbors: graph.out_neighbors(i),
                real_count,
                inbox_counts,
                latent_dim: cfg.latent_dim,
                rng: ChaCha8Rng::seed_from_u64(agent_seed(cfg.seed, i, 2)),
            })
        })
        .collect()
}

/// The only inter-agent payload: generated samples tagged by sender.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedBatch {
    pub sender: usize,
    pub samples: Array2<f64>,
}

/// Per-agent inboxes for one round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundBuffer {
    pub inboxes: Vec<Vec<GeneratedBatch>>,
}

impl RoundBuffer {
    pub fn samples_in_flight(&self) -> usize {
        self.inboxes.iter().flatten().map(|b| b.samples.nrows()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub agent: usize,
    /// Local value before this round's discriminator update.
    pub value: f64,
    pub mean_d_real: f64,
    pub mean_d_fake: f64,
}

struct Staged {
    real: Array2<f64>,
    z: Array2<f64>,
    fake: Array2<f64>,
}

fn stage(agent: &mut GanAgent, batch: usize) -> Result<Staged> {
    let rows = agent.data.nrows();
    let idx: Vec<usize> = (0..agent.real_count).map(|_| agent.rng.random_range(0..rows)).collect();
    let real = agent.data.select(Axis(0), &idx);
    let z = latent_batch(&mut agent.rng, batch, agent.latent_dim);
    let fake = agent.generator.forward(z.view())?;
    Ok(Staged { real, z, fake })
}

/// Routes each sender's generated samples to its out-neighbours. The batch
/// for receiver `o` is the first `round(pi_oi u)` generated rows.
fn exchange(agents: &[GanAgent], staged: &[Staged]) -> Result<RoundBuffer> {
    let mut inboxes = vec![Vec::new(); agents.len()];
    for (sender, st) in agents.iter().zip(staged) {
        for &o in &sender.out_neighbors {
            let receiver = &agents[o];
            let slot = receiver
                .in_neighbors
                .iter()
                .position(|&j| j == sender.id)
                .ok_or_else(|| Error::Protocol(format!("{} is not an in-neighbour of {o}", sender.id)))?;
            let n = receiver.inbox_counts[slot];
            inboxes[o].push(GeneratedBatch {
                sender: sender.id,
                samples: st.fake.slice(s![..n, ..]).to_owned(),
            });
        }
    }
    for inbox in &mut inboxes {
        inbox.sort_by_key(|b| b.sender);
    }
    Ok(RoundBuffer { inboxes })
}

fn check_inbox(agent: &GanAgent, inbox: &[GeneratedBatch]) -> Result<()> {
    let senders: Vec<usize> = inbox.iter().map(|b| b.sender).collect();
    if senders != agent.in_neighbors {
        return Err(Error::Protocol(format!(
            "agent {} expected batches from {:?}, got {senders:?}",
            agent.id, agent.in_neighbors
        )));
    }
    for (b, &n) in inbox.iter().zip(&agent.inbox_counts) {
        if b.samples.nrows() != n {
            return Err(Error::Protocol(format!(
                "agent {} expected {n} samples from {}, got {}",
                agent.id,
                b.sender,
                b.samples.nrows()
            )));
        }
    }
    Ok(())
}

fn update(agent: &mut GanAgent, st: Staged, inbox: &[GeneratedBatch], steps: usize, round: usize) -> Result<RoundMetrics> {
    check_inbox(agent, inbox)?;
    let mut parts = vec![st.real.view()];
    parts.extend(inbox.iter().map(|b| b.samples.view()));
    let mix = concatenate(Axis(0), &parts).map_err(|e| Error::Shape(e.to_string()))?;
    let u = st.fake.nrows() as f64;
    let norm = 1.0 / (mix.nrows() as f64 + u);

    let mut metrics = None;
    for _ in 0..steps {
        let t_mix = agent.discriminator.trace(mix.view())?;
        let t_fake = agent.discriminator.trace(st.fake.view())?;
        if metrics.is_none() {
            metrics = Some(RoundMetrics {
                round,
                agent: agent.id,
                value: value_from_outputs(t_mix.output(), t_fake.output()),
                mean_d_real: t_mix.output().mean().unwrap_or(0.0),
                mean_d_fake: t_fake.output().mean().unwrap_or(0.0),
            });
        }
        // d/dz log sigma(z) = 1 - sigma(z); d/dz log(1 - sigma(z)) = -sigma(z)
        let adj_mix = t_mix.logits().mapv(|z| (1.0 - logistic(z)) * norm);
        let adj_fake = t_fake.logits().mapv(|z| -logistic(z) * norm);
        let g_mix = agent.discriminator.backward(&t_mix, adj_mix.view(), AdjointAt::Logit)?;
        let g_fake = agent.discriminator.backward(&t_fake, adj_fake.view(), AdjointAt::Logit)?;
        let mut grads = g_mix;
        for (a, b) in grads.weights.iter_mut().zip(&g_fake.weights) {
            *a += b;
        }
        for (a, b) in grads.biases.iter_mut().zip(&g_fake.biases) {
            *a += b;
        }
        agent.discriminator.apply(&grads, &mut agent.d_opt, Direction::Ascend)?;
    }

    // Generator: descend (1/u) sum log(1 - D(G(z))) through the updated D.
    let t_gen = agent.generator.trace(st.z.view())?;
    let t_d = agent.discriminator.trace(t_gen.output().view())?;
    let adj = t_d.logits().mapv(|z| -logistic(z) / u);
    let through_d = agent.discriminator.backward(&t_d, adj.view(), AdjointAt::Logit)?;
    let g_grads = agent.generator.backward(&t_gen, through_d.input.view(), AdjointAt::Output)?;
    agent.generator.apply(&g_grads, &mut agent.g_opt, Direction::Descend)?;

    Ok(metrics.expect("at least one discriminator step"))
}

/// One synchronous round: every agent stages its batches, all exchanges
/// complete, then every agent updates its discriminator and generator.
pub fn train_round(agents: &mut [GanAgent], graph: &NetGraph, cfg: &TrainConfig, round: usize) -> Result<(Vec<RoundMetrics>, usize)> {
    check_topology(agents, graph)?;
    let staged = agents
        .par_iter_mut()
        .map(|a| stage(a, cfg.batch_size))
        .collect::<Result<Vec<_>>>()?;
    let buffer = exchange(agents, &staged)?;
    let sent = buffer.samples_in_flight();
    let metrics = agents
        .par_iter_mut()
        .zip(staged)
        .zip(buffer.inboxes.par_iter())
        .map(|((a, st), inbox)| update(a, st, inbox, cfg.discriminator_steps, round))
        .collect::<Result<Vec<_>>>()?;
    Ok((metrics, sent))
}

fn check_topology(agents: &[GanAgent], graph: &NetGraph) -> Result<()> {
    if agents.len() != graph.nodes() {
        return Err(Error::Protocol(format!(
            "{} agents on a graph of {} nodes",
            agents.len(),
            graph.nodes()
        )));
    }
    for (i, a) in agents.iter().enumerate() {
        if a.id != i || a.in_neighbors != graph.in_neighbors(i) || a.out_neighbors != graph.out_neighbors(i) {
            return Err(Error::Protocol(format!("agent {i} disagrees with the graph")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    /// One entry per round, one metric per agent.
    pub rounds: Vec<Vec<RoundMetrics>>,
    /// `(round, agent, jsd_to_global)` from the evaluator.
    pub jsd: Vec<(usize, usize, f64)>,
    /// Generated samples sent in each round.
    pub samples_sent: Vec<usize>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Mean discriminator output over the mixture and generated batches in
    /// the last `window` rounds, per agent.
    pub fn recent_mean_d(&self, window: usize) -> Vec<f64> {
        let Some(last) = self.rounds.last() else {
            return Vec::new();
        };
        let tail = &self.rounds[self.rounds.len().saturating_sub(window.max(1))..];
        (0..last.len())
            .map(|a| tail.iter().map(|r| 0.5 * (r[a].mean_d_real + r[a].mean_d_fake)).sum::<f64>() / tail.len() as f64)
            .collect()
    }

    /// Whether every agent's recent mean discriminator output lies in
    /// `[0.4, 0.6]`.
    pub fn near_equilibrium(&self, window: usize) -> bool {
        let means = self.recent_mean_d(window);
        !means.is_empty() && means.iter().all(|m| (0.4..=0.6).contains(m))
    }

    pub fn final_jsd(&self) -> Vec<f64> {
        let Some(&(last_round, _, _)) = self.jsd.last() else {
            return Vec::new();
        };
        self.jsd
            .iter()
            .filter(|e| e.0 == last_round)
            .map(|e| e.2)
            .collect()
    }
}

/// Evaluator called on each agent; returns its JSD to the global data.
pub type Evaluator<'a> = dyn Fn(&GanAgent) -> Result<f64> + Sync + 'a;

/// Runs `cfg.rounds` rounds. The evaluator, if any, runs every
/// `cfg.eval_every` rounds and after the final round.
pub fn train(agents: &mut [GanAgent], graph: &NetGraph, cfg: &TrainConfig, evaluator: Option<&Evaluator>) -> Result<TrainingHistory> {
    cfg.validate()?;
    let mut history = TrainingHistory::default();
    for round in 1..=cfg.rounds {
        let (metrics, sent) = train_round(agents, graph, cfg, round)?;
        history.rounds.push(metrics);
        history.samples_sent.push(sent);
        let due = round == cfg.rounds || (cfg.eval_every > 0 && round % cfg.eval_every == 0);
        if let (Some(eval), true) = (evaluator, due) {
            let scores = agents.par_iter().map(eval).collect::<Result<Vec<_>>>()?;
            history
                .jsd
                .extend(scores.into_iter().enumerate().map(|(a, j)| (round, a, j)));
        }
    }
    Ok(history)
}

/// `round,agent,V_i,mean_D_real,mean_D_fake,jsd_to_global`; the JSD cell is
/// empty on rounds without an evaluation.
pub fn history_csv(history: &TrainingHistory) -> String {
    let mut out = String::from("round,agent,V_i,mean_D_real,mean_D_fake,jsd_to_global\n");
    for metrics in &history.rounds {
        for m in metrics {
            let jsd = history
                .jsd
                .iter()
                .find(|e| e.0 == m.round && e.1 == m.agent)
                .map_or(String::new(), |e| e.2.to_string());
            out.push_str(&format!(
                "{},{},{},{},{},{jsd}\n",
                m.round, m.agent, m.value, m.mean_d_real, m.mean_d_fake
            ));
        }
    }
    out
}

/// Denormalises `n` generated samples into a synthetic dataset.
pub fn generated_dataset(agent: &GanAgent, spec: &NormalizationSpec, n: usize, seed: u64, uav: Point, ue_height: f64, region: Rect) -> Result<Dataset> {
    let raw = agent.generate(n, seed)?;
    let samples = raw
        .rows()
        .into_iter()
        .map(|r| spec.denormalize(r.as_slice().expect("contiguous row"), uav, ue_height))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        owner: agent.id,
        region,
        window: spec.window,
        seed,
        synthetic: true,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spec() -> NormalizationSpec {
        NormalizationSpec::new(
            Rect::new(0.0, 100.0, 0.0, 100.0).unwrap(),
            TimeWindow::new(0.0, 10.0).unwrap(),
            -120.0,
            -80.0,
            -110.0,
        )
        .unwrap()
    }

    fn sample(x: f64, y: f64, t: f64, db: f64, phase: f64, los: bool) -> ChannelSample {
        ChannelSample {
            x: [25.0, 25.0, 50.0],
            y: [x, y, 1.5],
            t,
            gain: if los { Complex64::from_polar(10f64.powf(db / 20.0), phase) } else { Complex64::new(0.0, 0.0) },
            los,
        }
    }

    #[test]
    fn normalization_round_trip() {
        let sp = spec();
        let s = sample(12.5, 80.0, 3.3, -97.25, 1.1, true);
        let (v, clamped) = sp.normalize(&s);
        assert!(!clamped);
        let back = sp.denormalize(&v, s.x, 1.5).unwrap();
        assert!((back.y[0] - s.y[0]).abs() < 1e-9 && (back.y[1] - s.y[1]).abs() < 1e-9);
        assert!((back.t - s.t).abs() < 1e-9);
        assert!((back.gain - s.gain).norm() < 1e-9 * s.gain.norm());
        assert!(back.los);
    }

    #[test]
    fn normalization_edges() {
        let sp = spec();
        let (v, clamped) = sp.normalize(&sample(30.0, 30.0, 1.0, 0.0, 0.0, false));
        assert_eq!(v[3], -1.0);
        assert!(!clamped);
        assert!(!sp.denormalize(&v, [0.0; 3], 1.5).unwrap().los);

        let (v, _) = sp.normalize(&sample(50.0, 50.0, 5.0, -100.0, 0.0, true));
        assert_eq!(&v[..3], &[0.0, 0.0, 0.0]);

        let (v, clamped) = sp.normalize(&sample(50.0, 50.0, 5.0, -60.0, 0.0, true));
        assert!(clamped);
        assert_eq!(v[3], 1.0);

        let (set, count) = sp.normalize_all(&[sample(50.0, 50.0, 5.0, -60.0, 0.0, true), sample(50.0, 50.0, 5.0, -90.0, 0.0, true)]);
        assert_eq!((set.nrows(), count), (2, 1));
    }

    #[test]
    fn mixture_weight_cases() {
        let (pi, pj) = mixture_weights(1000, &[1000], 1.4).unwrap();
        assert!((pi - 5.0 / 12.0).abs() < 1e-15);
        assert!((pj[0] - 7.0 / 12.0).abs() < 1e-15);
        let (pi, pj) = mixture_weights(500, &[500], 1.0).unwrap();
        assert_eq!((pi, pj[0]), (0.5, 0.5));
        let (pi, _) = mixture_weights(1000, &[1000, 1000], 1e-9).unwrap();
        assert!(pi > 1.0 - 1e-8);
        assert_eq!(mixture_weights(10, &[], 1.4).unwrap(), (1.0, vec![]));
        assert!(mixture_weights(0, &[1], 1.0).is_err());
    }

    #[test]
    fn batch_count_rounding() {
        // 64 * 7/12 = 37.33
        assert_eq!(batch_counts(64, 1000, &[1000], 1.4).unwrap(), (27, vec![37]));
        // 10 * 1/2 = 5 exactly; 9 * 1/2 = 4.5 rounds up
        assert_eq!(batch_counts(10, 5, &[5], 1.0).unwrap(), (5, vec![5]));
        assert_eq!(batch_counts(9, 5, &[5], 1.0).unwrap(), (4, vec![5]));
        assert_eq!(batch_counts(16, 5, &[], 1.0).unwrap(), (16, vec![]));
    }

    #[test]
    fn value_at_half_and_extremes() {
        let d = DenseNet::zeros(&[2, 4, 1], OutputActivation::Logistic).unwrap();
        let x = Array2::from_elem((6, 2), 0.3);
        let v = local_value(&d, x.view(), x.view()).unwrap();
        assert!((v + 2.0 * 2f64.ln()).abs() < 1e-12);

        let mut sharp = DenseNet::zeros(&[1, 1], OutputActivation::Logistic).unwrap();
        sharp.weights_mut(0)[[0, 0]] = 60.0;
        let v = local_value(&sharp, array![[1.0], [2.0]].view(), array![[-1.0], [-2.0]].view()).unwrap();
        assert!(v < 0.0 && v > -1e-6);
    }

    #[test]
    fn hand_computed_value() {
        // D(x) = sigma(x) on scalar samples
        let mut d = DenseNet::zeros(&[1, 1], OutputActivation::Logistic).unwrap();
        d.weights_mut(0)[[0, 0]] = 1.0;
        let mix = array![[0.0], [1.0], [-1.0], [2.0]];
        let fake = array![[0.5], [-0.5], [0.0], [1.5]];
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let expect = [0.0, 1.0, -1.0, 2.0].iter().map(|&x| sig(x).ln()).sum::<f64>() / 4.0
            + [0.5, -0.5, 0.0, 1.5].iter().map(|&x| (1.0 - sig(x)).ln()).sum::<f64>() / 4.0;
        assert!((local_value(&d, mix.view(), fake.view()).unwrap() - expect).abs() < 1e-12);
    }

    fn toy_data(n: usize, offset: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, 1), |(i, _)| offset + 0.01 * (i % 7) as f64)
    }

    fn small_cfg(rounds: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            rounds,
            latent_dim: 2,
            generator_hidden: vec![8],
            discriminator_hidden: vec![8],
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn two_ring_traffic_and_payload() {
        let g = NetGraph::ring(&[0, 1]).unwrap();
        let cfg = small_cfg(3);
        let mut agents = build_agents(vec![toy_data(40, -0.5), toy_data(40, 0.5)], &g, &cfg).unwrap();
        let history = train(&mut agents, &g, &cfg, None).unwrap();
        assert_eq!(history.len(), 3);
        // pi = 1.4/2.4, 16 * 0.5833 = 9.33 -> 9 per direction
        assert!(history.samples_sent.iter().all(|&n| n == 2 * 9));
        assert_eq!(agents[0].real_count(), 7);
    }

    #[test]
    fn standalone_and_zero_rounds() {
        let g = NetGraph::new(1);
        let cfg = small_cfg(0);
        let mut agents = build_agents(vec![toy_data(20, 0.0)], &g, &cfg).unwrap();
        let before = agents[0].generator().clone();
        let h = train(&mut agents, &g, &cfg, None).unwrap();
        assert!(h.is_empty());
        assert_eq!(agents[0].generator(), &before);
        assert_eq!(agents[0].real_count(), 16);

        let cfg = small_cfg(2);
        let h = train(&mut agents, &g, &cfg, None).unwrap();
        assert_eq!(h.samples_sent, vec![0, 0]);
        assert_ne!(agents[0].generator(), &before);
    }

    #[test]
    fn training_is_deterministic() {
        let g = NetGraph::ring(&[0, 1, 2]).unwrap();
        let cfg = small_cfg(5);
        let data = || vec![toy_data(30, -1.0), toy_data(30, 0.0), toy_data(30, 1.0)];
        let mut a = build_agents(data(), &g, &cfg).unwrap();
        let mut b = build_agents(data(), &g, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let ha = train(&mut a, &g, &cfg, None).unwrap();
        let hb = pool.install(|| train(&mut b, &g, &cfg, None)).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a[2].generator(), b[2].generator());
    }

    #[test]
    fn mismatched_topology_is_rejected() {
        let g = NetGraph::ring(&[0, 1]).unwrap();
        let cfg = small_cfg(1);
        let mut agents = build_agents(vec![toy_data(10, 0.0), toy_data(10, 1.0)], &g, &cfg).unwrap();
        let other = NetGraph::new(2);
        assert!(matches!(train_round(&mut agents, &other, &cfg, 1), Err(Error::Protocol(_))));

        let short = vec![GeneratedBatch {
            sender: 1,
            samples: Array2::zeros((3, 1)),
        }];
        assert!(check_inbox(&agents[0], &short).is_err());
        assert!(check_inbox(&agents[0], &[]).is_err());
    }

    #[test]
    fn generated_dump_is_synthetic() {
        let g = NetGraph::new(1);
        let cfg = TrainConfig {
            latent_dim: 3,
            ..small_cfg(0)
        };
        let data = Array2::zeros((8, SAMPLE_WIDTH));
        let agents = build_agents(vec![data], &g, &cfg).unwrap();
        let sp = spec();
        let ds = generated_dataset(&agents[0], &sp, 12, 1, [50.0, 50.0, 50.0], 1.5, sp.bounds).unwrap();
        assert!(ds.synthetic);
        assert_eq!(ds.len(), 12);
        assert!(ds.samples.iter().all(|s| sp.bounds.contains(s.y[0], s.y[1])));
    }
}
