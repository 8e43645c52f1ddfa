//! Experiment configuration, the scene-to-evaluation pipeline, sweeps and
//! the run manifest.
//!
//! Configuration is TOML with units in the key names. Every stage derives its
//! seed from the master seed, so a run is reproducible from its config alone.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::airlink::{link_budget_csv, A2AConfig};
use crate::channel::{generate_scene, write_scene, ArrayGeometry, Scene, SceneConfig, SPEED_OF_LIGHT};
use crate::convergence::{convergence_report, report_csv, ConvergenceParams, ConvergenceTime};
use crate::error::{config, Error, Result};
use crate::estimation::{collect_dataset, dataset_csv, write_dataset, Dataset, EstimationParams, TimeWindow, DEFAULT_BETA_FLOOR};
use crate::formation::{form_network, formation_csv, FormationResult};
use crate::gan::{build_agents, generated_dataset, history_csv, train, GanAgent, NormalizationSpec, TrainConfig, TrainingHistory};
use crate::graph::NetGraph;
use crate::metrics::{
    evaluation_csv, jsd, model_based_rates, perfect_csi_rates, pilot_baseline_rates, sample_placements, EvalRow, GainPredictor,
    HistogramBinning, RateEvalConfig,
};
use crate::nnet::{write_checkpoint, AdamConfig};
use crate::{db_to_linear, dbm_to_watts, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub pilot_power_dbm: f64,
    pub pilot_bandwidth_hz: f64,
    pub noise_dbm_per_hz: f64,
    pub a2a_carrier_hz: f64,
    pub a2a_bandwidth_hz: f64,
    pub max_power_dbm: f64,
    pub snr_threshold_db: f64,
    pub deadline_s: f64,
    pub share_ratio: f64,
    pub local_train_time_s: f64,
    pub sample_bits: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            tx_antennas: 256,
            rx_antennas: 64,
            pilot_power_dbm: 30.0,
            pilot_bandwidth_hz: 50e6,
            noise_dbm_per_hz: -174.0,
            a2a_carrier_hz: 2.4e9,
            a2a_bandwidth_hz: 2e6,
            max_power_dbm: 40.0,
            snr_threshold_db: 10.0,
            deadline_s: 0.1,
            share_ratio: 1.4,
            local_train_time_s: 0.9,
            sample_bits: 320.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub rounds: usize,
    pub latent_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub generator_learning_rate: f64,
    pub discriminator_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub discriminator_steps: usize,
    pub eval_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            batch_size: 64,
            rounds: 6000,
            latent_dim: 8,
            generator_hidden: vec![64, 64],
            discriminator_hidden: vec![64, 64],
            generator_learning_rate: 1e-4,
            discriminator_learning_rate: 4e-4,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            discriminator_steps: 1,
            eval_every: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationSettings {
    pub gain_floor_db: f64,
    pub gain_ceiling_db: f64,
    pub nlos_split_db: f64,
}

impl Default for NormalizationSettings {
    fn default() -> Self {
        Self {
            gain_floor_db: -120.0,
            gain_ceiling_db: -80.0,
            nlos_split_db: -110.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateSettings {
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub coherence_s: f64,
    pub pilot_overhead_s: f64,
    pub ue_density_per_m2: f64,
    pub times_per_ue: usize,
    pub pool_size: usize,
}

impl Default for RateSettings {
    fn default() -> Self {
        Self {
            bandwidth_hz: 50e6,
            tx_power_dbm: 30.0,
            coherence_s: 0.01,
            pilot_overhead_s: 0.0012,
            ue_density_per_m2: 0.02,
            times_per_ue: 5,
            pool_size: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JsdSettings {
    pub bins: Vec<usize>,
    pub smoothing: f64,
    pub eval_samples: usize,
}

impl Default for JsdSettings {
    fn default() -> Self {
        Self {
            bins: vec![8, 8, 2, 8, 2],
            smoothing: 1e-9,
            eval_samples: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSettings {
    pub confidence: f64,
    pub horizon: usize,
    pub mc_trials: usize,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self {
            confidence: 0.9,
            horizon: 20,
            mc_trials: 100_000,
        }
    }
}

/// Full experiment description. `uavs` must equal `scene.regions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub uavs: usize,
    pub dataset_size: usize,
    pub window_start_s: f64,
    pub window_end_s: f64,
    /// Also train the standalone and raw-data-pooling references.
    pub reference_runs: bool,
    pub output_dir: String,
    pub scene: SceneConfig,
    pub radio: RadioConfig,
    pub train: TrainSettings,
    pub normalization: NormalizationSettings,
    pub rate: RateSettings,
    pub jsd: JsdSettings,
    pub convergence: ConvergenceSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            uavs: 4,
            dataset_size: 1000,
            window_start_s: 0.0,
            window_end_s: 10.0,
            reference_runs: true,
            output_dir: "out".into(),
            scene: SceneConfig::default(),
            radio: RadioConfig::default(),
            train: TrainSettings::default(),
            normalization: NormalizationSettings::default(),
            rate: RateSettings::default(),
            jsd: JsdSettings::default(),
            convergence: ConvergenceSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Sets the UAV count and the matching region count.
    pub fn with_uavs(mut self, uavs: usize) -> Self {
        self.uavs = uavs;
        self.scene.regions = uavs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.uavs == 0 || self.uavs != self.scene.regions {
            return Err(config(format!(
                "uavs = {} must be positive and equal scene.regions = {}",
                self.uavs, self.scene.regions
            )));
        }
        if self.dataset_size == 0 {
            return Err(config("dataset_size must be positive"));
        }
        self.window()?;
        self.a2a()?.validate()?;
        self.normalization_spec()?;
        self.rate_config().validate()?;
        self.binning()?;
        self.train_config(0).validate()?;
        if self.jsd.eval_samples == 0 {
            return Err(config("jsd.eval_samples must be positive"));
        }
        if !(self.convergence.confidence > 0.0 && self.convergence.confidence < 1.0) {
            return Err(config("convergence.confidence must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn window(&self) -> Result<TimeWindow> {
        TimeWindow::new(self.window_start_s, self.window_end_s)
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::half_wavelength(
            self.radio.tx_antennas,
            self.radio.rx_antennas,
            SPEED_OF_LIGHT / self.scene.carrier_hz,
        )
    }

    pub fn estimation_params(&self) -> Result<EstimationParams> {
        Ok(EstimationParams {
            geometry: self.geometry()?,
            pilot_power: dbm_to_watts(self.radio.pilot_power_dbm),
            noise_variance: self.noise_w(self.radio.pilot_bandwidth_hz),
            beta_floor: DEFAULT_BETA_FLOOR,
        })
    }

    fn noise_w(&self, bandwidth_hz: f64) -> f64 {
        dbm_to_watts(self.radio.noise_dbm_per_hz + 10.0 * bandwidth_hz.log10())
    }

    pub fn a2a(&self) -> Result<A2AConfig> {
        let r = &self.radio;
        if !(r.a2a_carrier_hz > 0.0) {
            return Err(config("radio.a2a_carrier_hz must be positive"));
        }
        Ok(A2AConfig {
            bandwidth_hz: r.a2a_bandwidth_hz,
            noise_w: self.noise_w(r.a2a_bandwidth_hz),
            snr_threshold: db_to_linear(r.snr_threshold_db),
            max_power_w: dbm_to_watts(r.max_power_dbm),
            deadline_s: r.deadline_s,
            share_ratio: r.share_ratio,
            sample_bits: r.sample_bits,
            wavelength_m: SPEED_OF_LIGHT / r.a2a_carrier_hz,
        })
    }

    pub fn normalization_spec(&self) -> Result<NormalizationSpec> {
        let n = &self.normalization;
        let bounds = crate::channel::Rect::new(0.0, self.scene.width_m, 0.0, self.scene.depth_m)?;
        NormalizationSpec::new(bounds, self.window()?, n.gain_floor_db, n.gain_ceiling_db, n.nlos_split_db)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        let adam = |learning_rate| AdamConfig {
            learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
        };
        TrainConfig {
            batch_size: t.batch_size,
            rounds: t.rounds,
            share_ratio: self.radio.share_ratio,
            latent_dim: t.latent_dim,
            generator_hidden: t.generator_hidden.clone(),
            discriminator_hidden: t.discriminator_hidden.clone(),
            generator_adam: adam(t.generator_learning_rate),
            discriminator_adam: adam(t.discriminator_learning_rate),
            discriminator_steps: t.discriminator_steps,
            eval_every: t.eval_every,
            seed,
        }
    }

    pub fn rate_config(&self) -> RateEvalConfig {
        let r = &self.rate;
        RateEvalConfig {
            bandwidth_hz: r.bandwidth_hz,
            tx_power_w: dbm_to_watts(r.tx_power_dbm),
            noise_w: self.noise_w(r.bandwidth_hz),
            coherence_s: r.coherence_s,
            pilot_overhead_s: r.pilot_overhead_s,
            ue_density_per_m2: r.ue_density_per_m2,
            times_per_ue: r.times_per_ue,
            pool_size: r.pool_size,
        }
    }

    pub fn binning(&self) -> Result<HistogramBinning> {
        HistogramBinning::unit_cube(self.jsd.bins.clone(), self.jsd.smoothing)
    }

    /// Ring convergence parameters for `uavs` UAVs.
    pub fn ring_convergence(&self, uavs: usize, share_ratio: f64) -> Result<ConvergenceParams> {
        ConvergenceParams::for_ring(
            uavs,
            share_ratio,
            self.radio.local_train_time_s,
            self.radio.deadline_s,
            self.convergence.confidence,
        )
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::derive(self.seed)
    }
}

/// Per-stage seeds derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub master: u64,
    pub scene: u64,
    pub collect: u64,
    pub train: u64,
    pub evaluate: u64,
    pub convergence: u64,
}

impl Seeds {
    pub fn derive(master: u64) -> Self {
        let tag = |name: &str| {
            let digest = Sha256::new()
                .chain_update(master.to_le_bytes())
                .chain_update(name.as_bytes())
                .finalize();
            u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
        };
        Self {
            master,
            scene: tag("scene"),
            collect: tag("collect"),
            train: tag("train"),
            evaluate: tag("evaluate"),
            convergence: tag("convergence"),
        }
    }

    /// Seed for UAV `i`'s data collection.
    pub fn dataset(&self, i: usize) -> u64 {
        self.collect.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Scene,
    Collect,
    Form,
    Converge,
    Train,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Scene => "scene",
            Stage::Collect => "collect",
            Stage::Form => "form",
            Stage::Converge => "converge",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
        };
        f.write_str(name)
    }
}

/// What a command runs: the stages up to a target, or everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Scene,
    Collect,
    Form,
    Converge,
    Train,
    Evaluate,
    Run,
}

impl Target {
    fn includes(self, stage: Stage) -> bool {
        match self {
            Target::Scene => stage == Stage::Scene,
            Target::Collect => stage <= Stage::Collect,
            Target::Form => stage <= Stage::Form,
            Target::Converge => stage <= Stage::Converge,
            Target::Train => stage <= Stage::Train && stage != Stage::Converge,
            Target::Evaluate => stage != Stage::Converge,
            Target::Run => true,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Target::Scene => "scene",
            Target::Collect => "collect",
            Target::Form => "form",
            Target::Converge => "converge",
            Target::Train => "train",
            Target::Evaluate => "evaluate",
            Target::Run => "run",
        }
    }
}

/// A pipeline failure tagged with the stage it happened in.
#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct SimError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

fn at(stage: Stage) -> impl FnOnce(Error) -> SimError {
    move |source| SimError { stage, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    /// Formation found no feasible ring; later stages were skipped.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub status: RunStatus,
    pub files: Vec<ManifestEntry>,
    pub evaluation: Vec<EvalRow>,
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<ManifestEntry>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push(ManifestEntry {
            name: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }
}

pub fn uav_positions(scene: &Scene) -> Vec<Point> {
    (0..scene.regions.len()).map(|i| scene.uav_position(i)).collect()
}

/// One dataset per UAV, gathered over its own region.
pub fn collect_all(cfg: &ExperimentConfig, scene: &Scene) -> Result<Vec<Dataset>> {
    let params = cfg.estimation_params()?;
    let window = cfg.window()?;
    let seeds = cfg.seeds();
    scene
        .regions
        .iter()
        .enumerate()
        .map(|(i, region)| {
            collect_dataset(
                scene,
                i,
                scene.uav_position(i),
                *region,
                window,
                cfg.dataset_size,
                &params,
                seeds.dataset(i),
            )
        })
        .collect()
}

/// Normalised per-UAV datasets and their union.
pub fn normalized_sets(cfg: &ExperimentConfig, datasets: &[Dataset]) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
    let spec = cfg.normalization_spec()?;
    let sets: Vec<Array2<f64>> = datasets.iter().map(|d| spec.normalize_all(&d.samples).0).collect();
    let views: Vec<_> = sets.iter().map(|s| s.view()).collect();
    let global = concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((sets, global))
}

/// How the GAN agents share information.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Generated-sample exchange over the formed graph.
    Distributed,
    /// One isolated GAN per UAV.
    Standalone,
    /// A single GAN on the union of all raw datasets.
    Pooled,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Distributed => "distributed",
            TrainMode::Standalone => "standalone",
            TrainMode::Pooled => "pooled",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub mode: TrainMode,
    pub agents: Vec<GanAgent>,
    pub graph: NetGraph,
    pub history: TrainingHistory,
    /// Final JSD of each agent's generator to the global real data.
    pub jsd: Vec<f64>,
}

impl TrainedModels {
    pub fn mean_jsd(&self) -> f64 {
        self.jsd.iter().sum::<f64>() / self.jsd.len() as f64
    }
}

/// Trains the agents for `mode`. `graph` is the formed topology, used only
/// in distributed mode.
pub fn train_mode(
    cfg: &ExperimentConfig,
    mode: TrainMode,
    sets: &[Array2<f64>],
    global: &Array2<f64>,
    graph: &NetGraph,
) -> Result<TrainedModels> {
    let seeds = cfg.seeds();
    let (data, graph) = match mode {
        TrainMode::Distributed => (sets.to_vec(), graph.clone()),
        TrainMode::Standalone => (sets.to_vec(), NetGraph::new(sets.len())),
        TrainMode::Pooled => (vec![global.clone()], NetGraph::new(1)),
    };
    let tc = cfg.train_config(seeds.train);
    let binning = cfg.binning()?;
    let samples = cfg.jsd.eval_samples;
    let eval_seed = seeds.evaluate;
    let evaluator = move |agent: &GanAgent| -> Result<f64> {
        let fake = agent.generate(samples, eval_seed)?;
        jsd(fake.view(), global.view(), &binning)
    };
    let mut agents = build_agents(data, &graph, &tc)?;
    let history = train(&mut agents, &graph, &tc, Some(&evaluator))?;
    let jsd = if history.jsd.is_empty() {
        agents.iter().map(&evaluator).collect::<Result<Vec<_>>>()?
    } else {
        history.final_jsd()
    };
    Ok(TrainedModels {
        mode,
        agents,
        graph,
        history,
        jsd,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSummary {
    pub perfect_csi: f64,
    pub pilot_baseline: f64,
    pub model_based: f64,
}

/// Generated-pool predictors, one per agent.
pub fn predictors(cfg: &ExperimentConfig, agents: &[GanAgent]) -> Result<Vec<GainPredictor>> {
    let spec = cfg.normalization_spec()?;
    let seed = cfg.seeds().evaluate ^ 0x5EED;
    agents
        .iter()
        .map(|a| GainPredictor::from_pool(a.generate(cfg.rate.pool_size, seed)?.view(), &spec))
        .collect()
}

/// Average rate of the three schemes at the evaluation placements.
pub fn evaluate_rates(cfg: &ExperimentConfig, scene: &Scene, agents: &[GanAgent]) -> Result<RateSummary> {
    let rc = cfg.rate_config();
    let geometry = cfg.geometry()?;
    let points = sample_placements(scene, cfg.window()?, &rc, cfg.seeds().evaluate)?;
    let preds = predictors(cfg, agents)?;
    let mean = |v: Vec<f64>| crate::metrics::pairwise_sum(&v) / v.len().max(1) as f64;
    Ok(RateSummary {
        perfect_csi: mean(perfect_csi_rates(scene, &points, &rc, &geometry)?),
        pilot_baseline: mean(pilot_baseline_rates(scene, &points, &rc, &geometry)?),
        model_based: mean(model_based_rates(scene, &preds, &points, &rc, &geometry)?),
    })
}

fn formation_for(cfg: &ExperimentConfig, scene: &Scene) -> Result<FormationResult> {
    let positions = uav_positions(scene);
    let sizes = vec![cfg.dataset_size; positions.len()];
    Ok(form_network(&positions, &cfg.a2a()?, &sizes))
}

/// Runs the stages selected by `target` and writes their artifacts plus a
/// manifest to `out`.
pub fn run_pipeline(cfg: &ExperimentConfig, target: Target, out: &Path) -> Result<RunReport, SimError> {
    cfg.validate().map_err(at(Stage::Scene))?;
    let mut art = Artifacts::new(out).map_err(at(Stage::Scene))?;
    let seeds = cfg.seeds();
    let mut status = RunStatus::Completed;
    let mut evaluation = Vec::new();

    let scene = generate_scene(&cfg.scene, seeds.scene).map_err(at(Stage::Scene))?;
    art.write("scene.txt", write_scene(&scene).as_bytes()).map_err(at(Stage::Scene))?;

    'stages: {
        if !target.includes(Stage::Collect) {
            break 'stages;
        }
        let datasets = collect_all(cfg, &scene).map_err(at(Stage::Collect))?;
        for d in &datasets {
            art.write(&format!("dataset_{}.bin", d.owner), &write_dataset(d))
                .and_then(|_| art.write(&format!("dataset_{}.csv", d.owner), dataset_csv(d).as_bytes()))
                .map_err(at(Stage::Collect))?;
        }
        if !target.includes(Stage::Form) {
            break 'stages;
        }

        let standalone = cfg.uavs == 1;
        let graph = if standalone {
            NetGraph::new(1)
        } else {
            let positions = uav_positions(&scene);
            let a2a = cfg.a2a().map_err(at(Stage::Form))?;
            art.write("link_budget.csv", link_budget_csv(&positions, &a2a, cfg.dataset_size).as_bytes())
                .map_err(at(Stage::Form))?;
            let formed = formation_for(cfg, &scene).map_err(at(Stage::Form))?;
            art.write("formation.csv", formation_csv(&formed).as_bytes())
                .and_then(|_| art.write("graph.txt", formed.graph.to_edge_list().as_bytes()))
                .map_err(at(Stage::Form))?;
            if !formed.is_formed() {
                status = RunStatus::Infeasible;
                break 'stages;
            }
            formed.graph
        };

        if target.includes(Stage::Converge) && !standalone {
            let params = ConvergenceParams::from_graph(
                &graph,
                cfg.radio.share_ratio,
                cfg.radio.local_train_time_s,
                cfg.radio.deadline_s,
                cfg.convergence.confidence,
            )
            .map_err(at(Stage::Converge))?;
            let report = convergence_report(&params, cfg.convergence.horizon, cfg.convergence.mc_trials, seeds.convergence)
                .map_err(at(Stage::Converge))?;
            art.write("convergence.csv", report_csv(&report).as_bytes())
                .map_err(at(Stage::Converge))?;
        }
        if !target.includes(Stage::Train) {
            break 'stages;
        }

        let (sets, global) = normalized_sets(cfg, &datasets).map_err(at(Stage::Train))?;
        let main_mode = if standalone { TrainMode::Standalone } else { TrainMode::Distributed };
        let trained = train_mode(cfg, main_mode, &sets, &global, &graph).map_err(at(Stage::Train))?;
        write_training(&mut art, cfg, &scene, &trained).map_err(at(Stage::Train))?;
        if !target.includes(Stage::Evaluate) {
            break 'stages;
        }

        let mut jsd_rows = vec![(trained.mode, trained.jsd.clone())];
        if cfg.reference_runs && !standalone {
            for mode in [TrainMode::Standalone, TrainMode::Pooled] {
                let reference = train_mode(cfg, mode, &sets, &global, &graph).map_err(at(Stage::Evaluate))?;
                jsd_rows.push((mode, reference.jsd.clone()));
            }
        }
        let rates = evaluate_rates(cfg, &scene, &trained.agents).map_err(at(Stage::Evaluate))?;
        let row = |scheme: &str, rate: Option<f64>, jsd: Option<f64>| EvalRow {
            scheme: scheme.to_string(),
            network_size: cfg.uavs,
            avg_rate_bps: rate,
            jsd,
            seed: cfg.seed,
        };
        let mut per_agent = String::from("mode,agent,jsd\n");
        for (mode, values) in &jsd_rows {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            evaluation.push(row(mode.name(), None, Some(mean)));
            for (a, v) in values.iter().enumerate() {
                per_agent.push_str(&format!("{},{a},{v}\n", mode.name()));
            }
        }
        evaluation.push(row("perfect_csi", Some(rates.perfect_csi), None));
        evaluation.push(row("pilot_baseline", Some(rates.pilot_baseline), None));
        evaluation.push(row("model_based", Some(rates.model_based), None));
        art.write("jsd_agents.csv", per_agent.as_bytes())
            .and_then(|_| art.write("evaluation.csv", evaluation_csv(&evaluation).as_bytes()))
            .map_err(at(Stage::Evaluate))?;
    }

    let manifest = manifest_text(cfg, target, status, &art.files);
    fs::write(out.join("manifest.txt"), manifest).map_err(|e| SimError {
        stage: Stage::Evaluate,
        source: e.into(),
    })?;
    Ok(RunReport {
        status,
        files: art.files,
        evaluation,
    })
}

fn write_training(art: &mut Artifacts, cfg: &ExperimentConfig, scene: &Scene, trained: &TrainedModels) -> Result<()> {
    art.write("training_history.csv", history_csv(&trained.history).as_bytes())?;
    let spec = cfg.normalization_spec()?;
    for a in &trained.agents {
        let (g_opt, d_opt) = a.optimizers();
        art.write(&format!("generator_{}.ckpt", a.id), &write_checkpoint(a.generator(), Some(g_opt)))?;
        art.write(&format!("discriminator_{}.ckpt", a.id), &write_checkpoint(a.discriminator(), Some(d_opt)))?;
        let region = scene.regions[a.id.min(scene.regions.len() - 1)];
        let dump = generated_dataset(
            a,
            &spec,
            cfg.dataset_size,
            cfg.seeds().evaluate,
            scene.uav_position(a.id),
            scene.ue_height,
            region,
        )?;
        art.write(&format!("generated_{}.bin", a.id), &write_dataset(&dump))?;
    }
    Ok(())
}

/// Text manifest: run identity, derived seeds, one `file` line per output
/// with its SHA-256, and the config echo.
pub fn manifest_text(cfg: &ExperimentConfig, target: Target, status: RunStatus, files: &[ManifestEntry]) -> String {
    let s = cfg.seeds();
    let status = match status {
        RunStatus::Completed => "completed",
        RunStatus::Infeasible => "infeasible",
    };
    let mut out = format!(
        "# uavchan manifest v1\ncommand = {}\nstatus = {status}\nversion = {}\nseed.master = {}\nseed.scene = {}\nseed.collect = {}\nseed.train = {}\nseed.evaluate = {}\nseed.convergence = {}\n",
        target.name(),
        env!("CARGO_PKG_VERSION"),
        s.master,
        s.scene,
        s.collect,
        s.train,
        s.evaluate,
        s.convergence
    );
    for f in files {
        out.push_str(&format!("file = {} sha256={} bytes={}\n", f.name, f.sha256, f.bytes));
    }
    out.push_str("\n# config\n");
    out.push_str(&cfg.to_toml());
    out
}

/// Parameter swept by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Share ratio `eta`.
    Eta,
    /// Network size `I`.
    Uavs,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Eta => "eta",
            SweepAxis::Uavs => "uavs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub curve: Vec<(usize, f64, f64)>,
    pub time: Option<ConvergenceTime>,
    /// Error text when the analytics or pipeline for this value failed.
    pub failure: Option<String>,
}

/// Ring convergence analytics per value, plus a full pipeline per value
/// when `full` is set. Failures are recorded and the sweep continues.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64], full: bool, out: &Path) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(config("sweep needs at least one value"));
    }
    fs::create_dir_all(out)?;
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let (uavs, eta) = match axis {
            SweepAxis::Eta => (cfg.uavs, value),
            SweepAxis::Uavs => {
                if value.fract() != 0.0 || value < 1.0 {
                    points.push(SweepPoint {
                        value,
                        curve: Vec::new(),
                        time: None,
                        failure: Some(format!("network size {value} is not a positive integer")),
                    });
                    continue;
                }
                (value as usize, cfg.radio.share_ratio)
            }
        };
        let analytics = cfg.ring_convergence(uavs, eta).and_then(|p| {
            convergence_report(&p, cfg.convergence.horizon, cfg.convergence.mc_trials, cfg.seeds().convergence)
        });
        let mut point = match analytics {
            Ok(r) => SweepPoint {
                value,
                curve: r.curve,
                time: Some(r.time),
                failure: None,
            },
            Err(e) => SweepPoint {
                value,
                curve: Vec::new(),
                time: None,
                failure: Some(e.to_string()),
            },
        };
        if full {
            let mut run_cfg = cfg.clone().with_uavs(uavs);
            run_cfg.radio.share_ratio = eta;
            let dir = out.join(format!("{}_{value}", axis.name()));
            match run_pipeline(&run_cfg, Target::Run, &dir) {
                Ok(r) if r.status == RunStatus::Infeasible => {
                    point.failure.get_or_insert_with(|| "formation infeasible".into());
                }
                Ok(_) => {}
                Err(e) => {
                    point.failure.get_or_insert(e.to_string());
                }
            }
        }
        points.push(point);
    }
    fs::write(out.join(format!("sweep_{}.csv", axis.name())), sweep_curve_csv(axis, &points))?;
    fs::write(out.join(format!("sweep_{}_summary.csv", axis.name())), sweep_summary_csv(axis, &points))?;
    Ok(points)
}

/// `<axis>,T,p_formula,p_mc` rows for every swept value.
pub fn sweep_curve_csv(axis: SweepAxis, points: &[SweepPoint]) -> String {
    let mut out = format!("{},T,p_formula,p_mc\n", axis.name());
    for p in points {
        for (t, f, mc) in &p.curve {
            out.push_str(&format!("{},{t},{f},{mc}\n", p.value));
        }
    }
    out
}

/// `<axis>,T_G,C_s,p_sup,status`; `T_G` and `C_s` are empty when the
/// confidence level is unattainable.
pub fn sweep_summary_csv(axis: SweepAxis, points: &[SweepPoint]) -> String {
    let mut out = format!("{},T_G,C_s,p_sup,status\n", axis.name());
    for p in points {
        let (tg, c, sup) = match p.time {
            Some(ConvergenceTime::Seconds { iterations, seconds }) => (iterations.to_string(), seconds.to_string(), String::new()),
            Some(ConvergenceTime::Unattainable { supremum }) => (String::new(), String::new(), supremum.to_string()),
            None => Default::default(),
        };
        let status = p.failure.as_deref().map_or("ok".to_string(), |f| format!("failed: {}", f.replace(',', ";")));
        out.push_str(&format!("{},{tg},{c},{sup},{status}\n", p.value));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        assert!(text.contains("max_power_dbm = 40"));
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn config_rejects_inconsistency() {
        assert!(ExperimentConfig::from_toml("uavs = 3").is_err());
        assert!(ExperimentConfig::from_toml("bogus_key = 1").is_err());
        let ok = ExperimentConfig::from_toml("uavs = 2\n[scene]\nregions = 2\n").unwrap();
        assert_eq!(ok.uavs, 2);
    }

    #[test]
    fn default_values() {
        let cfg = ExperimentConfig::default();
        let a2a = cfg.a2a().unwrap();
        assert!((a2a.max_power_w - 10.0).abs() < 1e-12);
        assert!((a2a.snr_threshold - 10.0).abs() < 1e-12);
        assert!((a2a.noise_w - dbm_to_watts(-174.0 + 63.0103)).abs() < 1e-3 * a2a.noise_w);
        let g = cfg.geometry().unwrap();
        assert_eq!((g.tx_antennas(), g.rx_antennas()), (256, 64));
        assert_eq!(cfg.train_config(0).share_ratio, 1.4);
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        let a = Seeds::derive(7);
        assert_eq!(a, Seeds::derive(7));
        assert_ne!(a.scene, a.collect);
        assert_ne!(a, Seeds::derive(8));
    }

    #[test]
    fn targets_select_stages() {
        assert!(Target::Scene.includes(Stage::Scene));
        assert!(!Target::Scene.includes(Stage::Collect));
        assert!(Target::Converge.includes(Stage::Form));
        assert!(!Target::Train.includes(Stage::Converge));
        assert!(Target::Run.includes(Stage::Evaluate));
    }

    #[test]
    fn sweep_rejects_empty_values() {
        let dir = tempfile::tempdir().unwrap();
        assert!(sweep(&ExperimentConfig::default(), SweepAxis::Eta, &[], false, dir.path()).is_err());
    }

    #[test]
    fn eta_sweep_curves() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.convergence.mc_trials = 10_000;
        let pts = sweep(&cfg, SweepAxis::Eta, &[0.6, 1.0, 1.4], false, dir.path()).unwrap();
        for w in pts.windows(2) {
            for (a, b) in w[0].curve.iter().zip(&w[1].curve) {
                assert!(a.1 <= b.1);
            }
        }
        let text = fs::read_to_string(dir.path().join("sweep_eta_summary.csv")).unwrap();
        assert_eq!(text.lines().count(), 4);
    }
}
