//! Dataset generation, episode and suite execution, ablation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{classify_failure, compute_metrics, episode_dtg, shortest_path_length, FailureClass, FailureConfig, MetricInput, Metrics};
use crate::advisors::{mix64, FrontierScorer, TargetVerifier};
use crate::mapping::{MapConfig, SemanticMap};
use crate::policy::{Agent, AgentConfig, HelperToggles, TraceRecord};
use crate::scene::{check_success, generate_scene, AgentPose, Episode, Scene, SceneError, SceneParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub master_seed: u64,
    pub scene_count: usize,
    pub episodes_per_scene: usize,
    pub scene_params: SceneParams,
    pub max_steps: u32,
    pub success_radius: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            scene_count: 10,
            episodes_per_scene: 4,
            scene_params: SceneParams::default(),
            max_steps: crate::scene::DEFAULT_MAX_STEPS,
            success_radius: 1.0,
        }
    }
}

/// Seed of stream `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index.wrapping_add(0x5eed)))
}

pub fn generate_scenes(cfg: &SuiteConfig) -> Result<Vec<Scene>, SceneError> {
    (0..cfg.scene_count)
        .into_par_iter()
        .map(|i| generate_scene(derive_seed(cfg.master_seed, i as u64), &cfg.scene_params))
        .collect()
}

/// Episodes over `scenes`: a spawn point, a present target category and a
/// heading per episode, all drawn from the episode's own seed.
pub fn generate_episodes(cfg: &SuiteConfig, scenes: &[Scene]) -> Vec<Episode> {
    let mut out = Vec::with_capacity(scenes.len() * cfg.episodes_per_scene);
    for (si, scene) in scenes.iter().enumerate() {
        let mut present: Vec<u8> = scene.target_instances.iter().map(|i| i.category).collect();
        present.sort_unstable();
        present.dedup();
        if present.is_empty() || scene.spawn_points.is_empty() {
            continue;
        }
        for k in 0..cfg.episodes_per_scene {
            let id = (si * cfg.episodes_per_scene + k) as u64;
            let seed = derive_seed(cfg.master_seed ^ 0xe915_0de5, id);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spawn = scene.spawn_points[rng.random_range(0..scene.spawn_points.len())];
            let target = present[rng.random_range(0..present.len())];
            let heading = f64::from(rng.random_range(0..12u32)) * 30.0;
            out.push(Episode {
                id,
                scene_id: scene.id.clone(),
                start: scene.spawn_pose(spawn, heading),
                target,
                max_steps: cfg.max_steps,
                success_radius: cfg.success_radius,
                seed,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: u64,
    pub scene_id: String,
    pub target: u8,
    pub success: bool,
    pub shortest_length: f64,
    pub path_length: f64,
    pub final_distance: f64,
    pub dtg: f64,
    pub steps: u32,
    pub stopped: bool,
    pub failure_class: Option<FailureClass>,
    /// Set when the episode could not be scored (unreachable target, runtime error).
    pub invalid: Option<String>,
}

impl EpisodeResult {
    pub fn metric_input(&self, success_radius: f64) -> MetricInput {
        MetricInput {
            success: self.success,
            shortest_length: self.shortest_length,
            path_length: self.path_length,
            final_distance: self.final_distance,
            success_radius,
        }
    }
}

/// The scorer and verifier an agent consults.
#[derive(Clone, Copy)]
pub struct Advisors<'a> {
    pub scorer: &'a dyn FrontierScorer,
    pub verifier: &'a dyn TargetVerifier,
}

pub struct EpisodeRun {
    pub result: EpisodeResult,
    pub trace: Vec<TraceRecord>,
    /// Final semantic map; `None` for invalid episodes.
    pub map: Option<SemanticMap>,
}

/// `cfg` with a map large enough to hold the whole scene from `start`.
pub fn map_config_for(scene: &Scene, start: &AgentPose, cfg: &MapConfig) -> MapConfig {
    let w = scene.width() as f64 * scene.resolution;
    let h = scene.height() as f64 * scene.resolution;
    let reach_x = start.x.max(w - start.x);
    let reach_y = start.y.max(h - start.y);
    let side = |reach: f64| 2 * ((reach / cfg.resolution).ceil() as usize + 2);
    MapConfig {
        width: cfg.width.max(side(reach_x)),
        height: cfg.height.max(side(reach_y)),
        ..cfg.clone()
    }
}

fn invalid(ep: &Episode, reason: String) -> EpisodeRun {
    log::warn!("episode {} excluded: {reason}", ep.id);
    EpisodeRun {
        result: EpisodeResult {
            episode_id: ep.id,
            scene_id: ep.scene_id.clone(),
            target: ep.target,
            success: false,
            shortest_length: 0.0,
            path_length: 0.0,
            final_distance: 0.0,
            dtg: 0.0,
            steps: 0,
            stopped: false,
            failure_class: None,
            invalid: Some(reason),
        },
        trace: Vec::new(),
        map: None,
    }
}

/// Runs one episode to a stop or the step limit. The map grows beyond
/// `cfg.map` when the scene would not fit around the start pose.
pub fn run_episode(scene: &Scene, ep: &Episode, cfg: &AgentConfig, advisors: Advisors<'_>, failure: &FailureConfig) -> EpisodeRun {
    if let Err(e) = ep.validate(scene) {
        return invalid(ep, e.to_string());
    }
    let shortest = match shortest_path_length(scene, &ep.start, ep.target, ep.success_radius) {
        Ok(l) => l,
        Err(e) => return invalid(ep, e.to_string()),
    };
    let map = map_config_for(scene, &ep.start, &cfg.map);
    let sized;
    let cfg = if map == cfg.map {
        cfg
    } else {
        sized = AgentConfig { map, ..cfg.clone() };
        &sized
    };
    let mut agent = match Agent::new(scene, ep.start, ep.target, ep.success_radius, ep.id, cfg, advisors.scorer, advisors.verifier) {
        Ok(a) => a,
        Err(e) => return invalid(ep, e.to_string()),
    };
    let mut trace = Vec::new();
    let mut path_length = 0.0;
    while (trace.len() as u32) < ep.max_steps && !agent.stopped() {
        match agent.step() {
            Ok(rec) => {
                path_length += rec.displacement;
                trace.push(rec);
            }
            Err(e) => return invalid(ep, e.to_string()),
        }
    }
    let pose = *agent.pose();
    let stopped = agent.stopped();
    let success = stopped && check_success(scene, &pose, ep.target, ep.success_radius);
    let final_distance = scene.distance_to_category(pose.position(), ep.target).unwrap_or(f64::INFINITY);
    let failure_class = (!success).then(|| classify_failure(&trace, &ep.start, failure));
    EpisodeRun {
        result: EpisodeResult {
            episode_id: ep.id,
            scene_id: ep.scene_id.clone(),
            target: ep.target,
            success,
            shortest_length: shortest,
            path_length,
            final_distance,
            dtg: episode_dtg(final_distance, ep.success_radius),
            steps: trace.len() as u32,
            stopped,
            failure_class,
            invalid: None,
        },
        trace,
        map: Some(agent.into_map()),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
    pub keep_traces: bool,
    pub keep_maps: bool,
}

pub struct SuiteOutput {
    pub results: Vec<EpisodeResult>,
    /// Empty per episode unless traces were kept.
    pub traces: Vec<Vec<TraceRecord>>,
    /// `None` per episode unless maps were kept.
    pub maps: Vec<Option<SemanticMap>>,
    pub metrics: Option<Metrics>,
}

pub fn resolve_workers(workers: usize) -> usize {
    if workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        workers
    }
}

/// Runs every episode, in parallel when more than one worker is available.
/// Results keep the episode order, so the worker count never changes them.
pub fn run_suite(
    scenes: &[Scene],
    episodes: &[Episode],
    cfg: &AgentConfig,
    advisors: Advisors<'_>,
    failure: &FailureConfig,
    opts: &RunOptions,
) -> SuiteOutput {
    let run = |ep: &Episode| -> EpisodeRun {
        let mut r = match scenes.iter().find(|s| s.id == ep.scene_id) {
            Some(scene) => run_episode(scene, ep, cfg, advisors, failure),
            None => invalid(ep, format!("unknown scene {}", ep.scene_id)),
        };
        if !opts.keep_traces {
            r.trace = Vec::new();
        }
        if !opts.keep_maps {
            r.map = None;
        }
        r
    };
    let workers = resolve_workers(opts.workers);
    let runs: Vec<EpisodeRun> = if workers <= 1 {
        episodes.iter().map(run).collect()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(|| episodes.par_iter().map(run).collect()),
            Err(_) => episodes.iter().map(run).collect(),
        }
    };
    let mut results = Vec::with_capacity(runs.len());
    let mut traces = Vec::with_capacity(runs.len());
    let mut maps = Vec::with_capacity(runs.len());
    for r in runs {
        results.push(r.result);
        traces.push(r.trace);
        maps.push(r.map);
    }
    let inputs: Vec<MetricInput> = results
        .iter()
        .zip(episodes)
        .filter(|(r, _)| r.invalid.is_none())
        .map(|(r, e)| r.metric_input(e.success_radius))
        .collect();
    SuiteOutput {
        metrics: compute_metrics(&inputs).ok(),
        results,
        traces,
        maps,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub toggles: HelperToggles,
    pub episodes: usize,
    pub sr: f64,
    pub spl: f64,
    pub dtg: f64,
    pub collision_failures: usize,
    pub exploration_failures: usize,
    pub detection_failures: usize,
    pub collision_pct: f64,
    pub exploration_pct: f64,
    pub detection_pct: f64,
}

/// The five standard rows: no helper, each helper alone, all helpers.
pub fn standard_ablation() -> Vec<HelperToggles> {
    let only = |c, e, d| HelperToggles {
        collision: c,
        exploration: e,
        detection: d,
    };
    vec![
        HelperToggles::none(),
        only(true, false, false),
        only(false, true, false),
        only(false, false, true),
        HelperToggles::all(),
    ]
}

pub fn ablation_row(toggles: HelperToggles, results: &[EpisodeResult], metrics: Option<Metrics>) -> AblationRow {
    let valid: Vec<&EpisodeResult> = results.iter().filter(|r| r.invalid.is_none()).collect();
    let n = valid.len();
    let count = |class| valid.iter().filter(|r| r.failure_class == Some(class)).count();
    let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
    let (c, e, d) = (
        count(FailureClass::Collision),
        count(FailureClass::Exploration),
        count(FailureClass::Detection),
    );
    let m = metrics.unwrap_or(Metrics {
        sr: 0.0,
        spl: 0.0,
        dtg: 0.0,
        episodes: 0,
    });
    AblationRow {
        label: toggles.label(),
        toggles,
        episodes: n,
        sr: m.sr,
        spl: m.spl,
        dtg: m.dtg,
        collision_failures: c,
        exploration_failures: e,
        detection_failures: d,
        collision_pct: pct(c),
        exploration_pct: pct(e),
        detection_pct: pct(d),
    }
}

/// One suite run per toggle set over the same episodes.
pub fn run_ablation(
    rows: &[HelperToggles],
    scenes: &[Scene],
    episodes: &[Episode],
    base: &AgentConfig,
    advisors: Advisors<'_>,
    failure: &FailureConfig,
    workers: usize,
) -> Vec<AblationRow> {
    let opts = RunOptions {
        workers,
        ..RunOptions::default()
    };
    rows.iter()
        .map(|&toggles| {
            let mut cfg = base.clone();
            cfg.policy.toggles = toggles;
            let out = run_suite(scenes, episodes, &cfg, advisors, failure, &opts);
            ablation_row(toggles, &out.results, out.metrics)
        })
        .collect()
}
