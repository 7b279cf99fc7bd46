use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use objnav_core::harness::io::{
    append_results, load_dataset, map_path, save_dataset, trace_path, write_map, write_metadata, write_results,
    write_summary, write_trace, read_trace, read_trace_meta, RunMetadata, TraceMeta,
};
use objnav_core::harness::render::{render, RenderOptions};
use objnav_core::harness::{
    ablation_row, generate_episodes, generate_scenes, map_config_for, resolve_workers, run_suite, RunConfig,
    RunOptions, SuiteConfig,
};
use objnav_core::mapping::SemanticMap;
use objnav_core::scene::{Episode, Scene, SceneParams};

#[derive(Parser, Debug)]
#[command(name = "objnav", version, about = "Gridworld object-goal navigation runs")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scene and episode dataset.
    GenScenes {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 4)]
        episodes_per_scene: usize,
        /// Scene generation parameters (.toml or .json). Defaults to the standard suite.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every episode once with the configured helpers.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory from `gen-scenes`; overrides `dataset` in the config.
        #[arg(long)]
        episodes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; overrides the config (0 = all cores).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        no_traces: bool,
        /// Also write final map snapshots.
        #[arg(long)]
        maps: bool,
    },
    /// Run the helper ablation matrix.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Render a trace and/or a map snapshot to PNG or PPM.
    Render {
        #[arg(long, required_unless_present = "map")]
        trace: Option<PathBuf>,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Pixels per map cell.
        #[arg(long, default_value_t = 1)]
        scale: usize,
    },
    /// Write the default configuration.
    InitConfig {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenScenes {
            seed,
            count,
            episodes_per_scene,
            params,
            out,
        } => gen_scenes(seed, count, episodes_per_scene, params.as_deref(), &out),
        Command::Run {
            config,
            episodes,
            out,
            workers,
            no_traces,
            maps,
        } => {
            let cfg = load_config(config.as_deref(), episodes, workers)?;
            run(&cfg, &out, !no_traces, maps)
        }
        Command::Ablate {
            config,
            episodes,
            out,
            workers,
        } => {
            let cfg = load_config(config.as_deref(), episodes, workers)?;
            ablate(&cfg, &out)
        }
        Command::Render { trace, map, out, scale } => render_cmd(trace.as_deref(), map.as_deref(), &out, scale),
        Command::InitConfig { out } => {
            RunConfig::default().save(&out)?;
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>, episodes: Option<PathBuf>, workers: Option<usize>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if episodes.is_some() {
        cfg.dataset = episodes;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn load_params(path: &Path) -> Result<SceneParams> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text)?,
        Some("json") => serde_json::from_str(&text)?,
        _ => bail!("{}: expected a .toml or .json file", path.display()),
    })
}

fn gen_scenes(seed: u64, count: usize, per_scene: usize, params: Option<&Path>, out: &Path) -> Result<()> {
    let mut suite = SuiteConfig {
        master_seed: seed,
        scene_count: count,
        episodes_per_scene: per_scene,
        ..RunConfig::default().suite
    };
    if let Some(p) = params {
        suite.scene_params = load_params(p)?;
    }
    let scenes = generate_scenes(&suite)?;
    let episodes = generate_episodes(&suite, &scenes);
    save_dataset(out, &scenes, &episodes)?;
    println!("{} scenes, {} episodes -> {}", scenes.len(), episodes.len(), out.display());
    Ok(())
}

fn suite_data(cfg: &RunConfig) -> Result<(Vec<Scene>, Vec<Episode>)> {
    match &cfg.dataset {
        Some(dir) => Ok(load_dataset(dir)?),
        None => {
            let scenes = generate_scenes(&cfg.suite)?;
            let episodes = generate_episodes(&cfg.suite, &scenes);
            Ok((scenes, episodes))
        }
    }
}

fn run(cfg: &RunConfig, out: &Path, keep_traces: bool, keep_maps: bool) -> Result<()> {
    let (scenes, episodes) = suite_data(cfg)?;
    log::info!("{} scenes, {} episodes, config {}", scenes.len(), episodes.len(), cfg.hash());
    let built = cfg.build_advisors()?;
    let opts = RunOptions {
        workers: cfg.workers,
        keep_traces,
        keep_maps,
    };
    let res = run_suite(&scenes, &episodes, &cfg.agent, built.as_advisors(), &cfg.failure, &opts);
    let hash = cfg.hash();
    let toggles = cfg.agent.policy.toggles;
    write_results(&out.join("results.jsonl"), &hash, &toggles.label(), &res.results)?;
    let row = ablation_row(toggles, &res.results, res.metrics);
    write_summary(&out.join("summary.csv"), std::slice::from_ref(&row), &hash)?;
    for (i, ep) in episodes.iter().enumerate() {
        let Some(scene) = scenes.iter().find(|s| s.id == ep.scene_id) else { continue };
        if keep_traces && res.results[i].invalid.is_none() {
            let meta = TraceMeta {
                episode_id: ep.id,
                scene_id: ep.scene_id.clone(),
                target: ep.target,
                map: map_config_for(scene, &ep.start, &cfg.agent.map),
                origin: ep.start.position(),
            };
            write_trace(&trace_path(&out.join("traces"), ep.id), &meta, &res.traces[i])?;
        }
        if let Some(map) = &res.maps[i] {
            write_map(&map_path(&out.join("maps"), ep.id), map)?;
        }
    }
    let invalid = res.results.iter().filter(|r| r.invalid.is_some()).count();
    for r in res.results.iter().filter(|r| r.invalid.is_some()) {
        log::warn!("episode {} invalid: {}", r.episode_id, r.invalid.as_deref().unwrap_or(""));
    }
    let meta = RunMetadata::new("run", cfg, episodes.len(), invalid, resolve_workers(cfg.workers));
    write_metadata(out, &meta, cfg)?;
    println!(
        "{}: SR {:.3} SPL {:.3} DTG {:.3} over {} episodes ({} invalid)",
        row.label, row.sr, row.spl, row.dtg, row.episodes, invalid
    );
    Ok(())
}

fn ablate(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.ablation.is_empty() {
        bail!("config has no ablation rows");
    }
    let (scenes, episodes) = suite_data(cfg)?;
    let built = cfg.build_advisors()?;
    let hash = cfg.hash();
    let opts = RunOptions {
        workers: cfg.workers,
        ..RunOptions::default()
    };
    let results_path = out.join("results.jsonl");
    std::fs::create_dir_all(out)?;
    std::fs::write(&results_path, b"")?;
    let mut rows = Vec::new();
    let mut invalid = 0;
    for &toggles in &cfg.ablation {
        let mut agent = cfg.agent.clone();
        agent.policy.toggles = toggles;
        log::info!("ablation row {}", toggles.label());
        let res = run_suite(&scenes, &episodes, &agent, built.as_advisors(), &cfg.failure, &opts);
        append_results(&results_path, &hash, &toggles.label(), &res.results)?;
        invalid = invalid.max(res.results.iter().filter(|r| r.invalid.is_some()).count());
        let row = ablation_row(toggles, &res.results, res.metrics);
        println!(
            "{:>5}  SR {:.3}  SPL {:.3}  DTG {:.3}  collision {:5.1}%  exploration {:5.1}%  detection {:5.1}%",
            row.label, row.sr, row.spl, row.dtg, row.collision_pct, row.exploration_pct, row.detection_pct
        );
        rows.push(row);
    }
    write_summary(&out.join("summary.csv"), &rows, &hash)?;
    let meta = RunMetadata::new("ablate", cfg, episodes.len(), invalid, resolve_workers(cfg.workers));
    write_metadata(out, &meta, cfg)?;
    Ok(())
}

fn render_cmd(trace: Option<&Path>, map: Option<&Path>, out: &Path, scale: usize) -> Result<()> {
    let map = match map {
        Some(p) => Some(SemanticMap::load_snapshot(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let trace = match trace {
        Some(p) => Some((read_trace(p)?, read_trace_meta(p)?)),
        None => None,
    };
    let opts = RenderOptions {
        scale,
        ..RenderOptions::default()
    };
    let img = render(map.as_ref(), trace.as_ref().map(|(r, m)| (r.as_slice(), m.as_ref())), &opts)?;
    img.save(out)?;
    Ok(())
}
