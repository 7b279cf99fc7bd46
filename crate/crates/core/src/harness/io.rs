//! On-disk formats: datasets, results, summaries, traces and run metadata.
//!
//! A run directory holds `config.json`, `metadata.json`, `results.jsonl`,
//! `summary.csv` and, when kept, `traces/` and `maps/`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::RunConfig;
use super::metrics::FailureConfig;
use super::runner::{AblationRow, EpisodeResult};
use crate::mapping::{MapConfig, MapError, SemanticMap};
use crate::policy::TraceRecord;
use crate::scene::{load_scene, save_scene, Episode, Point, Scene, SceneError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path} (line {line})")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    JsonWrite(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("{0}")]
    Dataset(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_json_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), IoError> {
    let mut out = create(path)?;
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

fn read_json_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| IoError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n").map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        line: 0,
        source,
    })
}

// ---------------------------------------------------------------- datasets

/// `scenes/<id>.json` plus `episodes.jsonl`.
pub fn save_dataset(dir: &Path, scenes: &[Scene], episodes: &[Episode]) -> Result<(), IoError> {
    let scene_dir = dir.join("scenes");
    std::fs::create_dir_all(&scene_dir).map_err(io_err(&scene_dir))?;
    for s in scenes {
        save_scene(s, &scene_dir.join(format!("{}.json", s.id)))?;
    }
    write_json_lines(&dir.join("episodes.jsonl"), episodes)
}

/// Scenes sorted by id, episodes in file order.
pub fn load_dataset(dir: &Path) -> Result<(Vec<Scene>, Vec<Episode>), IoError> {
    let scene_dir = dir.join("scenes");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&scene_dir)
        .map_err(io_err(&scene_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let scenes = paths.iter().map(|p| load_scene(p)).collect::<Result<Vec<_>, _>>()?;
    let episodes: Vec<Episode> = read_json_lines(&dir.join("episodes.jsonl"))?;
    if let Some(ep) = episodes.iter().find(|e| !scenes.iter().any(|s| s.id == e.scene_id)) {
        return Err(IoError::Dataset(format!("episode {} references missing scene {}", ep.id, ep.scene_id)));
    }
    Ok((scenes, episodes))
}

// ---------------------------------------------------------------- results

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    pub config_hash: String,
    /// Helper row the episode ran under.
    pub row: String,
    #[serde(flatten)]
    pub result: EpisodeResult,
}

pub fn write_results(path: &Path, config_hash: &str, row: &str, results: &[EpisodeResult]) -> Result<(), IoError> {
    write_json_lines(
        path,
        results.iter().map(|r| ResultLine {
            config_hash: config_hash.to_string(),
            row: row.to_string(),
            result: r.clone(),
        }),
    )
}

/// Appends to an existing results file (ablation rows share one file).
pub fn append_results(path: &Path, config_hash: &str, row: &str, results: &[EpisodeResult]) -> Result<(), IoError> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for r in results {
        let line = ResultLine {
            config_hash: config_hash.to_string(),
            row: row.to_string(),
            result: r.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultLine>, IoError> {
    read_json_lines(path)
}

/// One CSV row of a suite or ablation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub row: String,
    pub collision_helper: bool,
    pub exploration_helper: bool,
    pub detection_helper: bool,
    pub episodes: usize,
    pub sr: f64,
    pub spl: f64,
    pub dtg: f64,
    pub collision_failures: usize,
    pub exploration_failures: usize,
    pub detection_failures: usize,
    pub collision_failure_pct: f64,
    pub exploration_failure_pct: f64,
    pub detection_failure_pct: f64,
    pub config_hash: String,
}

impl SummaryRow {
    pub fn from_ablation(row: &AblationRow, config_hash: &str) -> Self {
        Self {
            row: row.label.clone(),
            collision_helper: row.toggles.collision,
            exploration_helper: row.toggles.exploration,
            detection_helper: row.toggles.detection,
            episodes: row.episodes,
            sr: row.sr,
            spl: row.spl,
            dtg: row.dtg,
            collision_failures: row.collision_failures,
            exploration_failures: row.exploration_failures,
            detection_failures: row.detection_failures,
            collision_failure_pct: row.collision_pct,
            exploration_failure_pct: row.exploration_pct,
            detection_failure_pct: row.detection_pct,
            config_hash: config_hash.to_string(),
        }
    }
}

pub fn write_summary(path: &Path, rows: &[AblationRow], config_hash: &str) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(SummaryRow::from_ablation(r, config_hash))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, IoError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<SummaryRow>, _>>()?)
}

// ---------------------------------------------------------------- traces

/// What a trace needs to be placed on a map: written next to each trace as
/// `<stem>.meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub episode_id: u64,
    pub scene_id: String,
    pub target: u8,
    pub map: MapConfig,
    /// World position of the map center cell.
    pub origin: Point,
}

pub fn trace_path(dir: &Path, episode_id: u64) -> PathBuf {
    dir.join(format!("episode_{episode_id:05}.jsonl"))
}

pub fn trace_meta_path(trace: &Path) -> PathBuf {
    trace.with_extension("meta.json")
}

/// One JSON record per step.
pub fn write_trace(path: &Path, meta: &TraceMeta, records: &[TraceRecord]) -> Result<(), IoError> {
    write_json_lines(path, records)?;
    write_json(&trace_meta_path(path), meta)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, IoError> {
    read_json_lines(path)
}

/// The sidecar of `trace`, if present.
pub fn read_trace_meta(trace: &Path) -> Result<Option<TraceMeta>, IoError> {
    let p = trace_meta_path(trace);
    if p.exists() {
        Ok(Some(read_json(&p)?))
    } else {
        Ok(None)
    }
}

pub fn map_path(dir: &Path, episode_id: u64) -> PathBuf {
    dir.join(format!("episode_{episode_id:05}.map"))
}

pub fn write_map(path: &Path, map: &SemanticMap) -> Result<(), IoError> {
    map.write_snapshot(create(path)?)?;
    Ok(())
}

// ---------------------------------------------------------------- metadata

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub command: String,
    pub version: String,
    pub episodes: usize,
    pub invalid_episodes: usize,
    pub workers: usize,
    /// Failure-class thresholds used for the failure columns.
    pub failure_thresholds: FailureConfig,
}

impl RunMetadata {
    pub fn new(command: &str, config: &RunConfig, episodes: usize, invalid: usize, workers: usize) -> Self {
        Self {
            config_hash: config.hash(),
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            episodes,
            invalid_episodes: invalid,
            workers,
            failure_thresholds: config.failure.clone(),
        }
    }
}

pub fn write_metadata(dir: &Path, meta: &RunMetadata, config: &RunConfig) -> Result<(), IoError> {
    write_json(&dir.join("metadata.json"), meta)?;
    write_json(&dir.join("config.json"), config)
}

pub fn read_metadata(dir: &Path) -> Result<RunMetadata, IoError> {
    read_json(&dir.join("metadata.json"))
}
