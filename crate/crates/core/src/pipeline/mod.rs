//! End-to-end workflow driven by one configuration file: simulate, fit the
//! encoders, train latent dynamics, forecast and score, export plot data.
//!
//! Every stage writes into its own directory under the stage root and
//! finishes by writing `stamp.json` with a hash of the configuration it
//! depends on (including the upstream stamps). A stage whose stamp matches
//! is skipped unless forced.

mod config;
mod evaluate;
mod export;
mod manifold;
mod rom;
mod simulate;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, write_atomic, SnapshotMatrix, Split};
use crate::dmaps::{nystrom_extend, DmapsModel, EmbeddingKind};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::knn_lift::KnnLifter;
use crate::pod::{pod_decode, pod_encode, PodBasis};

pub use config::{
    EvaluationConfig, GridConfig, LifterConfig, ManifoldConfig, MvarConfig, PipelineConfig, SimulationConfig,
};
pub use simulate::{RunRecord, SimulationManifest};

use config::hash_json;

/// Lag values the full-size study reported, shown next to ours.
pub const REFERENCE_LAG_POD: usize = 5;
pub const REFERENCE_LAG_DMAPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Manifold,
    Rom,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Simulate, Stage::Manifold, Stage::Rom, Stage::Evaluate];

    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Manifold => "manifold",
            Stage::Rom => "rom",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn command(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Manifold => "build-manifold",
            Stage::Rom => "train-rom",
            Stage::Evaluate => "forecast-evaluate",
        }
    }

    fn upstream(self) -> Option<Stage> {
        match self {
            Stage::Simulate => None,
            Stage::Manifold => Some(Stage::Simulate),
            Stage::Rom => Some(Stage::Manifold),
            Stage::Evaluate => Some(Stage::Rom),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.command())
    }
}

/// What a stage did.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: Stage,
    pub skipped: bool,
    /// Per-unit failures that did not stop the stage.
    pub failures: Vec<String>,
    pub notes: Vec<String>,
}

impl StageReport {
    fn new(stage: Stage) -> Self {
        StageReport {
            stage,
            skipped: false,
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Stamp {
    stage: String,
    hash: String,
    failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PipelineOptions {
    /// Worker threads; all cores when unset.
    pub workers: Option<usize>,
    /// Recompute stages even when their stamp matches.
    pub force: bool,
}

pub struct Pipeline {
    config: PipelineConfig,
    root: PathBuf,
    options: PipelineOptions,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, root: impl Into<PathBuf>, options: PipelineOptions) -> Result<Self> {
        config.validate()?;
        if options.workers == Some(0) {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        Ok(Pipeline {
            config,
            root: root.into(),
            options,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.dir_name())
    }

    pub fn stage_hash(&self, stage: Stage) -> String {
        let c = &self.config;
        match stage {
            Stage::Simulate => hash_json(&(&c.grid, &c.hughes, &c.simulation, &c.splits)),
            Stage::Manifold => hash_json(&(
                self.stage_hash(Stage::Simulate),
                &c.manifold,
                &c.lifter,
                &c.evaluation.w1,
            )),
            Stage::Rom => hash_json(&(self.stage_hash(Stage::Manifold), &c.mvar)),
            Stage::Evaluate => hash_json(&(self.stage_hash(Stage::Rom), &c.lifter, &c.evaluation)),
        }
    }

    fn read_stamp(&self, stage: Stage) -> Option<Stamp> {
        let text = fs::read_to_string(self.stage_dir(stage).join("stamp.json")).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn is_current(&self, stage: Stage) -> bool {
        matches!(self.read_stamp(stage), Some(s) if s.hash == self.stage_hash(stage) && s.failures == 0)
    }

    /// Fails unless `stage` has completed with the current configuration.
    fn require(&self, stage: Stage) -> Result<()> {
        match self.read_stamp(stage) {
            None => Err(Error::NotFound(format!(
                "no {} outputs under {}; run `{}` first",
                stage.dir_name(),
                self.root.display(),
                stage.command()
            ))),
            Some(s) if s.hash != self.stage_hash(stage) => Err(Error::Lineage(format!(
                "{} outputs were produced by a different configuration; rerun `{}`",
                stage.dir_name(),
                stage.command()
            ))),
            Some(_) => Ok(()),
        }
    }

    /// Runs `body` in a fresh stage directory unless the stage is current.
    fn run_stage(
        &self,
        stage: Stage,
        body: impl FnOnce(&Path, &mut StageReport) -> Result<()> + Send,
    ) -> Result<StageReport> {
        if let Some(up) = stage.upstream() {
            self.require(up)?;
        }
        let mut report = StageReport::new(stage);
        if !self.options.force && self.is_current(stage) {
            report.skipped = true;
            return Ok(report);
        }
        let dir = self.stage_dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let started = Instant::now();
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.options.workers {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| body(&dir, &mut report))?;
        let elapsed = started.elapsed().as_secs_f64();
        // wall times vary between runs, so they stay out of the stamped outputs
        write_json(&dir.join("timing.json"), &serde_json::json!({ "wall_seconds": elapsed }))?;
        let stamp = Stamp {
            stage: stage.dir_name().into(),
            hash: self.stage_hash(stage),
            failures: report.failures.len(),
        };
        write_json(&dir.join("stamp.json"), &stamp)?;
        Ok(report)
    }

    pub fn simulate(&self) -> Result<StageReport> {
        self.run_stage(Stage::Simulate, |dir, report| simulate::run(self, dir, report))
    }

    pub fn build_manifold(&self) -> Result<StageReport> {
        self.run_stage(Stage::Manifold, |dir, report| manifold::run(self, dir, report))
    }

    pub fn train_rom(&self) -> Result<StageReport> {
        self.run_stage(Stage::Rom, |dir, report| rom::run(self, dir, report))
    }

    pub fn forecast_evaluate(&self) -> Result<StageReport> {
        self.run_stage(Stage::Evaluate, |dir, report| evaluate::run(self, dir, report))
    }

    /// Writes plot data for one artifact id and returns the files written.
    pub fn export(&self, what: &str) -> Result<Vec<PathBuf>> {
        export::run(self, what)
    }

    /// All four stages in order, stopping at the first hard error.
    pub fn run_all(&self) -> Result<Vec<StageReport>> {
        Ok(vec![
            self.simulate()?,
            self.build_manifold()?,
            self.train_rom()?,
            self.forecast_evaluate()?,
        ])
    }

    fn grid(&self) -> Result<Arc<Grid>> {
        Ok(Arc::new(self.config.grid.spec().build()?))
    }

    fn run_path(&self, run_id: u32) -> PathBuf {
        self.stage_dir(Stage::Simulate).join(format!("run_{run_id:04}.json"))
    }

    pub fn simulation_manifest(&self) -> Result<SimulationManifest> {
        read_json(&self.stage_dir(Stage::Simulate).join("manifest.json"))
    }

    pub fn load_run(&self, run_id: u32) -> Result<SnapshotMatrix> {
        let manifest = self.simulation_manifest()?;
        if !manifest.runs.iter().any(|r| r.run_id == run_id) {
            let ids: Vec<String> = manifest.runs.iter().map(|r| r.run_id.to_string()).collect();
            return Err(Error::NotFound(format!(
                "run {run_id} does not exist; available run ids: {}",
                ids.join(", ")
            )));
        }
        load_dataset(&self.run_path(run_id))
    }

    /// Successfully simulated runs of one split, by id.
    fn runs_in(&self, manifest: &SimulationManifest, split: Split) -> Vec<u32> {
        manifest.runs.iter().filter(|r| r.split == split).map(|r| r.run_id).collect()
    }

    fn manifold_snapshots(&self) -> Result<SnapshotMatrix> {
        load_dataset(&self.stage_dir(Stage::Manifold).join("train_snapshots.json"))
    }
}

pub(crate) fn model_name(kind: EmbeddingKind, d: usize) -> String {
    match kind {
        EmbeddingKind::Pod => format!("pod_d{d}"),
        EmbeddingKind::Dmaps => format!("dmaps_d{d}"),
    }
}

pub(crate) fn kind_name(kind: EmbeddingKind) -> &'static str {
    match kind {
        EmbeddingKind::Pod => "pod",
        EmbeddingKind::Dmaps => "dmaps",
    }
}

/// An encoder/decoder pair for one latent dimension.
pub(crate) enum Encoder {
    Pod(PodBasis),
    Dmaps { model: DmapsModel, lifter: KnnLifter },
}

impl Encoder {
    /// Latent coordinates of a unit-mass snapshot.
    pub(crate) fn encode(&self, unit: &[f64]) -> Result<DVector<f64>> {
        match self {
            Encoder::Pod(b) => pod_encode(b, unit),
            Encoder::Dmaps { model, .. } => Ok(nystrom_extend(model, unit)?.coords),
        }
    }

    /// Unit-mass snapshot for a latent point.
    pub(crate) fn decode(&self, y: &[f64]) -> Result<DVector<f64>> {
        match self {
            Encoder::Pod(b) => pod_decode(b, y),
            Encoder::Dmaps { lifter, .. } => lifter.lift(y),
        }
    }
}

/// Unit-sum column `k` of a raw run matrix and its raw sum.
pub(crate) fn unit_column(run: &SnapshotMatrix, k: usize) -> Result<(Vec<f64>, f64)> {
    let s = run.columns[k].column_sum;
    if !(s > 0.0) {
        return Err(Error::ZeroMass);
    }
    Ok((run.data.column(k).iter().map(|v| v / s).collect(), s))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Header plus rows, newline-terminated.
pub(crate) fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}
