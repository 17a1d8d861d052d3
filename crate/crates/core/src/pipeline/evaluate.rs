use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::manifold::Artifacts;
use super::rom::{load_index, load_model, RomEntry};
use super::{kind_name, unit_column, write_csv, write_json, Encoder, Pipeline, StageReport};
use crate::dataset::{SnapshotMatrix, Split};
use crate::dmaps::EmbeddingKind;
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::grid::{neumaier_sum, Field, Grid, Quantity};
use crate::metrics::{evaluate_run, ErrorSeries, ErrorSummary, Stat, W1Options};
use crate::mvar::{forecast, MvarModel};

/// Forecast of one run with its largest unit-mass defect.
pub(crate) struct Rollout {
    pub series: ErrorSeries,
    pub mass_defect: f64,
}

/// Lifted forecast fields (density units) for every snapshot time of `truth`:
/// the first `lag` states are encoded truth, the rest free-run the model.
pub(crate) fn forecast_fields(
    enc: &Encoder,
    model: &MvarModel,
    truth: &SnapshotMatrix,
    grid: &Arc<Grid>,
) -> Result<(Vec<Field>, f64)> {
    let t = truth.ncols();
    let l = model.lag;
    if t <= l {
        return Err(Error::Shape(format!("run has {t} snapshots, lag is {l}")));
    }
    let warmup: Vec<DVector<f64>> = (0..l)
        .map(|k| enc.encode(&unit_column(truth, k)?.0))
        .collect::<Result<_>>()?;
    let predicted = forecast(model, &warmup, t - l)?;
    let scale = truth.columns[0].column_sum;
    let mut defect = 0.0f64;
    let mut fields = Vec::with_capacity(t);
    for (k, y) in warmup.iter().chain(&predicted).enumerate() {
        let x = enc.decode(y.as_slice())?;
        defect = defect.max((neumaier_sum(x.iter().copied()) - 1.0).abs());
        let values: Vec<f64> = x.iter().map(|v| v * scale).collect();
        fields.push(Field::from_parts(grid.clone(), values, Quantity::Density, truth.columns[k].time));
    }
    Ok((fields, defect))
}

fn rollout(enc: &Encoder, model: &MvarModel, truth: &SnapshotMatrix, grid: &Arc<Grid>, w1: &W1Options) -> Result<Rollout> {
    let (approx, mass_defect) = forecast_fields(enc, model, truth, grid)?;
    let truth_fields: Vec<Field> = (0..truth.ncols()).map(|k| truth.field(grid, k)).collect();
    Ok(Rollout {
        series: evaluate_run(&truth_fields, &approx, w1)?,
        mass_defect,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct ModelScore {
    pub model: String,
    pub kind: EmbeddingKind,
    pub d: usize,
    pub lag: usize,
    pub runs: usize,
    pub failed_runs: usize,
    /// Pooled over every snapshot of every completed run.
    pub summary: ErrorSummary,
}

#[derive(Default)]
struct Ledger {
    failures: Vec<String>,
    mass: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
fn score_split(
    p: &Pipeline,
    art: &Artifacts,
    entries: &[&RomEntry],
    split: Split,
    grid: &Arc<Grid>,
    dir: &Path,
    ledger: &mut Ledger,
) -> Result<Vec<ModelScore>> {
    let cfg = p.config();
    let manifest = p.simulation_manifest()?;
    let ids = p.runs_in(&manifest, split);
    let runs: Vec<SnapshotMatrix> = ids.iter().map(|&id| p.load_run(id)).collect::<Result<_>>()?;
    let mut scores = Vec::new();
    for entry in entries {
        let enc = art.encoder(entry.kind, entry.d, &cfg.lifter)?;
        let model = load_model(p, entry, &art.index.source_hash)?;
        let mut pooled: [Vec<f64>; 3] = Default::default();
        let mut failed = 0;
        for run in &runs {
            let run_id = run.columns[0].run_id;
            match rollout(&enc, &model, run, grid, &cfg.evaluation.w1) {
                Ok(r) => {
                    r.series
                        .save_csv(&dir.join(split.as_str()).join(&entry.name).join(format!("run_{run_id:04}.csv")))?;
                    pooled[0].extend(&r.series.eps2);
                    pooled[1].extend(&r.series.eps2_rel);
                    pooled[2].extend(&r.series.w1);
                    ledger
                        .mass
                        .push(format!("{split},{},{run_id},{}", entry.name, fmt_f64(r.mass_defect)));
                }
                Err(e @ Error::Instability { .. }) => {
                    failed += 1;
                    ledger.failures.push(format!("{split},{},{run_id},{e}", entry.name));
                }
                Err(e) => return Err(e),
            }
        }
        scores.push(ModelScore {
            model: entry.name.clone(),
            kind: entry.kind,
            d: entry.d,
            lag: entry.lag,
            runs: runs.len(),
            failed_runs: failed,
            summary: ErrorSummary {
                eps2: Stat::of(&pooled[0]),
                eps2_rel: Stat::of(&pooled[1]),
                w1: Stat::of(&pooled[2]),
            },
        });
    }
    let stat = |s: &Stat| format!("{},{},{}", fmt_f64(s.mean), fmt_f64(s.p10), fmt_f64(s.p90));
    write_csv(
        &dir.join(format!("summary_{split}.csv")),
        "model,eps2_mean,eps2_p10,eps2_p90,eps2_rel_mean,eps2_rel_p10,eps2_rel_p90,w1_mean,w1_p10,w1_p90",
        scores.iter().map(|s| {
            format!(
                "{},{},{},{}",
                s.model,
                stat(&s.summary.eps2),
                stat(&s.summary.eps2_rel),
                stat(&s.summary.w1)
            )
        }),
    )?;
    Ok(scores)
}

/// Best model of one encoder family: fewest failed runs, then lowest mean
/// W1, then smallest d.
fn select<'a>(scores: &'a [ModelScore], kind: EmbeddingKind) -> Option<&'a ModelScore> {
    let key = |s: &ModelScore| {
        let w = s.summary.w1.mean;
        (s.failed_runs, if w.is_nan() { f64::INFINITY } else { w }, s.d)
    };
    scores
        .iter()
        .filter(|s| s.kind == kind)
        .min_by(|a, b| {
            let (ka, kb) = (key(a), key(b));
            ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.cmp(&kb.2))
        })
}

pub(super) fn run(p: &Pipeline, dir: &Path, report: &mut StageReport) -> Result<()> {
    let cfg = p.config();
    let ec = &cfg.evaluation;
    let art = Artifacts::load(p)?;
    let entries = load_index(p)?;
    let grid = p.grid()?;
    let mut ledger = Ledger::default();

    let all: Vec<&RomEntry> = entries.iter().collect();
    let candidates = score_split(p, &art, &all, ec.select_split, &grid, dir, &mut ledger)?;
    let mut selected: Vec<&ModelScore> = Vec::new();
    for kind in [EmbeddingKind::Pod, EmbeddingKind::Dmaps] {
        if let Some(s) = select(&candidates, kind) {
            report.notes.push(format!(
                "selected {} on {} (mean W1 {:.4e}, {} failed runs)",
                s.model, ec.select_split, s.summary.w1.mean, s.failed_runs
            ));
            selected.push(s);
        }
    }
    write_csv(
        &dir.join("selection.csv"),
        "model,kind,d,lag,runs,failed_runs,w1_mean,selected",
        candidates.iter().map(|s| {
            format!(
                "{},{},{},{},{},{},{},{}",
                s.model,
                kind_name(s.kind),
                s.d,
                s.lag,
                s.runs,
                s.failed_runs,
                fmt_f64(s.summary.w1.mean),
                selected.iter().any(|t| t.model == s.model)
            )
        }),
    )?;

    let chosen: Vec<&RomEntry> = entries
        .iter()
        .filter(|e| selected.iter().any(|s| s.model == e.name))
        .collect();
    let mut reported = Vec::new();
    for &split in &ec.report_splits {
        if split == ec.select_split {
            continue;
        }
        let manifest = p.simulation_manifest()?;
        if p.runs_in(&manifest, split).is_empty() {
            report.notes.push(format!("split {split} has no runs; skipped"));
            continue;
        }
        let scores = score_split(p, &art, &chosen, split, &grid, dir, &mut ledger)?;
        for s in &scores {
            report.notes.push(format!(
                "{split} {}: eps2_rel {:.4e}, W1 {:.4e}",
                s.model, s.summary.eps2_rel.mean, s.summary.w1.mean
            ));
        }
        reported.push((split, scores));
    }
    for f in &ledger.failures {
        report.notes.push(format!("forecast aborted: {f}"));
    }
    write_csv(&dir.join("failures.csv"), "split,model,run_id,error", ledger.failures)?;
    write_csv(&dir.join("mass_check.csv"), "split,model,run_id,max_unit_mass_defect", ledger.mass)?;
    write_json(
        &dir.join("scores.json"),
        &serde_json::json!({
            "select_split": ec.select_split,
            "candidates": candidates,
            "reported": reported.iter().map(|(s, v)| serde_json::json!({ "split": s, "scores": v })).collect::<Vec<_>>(),
        }),
    )
}
