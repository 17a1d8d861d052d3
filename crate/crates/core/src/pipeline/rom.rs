use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifold::Artifacts;
use super::{
    kind_name, model_name, read_json, unit_column, write_csv, write_json, Pipeline, Stage, StageReport,
    REFERENCE_LAG_DMAPS, REFERENCE_LAG_POD,
};
use crate::dataset::{SnapshotMatrix, Split};
use crate::dmaps::{nystrom_extend, EmbeddingKind};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::mvar::{fit_mvar, LagChoice, LatentTrajectory, LatentTrajectorySet, MvarModel};
use crate::pod::pod_encode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct RomEntry {
    pub name: String,
    pub kind: EmbeddingKind,
    pub d: usize,
    pub lag: usize,
    pub file: String,
}

/// Latent trajectories of every training run at the largest dimension of
/// each encoder, one matrix (T x d) per run.
pub(crate) struct EncodedRuns {
    pub run_ids: Vec<u32>,
    pub pod: Vec<DMatrix<f64>>,
    pub dmaps: Vec<DMatrix<f64>>,
}

pub(crate) fn encode_runs(art: &Artifacts, runs: &[SnapshotMatrix]) -> Result<EncodedRuns> {
    let (dp, dd) = (art.pod.d(), art.dmaps.d());
    let mut pod = Vec::with_capacity(runs.len());
    let mut dmaps = Vec::with_capacity(runs.len());
    for run in runs {
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..run.ncols())
            .into_par_iter()
            .map(|k| {
                let (unit, _) = unit_column(run, k)?;
                let yp = pod_encode(&art.pod, &unit)?;
                let yd = nystrom_extend(&art.dmaps, &unit)?.coords;
                Ok((yp.as_slice().to_vec(), yd.as_slice().to_vec()))
            })
            .collect::<Result<_>>()?;
        let t = rows.len();
        pod.push(DMatrix::from_fn(t, dp, |i, j| rows[i].0[j]));
        dmaps.push(DMatrix::from_fn(t, dd, |i, j| rows[i].1[j]));
    }
    Ok(EncodedRuns {
        run_ids: runs.iter().map(|r| r.columns[0].run_id).collect(),
        pod,
        dmaps,
    })
}

impl EncodedRuns {
    pub(crate) fn trajectories(&self, kind: EmbeddingKind, d: usize) -> Vec<LatentTrajectory> {
        let all = match kind {
            EmbeddingKind::Pod => &self.pod,
            EmbeddingKind::Dmaps => &self.dmaps,
        };
        self.run_ids
            .iter()
            .zip(all)
            .map(|(&run_id, s)| LatentTrajectory {
                run_id,
                states: s.columns(0, d).into_owned(),
            })
            .collect()
    }
}

pub(crate) fn load_index(p: &Pipeline) -> Result<Vec<RomEntry>> {
    read_json(&p.stage_dir(Stage::Rom).join("models.json"))
}

pub(crate) fn load_model(p: &Pipeline, entry: &RomEntry, source_hash: &str) -> Result<MvarModel> {
    let m = MvarModel::load(&p.stage_dir(Stage::Rom).join(&entry.file))?;
    if m.source_hash != source_hash {
        return Err(Error::Lineage(format!(
            "{} was trained on a different embedding",
            entry.name
        )));
    }
    Ok(m)
}

pub(super) fn run(p: &Pipeline, dir: &Path, report: &mut StageReport) -> Result<()> {
    let cfg = p.config();
    let art = Artifacts::load(p)?;
    let manifest = p.simulation_manifest()?;
    let runs: Vec<SnapshotMatrix> = p
        .runs_in(&manifest, Split::Train)
        .into_iter()
        .map(|id| p.load_run(id))
        .collect::<Result<_>>()?;
    let encoded = encode_runs(&art, &runs)?;
    drop(runs);

    let choice = match cfg.mvar.fixed_lag {
        Some(l) => LagChoice::Fixed(l),
        None => LagChoice::Bic(cfg.mvar.candidate_lags.clone()),
    };
    let targets: Vec<(EmbeddingKind, usize)> = art
        .index
        .pod_dims
        .iter()
        .map(|&d| (EmbeddingKind::Pod, d))
        .chain(art.index.dmaps_dims.iter().map(|&d| (EmbeddingKind::Dmaps, d)))
        .collect();

    let mut entries = Vec::new();
    let mut summary = Vec::new();
    for (kind, d) in targets {
        let name = model_name(kind, d);
        let set = LatentTrajectorySet::new(encoded.trajectories(kind, d), cfg.simulation.snapshot_dt)?;
        let mut model = match fit_mvar(&set, &choice) {
            Ok(m) => m,
            Err(e) => {
                report.failures.push(format!("{name}: {e}"));
                continue;
            }
        };
        model.kind = Some(kind);
        model.source_hash = art.index.source_hash.clone();
        let file = format!("{name}.json");
        model.save(&dir.join(&file))?;
        if !model.bic_table.is_empty() {
            write_csv(
                &dir.join(format!("bic_{name}.csv")),
                "lag,bic,log_likelihood,n_rows,n_coefficients",
                model.bic_table.iter().map(|r| {
                    format!(
                        "{},{},{},{},{}",
                        r.lag,
                        fmt_f64(r.bic),
                        fmt_f64(r.log_likelihood),
                        r.n_rows,
                        r.n_coefficients
                    )
                }),
            )?;
        }
        let reference = match kind {
            EmbeddingKind::Pod => REFERENCE_LAG_POD,
            EmbeddingKind::Dmaps => REFERENCE_LAG_DMAPS,
        };
        let rho = model.spectral_radius();
        report
            .notes
            .push(format!("{name}: lag {} (full-size study: {reference}), spectral radius {rho:.6}", model.lag));
        summary.push(format!(
            "{name},{},{d},{},{reference},{},{},{},{}",
            kind_name(kind),
            model.lag,
            model.n_coefficients(),
            model.n_rows,
            fmt_f64(rho),
            fmt_f64(model.train_radius)
        ));
        entries.push(RomEntry {
            name,
            kind,
            d,
            lag: model.lag,
            file,
        });
    }
    write_csv(
        &dir.join("summary.csv"),
        "model,kind,d,lag,reference_lag,n_coefficients,n_rows,spectral_radius,train_radius",
        summary,
    )?;
    if entries.is_empty() {
        return Err(Error::RankDeficient("no reduced-order model could be trained".into()));
    }
    write_json(&dir.join("models.json"), &entries)
}
