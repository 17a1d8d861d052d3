use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{kind_name, model_name, read_json, unit_column, write_csv, write_json, Encoder, Pipeline, Stage, StageReport};
use crate::dataset::{save_dataset, subsample_for_manifold, SnapshotMatrix};
use crate::dmaps::{dmaps_encode, fit_dmaps, nystrom_extend, DmapsModel, EmbeddingKind};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::grid::{Field, Quantity};
use crate::knn_lift::KnnLifter;
use crate::metrics::{l2_errors_values, wasserstein1, ErrorSeries, Stat};
use crate::pod::{cumulative_variance, fit_pod, fit_pod_with, pod_decode, pod_encode, PodBasis, PodDimension};

use super::config::LifterConfig;

/// What the manifold stage produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct ManifoldIndex {
    pub source_hash: String,
    pub snapshots: usize,
    /// POD dimension picked by the variance rule (or fixed in the config).
    pub pod_primary: usize,
    pub pod_dims: Vec<usize>,
    pub dmaps_dims: Vec<usize>,
    pub baseline_dmaps_dims: Vec<usize>,
    pub epsilon: f64,
}

pub(crate) struct Artifacts {
    pub x: SnapshotMatrix,
    pub index: ManifoldIndex,
    /// Basis with the largest POD dimension; smaller ones are its leading modes.
    pub pod: PodBasis,
    /// Diffusion map with the largest dimension.
    pub dmaps: DmapsModel,
}

impl Artifacts {
    pub(crate) fn load(p: &Pipeline) -> Result<Artifacts> {
        let dir = p.stage_dir(Stage::Manifold);
        let index: ManifoldIndex = read_json(&dir.join("manifold.json"))?;
        let x = p.manifold_snapshots()?;
        if x.content_hash() != index.source_hash {
            return Err(Error::Lineage("manifold snapshots do not match the manifold index".into()));
        }
        let pod = PodBasis::load(&dir.join("pod.json"))?;
        if pod.source_hash != index.source_hash {
            return Err(Error::Lineage("POD basis was fitted to different snapshots".into()));
        }
        let dmaps = DmapsModel::load(&dir.join("dmaps.json"), &x)?;
        Ok(Artifacts { x, index, pod, dmaps })
    }

    pub(crate) fn encoder(&self, kind: EmbeddingKind, d: usize, lifter: &LifterConfig) -> Result<Encoder> {
        match kind {
            EmbeddingKind::Pod => Ok(Encoder::Pod(self.pod.truncate(d)?)),
            EmbeddingKind::Dmaps => {
                let model = self.dmaps.truncate(d)?;
                let lifter = KnnLifter::new(&dmaps_encode(&model), &self.x, lifter.k, lifter.power)?;
                Ok(Encoder::Dmaps { model, lifter })
            }
        }
    }
}

fn sorted_unique(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

pub(super) fn run(p: &Pipeline, dir: &Path, report: &mut StageReport) -> Result<()> {
    let cfg = p.config();
    let mc = &cfg.manifold;
    let manifest = p.simulation_manifest()?;
    let train_ids = p.runs_in(&manifest, crate::dataset::Split::Train);
    if train_ids.is_empty() {
        return Err(Error::NotFound("no training runs were simulated".into()));
    }
    let train: Vec<SnapshotMatrix> = train_ids.iter().map(|&id| p.load_run(id)).collect::<Result<_>>()?;
    let x = subsample_for_manifold(&train, &mc.subsample)?;
    drop(train);
    save_dataset(&x, &dir.join("train_snapshots.json"))?;
    let m = x.ncols();

    let rule = match mc.pod_d {
        Some(d) => PodDimension::Fixed(d),
        None => PodDimension::Variance(mc.pod_variance),
    };
    let primary = fit_pod_with(&x, rule)?;
    let d0 = primary.d();
    let pod_dims = sorted_unique(
        mc.pod_offsets
            .iter()
            .filter_map(|&o| usize::try_from(d0 as i64 + o).ok())
            .filter(|&d| d >= 1 && d < m)
            .collect(),
    );
    let pod_max = *pod_dims.last().unwrap();
    let pod = if pod_max == d0 { primary } else { fit_pod(&x, pod_max)? };
    pod.save(&dir.join("pod.json"))?;
    report.notes.push(format!(
        "POD: d = {d0} from the variance rule, family {:?}",
        pod_dims
    ));

    let dmaps_dims = sorted_unique(mc.dmaps_dims.clone());
    let baseline_dmaps_dims = sorted_unique(mc.baseline_dmaps_dims.iter().chain(&mc.dmaps_dims).copied().collect());
    let dmaps_max = *baseline_dmaps_dims.last().unwrap();
    let dmaps = fit_dmaps(&x, dmaps_max)?;
    dmaps.save(&dir.join("dmaps.json"))?;
    report.notes.push(format!(
        "diffusion map: epsilon {:.4e}, leading eigenvalues {:?}",
        dmaps.epsilon,
        dmaps.eigenvalues.iter().take(4).map(|l| format!("{l:.4}")).collect::<Vec<_>>()
    ));

    let cum = cumulative_variance(&pod.spectrum);
    write_csv(
        &dir.join("pod_spectrum.csv"),
        "index,eigenvalue,cumulative_variance",
        pod.spectrum
            .iter()
            .zip(&cum)
            .enumerate()
            .map(|(i, (l, c))| format!("{},{},{}", i + 1, fmt_f64(*l), fmt_f64(*c))),
    )?;
    let mut dm_rows = vec![format!("0,{},", fmt_f64(dmaps.trivial_eigenvalue))];
    for (i, l) in dmaps.spectrum.iter().enumerate() {
        let ratio = if i + 1 < dmaps.spectrum.len() {
            fmt_f64(dmaps.spectrum[i + 1] / l)
        } else {
            String::new()
        };
        dm_rows.push(format!("{},{},{}", i + 1, fmt_f64(*l), ratio));
    }
    write_csv(&dir.join("dmaps_spectrum.csv"), "index,eigenvalue,next_ratio", dm_rows)?;

    let index = ManifoldIndex {
        source_hash: x.content_hash(),
        snapshots: m,
        pod_primary: d0,
        pod_dims,
        dmaps_dims,
        baseline_dmaps_dims,
        epsilon: dmaps.epsilon,
    };
    let art = Artifacts { x, index, pod, dmaps };
    baseline(p, &art, dir, report)?;
    write_json(&dir.join("manifold.json"), &art.index)
}

struct BaselineRow {
    name: String,
    kind: EmbeddingKind,
    d: usize,
    series: ErrorSeries,
}

/// Encode then decode (no dynamics) every `stride`-th snapshot of the
/// baseline runs, scored against the snapshot itself.
fn baseline(p: &Pipeline, art: &Artifacts, dir: &Path, report: &mut StageReport) -> Result<()> {
    let cfg = p.config();
    let mc = &cfg.manifold;
    let grid = p.grid()?;
    let manifest = p.simulation_manifest()?;
    let runs: Vec<SnapshotMatrix> = p
        .runs_in(&manifest, mc.baseline_split)
        .into_iter()
        .map(|id| p.load_run(id))
        .collect::<Result<_>>()?;
    let t_count = runs.iter().map(|r| r.ncols()).min().unwrap_or(0);
    let times: Vec<usize> = (0..t_count).step_by(mc.baseline_stride).collect();

    let pods: Vec<PodBasis> = art
        .index
        .pod_dims
        .iter()
        .map(|&d| art.pod.truncate(d))
        .collect::<Result<_>>()?;
    let dm_dims = &art.index.baseline_dmaps_dims;
    let lifters: Vec<KnnLifter> = dm_dims
        .iter()
        .map(|&d| {
            let emb = dmaps_encode(&art.dmaps.truncate(d)?);
            KnnLifter::new(&emb, &art.x, cfg.lifter.k, cfg.lifter.power)
        })
        .collect::<Result<_>>()?;
    let n_models = pods.len() + lifters.len();

    let items: Vec<(usize, usize)> = (0..runs.len()).flat_map(|r| times.iter().map(move |&k| (r, k))).collect();
    let scored: Vec<Vec<(f64, f64, f64)>> = items
        .par_iter()
        .map(|&(r, k)| -> Result<Vec<(f64, f64, f64)>> {
            let run = &runs[r];
            let (unit, s) = unit_column(run, k)?;
            let truth = run.field(&grid, k);
            let mut approx: Vec<DVector<f64>> = Vec::with_capacity(n_models);
            let y_pod = pod_encode(&art.pod, &unit)?;
            for b in &pods {
                approx.push(pod_decode(b, &y_pod.as_slice()[..b.d()])?);
            }
            let y_dm = nystrom_extend(&art.dmaps, &unit)?.coords;
            for (l, &d) in lifters.iter().zip(dm_dims) {
                approx.push(l.lift(&y_dm.as_slice()[..d])?);
            }
            approx
                .into_iter()
                .map(|a| {
                    let values: Vec<f64> = a.iter().map(|v| v * s).collect();
                    let l2 = l2_errors_values(truth.values(), &values);
                    let f = Field::from_parts(grid.clone(), values, Quantity::Density, truth.time());
                    let w = wasserstein1(&truth, &f, &cfg.evaluation.w1)?;
                    Ok((l2.abs, l2.rel.unwrap_or(f64::NAN), w))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let names: Vec<(EmbeddingKind, usize)> = pods
        .iter()
        .map(|b| (EmbeddingKind::Pod, b.d()))
        .chain(dm_dims.iter().map(|&d| (EmbeddingKind::Dmaps, d)))
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut rows = Vec::new();
    for (mi, &(kind, d)) in names.iter().enumerate() {
        let mut eps2 = Vec::new();
        let mut rel = Vec::new();
        let mut w1 = Vec::new();
        let mut t = Vec::new();
        for (ti, &k) in times.iter().enumerate() {
            let at: Vec<(f64, f64, f64)> = (0..runs.len()).map(|r| scored[r * times.len() + ti][mi]).collect();
            t.push(runs[0].columns[k].time);
            eps2.push(mean(&at.iter().map(|a| a.0).collect::<Vec<_>>()));
            rel.push(mean(&at.iter().map(|a| a.1).collect::<Vec<_>>()));
            w1.push(mean(&at.iter().map(|a| a.2).collect::<Vec<_>>()));
        }
        let name = model_name(kind, d);
        let series = ErrorSeries::from_parts(t, eps2, rel, w1);
        series.save_csv(&dir.join("baseline").join(format!("{name}.csv")))?;
        rows.push(BaselineRow { name, kind, d, series });
    }

    let window_mean = |s: &ErrorSeries, keep: &dyn Fn(f64) -> bool| {
        let v: Vec<f64> = s.times.iter().zip(&s.w1).filter(|(t, _)| keep(**t)).map(|(_, w)| *w).collect();
        Stat::of(&v).mean
    };
    let early = |t: f64| t < mc.early_until;
    let late = |t: f64| t >= mc.late_from;
    write_csv(
        &dir.join("baseline_summary.csv"),
        "model,kind,d,eps2_mean,eps2_rel_mean,w1_mean,w1_early_mean,w1_late_mean",
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{}",
                r.name,
                kind_name(r.kind),
                r.d,
                fmt_f64(r.series.summary.eps2.mean),
                fmt_f64(r.series.summary.eps2_rel.mean),
                fmt_f64(r.series.summary.w1.mean),
                fmt_f64(window_mean(&r.series, &early)),
                fmt_f64(window_mean(&r.series, &late))
            )
        }),
    )?;

    // spread across the diffusion-map dimensions used for forecasting
    let spread = |keep: &dyn Fn(f64) -> bool| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.kind == EmbeddingKind::Dmaps && art.index.dmaps_dims.contains(&r.d))
            .map(|r| window_mean(&r.series, keep))
            .collect();
        v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min)
    };
    write_csv(
        &dir.join("baseline_convergence.csv"),
        "window,from,to,w1_spread",
        [
            format!("early,{},{},{}", fmt_f64(0.0), fmt_f64(mc.early_until), fmt_f64(spread(&early))),
            format!(
                "late,{},{},{}",
                fmt_f64(mc.late_from),
                fmt_f64(cfg.simulation.t_final),
                fmt_f64(spread(&late))
            ),
        ],
    )?;

    let pod_ref = rows
        .iter()
        .find(|r| r.kind == EmbeddingKind::Pod && r.d == art.index.pod_primary)
        .map(|r| r.series.summary.w1.mean)
        .unwrap_or(f64::NAN);
    if let Some(r) = rows
        .iter()
        .find(|r| r.kind == EmbeddingKind::Dmaps && r.series.summary.w1.mean <= pod_ref)
    {
        report.notes.push(format!(
            "baseline W1: {} matches POD d = {} ({:.4e} <= {:.4e})",
            r.name, art.index.pod_primary, r.series.summary.w1.mean, pod_ref
        ));
    } else {
        report.notes.push(format!(
            "baseline W1: no diffusion map dimension reaches POD d = {} ({pod_ref:.4e})",
            art.index.pod_primary
        ));
    }
    Ok(())
}
