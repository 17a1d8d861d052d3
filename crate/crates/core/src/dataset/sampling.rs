//! Initial-condition sampling per split and stratified snapshot subsampling.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ColumnMeta, DatasetInfo, Normalization, SnapshotMatrix, Split};
use crate::error::{Error, Result};
use crate::hughes::GaussianIc;

/// Run counts, parameter ranges and the seed for drawing initial conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPlan {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_extra: usize,
    pub x0_range: [f64; 2],
    pub y0_range: [f64; 2],
    pub sigma_x_range: [f64; 2],
    pub sigma_y_range: [f64; 2],
    /// The extra split draws each width from {low * lower bound, high * upper bound}.
    pub extra_low_factor: f64,
    pub extra_high_factor: f64,
    pub target_mass: f64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan::paper()
    }
}

impl SplitPlan {
    pub fn paper() -> Self {
        SplitPlan {
            seed: 20240601,
            n_train: 40,
            n_val: 20,
            n_test: 40,
            n_extra: 10,
            x0_range: [1.5, 3.5],
            y0_range: [1.5, 3.5],
            sigma_x_range: [1.6, 2.0],
            sigma_y_range: [1.6, 2.0],
            extra_low_factor: 0.75,
            extra_high_factor: 1.25,
            target_mass: 10.0,
        }
    }

    pub fn desk() -> Self {
        SplitPlan {
            n_train: 12,
            n_val: 4,
            n_test: 4,
            n_extra: 2,
            ..SplitPlan::paper()
        }
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
            Split::Extra => self.n_extra,
        }
    }

    pub fn total(&self) -> usize {
        self.n_train + self.n_val + self.n_test + self.n_extra
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("x0", self.x0_range),
            ("y0", self.y0_range),
            ("sigma_x", self.sigma_x_range),
            ("sigma_y", self.sigma_y_range),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::Config(format!("empty {name} range [{}, {}]", r[0], r[1])));
            }
        }
        if !(self.sigma_x_range[0] > 0.0 && self.sigma_y_range[0] > 0.0) {
            return Err(Error::Config("Gaussian widths must be positive".into()));
        }
        if !(self.extra_low_factor > 0.0 && self.extra_low_factor < 1.0 && self.extra_high_factor > 1.0) {
            return Err(Error::Config(format!(
                "extra factors must satisfy 0 < low < 1 < high, got {} and {}",
                self.extra_low_factor, self.extra_high_factor
            )));
        }
        if !(self.target_mass >= 0.0 && self.target_mass.is_finite()) {
            return Err(Error::Config(format!("invalid target mass {}", self.target_mass)));
        }
        Ok(())
    }
}

/// One planned simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub run_id: u32,
    pub split: Split,
    pub ic: GaussianIc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledIcs {
    pub runs: Vec<RunSpec>,
}

impl SampledIcs {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &RunSpec> + '_ {
        self.runs.iter().filter(move |r| r.split == split)
    }

    pub fn get(&self, run_id: u32) -> Option<&RunSpec> {
        self.runs.iter().find(|r| r.run_id == run_id)
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

/// Draws initial conditions for every split. Run ids are assigned in split
/// order (train, val, test, extra); each split uses its own random stream so
/// changing one split's count leaves the others untouched.
pub fn sample_ics(plan: &SplitPlan) -> Result<SampledIcs> {
    plan.validate()?;
    let mut runs = Vec::with_capacity(plan.total());
    let mut next_id = 0u32;
    for (stream, split) in Split::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        rng.set_stream(stream as u64);
        for _ in 0..plan.count(split) {
            let x0 = uniform(&mut rng, plan.x0_range);
            let y0 = uniform(&mut rng, plan.y0_range);
            let (sigma_x, sigma_y) = if split == Split::Extra {
                let pick = |rng: &mut ChaCha8Rng, r: [f64; 2]| {
                    if rng.gen_bool(0.5) {
                        r[0] * plan.extra_low_factor
                    } else {
                        r[1] * plan.extra_high_factor
                    }
                };
                (pick(&mut rng, plan.sigma_x_range), pick(&mut rng, plan.sigma_y_range))
            } else {
                (uniform(&mut rng, plan.sigma_x_range), uniform(&mut rng, plan.sigma_y_range))
            };
            runs.push(RunSpec {
                run_id: next_id,
                split,
                ic: GaussianIc {
                    x0,
                    y0,
                    sigma_x,
                    sigma_y,
                    target_mass: plan.target_mass,
                },
            });
            next_id += 1;
        }
    }
    Ok(SampledIcs { runs })
}

/// Rule for drawing the manifold-learning snapshot set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubsampleOptions {
    /// Snapshots with t below this (seconds) form the early stratum.
    pub early_window: f64,
    pub early_fraction: f64,
    pub total_count: usize,
    pub seed: u64,
}

impl Default for SubsampleOptions {
    fn default() -> Self {
        SubsampleOptions {
            early_window: 10.0,
            early_fraction: 2.0 / 3.0,
            total_count: 1200,
            seed: 7,
        }
    }
}

/// Splits `total` over `parts` as evenly as possible, the remainder going
/// to the first entries.
fn quotas(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(|k| base + usize::from(k < extra)).collect()
}

/// Draws `total_count` snapshots without replacement, `early_fraction` of
/// them from t < `early_window` and the rest from later times, spread evenly
/// over runs. Each run draws from its own random stream keyed by run id.
/// Output columns are ordered by (run id, time) and normalized to unit sum.
pub fn subsample_for_manifold(runs: &[SnapshotMatrix], opts: &SubsampleOptions) -> Result<SnapshotMatrix> {
    if runs.is_empty() {
        return Err(Error::Sampling("no runs to subsample".into()));
    }
    if !(0.0..=1.0).contains(&opts.early_fraction) {
        return Err(Error::Config(format!("early_fraction {} outside [0, 1]", opts.early_fraction)));
    }
    let first = &runs[0];
    // group (matrix, column) pairs by run id
    let mut by_run: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    for (r, x) in runs.iter().enumerate() {
        if x.info.grid != first.info.grid || x.nrows() != first.nrows() {
            return Err(Error::Shape("runs live on different grids".into()));
        }
        for (m, c) in x.columns.iter().enumerate() {
            by_run.entry(c.run_id).or_default().push((r, m));
        }
    }
    let available: usize = by_run.values().map(|v| v.len()).sum();
    if opts.total_count > available {
        return Err(Error::Sampling(format!(
            "requested {} snapshots but only {available} exist",
            opts.total_count
        )));
    }

    let early_total = (opts.early_fraction * opts.total_count as f64).round() as usize;
    let late_total = opts.total_count - early_total;
    let early_q = quotas(early_total, by_run.len());
    let late_q = quotas(late_total, by_run.len());
    let cutoff = opts.early_window - 1e-9;

    let mut picked: Vec<(usize, usize)> = Vec::with_capacity(opts.total_count);
    for (k, (run_id, cols)) in by_run.iter().enumerate() {
        let mut cols = cols.clone();
        cols.sort_by(|a, b| {
            let ta = runs[a.0].columns[a.1].time;
            let tb = runs[b.0].columns[b.1].time;
            ta.total_cmp(&tb)
        });
        let (early, late): (Vec<(usize, usize)>, Vec<(usize, usize)>) =
            cols.iter().partition(|&&(r, m)| runs[r].columns[m].time < cutoff);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(*run_id as u64);
        let mut chosen = Vec::new();
        for (pool, want, label) in [(&early, early_q[k], "early"), (&late, late_q[k], "late")] {
            if want > pool.len() {
                return Err(Error::Sampling(format!(
                    "run {run_id} has {} {label} snapshots, {want} requested",
                    pool.len()
                )));
            }
            chosen.extend(index::sample(&mut rng, pool.len(), want).into_iter().map(|i| pool[i]));
        }
        chosen.sort_by(|a, b| runs[a.0].columns[a.1].time.total_cmp(&runs[b.0].columns[b.1].time));
        picked.extend(chosen);
    }

    let n = first.nrows();
    let mut data = DMatrix::zeros(n, picked.len());
    let mut columns: Vec<ColumnMeta> = Vec::with_capacity(picked.len());
    let mut splits = BTreeMap::new();
    for (k, &(r, m)) in picked.iter().enumerate() {
        let src = &runs[r];
        let scale = match src.normalization {
            Normalization::Raw => 1.0,
            Normalization::UnitMass => src.columns[m].column_sum,
        };
        let mut col = data.column_mut(k);
        for (dst, v) in col.iter_mut().zip(src.data.column(m).iter()) {
            *dst = v * scale;
        }
        columns.push(src.columns[m]);
        if let Some(s) = src.info.splits.get(&src.columns[m].run_id) {
            splits.insert(src.columns[m].run_id, *s);
        }
    }
    let raw = SnapshotMatrix::new(
        data,
        columns,
        Normalization::Raw,
        DatasetInfo {
            grid: first.info.grid,
            snapshot_dt: first.info.snapshot_dt,
            splits,
            label: "manifold".into(),
        },
    )?;
    raw.to_unit_mass()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{neumaier_sum, GridSpec};

    fn plan() -> SplitPlan {
        SplitPlan::paper()
    }

    #[test]
    fn paper_plan_counts() {
        let ics = sample_ics(&plan()).unwrap();
        let counts: Vec<usize> = Split::ALL.iter().map(|&s| ics.split(s).count()).collect();
        assert_eq!(counts, vec![40, 20, 40, 10]);
        let ids: std::collections::BTreeSet<u32> = ics.runs.iter().map(|r| r.run_id).collect();
        assert_eq!(ids.len(), 110);
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let a = sample_ics(&plan()).unwrap();
        let b = sample_ics(&plan()).unwrap();
        assert_eq!(a, b);
        for r in a.split(Split::Train) {
            assert!((1.5..=3.5).contains(&r.ic.x0) && (1.5..=3.5).contains(&r.ic.y0));
            assert!((1.6..=2.0).contains(&r.ic.sigma_x) && (1.6..=2.0).contains(&r.ic.sigma_y));
        }
    }

    #[test]
    fn extra_widths_are_off_range() {
        let ics = sample_ics(&plan()).unwrap();
        for r in ics.split(Split::Extra) {
            for s in [r.ic.sigma_x, r.ic.sigma_y] {
                assert!((s - 1.2).abs() < 1e-12 || (s - 2.5).abs() < 1e-12, "{s}");
            }
        }
    }

    #[test]
    fn changing_val_count_keeps_test_ics() {
        let a = sample_ics(&plan()).unwrap();
        let b = sample_ics(&SplitPlan { n_val: 3, ..plan() }).unwrap();
        let ta: Vec<_> = a.split(Split::Test).map(|r| r.ic).collect();
        let tb: Vec<_> = b.split(Split::Test).map(|r| r.ic).collect();
        assert_eq!(ta, tb);
    }

    #[test]
    fn empty_range_is_a_config_error() {
        let p = SplitPlan {
            x0_range: [3.0, 2.0],
            ..plan()
        };
        assert!(matches!(sample_ics(&p), Err(Error::Config(_))));
    }

    fn synthetic_run(run_id: u32, snaps: usize) -> SnapshotMatrix {
        let spec = GridSpec {
            nx: 4,
            ny: 4,
            length_x: 4.0,
            length_y: 4.0,
            obstacle: None,
        };
        let data = DMatrix::from_fn(16, snaps, |i, m| 1.0 + (i + m + run_id as usize) as f64 * 0.01);
        let columns = (0..snaps)
            .map(|m| ColumnMeta {
                run_id,
                time: m as f64 * 0.1,
                ic: GaussianIc {
                    x0: 1.0,
                    y0: 1.0,
                    sigma_x: 1.0,
                    sigma_y: 1.0,
                    target_mass: 1.0,
                },
                column_sum: 0.0,
            })
            .collect();
        let mut splits = BTreeMap::new();
        splits.insert(run_id, Split::Train);
        SnapshotMatrix::new(
            data,
            columns,
            Normalization::Raw,
            DatasetInfo {
                grid: spec,
                snapshot_dt: 0.1,
                splits,
                label: String::new(),
            },
        )
        .unwrap()
    }

    #[test]
    fn desk_proportions() {
        let runs: Vec<_> = (0..12).map(|r| synthetic_run(r, 300)).collect();
        let opts = SubsampleOptions::default();
        let x = subsample_for_manifold(&runs, &opts).unwrap();
        assert_eq!(x.ncols(), 1200);
        let early = x.columns.iter().filter(|c| c.time < 10.0 - 1e-9).count();
        assert_eq!(early, 800);
        for m in 0..x.ncols() {
            assert!((neumaier_sum(x.column(m).iter().copied()) - 1.0).abs() <= 1e-12);
        }
        // ordered by (run, time)
        for w in x.columns.windows(2) {
            assert!((w[0].run_id, w[0].time) < (w[1].run_id, w[1].time));
        }
    }

    #[test]
    fn full_draw_takes_everything() {
        let runs: Vec<_> = (0..3).map(|r| synthetic_run(r, 30)).collect();
        let opts = SubsampleOptions {
            early_window: 1.0,
            early_fraction: 1.0 / 3.0,
            total_count: 90,
            seed: 1,
        };
        let x = subsample_for_manifold(&runs, &opts).unwrap();
        assert_eq!(x.ncols(), 90);
    }

    #[test]
    fn per_run_selection_is_stable_when_runs_drop_out() {
        let runs: Vec<_> = (0..4).map(|r| synthetic_run(r, 100)).collect();
        let opts = SubsampleOptions {
            early_window: 5.0,
            early_fraction: 0.5,
            total_count: 40,
            seed: 3,
        };
        let all = subsample_for_manifold(&runs, &opts).unwrap();
        let fewer = subsample_for_manifold(&runs[..3], &SubsampleOptions { total_count: 30, ..opts }).unwrap();
        let times = |x: &SnapshotMatrix, id: u32| -> Vec<f64> {
            x.columns.iter().filter(|c| c.run_id == id).map(|c| c.time).collect()
        };
        for id in 0..3 {
            assert_eq!(times(&all, id), times(&fewer, id));
        }
    }

    #[test]
    fn short_stratum_is_a_sampling_error() {
        let runs: Vec<_> = (0..2).map(|r| synthetic_run(r, 20)).collect();
        let opts = SubsampleOptions {
            early_window: 0.5,
            early_fraction: 0.9,
            total_count: 30,
            seed: 1,
        };
        assert!(matches!(subsample_for_manifold(&runs, &opts), Err(Error::Sampling(_))));
    }
}
