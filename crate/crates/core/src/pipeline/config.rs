use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{sha256_hex, Split, SplitPlan, SubsampleOptions};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, Obstacle};
use crate::hughes::{snapshot_count, HughesParams};
use crate::metrics::W1Options;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub length_x: f64,
    pub length_y: f64,
    /// Side of the square obstacle; 0 removes it.
    #[serde(default)]
    pub obstacle_side: f64,
    /// Defaults to the corridor center.
    #[serde(default)]
    pub obstacle_center: Option<[f64; 2]>,
}

impl GridConfig {
    pub fn spec(&self) -> GridSpec {
        let obstacle = (self.obstacle_side > 0.0).then(|| match self.obstacle_center {
            Some([cx, cy]) => Obstacle {
                center_x: cx,
                center_y: cy,
                side: self.obstacle_side,
            },
            None => Obstacle::centered(self.length_x, self.length_y, self.obstacle_side),
        });
        GridSpec {
            nx: self.nx,
            ny: self.ny,
            length_x: self.length_x,
            length_y: self.length_y,
            obstacle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub t_final: f64,
    pub snapshot_dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldConfig {
    pub subsample: SubsampleOptions,
    /// POD dimension from this cumulative variance ratio, unless `pod_d` is set.
    pub pod_variance: f64,
    pub pod_d: Option<usize>,
    /// Extra POD models at d + offset, compared on the validation split.
    pub pod_offsets: Vec<i64>,
    pub dmaps_dims: Vec<usize>,
    /// Dimensions swept in the baseline reconstruction report.
    pub baseline_dmaps_dims: Vec<usize>,
    /// Every `baseline_stride`-th snapshot of each baseline run is scored.
    pub baseline_stride: usize,
    pub baseline_split: Split,
    /// Early/late windows (seconds) compared in the baseline report.
    pub early_until: f64,
    pub late_from: f64,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        ManifoldConfig {
            subsample: SubsampleOptions::default(),
            pod_variance: 0.99,
            pod_d: None,
            pod_offsets: vec![-2, 0, 2],
            dmaps_dims: vec![4, 7, 10],
            baseline_dmaps_dims: (1..=10).collect(),
            baseline_stride: 10,
            baseline_split: Split::Train,
            early_until: 10.0,
            late_from: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MvarConfig {
    pub candidate_lags: Vec<usize>,
    /// Skips BIC when set.
    pub fixed_lag: Option<usize>,
}

impl Default for MvarConfig {
    fn default() -> Self {
        MvarConfig {
            candidate_lags: (1..=10).collect(),
            fixed_lag: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifterConfig {
    /// Neighbor count; d + 1 when unset.
    pub k: Option<usize>,
    pub power: f64,
}

impl Default for LifterConfig {
    fn default() -> Self {
        LifterConfig { k: None, power: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Split used to pick one model per encoder family.
    pub select_split: Split,
    pub report_splits: Vec<Split>,
    pub w1: W1Options,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            select_split: Split::Val,
            report_splits: vec![Split::Test, Split::Extra],
            w1: W1Options {
                coarsen: 2,
                ..W1Options::default()
            },
        }
    }
}

/// Everything one pipeline invocation depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub name: String,
    pub grid: GridConfig,
    #[serde(default)]
    pub hughes: HughesParams,
    pub simulation: SimulationConfig,
    #[serde(default = "SplitPlan::desk")]
    pub splits: SplitPlan,
    #[serde(default)]
    pub manifold: ManifoldConfig,
    #[serde(default)]
    pub mvar: MvarConfig,
    #[serde(default)]
    pub lifter: LifterConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

impl PipelineConfig {
    /// 100 x 25 corridor, 22 runs of 30 s.
    pub fn desk() -> Self {
        PipelineConfig {
            name: "desk".into(),
            grid: GridConfig {
                nx: 100,
                ny: 25,
                length_x: 20.0,
                length_y: 5.0,
                obstacle_side: 1.0,
                obstacle_center: None,
            },
            hughes: HughesParams::default(),
            simulation: SimulationConfig {
                t_final: 30.0,
                snapshot_dt: 0.1,
            },
            splits: SplitPlan::desk(),
            manifold: ManifoldConfig::default(),
            mvar: MvarConfig::default(),
            lifter: LifterConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }

    /// Full-size setup. Expensive: hours on a workstation.
    pub fn paper() -> Self {
        PipelineConfig {
            name: "paper".into(),
            grid: GridConfig {
                nx: 200,
                ny: 50,
                ..PipelineConfig::desk().grid
            },
            simulation: SimulationConfig {
                t_final: 70.0,
                snapshot_dt: 0.1,
            },
            splits: SplitPlan::paper(),
            manifold: ManifoldConfig {
                subsample: SubsampleOptions {
                    total_count: 6000,
                    ..SubsampleOptions::default()
                },
                baseline_stride: 5,
                ..ManifoldConfig::default()
            },
            evaluation: EvaluationConfig {
                w1: W1Options::default(),
                ..EvaluationConfig::default()
            },
            ..PipelineConfig::desk()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn snapshots_per_run(&self) -> usize {
        snapshot_count(self.simulation.t_final, self.simulation.snapshot_dt)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.grid.spec().build().map_err(|e| Error::Config(e.to_string()))?;
        self.hughes.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.splits.validate()?;
        let sim = &self.simulation;
        if !(sim.snapshot_dt > 0.0 && sim.t_final > 0.0) {
            return bad(format!("need t_final > 0 and snapshot_dt > 0, got {} and {}", sim.t_final, sim.snapshot_dt));
        }
        if self.splits.n_train == 0 || self.splits.count(self.evaluation.select_split) == 0 {
            return bad("training and selection splits must be non-empty".into());
        }
        let m = &self.manifold;
        let total = m.subsample.total_count;
        if !(m.pod_variance > 0.0 && m.pod_variance <= 1.0) {
            return bad(format!("pod_variance {} must lie in (0, 1]", m.pod_variance));
        }
        if let Some(d) = m.pod_d {
            if d == 0 || d >= total {
                return bad(format!("pod_d = {d} must lie in [1, {})", total));
            }
        }
        if !m.pod_offsets.contains(&0) {
            return bad("pod_offsets must contain 0".into());
        }
        if m.dmaps_dims.is_empty() {
            return bad("dmaps_dims is empty".into());
        }
        for &d in m.dmaps_dims.iter().chain(&m.baseline_dmaps_dims) {
            if d == 0 || d + 2 > total {
                return bad(format!("diffusion map d = {d} needs 1 <= d <= {}", total.saturating_sub(2)));
            }
        }
        if m.baseline_stride == 0 {
            return bad("baseline_stride must be positive".into());
        }
        if self.splits.count(m.baseline_split) == 0 {
            return bad(format!("baseline split {} has no runs", m.baseline_split));
        }
        let early_per_run = (m.subsample.early_window / sim.snapshot_dt).ceil() as usize;
        let available = self.splits.n_train * self.snapshots_per_run();
        if total > available {
            return bad(format!("subsample of {total} exceeds the {available} training snapshots"));
        }
        if early_per_run == 0 {
            return bad("early_window is shorter than one snapshot".into());
        }
        let t = self.snapshots_per_run();
        let lags: Vec<usize> = match self.mvar.fixed_lag {
            Some(l) => vec![l],
            None => self.mvar.candidate_lags.clone(),
        };
        if lags.is_empty() {
            return bad("no candidate lags".into());
        }
        for l in lags {
            if l == 0 || l + 1 >= t {
                return bad(format!("lag {l} is infeasible for trajectories of {t} snapshots"));
            }
        }
        if let Some(k) = self.lifter.k {
            if k == 0 || k > total {
                return bad(format!("lifter k = {k} must lie in [1, {total}]"));
            }
        }
        if !(self.lifter.power > 0.0) {
            return bad(format!("lifter power {} must be positive", self.lifter.power));
        }
        if self.evaluation.w1.coarsen == 0 {
            return bad("w1 coarsen must be at least 1".into());
        }
        Ok(())
    }

    /// Hash of the whole configuration, used in exported file names.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

pub(crate) fn hash_json<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        PipelineConfig::desk().validate().unwrap();
        PipelineConfig::paper().validate().unwrap();
        assert_eq!(PipelineConfig::desk().snapshots_per_run(), 301);
        assert_eq!(PipelineConfig::paper().snapshots_per_run(), 701);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = PipelineConfig::desk();
        let back = PipelineConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let text = r#"
name = "tiny"
[grid]
nx = 40
ny = 10
length_x = 20.0
length_y = 5.0
obstacle_side = 1.0
[simulation]
t_final = 30.0
snapshot_dt = 0.1
"#;
        let cfg = PipelineConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.splits, SplitPlan::desk());
        assert_eq!(cfg.lifter.power, 2.0);
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let mut cfg = PipelineConfig::desk();
        cfg.manifold.dmaps_dims = vec![1199];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = PipelineConfig::desk();
        cfg.mvar.fixed_lag = Some(400);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = PipelineConfig::desk();
        cfg.manifold.subsample.total_count = 5000;
        assert!(cfg.validate().is_err());

        let mut cfg = PipelineConfig::desk();
        cfg.grid.obstacle_center = Some([0.2, 2.5]);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        assert!(matches!(
            PipelineConfig::from_toml_str("name = 3"),
            Err(Error::Config(_))
        ));
    }
}
