//! Error metrics between ground-truth and reconstructed density fields:
//! absolute/relative L2 errors and the exact Wasserstein-1 distance.

mod simplex;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::grid::{neumaier_sum, CellKind, Field, Grid, Quantity};

pub use simplex::{solve_transport, TransportSolution};

/// Absolute and relative L2 error of one snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Errors {
    pub abs: f64,
    /// `None` when the truth is identically zero but the approximation is not.
    pub rel: Option<f64>,
}

pub fn l2_errors(truth: &Field, approx: &Field) -> Result<L2Errors> {
    if truth.grid().len() != approx.grid().len() {
        return Err(Error::Shape("fields live on different grids".into()));
    }
    Ok(l2_errors_values(truth.values(), approx.values()))
}

pub fn l2_errors_values(truth: &[f64], approx: &[f64]) -> L2Errors {
    let diff = neumaier_sum(truth.iter().zip(approx).map(|(a, b)| (a - b) * (a - b))).sqrt();
    let norm = neumaier_sum(truth.iter().map(|a| a * a)).sqrt();
    let rel = if norm > 0.0 {
        Some(diff / norm)
    } else if diff == 0.0 {
        Some(0.0)
    } else {
        None
    };
    L2Errors { abs: diff, rel }
}

/// Controls for the exact W1 computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct W1Options {
    /// Sum-pool `coarsen x coarsen` blocks of cells before solving; 1 disables it.
    pub coarsen: usize,
    /// Refuse problems whose supply-count times demand-count exceeds this.
    pub max_support_product: usize,
    /// Cells whose (signed) mass difference is below this are dropped.
    pub prune: f64,
    /// Relative tolerance on the mass mismatch between the two inputs.
    pub mass_tolerance: f64,
}

impl Default for W1Options {
    fn default() -> Self {
        W1Options {
            coarsen: 1,
            max_support_product: 4_000_000,
            prune: 1e-14,
            mass_tolerance: 1e-8,
        }
    }
}

/// Wasserstein-1 distance (meters) with Euclidean ground cost between cell
/// centers. Both inputs are rescaled to unit mass; their masses must agree.
pub fn wasserstein1(p: &Field, q: &Field, opts: &W1Options) -> Result<f64> {
    p.expect_quantity(Quantity::Density)?;
    q.expect_quantity(Quantity::Density)?;
    if p.grid().len() != q.grid().len() {
        return Err(Error::Shape("fields live on different grids".into()));
    }
    wasserstein1_values(p.grid(), p.values(), q.values(), opts)
}

struct Support {
    x: Vec<f64>,
    y: Vec<f64>,
    mass: Vec<f64>,
}

/// Signed mass difference per (possibly pooled) cell, with pooled centers.
fn pooled_difference(grid: &Grid, p: &[f64], q: &[f64], mp: f64, mq: f64, factor: usize) -> (Vec<(f64, f64)>, Vec<f64>) {
    let f = factor.max(1);
    let cx = grid.nx().div_ceil(f);
    let cy = grid.ny().div_ceil(f);
    let mut centers = vec![(0.0, 0.0); cx * cy];
    let mut counts = vec![0usize; cx * cy];
    let mut diff = vec![0.0; cx * cy];
    for i in 0..grid.nx() {
        for j in 0..grid.ny() {
            if grid.kind(i, j) != CellKind::Fluid {
                continue;
            }
            let idx = grid.index(i, j);
            let c = (i / f) * cy + j / f;
            let (x, y) = grid.center(i, j);
            centers[c].0 += x;
            centers[c].1 += y;
            counts[c] += 1;
            diff[c] += p[idx] / mp - q[idx] / mq;
        }
    }
    for (c, n) in centers.iter_mut().zip(&counts) {
        if *n > 0 {
            c.0 /= *n as f64;
            c.1 /= *n as f64;
        }
    }
    (centers, diff)
}

pub(crate) fn wasserstein1_values(grid: &Grid, p: &[f64], q: &[f64], opts: &W1Options) -> Result<f64> {
    let fluid_sum = |v: &[f64]| {
        neumaier_sum(
            v.iter()
                .zip(grid.kinds())
                .filter(|(_, &k)| k == CellKind::Fluid)
                .map(|(&x, _)| x),
        )
    };
    let mp = fluid_sum(p);
    let mq = fluid_sum(q);
    if !(mp > 0.0) || !(mq > 0.0) {
        return Err(Error::ZeroMass);
    }
    if (mp - mq).abs() > opts.mass_tolerance * mp.max(mq) {
        return Err(Error::UnequalMass(mp, mq));
    }

    // mass present in both distributions stays put under an optimal plan, so
    // only the signed difference has to be transported
    let (centers, diff) = pooled_difference(grid, p, q, mp, mq, opts.coarsen);
    let mut supply = Support { x: vec![], y: vec![], mass: vec![] };
    let mut demand = Support { x: vec![], y: vec![], mass: vec![] };
    for (c, &d) in centers.iter().zip(&diff) {
        if d > opts.prune {
            supply.x.push(c.0);
            supply.y.push(c.1);
            supply.mass.push(d);
        } else if d < -opts.prune {
            demand.x.push(c.0);
            demand.y.push(c.1);
            demand.mass.push(-d);
        }
    }
    if supply.mass.is_empty() || demand.mass.is_empty() {
        return Ok(0.0);
    }
    let product = supply.mass.len() * demand.mass.len();
    if product > opts.max_support_product {
        return Err(Error::SupportTooLarge {
            product,
            cap: opts.max_support_product,
        });
    }
    let sol = solve_transport(&supply.mass, &demand.mass, |i, j| {
        let dx = supply.x[i] - demand.x[j];
        let dy = supply.y[i] - demand.y[j];
        (dx * dx + dy * dy).sqrt()
    });
    Ok(sol.cost.max(0.0))
}

/// Mean and 10th/90th percentiles of a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub p10: f64,
    pub p90: f64,
}

/// Percentile with linear interpolation between closest ranks.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] + (v[hi] - v[lo]) * frac
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let finite: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        let mean = if finite.is_empty() {
            f64::NAN
        } else {
            neumaier_sum(finite.iter().copied()) / finite.len() as f64
        };
        Stat {
            mean,
            p10: percentile(&finite, 0.10),
            p90: percentile(&finite, 0.90),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub eps2: Stat,
    pub eps2_rel: Stat,
    pub w1: Stat,
}

/// Per-snapshot error metrics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub times: Vec<f64>,
    pub eps2: Vec<f64>,
    pub eps2_rel: Vec<f64>,
    pub w1: Vec<f64>,
    pub summary: ErrorSummary,
}

impl ErrorSeries {
    pub fn from_parts(times: Vec<f64>, eps2: Vec<f64>, eps2_rel: Vec<f64>, w1: Vec<f64>) -> Self {
        let summary = ErrorSummary {
            eps2: Stat::of(&eps2),
            eps2_rel: Stat::of(&eps2_rel),
            w1: Stat::of(&w1),
        };
        ErrorSeries {
            times,
            eps2,
            eps2_rel,
            w1,
            summary,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,eps2,eps2_rel,w1")?;
        for k in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(self.times[k]),
                fmt_f64(self.eps2[k]),
                fmt_f64(self.eps2_rel[k]),
                fmt_f64(self.w1[k])
            )?;
        }
        let s = &self.summary;
        for (label, pick) in [
            ("mean", (|s: &Stat| s.mean) as fn(&Stat) -> f64),
            ("p10", |s: &Stat| s.p10),
            ("p90", |s: &Stat| s.p90),
        ] {
            writeln!(
                out,
                "{label},{},{},{}",
                fmt_f64(pick(&s.eps2)),
                fmt_f64(pick(&s.eps2_rel)),
                fmt_f64(pick(&s.w1))
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        crate::dataset::write_atomic(path, &buf)
    }
}

/// Scores a sequence of approximate snapshots against the truth.
pub fn evaluate_run(truth: &[Field], approx: &[Field], w1: &W1Options) -> Result<ErrorSeries> {
    if truth.len() != approx.len() {
        return Err(Error::Shape(format!(
            "truth has {} snapshots, approximation has {}",
            truth.len(),
            approx.len()
        )));
    }
    for (k, (a, b)) in truth.iter().zip(approx).enumerate() {
        if (a.time() - b.time()).abs() > 1e-9 * (1.0 + a.time().abs()) {
            return Err(Error::TimeMisalignment {
                index: k,
                truth: a.time(),
                approx: b.time(),
            });
        }
    }
    let rows: Vec<Result<(f64, f64, f64)>> = truth
        .par_iter()
        .zip(approx.par_iter())
        .map(|(a, b)| {
            let l2 = l2_errors(a, b)?;
            let w = wasserstein1(a, b, w1)?;
            Ok((l2.abs, l2.rel.unwrap_or(f64::NAN), w))
        })
        .collect();
    let mut eps2 = Vec::with_capacity(rows.len());
    let mut rel = Vec::with_capacity(rows.len());
    let mut wd = Vec::with_capacity(rows.len());
    for r in rows {
        let (a, b, c) = r?;
        eps2.push(a);
        rel.push(b);
        wd.push(c);
    }
    Ok(ErrorSeries::from_parts(
        truth.iter().map(|f| f.time()).collect(),
        eps2,
        rel,
        wd,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use std::sync::Arc;

    fn line_grid() -> Arc<Grid> {
        // 1 m cells so centers sit at x = 0.5, 1.5, ...
        Arc::new(build_grid(8, 4, 8.0, 4.0, None).unwrap())
    }

    fn field(g: &Arc<Grid>, cells: &[((usize, usize), f64)]) -> Field {
        let mut v = vec![0.0; g.len()];
        for &((i, j), m) in cells {
            v[g.index(i, j)] = m;
        }
        Field::density(g.clone(), v, 0.0).unwrap()
    }

    #[test]
    fn l2_basics() {
        let g = line_grid();
        let a = field(&g, &[((0, 0), 1.0)]);
        let b = field(&g, &[((1, 0), 1.0)]);
        assert_eq!(l2_errors(&a, &a).unwrap(), L2Errors { abs: 0.0, rel: Some(0.0) });
        assert!((l2_errors(&a, &b).unwrap().abs - 2f64.sqrt()).abs() < 1e-15);
        let twice = field(&g, &[((0, 0), 2.0)]);
        assert!((l2_errors(&a, &twice).unwrap().rel.unwrap() - 1.0).abs() < 1e-15);
        let zero = Field::zeros(g.clone(), Quantity::Density, 0.0);
        assert_eq!(l2_errors(&zero, &a).unwrap().rel, None);
    }

    #[test]
    fn w1_single_arc_and_split() {
        let g = line_grid();
        let p = field(&g, &[((0, 1), 1.0)]);
        let q = field(&g, &[((3, 1), 1.0)]);
        let opts = W1Options::default();
        assert!((wasserstein1(&p, &q, &opts).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(wasserstein1(&p, &p, &opts).unwrap(), 0.0);
        // half at x = 0.5 and half at x = 2.5 against all at x = 1.5
        let two = field(&g, &[((0, 2), 0.5), ((2, 2), 0.5)]);
        let mid = field(&g, &[((1, 2), 1.0)]);
        assert!((wasserstein1(&two, &mid, &opts).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn w1_rejects_zero_and_unequal_mass() {
        let g = line_grid();
        let p = field(&g, &[((0, 1), 1.0)]);
        let zero = Field::zeros(g.clone(), Quantity::Density, 0.0);
        let heavy = field(&g, &[((2, 1), 2.0)]);
        let opts = W1Options::default();
        assert!(matches!(wasserstein1(&p, &zero, &opts), Err(Error::ZeroMass)));
        assert!(matches!(wasserstein1(&p, &heavy, &opts), Err(Error::UnequalMass(..))));
    }

    #[test]
    fn w1_support_cap() {
        let g = line_grid();
        let p = field(&g, &[((0, 0), 0.5), ((0, 1), 0.5)]);
        let q = field(&g, &[((5, 0), 0.5), ((5, 1), 0.5)]);
        let opts = W1Options {
            max_support_product: 3,
            ..W1Options::default()
        };
        assert!(matches!(wasserstein1(&p, &q, &opts), Err(Error::SupportTooLarge { .. })));
    }

    #[test]
    fn percentiles_interpolate() {
        let v: Vec<f64> = (0..=10).map(|x| x as f64).collect();
        assert!((percentile(&v, 0.1) - 1.0).abs() < 1e-12);
        assert!((percentile(&v, 0.9) - 9.0).abs() < 1e-12);
        let s = Stat::of(&[1.0, 2.0, 6.0]);
        assert!((s.mean - 3.0).abs() < 1e-15);
    }

    #[test]
    fn identical_runs_score_zero() {
        let g = line_grid();
        let snaps: Vec<Field> = (0..3)
            .map(|k| field(&g, &[((k, 1), 1.0)]).with_time(k as f64 * 0.1))
            .collect();
        let s = evaluate_run(&snaps, &snaps, &W1Options::default()).unwrap();
        assert!(s.eps2.iter().chain(&s.eps2_rel).chain(&s.w1).all(|&v| v == 0.0));
        let mut shifted = snaps.clone();
        shifted[1] = shifted[1].clone().with_time(0.5);
        assert!(matches!(
            evaluate_run(&snaps, &shifted, &W1Options::default()),
            Err(Error::TimeMisalignment { index: 1, .. })
        ));
    }

    #[test]
    fn csv_has_rows_plus_summary() {
        let s = ErrorSeries::from_parts(vec![0.0, 0.1], vec![1.0, 2.0], vec![0.1, 0.2], vec![0.5, 0.5]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,eps2,eps2_rel,w1");
        assert_eq!(lines.len(), 1 + 2 + 3);
        assert!(lines[3].starts_with("mean,"));
    }
}
