//! Pre-images of latent points as convex combinations of nearby training
//! snapshots (inverse-distance weights over the k nearest neighbors).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataset::SnapshotMatrix;
use crate::dmaps::{nystrom_extend, DmapsModel, LatentEmbedding};
use crate::error::{Error, Result};

/// Lifting operator built from a training embedding and its snapshots.
#[derive(Debug, Clone)]
pub struct KnnLifter {
    /// M x d training latent coordinates.
    pub coords: DMatrix<f64>,
    /// N x M training snapshots, index-aligned with `coords`.
    pub snapshots: DMatrix<f64>,
    pub k: usize,
    pub power: f64,
    pub tie_epsilon: f64,
}

/// Neighbors and convex weights used for one lift.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftWeights {
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
}

fn dist(a: &[f64], b: impl Iterator<Item = f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl KnnLifter {
    /// `k = None` uses d + 1 neighbors.
    pub fn new(embedding: &LatentEmbedding, training: &SnapshotMatrix, k: Option<usize>, power: f64) -> Result<Self> {
        if embedding.source_hash != training.content_hash() {
            return Err(Error::Lineage("embedding and snapshots come from different training data".into()));
        }
        Self::from_parts(embedding.coords.clone(), training.data.clone(), k, power)
    }

    pub fn from_parts(coords: DMatrix<f64>, snapshots: DMatrix<f64>, k: Option<usize>, power: f64) -> Result<Self> {
        let m = coords.nrows();
        if m == 0 {
            return Err(Error::Shape("empty training set".into()));
        }
        if snapshots.ncols() != m {
            return Err(Error::Shape(format!(
                "{m} latent points but {} snapshots",
                snapshots.ncols()
            )));
        }
        let k = k.unwrap_or(coords.ncols() + 1);
        if k == 0 || k > m {
            return Err(Error::Config(format!("k = {k} must lie in [1, {m}]")));
        }
        if !(power > 0.0) {
            return Err(Error::Config(format!("weight power {power} must be positive")));
        }
        let rows: Vec<Vec<f64>> = coords.row_iter().map(|r| r.iter().copied().collect()).collect();
        let nn: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|i| {
                (0..m)
                    .filter(|&j| j != i)
                    .map(|j| dist(&rows[i], rows[j].iter().copied()))
                    .fold(f64::INFINITY, f64::min)
            })
            .filter(|d| d.is_finite())
            .collect();
        let scale = median(nn);
        let tie_epsilon = if scale > 0.0 { 1e-12 * scale } else { f64::MIN_POSITIVE };
        Ok(KnnLifter {
            coords,
            snapshots,
            k,
            power,
            tie_epsilon,
        })
    }

    pub fn d(&self) -> usize {
        self.coords.ncols()
    }

    /// The k nearest training points (ties to the lower index) and their
    /// normalized weights.
    pub fn weights(&self, y: &[f64]) -> Result<LiftWeights> {
        if y.len() != self.d() {
            return Err(Error::Shape(format!("latent point of length {} for d = {}", y.len(), self.d())));
        }
        let mut cand: Vec<(f64, usize)> = self
            .coords
            .row_iter()
            .enumerate()
            .map(|(j, r)| (dist(y, r.iter().copied()), j))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < cand.len() {
            cand.select_nth_unstable_by(self.k - 1, cmp);
            cand.truncate(self.k);
        }
        cand.sort_by(cmp);
        // relative to the nearest neighbor so nothing overflows
        let near = cand[0].0 + self.tie_epsilon;
        let raw: Vec<f64> = cand
            .iter()
            .map(|(d, _)| (near / (d + self.tie_epsilon)).powf(self.power))
            .collect();
        let total: f64 = raw.iter().sum();
        Ok(LiftWeights {
            neighbors: cand.iter().map(|c| c.1).collect(),
            weights: raw.iter().map(|w| w / total).collect(),
        })
    }

    /// x* = Σ b_j x_{S(j)}.
    pub fn lift(&self, y: &[f64]) -> Result<DVector<f64>> {
        let w = self.weights(y)?;
        let mut x = DVector::zeros(self.snapshots.nrows());
        for (&j, &b) in w.neighbors.iter().zip(&w.weights) {
            x.axpy(b, &self.snapshots.column(j), 1.0);
        }
        Ok(x)
    }

    pub fn lift_many(&self, ys: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        ys.par_iter().map(|y| self.lift(y.as_slice())).collect()
    }
}

/// ‖Φ(L(y*)) − y*‖₂ with Φ the Nyström extension.
pub fn lift_consistency(lifter: &KnnLifter, model: &DmapsModel, y: &[f64]) -> Result<f64> {
    if model.d() != lifter.d() {
        return Err(Error::Shape(format!("lifter d = {} but model d = {}", lifter.d(), model.d())));
    }
    let x = lifter.lift(y)?;
    let back = nystrom_extend(model, x.as_slice())?;
    Ok(back.coords.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmaps::{dmaps_encode, fit_dmaps_points};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_cloud(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::from_fn(n, m, |_, _| rng.gen_range(0.0..1.0));
        for mut c in x.column_iter_mut() {
            let s = c.sum();
            c /= s;
        }
        x
    }

    #[test]
    fn exact_hit_returns_training_snapshot() {
        let model = fit_dmaps_points(&unit_cloud(10, 30, 1), 3).unwrap();
        let emb = dmaps_encode(&model);
        let lifter = KnnLifter::from_parts(emb.coords.clone(), model.points.clone(), None, 2.0).unwrap();
        for m in [0, 7, 29] {
            let y: Vec<f64> = emb.coords.row(m).iter().copied().collect();
            let x = lifter.lift(&y).unwrap();
            assert!((&x - model.points.column(m)).amax() < 1e-10);
        }
    }

    #[test]
    fn lifted_mass_is_one_and_values_stay_in_bounds() {
        let pts = unit_cloud(12, 40, 2);
        let model = fit_dmaps_points(&pts, 4).unwrap();
        let emb = dmaps_encode(&model);
        let lifter = KnnLifter::from_parts(emb.coords.clone(), pts.clone(), None, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let span = emb.coords.amax();
        for _ in 0..200 {
            let y: Vec<f64> = (0..4).map(|_| rng.gen_range(-span..span)).collect();
            let w = lifter.weights(&y).unwrap();
            assert!(w.weights.iter().all(|&b| (0.0..=1.0).contains(&b)));
            let x = lifter.lift(&y).unwrap();
            assert!((x.sum() - 1.0).abs() <= 1e-12);
            for i in 0..12 {
                let lo = w.neighbors.iter().map(|&j| pts[(i, j)]).fold(f64::INFINITY, f64::min);
                let hi = w.neighbors.iter().map(|&j| pts[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
                assert!(x[i] >= lo - 1e-15 && x[i] <= hi + 1e-15);
            }
        }
    }

    #[test]
    fn midpoint_gives_average() {
        let coords = DMatrix::from_row_slice(3, 1, &[0.0, 2.0, 10.0]);
        let snaps = DMatrix::from_row_slice(2, 3, &[0.2, 0.6, 0.5, 0.8, 0.4, 0.5]);
        let lifter = KnnLifter::from_parts(coords, snaps, Some(2), 2.0).unwrap();
        let x = lifter.lift(&[1.0]).unwrap();
        assert!((x[0] - 0.4).abs() < 1e-12 && (x[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ties_break_to_lower_index() {
        let coords = DMatrix::from_row_slice(3, 1, &[-1.0, 1.0, 1.0]);
        let snaps = DMatrix::identity(3, 3);
        let lifter = KnnLifter::from_parts(coords, snaps, Some(2), 2.0).unwrap();
        assert_eq!(lifter.weights(&[0.0]).unwrap().neighbors, vec![0, 1]);
    }

    #[test]
    fn consistency_residual() {
        let pts = unit_cloud(10, 40, 4);
        let model = fit_dmaps_points(&pts, 3).unwrap();
        let emb = dmaps_encode(&model);
        let lifter = KnnLifter::from_parts(emb.coords.clone(), pts, None, 2.0).unwrap();
        let y: Vec<f64> = emb.coords.row(5).iter().copied().collect();
        assert!(lift_consistency(&lifter, &model, &y).unwrap() <= 1e-5);
        let far: Vec<f64> = y.iter().map(|v| v + 10.0 * emb.coords.amax()).collect();
        let r_far = lift_consistency(&lifter, &model, &far).unwrap();
        assert!(r_far.is_finite() && r_far > 1e-5);
    }

    #[test]
    fn bad_inputs() {
        let coords = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(KnnLifter::from_parts(coords.clone(), DMatrix::zeros(3, 3), None, 2.0).is_err());
        assert!(KnnLifter::from_parts(DMatrix::zeros(0, 1), DMatrix::zeros(3, 0), None, 2.0).is_err());
        let l = KnnLifter::from_parts(coords, DMatrix::zeros(3, 2), None, 2.0).unwrap();
        assert!(l.lift(&[0.0, 1.0]).is_err());
    }
}
