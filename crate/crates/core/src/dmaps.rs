//! Diffusion Maps: Gaussian kernel, Markov normalization, spectral embedding
//! and Nyström out-of-sample extension.

use std::path::Path;

use nalgebra::{DMatrix, DVector, DVectorView, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{read_model, write_model, ModelFile, Normalization, SectionKind, SnapshotMatrix};
use crate::error::{Error, Result};
use crate::pod::{fix_sign, pod_encode, PodBasis};

/// Kernel sums below this mark a query as far outside the training cloud.
pub const OUT_OF_RANGE_KERNEL_SUM: f64 = 1e-300;

/// Fitted diffusion map.
#[derive(Debug, Clone, PartialEq)]
pub struct DmapsModel {
    /// Training snapshots, one per column.
    pub points: DMatrix<f64>,
    pub epsilon: f64,
    /// Retained non-trivial eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Right eigenvectors of the Markov matrix, M x d.
    pub right: DMatrix<f64>,
    /// Kernel row sums.
    pub degrees: DVector<f64>,
    /// Largest eigenvalue and its right eigenvector (the trivial pair).
    pub trivial_eigenvalue: f64,
    pub trivial_vector: DVector<f64>,
    /// All non-trivial eigenvalues, descending.
    pub spectrum: Vec<f64>,
    pub source_hash: String,
}

/// Which encoder produced an embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Pod,
    Dmaps,
}

/// Latent coordinates of the training snapshots, one row per snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentEmbedding {
    pub coords: DMatrix<f64>,
    pub kind: EmbeddingKind,
    /// Content hash of the snapshot matrix the rows belong to.
    pub source_hash: String,
}

impl LatentEmbedding {
    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    pub fn d(&self) -> usize {
        self.coords.ncols()
    }

    /// POD coefficients of every column of `x`.
    pub fn from_pod(basis: &PodBasis, x: &SnapshotMatrix) -> Result<LatentEmbedding> {
        let mut coords = DMatrix::zeros(x.ncols(), basis.d());
        for m in 0..x.ncols() {
            let col: Vec<f64> = x.column(m).iter().copied().collect();
            let y = pod_encode(basis, &col)?;
            coords.set_row(m, &y.transpose());
        }
        Ok(LatentEmbedding {
            coords,
            kind: EmbeddingKind::Pod,
            source_hash: x.content_hash(),
        })
    }
}

/// Nyström coordinates of an unseen snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct NystromPoint {
    pub coords: DVector<f64>,
    /// Σ_j k(x_new, x_j); tiny values mean the query is far from the data.
    pub kernel_sum: f64,
    pub out_of_range: bool,
}

fn sq_dist(a: DVectorView<'_, f64>, b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of the strictly off-diagonal pairwise distances.
fn median_distance(d2: &DMatrix<f64>) -> f64 {
    let m = d2.nrows();
    let mut v: Vec<f64> = Vec::with_capacity(m * (m - 1) / 2);
    for j in 0..m {
        for i in 0..j {
            v.push(d2[(i, j)].sqrt());
        }
    }
    let len = v.len();
    let mid = len / 2;
    let (_, hi, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if len % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Pairwise squared Euclidean distances between columns.
pub fn pairwise_sq_distances(points: &DMatrix<f64>) -> DMatrix<f64> {
    let m = points.ncols();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let xi = points.column(i);
            (0..m)
                .map(|j| if i == j { 0.0 } else { sq_dist(points.column(j), xi.as_slice()) })
                .collect()
        })
        .collect();
    DMatrix::from_fn(m, m, |i, j| if i <= j { rows[i][j] } else { rows[j][i] })
}

/// Fits a diffusion map with `d` non-trivial coordinates to unit-mass snapshots.
pub fn fit_dmaps(x: &SnapshotMatrix, d: usize) -> Result<DmapsModel> {
    if x.normalization != Normalization::UnitMass {
        return Err(Error::Domain("diffusion maps expect unit-mass snapshots".into()));
    }
    let mut model = fit_dmaps_points(&x.data, d)?;
    model.source_hash = x.content_hash();
    Ok(model)
}

/// Fits a diffusion map to arbitrary points (columns of `points`).
pub fn fit_dmaps_points(points: &DMatrix<f64>, d: usize) -> Result<DmapsModel> {
    let m = points.ncols();
    if d == 0 || m < d + 1 {
        return Err(Error::Shape(format!("need at least d + 1 = {} points, got {m}", d + 1)));
    }
    let d2 = pairwise_sq_distances(points);
    let epsilon = median_distance(&d2);
    if !(epsilon > 0.0) {
        return Err(Error::Numeric("median pairwise distance is zero".into()));
    }
    let eps2 = epsilon * epsilon;
    let kernel = d2.map(|v| (-v / eps2).exp());
    let degrees = DVector::from_iterator(m, kernel.row_iter().map(|r| r.sum()));
    let inv_sqrt: Vec<f64> = degrees.iter().map(|g| 1.0 / g.sqrt()).collect();
    let sym = DMatrix::from_fn(m, m, |i, j| kernel[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let sym = (&sym + sym.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, 1e-15, 0)
        .ok_or_else(|| Error::Numeric("kernel eigen-solver did not converge".into()))?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let right_of = |k: usize| -> DVector<f64> {
        let v = eig.eigenvectors.column(k);
        let mut u = DVector::from_fn(m, |i, _| v[i] * inv_sqrt[i]);
        fix_sign(u.as_mut_slice());
        u
    };
    let trivial_vector = right_of(order[0]);
    let mut right = DMatrix::zeros(m, d);
    for k in 0..d {
        right.set_column(k, &right_of(order[k + 1]));
    }
    let spectrum: Vec<f64> = order[1..].iter().map(|&k| eig.eigenvalues[k]).collect();
    Ok(DmapsModel {
        points: points.clone(),
        epsilon,
        eigenvalues: spectrum[..d].to_vec(),
        right,
        degrees,
        trivial_eigenvalue: eig.eigenvalues[order[0]],
        trivial_vector,
        spectrum,
        source_hash: String::new(),
    })
}

impl DmapsModel {
    pub fn d(&self) -> usize {
        self.right.ncols()
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    /// The leading `d` coordinates of this model.
    pub fn truncate(&self, d: usize) -> Result<DmapsModel> {
        if d == 0 || d > self.d() {
            return Err(Error::Shape(format!("cannot keep {d} of {} coordinates", self.d())));
        }
        Ok(DmapsModel {
            eigenvalues: self.eigenvalues[..d].to_vec(),
            right: self.right.columns(0, d).into_owned(),
            ..self.clone()
        })
    }

    /// Left eigenvectors w_i = D u_i, biorthogonal to the right ones.
    pub fn left(&self) -> DMatrix<f64> {
        let mut w = self.right.clone();
        for (i, mut row) in w.row_iter_mut().enumerate() {
            row *= self.degrees[i];
        }
        w
    }

    /// Ratios λ_{i+1}/λ_i over the non-trivial spectrum.
    pub fn eigenvalue_ratios(&self) -> Vec<f64> {
        self.spectrum.windows(2).map(|w| w[1] / w[0]).collect()
    }

    /// Markov matrix M = D⁻¹A, rebuilt from the stored points.
    pub fn markov_matrix(&self) -> DMatrix<f64> {
        let eps2 = self.epsilon * self.epsilon;
        let mut k = pairwise_sq_distances(&self.points).map(|v| (-v / eps2).exp());
        for (i, mut row) in k.row_iter_mut().enumerate() {
            row /= self.degrees[i];
        }
        k
    }

    /// Largest relative deviation of the trivial right eigenvector from a constant.
    pub fn trivial_deviation(&self) -> f64 {
        let mean = self.trivial_vector.mean();
        self.trivial_vector.iter().map(|u| (u / mean - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = ModelFile::new(
            SectionKind::Dmaps,
            json!({
                "d": self.d(),
                "epsilon": self.epsilon,
                "trivial_eigenvalue": self.trivial_eigenvalue,
                "source_hash": self.source_hash,
            }),
        );
        let col = |v: &[f64]| DMatrix::from_column_slice(v.len(), 1, v);
        f.push("eigenvalues", col(&self.eigenvalues));
        f.push("right", self.right.clone());
        f.push("degrees", col(self.degrees.as_slice()));
        f.push("trivial_vector", col(self.trivial_vector.as_slice()));
        f.push("spectrum", col(&self.spectrum));
        f.push("epsilon", DMatrix::from_element(1, 1, self.epsilon));
        f.push("trivial_eigenvalue", DMatrix::from_element(1, 1, self.trivial_eigenvalue));
        write_model(path, &f)
    }

    /// Loads a model; `training` must be the matrix it was fitted on.
    pub fn load(path: &Path, training: &SnapshotMatrix) -> Result<DmapsModel> {
        let f = read_model(path, SectionKind::Dmaps)?;
        let source_hash = f.meta["source_hash"].as_str().unwrap_or_default().to_string();
        let actual = training.content_hash();
        if source_hash != actual {
            return Err(Error::Lineage(format!(
                "diffusion map was fitted on {source_hash}, got training data {actual}"
            )));
        }
        let vec = |name: &str| -> Result<Vec<f64>> { Ok(f.array(name)?.iter().copied().collect()) };
        Ok(DmapsModel {
            points: training.data.clone(),
            epsilon: f.array("epsilon")?[(0, 0)],
            eigenvalues: vec("eigenvalues")?,
            right: f.array("right")?.clone(),
            degrees: DVector::from_vec(vec("degrees")?),
            trivial_eigenvalue: f.array("trivial_eigenvalue")?[(0, 0)],
            trivial_vector: DVector::from_vec(vec("trivial_vector")?),
            spectrum: vec("spectrum")?,
            source_hash,
        })
    }
}

/// Training embedding: row m is (λ_1 u_{1,m}, ..., λ_d u_{d,m}).
pub fn dmaps_encode(model: &DmapsModel) -> LatentEmbedding {
    let mut coords = model.right.clone();
    for (k, mut c) in coords.column_iter_mut().enumerate() {
        c *= model.eigenvalues[k];
    }
    LatentEmbedding {
        coords,
        kind: EmbeddingKind::Dmaps,
        source_hash: model.source_hash.clone(),
    }
}

/// Nyström extension y*_i = Σ_j μ(x_new, x_j) u_{i,j}. The normalized kernel
/// weights are formed relative to the nearest training point so they stay
/// defined even when every raw kernel value underflows.
pub fn nystrom_extend(model: &DmapsModel, x_new: &[f64]) -> Result<NystromPoint> {
    if x_new.len() != model.points.nrows() {
        return Err(Error::Shape(format!(
            "snapshot of length {} for a model of length {}",
            x_new.len(),
            model.points.nrows()
        )));
    }
    let eps2 = model.epsilon * model.epsilon;
    let d2: Vec<f64> = (0..model.len()).map(|j| sq_dist(model.points.column(j), x_new)).collect();
    let dmin = d2.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = d2.iter().map(|v| (-(v - dmin) / eps2).exp()).collect();
    let total: f64 = shifted.iter().sum();
    let kernel_sum = total * (-dmin / eps2).exp();
    let mut coords = DVector::zeros(model.d());
    for (j, w) in shifted.iter().enumerate() {
        let mu = w / total;
        coords.axpy(mu, &model.right.row(j).transpose(), 1.0);
    }
    Ok(NystromPoint {
        coords,
        kernel_sum,
        out_of_range: kernel_sum < OUT_OF_RANGE_KERNEL_SUM,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, m, |_, _| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn trivial_pair_and_bounds() {
        let model = fit_dmaps_points(&cloud(6, 30, 1), 5).unwrap();
        assert!((model.trivial_eigenvalue - 1.0).abs() < 1e-12);
        assert!(model.trivial_deviation() < 1e-8);
        assert!(model.eigenvalues.iter().all(|l| l.abs() < 1.0));
        assert!(model.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        let mk = model.markov_matrix();
        for r in mk.row_iter() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
        for i in 0..30 {
            assert!((mk[(i, i)] * model.degrees[i] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn right_vectors_are_eigenvectors_and_biorthogonal() {
        let model = fit_dmaps_points(&cloud(5, 25, 2), 6).unwrap();
        let mk = model.markov_matrix();
        for k in 0..6 {
            let u = model.right.column(k);
            let r = &mk * u - u * model.eigenvalues[k];
            assert!(r.amax() < 1e-10 * u.amax());
        }
        let g = model.left().tr_mul(&model.right);
        assert!((g - DMatrix::identity(6, 6)).amax() < 1e-8);
    }

    #[test]
    fn collinear_points_are_ordered() {
        let mut p = DMatrix::zeros(4, 3);
        for k in 0..3 {
            p.column_mut(k).fill(k as f64);
        }
        let model = fit_dmaps_points(&p, 1).unwrap();
        let u = model.right.column(0);
        assert!((u[0] < u[1] && u[1] < u[2]) || (u[0] > u[1] && u[1] > u[2]));
    }

    #[test]
    fn nystrom_reproduces_training_embedding() {
        let model = fit_dmaps_points(&cloud(6, 40, 3), 4).unwrap();
        let emb = dmaps_encode(&model);
        for m in 0..40 {
            let x: Vec<f64> = model.points.column(m).iter().copied().collect();
            let y = nystrom_extend(&model, &x).unwrap();
            assert!(!y.out_of_range);
            for k in 0..4 {
                let want = emb.coords[(m, k)];
                assert!((y.coords[k] - want).abs() <= 1e-9 * emb.coords.column(k).amax());
            }
        }
    }

    #[test]
    fn scaling_leaves_embedding_unchanged() {
        let p = cloud(6, 30, 4);
        let a = dmaps_encode(&fit_dmaps_points(&p, 4).unwrap());
        let b = dmaps_encode(&fit_dmaps_points(&(&p * 37.5), 4).unwrap());
        assert!((a.coords - b.coords).amax() < 1e-10);
    }

    #[test]
    fn far_query_is_flagged_but_finite() {
        let model = fit_dmaps_points(&cloud(3, 20, 5), 2).unwrap();
        let y = nystrom_extend(&model, &[1e4, 1e4, 1e4]).unwrap();
        assert!(y.out_of_range);
        assert!(y.coords.iter().all(|v| v.is_finite()));
        assert!(nystrom_extend(&model, &[0.0; 2]).is_err());
    }

    #[test]
    fn truncation_matches_smaller_fit() {
        let p = cloud(5, 30, 7);
        let big = fit_dmaps_points(&p, 6).unwrap();
        let small = fit_dmaps_points(&p, 3).unwrap();
        assert_eq!(big.truncate(3).unwrap(), small);
    }

    #[test]
    fn too_few_points() {
        assert!(fit_dmaps_points(&cloud(3, 4, 6), 4).is_err());
        assert_eq!(fit_dmaps_points(&cloud(3, 4, 6), 3).unwrap().d(), 3);
    }
}
