//! Proper orthogonal decomposition by the method of snapshots.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde_json::json;

use crate::dataset::{read_model, write_model, ModelFile, Normalization, SectionKind, SnapshotMatrix};
use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a mode is considered numerically absent.
pub const RANK_TOLERANCE: f64 = 1e-14;

/// Orthonormal spatial modes of centered unit-mass snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    /// N x d, orthonormal columns.
    pub modes: DMatrix<f64>,
    /// Training mean x̄.
    pub mean: DVector<f64>,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Full Gram spectrum (clamped at zero), descending.
    pub spectrum: Vec<f64>,
    /// Content hash of the training matrix.
    pub source_hash: String,
}

impl PodBasis {
    pub fn d(&self) -> usize {
        self.modes.ncols()
    }

    pub fn n(&self) -> usize {
        self.modes.nrows()
    }

    /// Cumulative explained-variance ratios of the full spectrum.
    pub fn cumulative_variance(&self) -> Vec<f64> {
        cumulative_variance(&self.spectrum)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = ModelFile::new(SectionKind::Pod, json!({ "d": self.d(), "source_hash": self.source_hash }));
        f.push("modes", self.modes.clone());
        f.push("mean", DMatrix::from_column_slice(self.n(), 1, self.mean.as_slice()));
        f.push("eigenvalues", DMatrix::from_column_slice(self.d(), 1, &self.eigenvalues));
        f.push("spectrum", DMatrix::from_column_slice(self.spectrum.len(), 1, &self.spectrum));
        write_model(path, &f)
    }

    pub fn load(path: &Path) -> Result<PodBasis> {
        let f = read_model(path, SectionKind::Pod)?;
        let source_hash = f.meta["source_hash"].as_str().unwrap_or_default().to_string();
        Ok(PodBasis {
            modes: f.array("modes")?.clone(),
            mean: f.array("mean")?.column(0).into_owned(),
            eigenvalues: f.array("eigenvalues")?.iter().copied().collect(),
            spectrum: f.array("spectrum")?.iter().copied().collect(),
            source_hash,
        })
    }
}

/// Running sums of `spectrum` divided by its total.
pub fn cumulative_variance(spectrum: &[f64]) -> Vec<f64> {
    let total: f64 = spectrum.iter().sum();
    let mut acc = 0.0;
    spectrum
        .iter()
        .map(|l| {
            acc += l;
            if total > 0.0 {
                acc / total
            } else {
                1.0
            }
        })
        .collect()
}

/// Smallest d whose cumulative variance reaches `threshold`.
pub fn dimension_for_variance(spectrum: &[f64], threshold: f64) -> usize {
    cumulative_variance(spectrum)
        .iter()
        .position(|&c| c >= threshold)
        .map(|k| k + 1)
        .unwrap_or(spectrum.len())
}

/// Flips `v` so its entry of largest magnitude is positive (first one on ties).
pub(crate) fn fix_sign(v: &mut [f64]) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// How many modes to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PodDimension {
    Fixed(usize),
    /// Smallest d reaching this cumulative variance ratio.
    Variance(f64),
}

/// Fits d modes to a unit-mass snapshot matrix.
pub fn fit_pod(x: &SnapshotMatrix, d: usize) -> Result<PodBasis> {
    fit_pod_with(x, PodDimension::Fixed(d))
}

pub fn fit_pod_with(x: &SnapshotMatrix, rule: PodDimension) -> Result<PodBasis> {
    if x.normalization != Normalization::UnitMass {
        return Err(Error::Domain("POD expects unit-mass snapshots".into()));
    }
    let (n, m) = (x.nrows(), x.ncols());
    if m < 2 {
        return Err(Error::RankDeficient(format!("{m} snapshots carry no variance")));
    }
    let mean = x.data.column_mean();
    let mut centered = x.data.clone();
    for mut c in centered.column_iter_mut() {
        c -= &mean;
    }
    let gram = centered.tr_mul(&centered);
    let eig = SymmetricEigen::try_new(gram, 1e-14, 0)
        .ok_or_else(|| Error::Numeric("Gram eigen-solver did not converge".into()))?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let spectrum: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let d = match rule {
        PodDimension::Fixed(d) => d,
        PodDimension::Variance(t) => dimension_for_variance(&spectrum, t),
    };
    if d == 0 || d >= m {
        return Err(Error::RankDeficient(format!(
            "{d} modes requested from {m} snapshots (centered rank is at most {})",
            m - 1
        )));
    }
    let lambda1 = spectrum[0];
    if !(lambda1 > 0.0) || spectrum[d - 1] < RANK_TOLERANCE * lambda1 {
        return Err(Error::RankDeficient(format!(
            "eigenvalue {} of {:e} is below {:e} x the leading one; reduce d",
            d,
            spectrum[d - 1],
            RANK_TOLERANCE
        )));
    }

    let mut modes = DMatrix::zeros(n, d);
    let ones = 1.0 / n as f64;
    for k in 0..d {
        let psi = eig.eigenvectors.column(order[k]);
        let mut w = &centered * psi / spectrum[k].sqrt();
        // centered unit-mass data is orthogonal to the ones vector
        for _ in 0..2 {
            let s = w.sum() * ones;
            w.add_scalar_mut(-s);
            for prev in 0..k {
                let p = modes.column(prev);
                let dot = p.dot(&w);
                w.axpy(-dot, &p, 1.0);
            }
        }
        w /= w.norm();
        fix_sign(w.as_mut_slice());
        modes.set_column(k, &w);
    }

    Ok(PodBasis {
        modes,
        mean,
        eigenvalues: spectrum[..d].to_vec(),
        spectrum,
        source_hash: x.content_hash(),
    })
}

impl PodBasis {
    /// The leading `d` modes of this basis.
    pub fn truncate(&self, d: usize) -> Result<PodBasis> {
        if d == 0 || d > self.d() {
            return Err(Error::Shape(format!("cannot keep {d} of {} modes", self.d())));
        }
        Ok(PodBasis {
            modes: self.modes.columns(0, d).into_owned(),
            mean: self.mean.clone(),
            eigenvalues: self.eigenvalues[..d].to_vec(),
            spectrum: self.spectrum.clone(),
            source_hash: self.source_hash.clone(),
        })
    }
}

/// y = Wᵀ(x − x̄).
pub fn pod_encode(basis: &PodBasis, x: &[f64]) -> Result<DVector<f64>> {
    if x.len() != basis.n() {
        return Err(Error::Shape(format!("snapshot of length {} for a basis of length {}", x.len(), basis.n())));
    }
    let centered = DVector::from_column_slice(x) - &basis.mean;
    Ok(basis.modes.tr_mul(&centered))
}

/// x̂ = W y + x̄.
pub fn pod_decode(basis: &PodBasis, y: &[f64]) -> Result<DVector<f64>> {
    if y.len() != basis.d() {
        return Err(Error::Shape(format!("latent vector of length {} for d = {}", y.len(), basis.d())));
    }
    Ok(&basis.modes * DVector::from_column_slice(y) + &basis.mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnMeta, DatasetInfo};
    use crate::grid::GridSpec;
    use crate::hughes::GaussianIc;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn unit_matrix(data: DMatrix<f64>, nx: usize, ny: usize) -> SnapshotMatrix {
        let m = data.ncols();
        let ic = GaussianIc {
            x0: 0.0,
            y0: 0.0,
            sigma_x: 1.0,
            sigma_y: 1.0,
            target_mass: 1.0,
        };
        let columns = (0..m)
            .map(|k| ColumnMeta {
                run_id: 0,
                time: k as f64,
                ic,
                column_sum: 1.0,
            })
            .collect();
        SnapshotMatrix::new(
            data,
            columns,
            Normalization::Raw,
            DatasetInfo {
                grid: GridSpec {
                    nx,
                    ny,
                    length_x: nx as f64,
                    length_y: ny as f64,
                    obstacle: None,
                },
                snapshot_dt: 1.0,
                splits: Default::default(),
                label: String::new(),
            },
        )
        .unwrap()
        .to_unit_mass()
        .unwrap()
    }

    fn random_unit(n: usize, m: usize, seed: u64) -> SnapshotMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(n, m, |_, _| rng.gen_range(0.1..1.0));
        unit_matrix(data, n / 4, 4)
    }

    #[test]
    fn rank_one_mode_and_eigenvalue() {
        // columns mean + v_k u with u summing to zero
        let n = 16;
        let u = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + i as f64 * 0.1));
        let u = &u - DVector::from_element(n, u.sum() / n as f64);
        let v = [0.3, -0.1, 0.5, -0.7];
        let base = DVector::from_element(n, 1.0 / n as f64);
        let data = DMatrix::from_fn(n, 4, |i, k| base[i] + 0.001 * v[k] * u[i]);
        let x = unit_matrix(data, 4, 4);
        let b = fit_pod(&x, 1).unwrap();
        let vbar: f64 = v.iter().sum::<f64>() / 4.0;
        let vnorm2: f64 = v.iter().map(|a| (0.001 * (a - vbar)).powi(2)).sum();
        let expect = u.norm_squared() * vnorm2;
        assert!((b.eigenvalues[0] - expect).abs() <= 1e-9 * expect);
        let dot = b.modes.column(0).dot(&(&u / u.norm()));
        assert!((dot.abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn orthonormal_and_mass_free_modes() {
        let x = random_unit(40, 12, 1);
        let b = fit_pod(&x, 8).unwrap();
        let gram = b.modes.tr_mul(&b.modes);
        assert!((gram - DMatrix::identity(8, 8)).amax() < 1e-10);
        for k in 0..8 {
            assert!(b.modes.column(k).sum().abs() < 1e-8);
        }
        assert!(b.spectrum.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn complete_basis_reconstructs_training_data() {
        let x = random_unit(40, 12, 2);
        let b = fit_pod(&x, 11).unwrap();
        for m in 0..12 {
            let col: Vec<f64> = x.column(m).iter().copied().collect();
            let y = pod_encode(&b, &col).unwrap();
            let back = pod_decode(&b, y.as_slice()).unwrap();
            let err = (&back - x.column(m)).norm() / x.column(m).norm();
            assert!(err <= 1e-8, "{err}");
        }
    }

    #[test]
    fn decode_preserves_unit_mass() {
        let x = random_unit(40, 12, 3);
        let b = fit_pod(&x, 5).unwrap();
        assert!((b.mean.sum() - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let y: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = pod_decode(&b, &y).unwrap();
            assert!((x.sum() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn encode_of_mean_and_mode() {
        let x = random_unit(40, 12, 4);
        let b = fit_pod(&x, 3).unwrap();
        let y0 = pod_encode(&b, b.mean.as_slice()).unwrap();
        assert!(y0.amax() < 1e-15);
        let shifted = &b.mean + b.modes.column(0);
        let y1 = pod_encode(&b, shifted.as_slice()).unwrap();
        assert!((y1[0] - 1.0).abs() < 1e-12 && y1[1].abs() < 1e-12 && y1[2].abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_match_singular_values() {
        let x = random_unit(24, 10, 5);
        let b = fit_pod(&x, 6).unwrap();
        let mean = x.data.column_mean();
        let mut c = x.data.clone();
        for mut col in c.column_iter_mut() {
            col -= &mean;
        }
        let mut sv: Vec<f64> = c.svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        for k in 0..6 {
            assert!((b.eigenvalues[k].sqrt() - sv[k]).abs() <= 1e-8 * sv[0]);
        }
    }

    #[test]
    fn sign_convention_and_determinism() {
        let x = random_unit(40, 12, 6);
        let a = fit_pod(&x, 4).unwrap();
        let b = fit_pod(&x, 4).unwrap();
        assert_eq!(a, b);
        for k in 0..4 {
            let col = a.modes.column(k);
            let imax = col.iamax();
            assert!(col[imax] > 0.0);
        }
    }

    #[test]
    fn rank_deficiency_and_shape_errors() {
        let x = random_unit(40, 6, 7);
        assert!(matches!(fit_pod(&x, 6), Err(Error::RankDeficient(_))));
        let b = fit_pod(&x, 2).unwrap();
        assert!(matches!(pod_encode(&b, &[0.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(pod_decode(&b, &[0.0; 3]), Err(Error::Shape(_))));
        // duplicated columns leave a rank-1 centered matrix
        let col = DMatrix::from_fn(16, 1, |i, _| 1.0 + i as f64);
        let other = DMatrix::from_fn(16, 1, |i, _| 2.0 + (i % 3) as f64);
        let data = DMatrix::from_fn(16, 4, |i, k| if k % 2 == 0 { col[i] } else { other[i] });
        assert!(matches!(fit_pod(&unit_matrix(data, 4, 4), 2), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pod.json");
        let b = fit_pod(&random_unit(40, 12, 8), 4).unwrap();
        b.save(&path).unwrap();
        assert_eq!(PodBasis::load(&path).unwrap(), b);
    }

    #[test]
    fn variance_fit_and_truncation_agree() {
        let x = random_unit(40, 12, 10);
        let auto = fit_pod_with(&x, PodDimension::Variance(0.9)).unwrap();
        let d = dimension_for_variance(&auto.spectrum, 0.9);
        assert_eq!(auto.d(), d);
        let full = fit_pod(&x, 11).unwrap();
        assert_eq!(full.truncate(d).unwrap(), fit_pod(&x, d).unwrap());
    }

    #[test]
    fn variance_rule() {
        let s = [5.0, 3.0, 1.0, 0.5, 0.5];
        assert_eq!(dimension_for_variance(&s, 0.8), 2);
        assert_eq!(dimension_for_variance(&s, 0.99), 5);
        let c = cumulative_variance(&s);
        assert!((c[4] - 1.0).abs() < 1e-15);
    }
}
