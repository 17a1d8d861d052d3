//! Delay-coordinate multivariate autoregression in latent space.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{read_model, write_model, ModelFile, SectionKind};
use crate::dmaps::EmbeddingKind;
use crate::error::{Error, Result};

/// Relative pivot size below which the regressor matrix counts as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// Forecasts are aborted once |y| exceeds this multiple of the training radius.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Uniformly sampled latent trajectory; row t of `states` is y(t Δt).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectory {
    pub run_id: u32,
    pub states: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectorySet {
    pub trajectories: Vec<LatentTrajectory>,
    pub d: usize,
    pub dt: f64,
}

impl LatentTrajectorySet {
    pub fn new(trajectories: Vec<LatentTrajectory>, dt: f64) -> Result<Self> {
        let d = trajectories.first().map(|t| t.states.ncols()).unwrap_or(0);
        if trajectories.iter().any(|t| t.states.ncols() != d) {
            return Err(Error::Shape("trajectories have different latent dimensions".into()));
        }
        Ok(LatentTrajectorySet { trajectories, d, dt })
    }

    /// Largest latent norm over all states.
    pub fn radius(&self) -> f64 {
        self.trajectories
            .iter()
            .flat_map(|t| t.states.row_iter().map(|r| r.norm()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }

    fn min_len(&self) -> usize {
        self.trajectories.iter().map(|t| t.states.nrows()).min().unwrap_or(0)
    }
}

/// Stacks regressors r(t) = [y(t), y(t−Δt), …, y(t−(l−1)Δt)] (newest first)
/// against targets y(t+Δt). Rows never mix trajectories.
pub fn build_regressors(set: &LatentTrajectorySet, l: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if l == 0 {
        return Err(Error::Config("lag must be at least 1".into()));
    }
    if set.trajectories.is_empty() || set.min_len() < l + 1 {
        return Err(Error::Shape(format!(
            "lag {l} needs trajectories of at least {} states (shortest has {})",
            l + 1,
            set.min_len()
        )));
    }
    let d = set.d;
    let rows: usize = set.trajectories.iter().map(|t| t.states.nrows() - l).sum();
    let mut r = DMatrix::zeros(rows, d * l);
    let mut y = DMatrix::zeros(rows, d);
    let mut at = 0;
    for traj in &set.trajectories {
        let s = &traj.states;
        for t in (l - 1)..(s.nrows() - 1) {
            for k in 0..l {
                r.view_mut((at, k * d), (1, d)).copy_from(&s.row(t - k));
            }
            y.row_mut(at).copy_from(&s.row(t + 1));
            at += 1;
        }
    }
    Ok((r, y))
}

/// Least-squares coefficients and residual statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// d x (d l); block k multiplies y(t − kΔt).
    pub coef: DMatrix<f64>,
    pub residual_cov: DMatrix<f64>,
    pub n_rows: usize,
    /// Ratio of the largest to smallest R-factor pivot.
    pub condition: f64,
}

/// Solves min ‖Y − R Cᵀ‖ by Householder QR.
pub fn fit_ols(r: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<OlsFit> {
    let (n, p) = (r.nrows(), r.ncols());
    if y.nrows() != n {
        return Err(Error::Shape(format!("{n} regressor rows but {} targets", y.nrows())));
    }
    if n < p {
        return Err(Error::RankDeficient(format!(
            "{n} samples for {p} regressors; use a smaller lag or more data"
        )));
    }
    let qr = r.clone().qr();
    let rf = qr.r();
    let diag: Vec<f64> = (0..p).map(|i| rf[(i, i)].abs()).collect();
    let dmax = diag.iter().copied().fold(0.0, f64::max);
    let dmin = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if !(dmax > 0.0) || dmin < RANK_TOLERANCE * dmax {
        return Err(Error::RankDeficient(format!(
            "regressor pivots span {dmin:e}..{dmax:e}; use a smaller lag or more data"
        )));
    }
    let qty = qr.q().tr_mul(y);
    let ct = rf
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let resid = y - r * &ct;
    let residual_cov = resid.tr_mul(&resid) / n as f64;
    Ok(OlsFit {
        coef: ct.transpose(),
        residual_cov,
        n_rows: n,
        condition: dmax / dmin,
    })
}

/// ln det of a symmetric positive semidefinite matrix, clamped so exact fits
/// stay finite.
fn log_det(s: &DMatrix<f64>) -> f64 {
    let floor = f64::MIN_POSITIVE;
    let eig = s.clone().symmetric_eigenvalues();
    eig.iter().map(|l| l.max(floor).ln()).sum()
}

/// Gaussian log-likelihood of the OLS residuals.
pub fn log_likelihood(residual_cov: &DMatrix<f64>, n_rows: usize) -> f64 {
    let d = residual_cov.nrows() as f64;
    -0.5 * n_rows as f64 * (d * (2.0 * PI).ln() + log_det(residual_cov) + d)
}

/// BIC = −2 ln L + ln(N) l d².
pub fn bic(log_lik: f64, n_rows: usize, lag: usize, d: usize) -> f64 {
    -2.0 * log_lik + (n_rows as f64).ln() * (lag * d * d) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicRow {
    pub lag: usize,
    /// +inf when the lag is not identifiable from the data.
    pub bic: f64,
    pub log_likelihood: f64,
    pub n_rows: usize,
    pub n_coefficients: usize,
}

/// Evaluates BIC for each candidate lag and returns the minimizer (smaller
/// lag on ties). Lags whose regressors are rank deficient score +inf.
pub fn select_lag(set: &LatentTrajectorySet, candidates: &[usize]) -> Result<(usize, Vec<BicRow>)> {
    if candidates.is_empty() {
        return Err(Error::Config("no candidate lags".into()));
    }
    let mut lags = candidates.to_vec();
    lags.sort_unstable();
    lags.dedup();
    let mut table = Vec::with_capacity(lags.len());
    for &l in &lags {
        let (r, y) = build_regressors(set, l)?;
        let row = match fit_ols(&r, &y) {
            Ok(fit) => {
                let ll = log_likelihood(&fit.residual_cov, fit.n_rows);
                BicRow {
                    lag: l,
                    bic: bic(ll, fit.n_rows, l, set.d),
                    log_likelihood: ll,
                    n_rows: fit.n_rows,
                    n_coefficients: l * set.d * set.d,
                }
            }
            Err(Error::RankDeficient(_)) => BicRow {
                lag: l,
                bic: f64::INFINITY,
                log_likelihood: f64::NAN,
                n_rows: r.nrows(),
                n_coefficients: l * set.d * set.d,
            },
            Err(e) => return Err(e),
        };
        table.push(row);
    }
    let best = table
        .iter()
        .filter(|r| r.bic.is_finite())
        .fold(None::<&BicRow>, |acc, r| match acc {
            Some(a) if a.bic <= r.bic => Some(a),
            _ => Some(r),
        })
        .ok_or_else(|| Error::RankDeficient("no candidate lag is identifiable".into()))?;
    Ok((best.lag, table))
}

/// Fitted latent dynamics y(t+Δt) = C r(t).
#[derive(Debug, Clone, PartialEq)]
pub struct MvarModel {
    pub lag: usize,
    pub coef: DMatrix<f64>,
    pub residual_cov: DMatrix<f64>,
    pub n_rows: usize,
    pub bic_table: Vec<BicRow>,
    pub kind: Option<EmbeddingKind>,
    pub dt: f64,
    /// Largest latent norm seen in training.
    pub train_radius: f64,
    /// Hash of the embedding the trajectories came from.
    pub source_hash: String,
}

/// How the lag is chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagChoice {
    Fixed(usize),
    Bic(Vec<usize>),
}

pub fn fit_mvar(set: &LatentTrajectorySet, choice: &LagChoice) -> Result<MvarModel> {
    let (lag, bic_table) = match choice {
        LagChoice::Fixed(l) => (*l, Vec::new()),
        LagChoice::Bic(c) => select_lag(set, c)?,
    };
    let (r, y) = build_regressors(set, lag)?;
    let fit = fit_ols(&r, &y)?;
    Ok(MvarModel {
        lag,
        coef: fit.coef,
        residual_cov: fit.residual_cov,
        n_rows: fit.n_rows,
        bic_table,
        kind: None,
        dt: set.dt,
        train_radius: set.radius(),
        source_hash: String::new(),
    })
}

impl MvarModel {
    /// Builds a model from known coefficients (no fit diagnostics).
    pub fn from_coefficients(coef: DMatrix<f64>, train_radius: f64) -> Result<MvarModel> {
        let d = coef.nrows();
        if d == 0 || coef.ncols() % d != 0 {
            return Err(Error::Shape(format!("coefficient matrix {}x{} is not d x dl", d, coef.ncols())));
        }
        Ok(MvarModel {
            lag: coef.ncols() / d,
            residual_cov: DMatrix::zeros(d, d),
            coef,
            n_rows: 0,
            bic_table: Vec::new(),
            kind: None,
            dt: 1.0,
            train_radius,
            source_hash: String::new(),
        })
    }

    pub fn d(&self) -> usize {
        self.coef.nrows()
    }

    pub fn n_coefficients(&self) -> usize {
        self.coef.len()
    }

    pub fn companion(&self) -> DMatrix<f64> {
        let (d, l) = (self.d(), self.lag);
        let mut a = DMatrix::zeros(d * l, d * l);
        a.view_mut((0, 0), (d, d * l)).copy_from(&self.coef);
        for k in 1..l {
            for i in 0..d {
                a[(k * d + i, (k - 1) * d + i)] = 1.0;
            }
        }
        a
    }

    /// Spectral radius of the companion matrix.
    pub fn spectral_radius(&self) -> f64 {
        self.companion()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = ModelFile::new(
            SectionKind::Mvar,
            json!({
                "lag": self.lag,
                "d": self.d(),
                "n_rows": self.n_rows,
                "kind": self.kind,
                "source_hash": self.source_hash,
                "bic_table": self.bic_table.iter().map(|r| json!({
                    "lag": r.lag,
                    "n_rows": r.n_rows,
                    "n_coefficients": r.n_coefficients,
                })).collect::<Vec<_>>(),
            }),
        );
        f.push("coef", self.coef.clone());
        f.push("residual_cov", self.residual_cov.clone());
        let bic: Vec<f64> = self.bic_table.iter().flat_map(|r| [r.bic, r.log_likelihood]).collect();
        f.push("bic", DMatrix::from_row_slice(self.bic_table.len(), 2, &bic));
        f.push("scalars", DMatrix::from_row_slice(1, 2, &[self.dt, self.train_radius]));
        write_model(path, &f)
    }

    pub fn load(path: &Path) -> Result<MvarModel> {
        let f = read_model(path, SectionKind::Mvar)?;
        let bad = |what: &str| Error::Format {
            path: path.to_path_buf(),
            reason: format!("missing or invalid {what}"),
        };
        let meta = &f.meta;
        let lag = meta["lag"].as_u64().ok_or_else(|| bad("lag"))? as usize;
        let n_rows = meta["n_rows"].as_u64().ok_or_else(|| bad("n_rows"))? as usize;
        let kind: Option<EmbeddingKind> = serde_json::from_value(meta["kind"].clone())?;
        let bic = f.array("bic")?;
        let rows = meta["bic_table"].as_array().ok_or_else(|| bad("bic_table"))?;
        if rows.len() != bic.nrows() {
            return Err(bad("bic_table"));
        }
        let bic_table = rows
            .iter()
            .enumerate()
            .map(|(k, r)| {
                Ok(BicRow {
                    lag: r["lag"].as_u64().ok_or_else(|| bad("bic lag"))? as usize,
                    bic: bic[(k, 0)],
                    log_likelihood: bic[(k, 1)],
                    n_rows: r["n_rows"].as_u64().ok_or_else(|| bad("bic rows"))? as usize,
                    n_coefficients: r["n_coefficients"].as_u64().ok_or_else(|| bad("bic coefficients"))? as usize,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scalars = f.array("scalars")?;
        Ok(MvarModel {
            lag,
            coef: f.array("coef")?.clone(),
            residual_cov: f.array("residual_cov")?.clone(),
            n_rows,
            bic_table,
            kind,
            dt: scalars[(0, 0)],
            train_radius: scalars[(0, 1)],
            source_hash: meta["source_hash"].as_str().unwrap_or_default().to_string(),
        })
    }
}

/// Free-running rollout from `warmup` (exactly l states, newest last).
pub fn forecast(model: &MvarModel, warmup: &[DVector<f64>], steps: usize) -> Result<Vec<DVector<f64>>> {
    let (d, l) = (model.d(), model.lag);
    if warmup.len() != l || warmup.iter().any(|y| y.len() != d) {
        return Err(Error::Shape(format!("warmup needs {l} states of length {d}")));
    }
    let limit = DIVERGENCE_FACTOR * model.train_radius.max(f64::MIN_POSITIVE);
    let mut history: Vec<DVector<f64>> = warmup.to_vec();
    let mut out = Vec::with_capacity(steps);
    let mut r = DVector::zeros(d * l);
    for step in 0..steps {
        let h = history.len();
        for k in 0..l {
            r.rows_mut(k * d, d).copy_from(&history[h - 1 - k]);
        }
        let next = &model.coef * &r;
        let norm = next.norm();
        if !(norm <= limit) {
            return Err(Error::Instability { step, norm });
        }
        out.push(next.clone());
        history.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traj(run_id: u32, rows: &[&[f64]]) -> LatentTrajectory {
        let d = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        LatentTrajectory {
            run_id,
            states: DMatrix::from_row_slice(rows.len(), d, &flat),
        }
    }

    #[test]
    fn regressor_shapes_and_ordering() {
        let states: Vec<Vec<f64>> = (0..10).map(|t| vec![t as f64, 100.0 + t as f64]).collect();
        let rows: Vec<&[f64]> = states.iter().map(|v| v.as_slice()).collect();
        let set = LatentTrajectorySet::new(vec![traj(0, &rows)], 0.1).unwrap();
        let (r, y) = build_regressors(&set, 3).unwrap();
        assert_eq!((r.nrows(), r.ncols(), y.nrows(), y.ncols()), (7, 6, 7, 2));
        // first row: t = 2, newest first
        assert_eq!(r.row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, 102.0, 1.0, 101.0, 0.0, 100.0]);
        assert_eq!(y[(0, 0)], 3.0);
        let (r1, y1) = build_regressors(&set, 1).unwrap();
        assert_eq!(r1.nrows(), 9);
        assert_eq!(r1[(4, 0)], 4.0);
        assert_eq!(y1[(4, 0)], 5.0);
    }

    #[test]
    fn rows_do_not_cross_trajectories() {
        let a = traj(0, &[&[1.0], &[2.0], &[3.0]]);
        let b = traj(1, &[&[10.0], &[20.0], &[30.0]]);
        let set = LatentTrajectorySet::new(vec![a, b], 1.0).unwrap();
        let (r, y) = build_regressors(&set, 2).unwrap();
        assert_eq!(r.nrows(), 2);
        assert_eq!((r[(0, 0)], r[(0, 1)], y[(0, 0)]), (2.0, 1.0, 3.0));
        assert_eq!((r[(1, 0)], r[(1, 1)], y[(1, 0)]), (20.0, 10.0, 30.0));
        assert!(build_regressors(&set, 3).is_err());
    }

    #[test]
    fn zero_targets_give_zero_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = DMatrix::from_fn(50, 4, |_, _| rng.gen_range(-1.0..1.0));
        let fit = fit_ols(&r, &DMatrix::zeros(50, 2)).unwrap();
        assert!(fit.coef.amax() == 0.0);
    }

    #[test]
    fn consistent_duplicate_row_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = DMatrix::from_fn(40, 3, |_, _| rng.gen_range(-1.0..1.0));
        let c = DMatrix::from_row_slice(2, 3, &[0.5, -0.2, 0.1, 0.3, 0.0, -0.4]);
        let y = &r * c.transpose();
        let a = fit_ols(&r, &y).unwrap();
        let r2 = r.clone().insert_row(40, 0.0);
        let mut r2 = r2;
        r2.row_mut(40).copy_from(&r.row(7));
        let mut y2 = y.clone().insert_row(40, 0.0);
        y2.row_mut(40).copy_from(&y.row(7));
        let b = fit_ols(&r2, &y2).unwrap();
        assert!((a.coef - b.coef).amax() < 1e-10);
    }

    #[test]
    fn collinear_regressors_are_rank_deficient() {
        let r = DMatrix::from_fn(20, 2, |i, j| (i + 1) as f64 * (j + 1) as f64);
        assert!(matches!(fit_ols(&r, &DMatrix::zeros(20, 1)), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn ols_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = DMatrix::from_fn(80, 4, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(80, 2, |_, _| rng.gen_range(-1.0..1.0));
        let fit = fit_ols(&r, &y).unwrap();
        let sse = |c: &DMatrix<f64>| (&y - &r * c.transpose()).norm_squared();
        let base = sse(&fit.coef);
        for _ in 0..20 {
            let dc = DMatrix::from_fn(2, 4, |_, _| rng.gen_range(-1e-3..1e-3));
            assert!(sse(&(&fit.coef + dc)) > base * (1.0 - 1e-6));
        }
    }

    #[test]
    fn bic_penalty_grows_with_lag() {
        for l in 1..6 {
            assert!(bic(-10.0, 100, l + 1, 3) > bic(-10.0, 100, l, 3));
        }
    }

    #[test]
    fn geometric_decay_forecast() {
        let m = MvarModel::from_coefficients(DMatrix::from_element(1, 1, 0.5), 1.0).unwrap();
        let f = forecast(&m, &[DVector::from_element(1, 1.0)], 4).unwrap();
        let v: Vec<f64> = f.iter().map(|y| y[0]).collect();
        assert_eq!(v, vec![0.5, 0.25, 0.125, 0.0625]);
        assert!((m.spectral_radius() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn identity_forecast_is_constant() {
        let mut c = DMatrix::zeros(2, 4);
        c[(0, 0)] = 1.0;
        c[(1, 1)] = 1.0;
        let m = MvarModel::from_coefficients(c, 1.0).unwrap();
        let y = DVector::from_vec(vec![0.3, -0.7]);
        let f = forecast(&m, &[y.clone(), y.clone()], 10).unwrap();
        assert!(f.iter().all(|s| *s == y));
    }

    #[test]
    fn divergence_is_reported() {
        let m = MvarModel::from_coefficients(DMatrix::from_element(1, 1, 10.0), 1.0).unwrap();
        match forecast(&m, &[DVector::from_element(1, 1.0)], 20) {
            Err(Error::Instability { step, .. }) => assert_eq!(step, 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trajs: Vec<LatentTrajectory> = (0..3)
            .map(|k| LatentTrajectory {
                run_id: k,
                states: DMatrix::from_fn(30, 2, |_, _| rng.gen_range(-1.0..1.0)),
            })
            .collect();
        let set = LatentTrajectorySet::new(trajs, 0.1).unwrap();
        let mut m = fit_mvar(&set, &LagChoice::Bic(vec![1, 2, 3])).unwrap();
        m.kind = Some(EmbeddingKind::Pod);
        assert_eq!(m.bic_table.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mvar.json");
        m.save(&path).unwrap();
        assert_eq!(MvarModel::load(&path).unwrap(), m);
    }
}
