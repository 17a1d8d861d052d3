//! C interface to the crowd-rom toolkit.
//!
//! Every object crosses the boundary as an opaque handle created by a
//! `cr_*_new`/`cr_*_fit` call and released with the matching `cr_*_free`.
//! Functions return a [`CrStatus`]; on failure [`cr_last_error`] describes
//! what went wrong on the calling thread. Matrices are passed as contiguous
//! `double` buffers whose layout is stated per function.
//!
//! # Safety
//!
//! All pointer arguments must be null or valid for the stated length, and
//! handles must come from this library and not be used after `cr_*_free`.
//! Null pointers are reported with `CrStatus::NullPointer`; the other
//! requirements cannot be checked.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crowd_rom::dataset::{SnapshotMatrix, Split};
use crowd_rom::dmaps::{dmaps_encode, fit_dmaps, nystrom_extend, DmapsModel};
use crowd_rom::grid::{build_grid, Field, Grid, Obstacle};
use crowd_rom::hughes::{run_simulation, GaussianIc, HughesParams, SimulationRun};
use crowd_rom::knn_lift::KnnLifter;
use crowd_rom::metrics::{wasserstein1, W1Options};
use crowd_rom::mvar::{fit_mvar, forecast, LagChoice, LatentTrajectory, LatentTrajectorySet, MvarModel};
use crowd_rom::pod::{fit_pod_with, pod_decode, pod_encode, PodBasis, PodDimension};
use crowd_rom::Error;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Numeric = 4,
    Unstable = 5,
    Mass = 6,
    Internal = 7,
}

fn status_of(e: &Error) -> CrStatus {
    match e {
        Error::Shape(_) | Error::TimeMisalignment { .. } => CrStatus::ShapeMismatch,
        Error::NoConvergence { .. } | Error::Numeric(_) | Error::RankDeficient(_) => CrStatus::Numeric,
        Error::Instability { .. } | Error::Stability(_) => CrStatus::Unstable,
        Error::ZeroMass | Error::UnequalMass(..) | Error::InfeasibleMass { .. } | Error::Conservation(_) => {
            CrStatus::Mass
        }
        Error::Io { .. } | Error::Json(_) | Error::Format { .. } | Error::Checksum(_) => CrStatus::Internal,
        _ => CrStatus::InvalidArgument,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(CrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CrStatus::NullPointer, format!("{what} is null"))
}

fn bad(msg: impl Into<String>) -> Fail {
    Fail(CrStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CrStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CrStatus::Internal
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn expect_len(got: usize, want: usize, what: &str) -> Result<(), Fail> {
    if got == want {
        Ok(())
    } else {
        Err(Fail(CrStatus::ShapeMismatch, format!("{what} has length {got}, expected {want}")))
    }
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn cr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

// ------------------------------------------------------------------ grid

/// Rectangular corridor discretization.
pub struct CrGrid(Arc<Grid>);

/// Builds an `nx` x `ny` grid on `[0, length_x] x [0, length_y]` with a
/// centered square obstacle of side `obstacle_side` (0 for none).
#[no_mangle]
pub unsafe extern "C" fn cr_grid_new(
    nx: usize,
    ny: usize,
    length_x: f64,
    length_y: f64,
    obstacle_side: f64,
    out: *mut *mut CrGrid,
) -> CrStatus {
    guard(|| {
        let obstacle = (obstacle_side > 0.0).then(|| Obstacle::centered(length_x, length_y, obstacle_side));
        let grid = build_grid(nx, ny, length_x, length_y, obstacle)?;
        put(out, CrGrid(Arc::new(grid)))
    })
}

/// Number of cells, `nx * ny`.
#[no_mangle]
pub unsafe extern "C" fn cr_grid_cells(grid: *const CrGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn cr_grid_free(grid: *mut CrGrid) {
    free(grid)
}

// ------------------------------------------------------------ simulation

/// Density snapshots of one Hughes simulation.
pub struct CrRun(SimulationRun);

/// Gaussian initial crowd.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CrGaussian {
    pub x0: f64,
    pub y0: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub mass: f64,
}

/// Simulates to `t_final` with the default model parameters, recording a
/// snapshot every `snapshot_dt` seconds (t = 0 included).
#[no_mangle]
pub unsafe extern "C" fn cr_simulate(
    grid: *const CrGrid,
    ic: *const CrGaussian,
    t_final: f64,
    snapshot_dt: f64,
    out: *mut *mut CrRun,
) -> CrStatus {
    guard(|| {
        let grid = get(grid, "grid")?;
        let ic = get(ic, "initial condition")?;
        let ic = GaussianIc {
            x0: ic.x0,
            y0: ic.y0,
            sigma_x: ic.sigma_x,
            sigma_y: ic.sigma_y,
            target_mass: ic.mass,
        };
        let run = run_simulation(&grid.0, &HughesParams::default(), &ic, t_final, snapshot_dt)?;
        put(out, CrRun(run))
    })
}

#[no_mangle]
pub unsafe extern "C" fn cr_run_snapshots(run: *const CrRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.len())
}

/// Copies snapshot `k` (cell order `i * ny + j`) into `out[0..n]`.
#[no_mangle]
pub unsafe extern "C" fn cr_run_snapshot(run: *const CrRun, k: usize, out: *mut f64, n: usize) -> CrStatus {
    guard(|| {
        let run = get(run, "run")?;
        let field = run
            .0
            .snapshots
            .get(k)
            .ok_or_else(|| bad(format!("snapshot {k} out of range 0..{}", run.0.len())))?;
        expect_len(n, field.values().len(), "output")?;
        slice_mut(out, n, "output")?.copy_from_slice(field.values());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cr_run_free(run: *mut CrRun) {
    free(run)
}

// ------------------------------------------------------------- snapshots

/// Unit-mass snapshot matrix used to fit POD and diffusion maps.
pub struct CrSnapshots(SnapshotMatrix);

/// Stacks every snapshot of `count` runs and scales each to unit mass.
#[no_mangle]
pub unsafe extern "C" fn cr_snapshots_from_runs(
    runs: *const *const CrRun,
    count: usize,
    out: *mut *mut CrSnapshots,
) -> CrStatus {
    guard(|| {
        if runs.is_null() {
            return Err(null("runs"));
        }
        let mut parts = Vec::with_capacity(count);
        for (id, &r) in std::slice::from_raw_parts(runs, count).iter().enumerate() {
            let r = get(r, "run")?;
            parts.push(SnapshotMatrix::from_run(&r.0, id as u32, Split::Train));
        }
        let x = SnapshotMatrix::concat(&parts, "ffi")?.to_unit_mass()?;
        put(out, CrSnapshots(x))
    })
}

#[no_mangle]
pub unsafe extern "C" fn cr_snapshots_count(x: *const CrSnapshots) -> usize {
    x.as_ref().map_or(0, |x| x.0.ncols())
}

/// Copies unit-mass column `m` into `out[0..n]`.
#[no_mangle]
pub unsafe extern "C" fn cr_snapshots_column(x: *const CrSnapshots, m: usize, out: *mut f64, n: usize) -> CrStatus {
    guard(|| {
        let x = get(x, "snapshots")?;
        if m >= x.0.ncols() {
            return Err(bad(format!("column {m} out of range 0..{}", x.0.ncols())));
        }
        expect_len(n, x.0.nrows(), "output")?;
        let dst = slice_mut(out, n, "output")?;
        for (d, s) in dst.iter_mut().zip(x.0.column(m).iter()) {
            *d = *s;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cr_snapshots_free(x: *mut CrSnapshots) {
    free(x)
}

// ------------------------------------------------------------------- POD

pub struct CrPod(PodBasis);

/// Fits a mass-consistent POD basis. With `d == 0` the dimension is the
/// smallest one reaching `variance` of the centered energy.
#[no_mangle]
pub unsafe extern "C" fn cr_pod_fit(x: *const CrSnapshots, d: usize, variance: f64, out: *mut *mut CrPod) -> CrStatus {
    guard(|| {
        let x = get(x, "snapshots")?;
        let rule = if d == 0 {
            PodDimension::Variance(variance)
        } else {
            PodDimension::Fixed(d)
        };
        put(out, CrPod(fit_pod_with(&x.0, rule)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn cr_pod_dim(pod: *const CrPod) -> usize {
    pod.as_ref().map_or(0, |p| p.0.d())
}

/// Latent coordinates of a unit-mass field `x[0..n]` into `y[0..d]`.
#[no_mangle]
pub unsafe extern "C" fn cr_pod_encode(pod: *const CrPod, x: *const f64, n: usize, y: *mut f64, d: usize) -> CrStatus {
    guard(|| {
        let pod = get(pod, "pod")?;
        expect_len(d, pod.0.d(), "latent output")?;
        let v = pod_encode(&pod.0, slice(x, n, "field")?)?;
        slice_mut(y, d, "latent output")?.copy_from_slice(v.as_slice());
        Ok(())
    })
}

/// Unit-mass field for latent `y[0..d]` into `x[0..n]`.
#[no_mangle]
pub unsafe extern "C" fn cr_pod_decode(pod: *const CrPod, y: *const f64, d: usize, x: *mut f64, n: usize) -> CrStatus {
    guard(|| {
        let pod = get(pod, "pod")?;
        expect_len(n, pod.0.n(), "field output")?;
        let v = pod_decode(&pod.0, slice(y, d, "latent")?)?;
        slice_mut(x, n, "field output")?.copy_from_slice(v.as_slice());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cr_pod_free(pod: *mut CrPod) {
    free(pod)
}

// -------------------------------------------------------- diffusion maps

pub struct CrDmaps(DmapsModel);

/// Diffusion map with `d` non-trivial coordinates and the median-distance
/// kernel scale.
#[no_mangle]
pub unsafe extern "C" fn cr_dmaps_fit(x: *const CrSnapshots, d: usize, out: *mut *mut CrDmaps) -> CrStatus {
    guard(|| {
        let x = get(x, "snapshots")?;
        put(out, CrDmaps(fit_dmaps(&x.0, d)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn cr_dmaps_dim(model: *const CrDmaps) -> usize {
    model.as_ref().map_or(0, |m| m.0.d())
}

#[no_mangle]
pub unsafe extern "C" fn cr_dmaps_epsilon(model: *const CrDmaps) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.0.epsilon)
}

/// Non-trivial eigenvalues, largest first, into `out[0..d]`.
#[no_mangle]
pub unsafe extern "C" fn cr_dmaps_eigenvalues(model: *const CrDmaps, out: *mut f64, d: usize) -> CrStatus {
    guard(|| {
        let m = get(model, "model")?;
        expect_len(d, m.0.d(), "output")?;
        slice_mut(out, d, "output")?.copy_from_slice(m.0.eigenvalues.as_slice());
        Ok(())
    })
}

/// Training embedding, row-major `m x d`, into `out[0..m*d]`.
#[no_mangle]
pub unsafe extern "C" fn cr_dmaps_embedding(model: *const CrDmaps, out: *mut f64, len: usize) -> CrStatus {
    guard(|| {
        let m = get(model, "model")?;
        let emb = dmaps_encode(&m.0);
        expect_len(len, emb.coords.len(), "output")?;
        let dst = slice_mut(out, len, "output")?;
        let d = emb.d();
        for (r, row) in emb.coords.row_iter().enumerate() {
            for c in 0..d {
                dst[r * d + c] = row[c];
            }
        }
        Ok(())
    })
}

/// Nystrom coordinates of a new unit-mass field `x[0..n]` into `y[0..d]`.
#[no_mangle]
pub unsafe extern "C" fn cr_dmaps_extend(model: *const CrDmaps, x: *const f64, n: usize, y: *mut f64, d: usize) -> CrStatus {
    guard(|| {
        let m = get(model, "model")?;
        expect_len(d, m.0.d(), "latent output")?;
        let p = nystrom_extend(&m.0, slice(x, n, "field")?)?;
        slice_mut(y, d, "latent output")?.copy_from_slice(p.coords.as_slice());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cr_dmaps_free(model: *mut CrDmaps) {
    free(model)
}

// ------------------------------------------------------------------ lift

pub struct CrLifter(KnnLifter);

/// Lifting operator over the model's training embedding. `k == 0` selects
/// `d + 1` neighbors; `power` is the inverse-distance exponent.
#[no_mangle]
pub unsafe extern "C" fn cr_lifter_new(
    model: *const CrDmaps,
    x: *const CrSnapshots,
    k: usize,
    power: f64,
    out: *mut *mut CrLifter,
) -> CrStatus {
    guard(|| {
        let m = get(model, "model")?;
        let x = get(x, "snapshots")?;
        let lifter = KnnLifter::new(&dmaps_encode(&m.0), &x.0, (k > 0).then_some(k), power)?;
        put(out, CrLifter(lifter))
    })
}

/// Unit-mass field for latent `y[0..d]` into `x[0..n]`.
#[no_mangle]
pub unsafe extern "C" fn cr_lift(lifter: *const CrLifter, y: *const f64, d: usize, x: *mut f64, n: usize) -> CrStatus {
    guard(|| {
        let l = get(lifter, "lifter")?;
        expect_len(n, l.0.snapshots.nrows(), "field output")?;
        let v = l.0.lift(slice(y, d, "latent")?)?;
        slice_mut(x, n, "field output")?.copy_from_slice(v.as_slice());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cr_lifter_free(lifter: *mut CrLifter) {
    free(lifter)
}

// ------------------------------------------------------------------ MVAR

pub struct CrMvar(MvarModel);

/// Fits latent dynamics to `count` trajectories stored back to back in
/// `states` (row-major, `lengths[i] x d` each). `lag == 0` picks the lag by
/// BIC over `1..=max_lag`.
#[no_mangle]
pub unsafe extern "C" fn cr_mvar_fit(
    states: *const f64,
    lengths: *const usize,
    count: usize,
    d: usize,
    dt: f64,
    lag: usize,
    max_lag: usize,
    out: *mut *mut CrMvar,
) -> CrStatus {
    guard(|| {
        if lengths.is_null() {
            return Err(null("lengths"));
        }
        let lengths = std::slice::from_raw_parts(lengths, count);
        let total: usize = lengths.iter().sum();
        let data = slice(states, total * d, "states")?;
        let mut trajectories = Vec::with_capacity(count);
        let mut at = 0;
        for (i, &t) in lengths.iter().enumerate() {
            let states = DMatrix::from_row_slice(t, d, &data[at * d..(at + t) * d]);
            at += t;
            trajectories.push(LatentTrajectory { run_id: i as u32, states });
        }
        let choice = if lag == 0 {
            if max_lag == 0 {
                return Err(bad("max_lag must be positive when lag is 0"));
            }
            LagChoice::Bic((1..=max_lag).collect())
        } else {
            LagChoice::Fixed(lag)
        };
        let set = LatentTrajectorySet::new(trajectories, dt)?;
        put(out, CrMvar(fit_mvar(&set, &choice)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn cr_mvar_lag(model: *const CrMvar) -> usize {
    model.as_ref().map_or(0, |m| m.0.lag)
}

#[no_mangle]
pub unsafe extern "C" fn cr_mvar_dim(model: *const CrMvar) -> usize {
    model.as_ref().map_or(0, |m| m.0.d())
}

/// Coefficients `[A_1 ... A_l]`, row-major `d x (l*d)`, into `out`.
#[no_mangle]
pub unsafe extern "C" fn cr_mvar_coefficients(model: *const CrMvar, out: *mut f64, len: usize) -> CrStatus {
    guard(|| {
        let m = get(model, "model")?;
        let c = &m.0.coef;
        expect_len(len, c.len(), "output")?;
        let dst = slice_mut(out, len, "output")?;
        for r in 0..c.nrows() {
            for k in 0..c.ncols() {
                dst[r * c.ncols() + k] = c[(r, k)];
            }
        }
        Ok(())
    })
}

/// Free-running forecast. `warmup` holds the last `lag` states (row-major,
/// oldest first); `out` receives `steps x d` predicted states.
#[no_mangle]
pub unsafe extern "C" fn cr_mvar_forecast(
    model: *const CrMvar,
    warmup: *const f64,
    steps: usize,
    out: *mut f64,
    len: usize,
) -> CrStatus {
    guard(|| {
        let m = get(model, "model")?;
        let (d, l) = (m.0.d(), m.0.lag);
        expect_len(len, steps * d, "output")?;
        let w = slice(warmup, l * d, "warmup")?;
        let warm: Vec<DVector<f64>> = w.chunks(d).map(DVector::from_column_slice).collect();
        let ys = forecast(&m.0, &warm, steps)?;
        let dst = slice_mut(out, len, "output")?;
        for (s, y) in ys.iter().enumerate() {
            dst[s * d..(s + 1) * d].copy_from_slice(y.as_slice());
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cr_mvar_free(model: *mut CrMvar) {
    free(model)
}

// -------------------------------------------------------------------- W1

/// Exact Wasserstein-1 distance between two densities on `grid`, after
/// rescaling both to unit mass. `coarsen` > 1 sum-pools blocks first.
#[no_mangle]
pub unsafe extern "C" fn cr_w1(
    grid: *const CrGrid,
    p: *const f64,
    q: *const f64,
    n: usize,
    coarsen: usize,
    out: *mut f64,
) -> CrStatus {
    guard(|| {
        let g = get(grid, "grid")?;
        expect_len(n, g.0.len(), "density")?;
        if out.is_null() {
            return Err(null("output"));
        }
        let fp = Field::density(g.0.clone(), slice(p, n, "p")?.to_vec(), 0.0)?;
        let fq = Field::density(g.0.clone(), slice(q, n, "q")?.to_vec(), 0.0)?;
        let opts = W1Options {
            coarsen: coarsen.max(1),
            ..W1Options::default()
        };
        *out = wasserstein1(&fp, &fq, &opts)?;
        Ok(())
    })
}
