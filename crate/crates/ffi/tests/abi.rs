use std::ffi::CStr;
use std::process::Command;
use std::ptr;

use crowd_rom_ffi::*;

fn last_error() -> String {
    let p = cr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Fixture {
    grid: *mut CrGrid,
    runs: Vec<*mut CrRun>,
    x: *mut CrSnapshots,
    n: usize,
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe {
            cr_snapshots_free(self.x);
            for &r in &self.runs {
                cr_run_free(r);
            }
            cr_grid_free(self.grid);
        }
    }
}

fn fixture() -> Fixture {
    unsafe {
        let mut grid = ptr::null_mut();
        assert_eq!(cr_grid_new(40, 10, 20.0, 5.0, 1.0, &mut grid), CrStatus::Ok);
        let n = cr_grid_cells(grid);
        let mut runs = Vec::new();
        for (x0, y0) in [(2.5, 2.5), (3.0, 1.8)] {
            let ic = CrGaussian { x0, y0, sigma_x: 1.5, sigma_y: 1.5, mass: 8.0 };
            let mut run = ptr::null_mut();
            assert_eq!(cr_simulate(grid, &ic, 4.0, 0.1, &mut run), CrStatus::Ok);
            runs.push(run);
        }
        let handles: Vec<*const CrRun> = runs.iter().map(|&r| r as *const CrRun).collect();
        let mut x = ptr::null_mut();
        assert_eq!(cr_snapshots_from_runs(handles.as_ptr(), 2, &mut x), CrStatus::Ok);
        Fixture { grid, runs, x, n }
    }
}

#[test]
fn simulation_and_snapshots() {
    let f = fixture();
    unsafe {
        assert_eq!(f.n, 400);
        assert_eq!(cr_run_snapshots(f.runs[0]), 41);
        assert_eq!(cr_snapshots_count(f.x), 82);
        let mut rho = vec![0.0; f.n];
        assert_eq!(cr_run_snapshot(f.runs[0], 40, rho.as_mut_ptr(), f.n), CrStatus::Ok);
        assert!((rho.iter().sum::<f64>() * 0.25 - 8.0).abs() < 1e-9);
        assert_eq!(cr_run_snapshot(f.runs[0], 41, rho.as_mut_ptr(), f.n), CrStatus::InvalidArgument);
        assert!(last_error().contains("out of range"));
        assert_eq!(cr_run_snapshot(f.runs[0], 0, rho.as_mut_ptr(), 10), CrStatus::ShapeMismatch);
    }
}

#[test]
fn pod_round_trip_keeps_mass() {
    let f = fixture();
    unsafe {
        let mut pod = ptr::null_mut();
        assert_eq!(cr_pod_fit(f.x, 0, 0.99, &mut pod), CrStatus::Ok);
        let d = cr_pod_dim(pod);
        assert!(d >= 1 && d < 82);
        let mut col = vec![0.0; f.n];
        assert_eq!(cr_snapshots_column(f.x, 30, col.as_mut_ptr(), f.n), CrStatus::Ok);
        let mut y = vec![0.0; d];
        assert_eq!(cr_pod_encode(pod, col.as_ptr(), f.n, y.as_mut_ptr(), d), CrStatus::Ok);
        let mut back = vec![0.0; f.n];
        assert_eq!(cr_pod_decode(pod, y.as_ptr(), d, back.as_mut_ptr(), f.n), CrStatus::Ok);
        assert!((back.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let err: f64 = col.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err < 0.2 * col.iter().map(|a| a * a).sum::<f64>().sqrt());
        cr_pod_free(pod);
    }
}

#[test]
fn dmaps_lift_and_mvar() {
    let f = fixture();
    unsafe {
        let d = 3;
        let mut dm = ptr::null_mut();
        assert_eq!(cr_dmaps_fit(f.x, d, &mut dm), CrStatus::Ok);
        assert_eq!(cr_dmaps_dim(dm), d);
        assert!(cr_dmaps_epsilon(dm) > 0.0);
        let mut lambda = vec![0.0; d];
        assert_eq!(cr_dmaps_eigenvalues(dm, lambda.as_mut_ptr(), d), CrStatus::Ok);
        assert!(lambda.windows(2).all(|w| w[0] >= w[1]) && lambda[0] < 1.0);

        let m = cr_snapshots_count(f.x);
        let mut emb = vec![0.0; m * d];
        assert_eq!(cr_dmaps_embedding(dm, emb.as_mut_ptr(), m * d), CrStatus::Ok);
        let mut col = vec![0.0; f.n];
        cr_snapshots_column(f.x, 5, col.as_mut_ptr(), f.n);
        let mut y = vec![0.0; d];
        assert_eq!(cr_dmaps_extend(dm, col.as_ptr(), f.n, y.as_mut_ptr(), d), CrStatus::Ok);
        for c in 0..d {
            assert!((y[c] - emb[5 * d + c]).abs() < 1e-8 * (1.0 + emb[5 * d + c].abs()));
        }

        let mut lifter = ptr::null_mut();
        assert_eq!(cr_lifter_new(dm, f.x, 0, 2.0, &mut lifter), CrStatus::Ok);
        let mut lifted = vec![0.0; f.n];
        assert_eq!(cr_lift(lifter, y.as_ptr(), d, lifted.as_mut_ptr(), f.n), CrStatus::Ok);
        assert!((lifted.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        // latent trajectories of both runs, back to back
        let lengths = [41usize, 41];
        let mut model = ptr::null_mut();
        assert_eq!(
            cr_mvar_fit(emb.as_ptr(), lengths.as_ptr(), 2, d, 0.1, 0, 3, &mut model),
            CrStatus::Ok
        );
        let l = cr_mvar_lag(model);
        assert!((1..=3).contains(&l));
        assert_eq!(cr_mvar_dim(model), d);
        let mut coef = vec![0.0; d * d * l];
        assert_eq!(cr_mvar_coefficients(model, coef.as_mut_ptr(), coef.len()), CrStatus::Ok);
        let mut out = vec![0.0; 5 * d];
        assert_eq!(cr_mvar_forecast(model, emb.as_ptr(), 5, out.as_mut_ptr(), out.len()), CrStatus::Ok);
        // first step equals the coefficient product on the warmup
        let mut first = vec![0.0; d];
        for r in 0..d {
            for k in 0..l {
                let state = &emb[(l - 1 - k) * d..(l - k) * d];
                for c in 0..d {
                    first[r] += coef[r * l * d + k * d + c] * state[c];
                }
            }
        }
        for r in 0..d {
            assert!((first[r] - out[r]).abs() < 1e-12);
        }

        cr_mvar_free(model);
        cr_lifter_free(lifter);
        cr_dmaps_free(dm);
    }
}

#[test]
fn w1_and_errors() {
    let f = fixture();
    unsafe {
        let mut p = vec![0.0; f.n];
        let mut q = vec![0.0; f.n];
        cr_run_snapshot(f.runs[0], 0, p.as_mut_ptr(), f.n);
        cr_run_snapshot(f.runs[1], 0, q.as_mut_ptr(), f.n);
        let mut w = -1.0;
        assert_eq!(cr_w1(f.grid, p.as_ptr(), q.as_ptr(), f.n, 1, &mut w), CrStatus::Ok);
        assert!(w > 0.0);
        let mut same = -1.0;
        assert_eq!(cr_w1(f.grid, p.as_ptr(), p.as_ptr(), f.n, 1, &mut same), CrStatus::Ok);
        assert!(same.abs() < 1e-12);
        let zeros = vec![0.0; f.n];
        assert_eq!(cr_w1(f.grid, p.as_ptr(), zeros.as_ptr(), f.n, 1, &mut w), CrStatus::Mass);

        assert_eq!(cr_w1(ptr::null(), p.as_ptr(), q.as_ptr(), f.n, 1, &mut w), CrStatus::NullPointer);
        assert!(last_error().contains("grid"));
        let mut g = ptr::null_mut();
        assert_eq!(cr_grid_new(0, 10, 20.0, 5.0, 0.0, &mut g), CrStatus::InvalidArgument);
        assert!(g.is_null());
        assert_eq!(cr_pod_fit(f.x, 0, 0.99, ptr::null_mut()), CrStatus::NullPointer);
        cr_grid_free(ptr::null_mut());
    }
}

#[test]
fn header_compiles_and_links_from_c() {
    let header_dir = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libcrowd_rom_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping: no C compiler or static library");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "crowd_rom.h"
int main(void) {
    CrGrid *grid = NULL;
    if (cr_grid_new(20, 5, 20.0, 5.0, 1.0, &grid) != CR_STATUS_OK) return 1;
    CrGaussian ic = {2.5, 2.5, 1.5, 1.5, 5.0};
    CrRun *run = NULL;
    if (cr_simulate(grid, &ic, 1.0, 0.5, &run) != CR_STATUS_OK) return 2;
    if (cr_run_snapshots(run) != 3) return 3;
    double w = 0.0;
    CrStatus s = cr_w1(NULL, NULL, NULL, 0, 1, &w);
    if (s != CR_STATUS_NULL_POINTER || cr_last_error() == NULL) return 4;
    printf("%s\n", cr_last_error());
    cr_run_free(run);
    cr_grid_free(grid);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).contains("grid is null"));
}
