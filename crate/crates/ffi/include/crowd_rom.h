#ifndef CROWD_ROM_H
#define CROWD_ROM_H

#include <stddef.h>

/*
 Result codes shared by every function.
 */
typedef enum CrStatus {
  CR_STATUS_OK = 0,
  CR_STATUS_NULL_POINTER = 1,
  CR_STATUS_INVALID_ARGUMENT = 2,
  CR_STATUS_SHAPE_MISMATCH = 3,
  CR_STATUS_NUMERIC = 4,
  CR_STATUS_UNSTABLE = 5,
  CR_STATUS_MASS = 6,
  CR_STATUS_INTERNAL = 7,
} CrStatus;

typedef struct CrDmaps CrDmaps;

/*
 Rectangular corridor discretization.
 */
typedef struct CrGrid CrGrid;

typedef struct CrLifter CrLifter;

typedef struct CrMvar CrMvar;

typedef struct CrPod CrPod;

/*
 Density snapshots of one Hughes simulation.
 */
typedef struct CrRun CrRun;

/*
 Unit-mass snapshot matrix used to fit POD and diffusion maps.
 */
typedef struct CrSnapshots CrSnapshots;

/*
 Gaussian initial crowd.
 */
typedef struct CrGaussian {
  double x0;
  double y0;
  double sigma_x;
  double sigma_y;
  double mass;
} CrGaussian;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. Valid until
 the next call into the library from the same thread.
 */
const char *cr_last_error(void);

/*
 Builds an `nx` x `ny` grid on `[0, length_x] x [0, length_y]` with a
 centered square obstacle of side `obstacle_side` (0 for none).
 */
enum CrStatus cr_grid_new(size_t nx,
                          size_t ny,
                          double length_x,
                          double length_y,
                          double obstacle_side,
                          struct CrGrid **out);

/*
 Number of cells, `nx * ny`.
 */
size_t cr_grid_cells(const struct CrGrid *grid);

void cr_grid_free(struct CrGrid *grid);

/*
 Simulates to `t_final` with the default model parameters, recording a
 snapshot every `snapshot_dt` seconds (t = 0 included).
 */
enum CrStatus cr_simulate(const struct CrGrid *grid,
                          const struct CrGaussian *ic,
                          double t_final,
                          double snapshot_dt,
                          struct CrRun **out);

size_t cr_run_snapshots(const struct CrRun *run);

/*
 Copies snapshot `k` (cell order `i * ny + j`) into `out[0..n]`.
 */
enum CrStatus cr_run_snapshot(const struct CrRun *run, size_t k, double *out, size_t n);

void cr_run_free(struct CrRun *run);

/*
 Stacks every snapshot of `count` runs and scales each to unit mass.
 */
enum CrStatus cr_snapshots_from_runs(const struct CrRun *const *runs,
                                     size_t count,
                                     struct CrSnapshots **out);

size_t cr_snapshots_count(const struct CrSnapshots *x);

/*
 Copies unit-mass column `m` into `out[0..n]`.
 */
enum CrStatus cr_snapshots_column(const struct CrSnapshots *x, size_t m, double *out, size_t n);

void cr_snapshots_free(struct CrSnapshots *x);

/*
 Fits a mass-consistent POD basis. With `d == 0` the dimension is the
 smallest one reaching `variance` of the centered energy.
 */
enum CrStatus cr_pod_fit(const struct CrSnapshots *x,
                         size_t d,
                         double variance,
                         struct CrPod **out);

size_t cr_pod_dim(const struct CrPod *pod);

/*
 Latent coordinates of a unit-mass field `x[0..n]` into `y[0..d]`.
 */
enum CrStatus cr_pod_encode(const struct CrPod *pod,
                            const double *x,
                            size_t n,
                            double *y,
                            size_t d);

/*
 Unit-mass field for latent `y[0..d]` into `x[0..n]`.
 */
enum CrStatus cr_pod_decode(const struct CrPod *pod,
                            const double *y,
                            size_t d,
                            double *x,
                            size_t n);

void cr_pod_free(struct CrPod *pod);

/*
 Diffusion map with `d` non-trivial coordinates and the median-distance
 kernel scale.
 */
enum CrStatus cr_dmaps_fit(const struct CrSnapshots *x, size_t d, struct CrDmaps **out);

size_t cr_dmaps_dim(const struct CrDmaps *model);

double cr_dmaps_epsilon(const struct CrDmaps *model);

/*
 Non-trivial eigenvalues, largest first, into `out[0..d]`.
 */
enum CrStatus cr_dmaps_eigenvalues(const struct CrDmaps *model, double *out, size_t d);

/*
 Training embedding, row-major `m x d`, into `out[0..m*d]`.
 */
enum CrStatus cr_dmaps_embedding(const struct CrDmaps *model, double *out, size_t len);

/*
 Nystrom coordinates of a new unit-mass field `x[0..n]` into `y[0..d]`.
 */
enum CrStatus cr_dmaps_extend(const struct CrDmaps *model,
                              const double *x,
                              size_t n,
                              double *y,
                              size_t d);

void cr_dmaps_free(struct CrDmaps *model);

/*
 Lifting operator over the model's training embedding. `k == 0` selects
 `d + 1` neighbors; `power` is the inverse-distance exponent.
 */
enum CrStatus cr_lifter_new(const struct CrDmaps *model,
                            const struct CrSnapshots *x,
                            size_t k,
                            double power,
                            struct CrLifter **out);

/*
 Unit-mass field for latent `y[0..d]` into `x[0..n]`.
 */
enum CrStatus cr_lift(const struct CrLifter *lifter,
                      const double *y,
                      size_t d,
                      double *x,
                      size_t n);

void cr_lifter_free(struct CrLifter *lifter);

/*
 Fits latent dynamics to `count` trajectories stored back to back in
 `states` (row-major, `lengths[i] x d` each). `lag == 0` picks the lag by
 BIC over `1..=max_lag`.
 */
enum CrStatus cr_mvar_fit(const double *states,
                          const size_t *lengths,
                          size_t count,
                          size_t d,
                          double dt,
                          size_t lag,
                          size_t max_lag,
                          struct CrMvar **out);

size_t cr_mvar_lag(const struct CrMvar *model);

size_t cr_mvar_dim(const struct CrMvar *model);

/*
 Coefficients `[A_1 ... A_l]`, row-major `d x (l*d)`, into `out`.
 */
enum CrStatus cr_mvar_coefficients(const struct CrMvar *model, double *out, size_t len);

/*
 Free-running forecast. `warmup` holds the last `lag` states (row-major,
 oldest first); `out` receives `steps x d` predicted states.
 */
enum CrStatus cr_mvar_forecast(const struct CrMvar *model,
                               const double *warmup,
                               size_t steps,
                               double *out,
                               size_t len);

void cr_mvar_free(struct CrMvar *model);

/*
 Exact Wasserstein-1 distance between two densities on `grid`, after
 rescaling both to unit mass. `coarsen` > 1 sum-pools blocks first.
 */
enum CrStatus cr_w1(const struct CrGrid *grid,
                    const double *p,
                    const double *q,
                    size_t n,
                    size_t coarsen,
                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CROWD_ROM_H */
