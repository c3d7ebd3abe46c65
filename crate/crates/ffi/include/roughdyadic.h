#ifndef ROUGHDYADIC_H
#define ROUGHDYADIC_H

#include <stddef.h>
#include <stdint.h>

// Status codes returned by every fallible function.
typedef enum RdStatus {
  RD_STATUS_OK = 0,
  RD_STATUS_NULL_POINTER = 1,
  RD_STATUS_INVALID_ARGUMENT = 2,
  RD_STATUS_DIMENSION_MISMATCH = 3,
  RD_STATUS_INDEX_OUT_OF_RANGE = 4,
  RD_STATUS_NOT_CONVERGED = 5,
  RD_STATUS_BLOW_UP = 6,
  RD_STATUS_PARSE = 7,
  RD_STATUS_IO = 8,
  RD_STATUS_BUFFER_TOO_SMALL = 9,
  RD_STATUS_PANIC = 10,
} RdStatus;

// Verdict of a lemma check.
typedef enum RdVerdict {
  RD_VERDICT_PASS = 0,
  RD_VERDICT_FAIL = 1,
  RD_VERDICT_INCONCLUSIVE = 2,
} RdVerdict;

// Opaque handle to a generated dyadic Brownian path.
typedef struct RdPath RdPath;

// Settings for [`rd_verify_lemma`]; start from [`rd_rate_check_default`].
typedef struct RdRateCheck {
  uint32_t dim;
  double p;
  double gamma;
  double q;
  uint32_t n_tilde;
  double beta;
  double theta;
  double delta;
  double eps;
  uint32_t m_lo;
  uint32_t m_hi;
  uint32_t n_lo;
  uint32_t n_hi;
  uint64_t samples;
  uint64_t seed;
  double slope_tol;
  double margin;
} RdRateCheck;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *rd_version(void);

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to `cap`) and returns its full length in bytes.
//
// # Safety
// `buf` must be null or valid for `cap` bytes.
size_t rd_last_error_message(char *buf, size_t cap);

// Generates a `dim`-dimensional path on the grid of level `resolution`.
//
// # Safety
// `out` must be valid for writing one pointer.
enum RdStatus rd_path_generate(uint32_t dim,
                               uint32_t resolution,
                               uint64_t seed,
                               struct RdPath **out);

// Builds a path from `(2^resolution + 1) × dim` row-major grid values.
//
// # Safety
// `values` must be valid for `len` reads and `out` for one pointer write.
enum RdStatus rd_path_from_values(uint32_t dim,
                                  uint32_t resolution,
                                  const double *values,
                                  size_t len,
                                  struct RdPath **out);

// Releases a path; null is ignored.
//
// # Safety
// `path` must come from this library and not be used afterwards.
void rd_path_free(struct RdPath *path);

// # Safety
// `path` must be a live handle or null (which yields 0).
uint32_t rd_path_dim(const struct RdPath *path);

// # Safety
// `path` must be a live handle or null (which yields 0).
uint32_t rd_path_resolution(const struct RdPath *path);

// `w(k 2^{-level})` into `out[0..dim]`.
//
// # Safety
// `path` must be live and `out` valid for `cap` writes.
enum RdStatus rd_path_value(const struct RdPath *path,
                            uint32_t level,
                            uint64_t k,
                            double *out,
                            size_t cap);

// Level-1 increment of `w^(m)` over the `k`-th level-`n` dyadic interval
// (`k` is 1-based), `dim` values.
//
// # Safety
// `path` must be live and `out` valid for `cap` writes.
enum RdStatus rd_dyadic_level1(const struct RdPath *path,
                               uint32_t m,
                               uint32_t n,
                               uint64_t k,
                               double *out,
                               size_t cap);

// Level-2 increment of `w^(m)` over the `k`-th level-`n` interval,
// `dim × dim` row-major.
//
// # Safety
// `path` must be live and `out` valid for `cap` writes.
enum RdStatus rd_dyadic_level2(const struct RdPath *path,
                               uint32_t m,
                               uint32_t n,
                               uint64_t k,
                               double *out,
                               size_t cap);

// `X_level(w^(m+1)) − X_level(w^(m))` over the `k`-th level-`n`
// interval; `level` is 1 (`dim` values) or 2 (`dim × dim`).
//
// # Safety
// `path` must be live and `out` valid for `cap` writes.
enum RdStatus rd_dyadic_diff(const struct RdPath *path,
                             uint32_t m,
                             uint32_t n,
                             uint64_t k,
                             uint32_t level,
                             double *out,
                             size_t cap);

// Level-1 (`dim`) and level-2 (`dim × dim`) parts of the lift of `w^(m)`
// over `[s, t]`.
//
// # Safety
// `path` must be live; `level1` and `level2` valid for `dim` and
// `dim * dim` writes.
enum RdStatus rd_lift_increment(const struct RdPath *path,
                                uint32_t m,
                                double s,
                                double t,
                                double *level1,
                                double *level2);

// Grid `d_p` distance between the lifts of `w^(a)` and `w^(b)`, on the
// dyadic anchors of level `anchor_level` (0 picks the default for
// `min(a, b)`).
//
// # Safety
// `path` must be live and `out` valid for one write.
enum RdStatus rd_d_p_grid(const struct RdPath *path,
                          uint32_t a,
                          uint32_t b,
                          uint32_t anchor_level,
                          double p,
                          double *out);

// `ρ_j(w^(a), w^(b))` with the analytic tail; pass `b = UINT32_MAX` for
// `ρ_j(w^(a))` against the zero path.
//
// # Safety
// `path` must be live and `out` valid for one write.
enum RdStatus rd_rho(const struct RdPath *path,
                     uint32_t j,
                     uint32_t a,
                     uint32_t b,
                     double p,
                     double gamma,
                     double *out);

// Solves the reference case `case_id` (`exp_scalar`, `commuting_linear`,
// `rotation_area`) along `w^(m)` and writes the endpoint. The path must
// have the case's driver dimension.
//
// # Safety
// `case_id` must be a NUL-terminated string, `path` live, `out` valid for
// `cap` writes and `needed` null or valid for one write.
enum RdStatus rd_solve_endpoint(const char *case_id,
                                const struct RdPath *path,
                                uint32_t m,
                                uint32_t substeps,
                                double *out,
                                size_t cap,
                                size_t *needed);

// `1 / Σ_{n≥1} n^γ 2^{−nθ}`.
//
// # Safety
// `out` must be valid for one write.
enum RdStatus rd_compute_c_theta(double theta, double gamma, double *out);

// Default settings for [`rd_verify_lemma`].
struct RdRateCheck rd_rate_check_default(void);

// Runs the Monte Carlo check for `lemma_id` (e.g. `"lem1a"`, `"th8"`).
//
// # Safety
// `lemma_id` must be a NUL-terminated string, `spec` valid for one read and
// `verdict` for one write.
enum RdStatus rd_verify_lemma(const char *lemma_id,
                              const struct RdRateCheck *spec,
                              enum RdVerdict *verdict);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROUGHDYADIC_H */
