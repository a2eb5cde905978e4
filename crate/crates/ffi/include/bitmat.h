#ifndef BITMAT_H
#define BITMAT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of a call.
typedef enum BitmatStatus {
  BITMAT_STATUS_OK = 0,
  BITMAT_STATUS_NULL_POINTER = 1,
  BITMAT_STATUS_INVALID_ARGUMENT = 2,
  // The design does not identify the parameters.
  BITMAT_STATUS_NOT_IDENTIFIED = 3,
  // The computation broke down numerically.
  BITMAT_STATUS_NUMERICAL = 4,
  BITMAT_STATUS_PANIC = 5,
} BitmatStatus;

// Observed cells of a binary matrix.
typedef struct BitmatData BitmatData;

// A fitted model together with the data it was fitted to.
typedef struct BitmatFit BitmatFit;

// Estimate, standard error, interval and two-sided test of `g = 0`.
typedef struct BitmatInference {
  double estimate;
  double se;
  double ci_lower;
  double ci_upper;
  double z;
  double p_value;
  double log10_p_value;
} BitmatInference;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *bitmat_last_error(void);

// Builds a data handle from `n_obs` cells `(rows[k], cols[k], values[k])`.
//
// # Safety
// `rows`, `cols` and `values` must each point to `n_obs` readable elements
// and `out` must be writable.
enum BitmatStatus bitmat_data_new(size_t n_rows,
                                  size_t n_cols,
                                  const size_t *rows,
                                  const size_t *cols,
                                  const uint8_t *values,
                                  size_t n_obs,
                                  struct BitmatData **out);

// Releases a data handle. Null is ignored.
//
// # Safety
// `data` must come from [`bitmat_data_new`] and not be used afterwards.
void bitmat_data_free(struct BitmatData *data);

// Writes the number of connected components of the row/column graph.
// The parameters are identified exactly when it is one.
//
// # Safety
// `data` must be a live handle and `out` writable.
enum BitmatStatus bitmat_data_components(const struct BitmatData *data, size_t *out);

// Fits the model with default settings and the given seed.
//
// # Safety
// `data` must be a live handle and `out` writable.
enum BitmatStatus bitmat_fit(const struct BitmatData *data, uint64_t seed, struct BitmatFit **out);

// Releases a fit handle. Null is ignored.
//
// # Safety
// `fit` must come from [`bitmat_fit`] and not be used afterwards.
void bitmat_fit_free(struct BitmatFit *fit);

// Writes 1 when the fit is certified optimal and every estimate exists.
//
// # Safety
// `fit` must be a live handle and `out` writable.
enum BitmatStatus bitmat_fit_converged(const struct BitmatFit *fit, int32_t *out);

// Copies the `N` row effects into `buf`, which must hold exactly `len = N`.
//
// # Safety
// `fit` must be a live handle and `buf` writable for `len` values.
enum BitmatStatus bitmat_fit_theta(const struct BitmatFit *fit, double *buf, size_t len);

// Copies the `J` column effects into `buf`, which must hold exactly
// `len = J`.
//
// # Safety
// `fit` must be a live handle and `buf` writable for `len` values.
enum BitmatStatus bitmat_fit_beta(const struct BitmatFit *fit, double *buf, size_t len);

// Plug-in Wald inference for `g = sum w_i theta_i + sum v_j beta_j`.
//
// # Safety
// `fit` must be a live handle, `row_weights` readable for `n_rows`
// values, `col_weights` for `n_cols` values, and `out` writable.
enum BitmatStatus bitmat_wald(const struct BitmatFit *fit,
                              const double *row_weights,
                              size_t n_rows,
                              const double *col_weights,
                              size_t n_cols,
                              double level,
                              struct BitmatInference *out);

// Two-sided z-test of `theta_i = theta_k`.
//
// # Safety
// `fit` must be a live handle and `out` writable.
enum BitmatStatus bitmat_test_difference(const struct BitmatFit *fit,
                                         size_t i,
                                         size_t k,
                                         double level,
                                         struct BitmatInference *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BITMAT_H */
