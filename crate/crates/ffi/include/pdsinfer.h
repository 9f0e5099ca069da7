#ifndef PDSINFER_H
#define PDSINFER_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result codes.
typedef enum PdsStatus {
  PDS_STATUS_OK = 0,
  PDS_STATUS_NULL_POINTER = 1,
  PDS_STATUS_INVALID_ARGUMENT = 2,
  PDS_STATUS_INVALID_DATA = 3,
  PDS_STATUS_NUMERICAL = 4,
  PDS_STATUS_NO_TREATED = 5,
  PDS_STATUS_UNKNOWN_NAME = 6,
  PDS_STATUS_PANIC = 7,
} PdsStatus;

// Estimators available through [`pds_estimate`].
typedef enum PdsMethod {
  PDS_METHOD_DS = 0,
  PDS_METHOD_POST_LASSO = 1,
  PDS_METHOD_DS_I3 = 2,
  PDS_METHOD_UNION_ADS = 3,
  PDS_METHOD_SPLIT = 4,
  PDS_METHOD_LASSO = 5,
} PdsMethod;

typedef enum PdsEffectKind {
  PDS_EFFECT_KIND_ATE = 0,
  PDS_EFFECT_KIND_ATT = 1,
} PdsEffectKind;

typedef enum PdsLink {
  PDS_LINK_LINEAR = 0,
  PDS_LINK_LOGIT = 1,
} PdsLink;

// Opaque dataset handle.
typedef struct PdsDataset PdsDataset;

// Point estimate and interval for the treatment coefficient.
typedef struct PdsEstimate {
  double alpha_hat;
  double se;
  double ci_lower;
  double ci_upper;
  double level;
  // Number of selected controls.
  size_t s_hat;
  // Selection capped by the degrees-of-freedom guard.
  bool truncated;
  // Some Lasso did not converge.
  bool nonconverged;
} PdsEstimate;

// Average effect (ATE or ATT) and its interval.
typedef struct PdsEffect {
  double effect_hat;
  double se;
  double ci_lower;
  double ci_upper;
  double level;
  // Share of treated observations; NaN for the ATE.
  double mu_hat;
  size_t n;
} PdsEffect;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Builds a dataset from `n` outcomes, `n` treatments and an `n × p`
// row-major control matrix. The data are copied.
//
// # Safety
// `y` and `d` must point to `n` values, `x` to `n * p` values (or be null
// when `p == 0`), and `out` must be writable.
enum PdsStatus pds_dataset_new(const double *y,
                               const double *d,
                               const double *x,
                               size_t n,
                               size_t p,
                               struct PdsDataset **out);

// Releases a dataset. Null is ignored.
//
// # Safety
// `dataset` must come from [`pds_dataset_new`] and not be used afterwards.
void pds_dataset_free(struct PdsDataset *dataset);

// Number of observations, or 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t pds_dataset_n(const struct PdsDataset *dataset);

// Number of controls, or 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t pds_dataset_p(const struct PdsDataset *dataset);

// Estimates the treatment coefficient with `method`. `seed` only affects
// the split-sample partition. When `selected` is non-null, up to
// `selected_cap` selected control indices (0-based) are written to it.
//
// # Safety
// `dataset` must be a live handle, `out` writable, and `selected` null or
// writable for `selected_cap` entries.
enum PdsStatus pds_estimate(const struct PdsDataset *dataset,
                            enum PdsMethod method,
                            double level,
                            bool intercept,
                            uint64_t seed,
                            struct PdsEstimate *out,
                            size_t *selected,
                            size_t selected_cap);

// Average treatment effect (or effect on the treated) for a 0/1 treatment.
//
// # Safety
// `dataset` must be a live handle and `out` writable.
enum PdsStatus pds_ate(const struct PdsDataset *dataset,
                       enum PdsEffectKind kind,
                       enum PdsLink link,
                       double trim,
                       double level,
                       struct PdsEffect *out);

// Runs one Monte Carlo cell and returns the summary rows as a JSON array
// in `out_json`, to be released with [`pds_string_free`]. `estimators` is a
// comma-separated list of names, or null for all of them.
//
// # Safety
// `design` must be a NUL-terminated string, `estimators` null or one, and
// `out_json` writable.
enum PdsStatus pds_simulate(const char *design,
                            size_t n,
                            size_t p,
                            double r2_y,
                            double r2_d,
                            size_t reps,
                            uint64_t seed,
                            size_t threads,
                            const char *estimators,
                            char **out_json);

// Releases a string returned by the library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void pds_string_free(char *s);

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into the library on the same thread.
const char *pds_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *pds_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PDSINFER_H */
