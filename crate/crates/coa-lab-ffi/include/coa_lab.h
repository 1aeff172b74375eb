#ifndef COA_LAB_H
#define COA_LAB_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum CoaExposure {
  COA_EXPOSURE_OWN = 0,
  COA_EXPOSURE_COUNT = 1,
  COA_EXPOSURE_FRACTION = 2,
  COA_EXPOSURE_ANY = 3,
} CoaExposure;

typedef enum CoaStatus {
  COA_STATUS_OK = 0,
  COA_STATUS_NULL_POINTER = 1,
  COA_STATUS_INVALID_INPUT = 2,
  COA_STATUS_CONFIG = 3,
  COA_STATUS_POSITIVITY = 4,
  COA_STATUS_ENUMERATION = 5,
  COA_STATUS_NUMERICAL = 6,
  COA_STATUS_PANIC = 7,
} CoaStatus;

// Opaque assignment design handle.
typedef struct CoaDesign CoaDesign;

// Opaque network handle.
typedef struct CoaNetwork CoaNetwork;

// Contrast `V̂(t₁) − V̂(t₀)` with its conservative interval.
typedef struct CoaContrast {
  double tau_hat;
  double sigma;
  double lower;
  double upper;
  size_t included;
} CoaContrast;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. Valid until the
// next call into the library from the same thread.
const char *coa_last_error_message(void);

// Network on `n` units from `m` links `src[k] → dst[k]`.
//
// # Safety
// `src` and `dst` must point to `m` values each; `out` must be writable.
enum CoaStatus coa_network_from_edges(size_t n,
                                      bool directed,
                                      const size_t *src,
                                      const size_t *dst,
                                      size_t m,
                                      struct CoaNetwork **out);

// # Safety
// `net` must be NULL or a handle from this library not yet freed.
void coa_network_free(struct CoaNetwork *net);

// # Safety
// `net` must be a live handle; `out` must be writable.
enum CoaStatus coa_network_size(const struct CoaNetwork *net, size_t *out);

// Independent Bernoulli(`p`) assignment on `n` units.
//
// # Safety
// `out` must be writable.
enum CoaStatus coa_design_bernoulli(size_t n, double p, struct CoaDesign **out);

// # Safety
// `design` must be NULL or a handle from this library not yet freed.
void coa_design_free(struct CoaDesign *design);

// IPW estimates `V̂(t)` at each of `n_levels` levels for a `CoaExposure` code, under the experimental
// counterfactual, written to `out_values`.
//
// # Safety
// Handles must be live; `d` and `y` hold `n` values; `levels` and
// `out_values` hold `n_levels` values.
enum CoaStatus coa_estimate(const struct CoaNetwork *net,
                            const struct CoaDesign *design,
                            uint32_t exposure,
                            const double *levels,
                            size_t n_levels,
                            const uint8_t *d,
                            const double *y,
                            size_t n,
                            double *out_values);

// Contrast between levels `t1` and `t0` with a `1 − alpha` interval at rate `n^{−rho}`.
//
// # Safety
// Handles must be live; `d` and `y` hold `n` values; `out` must be writable.
enum CoaStatus coa_contrast(const struct CoaNetwork *net,
                            const struct CoaDesign *design,
                            uint32_t exposure,
                            double t1,
                            double t0,
                            const uint8_t *d,
                            const double *y,
                            size_t n,
                            double rho,
                            double alpha,
                            struct CoaContrast *out);

// Runs the Monte Carlo study described by a JSON run config and returns its
// summary as a JSON string, to be released with `coa_string_free`.
//
// # Safety
// `config_json` must be a nul-terminated string; `out` must be writable.
enum CoaStatus coa_monte_carlo_json(const char *config_json, char **out);

// # Safety
// `s` must be NULL or a string returned by this library not yet freed.
void coa_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COA_LAB_H */
