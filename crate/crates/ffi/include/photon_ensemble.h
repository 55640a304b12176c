#ifndef PHOTON_ENSEMBLE_H
#define PHOTON_ENSEMBLE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code of every fallible call.
 */
typedef enum PeStatus {
  PE_STATUS_OK = 0,
  PE_STATUS_NULL_POINTER = 1,
  PE_STATUS_INVALID_PARAMETER = 2,
  PE_STATUS_DOMAIN = 3,
  PE_STATUS_NUMERIC = 4,
  PE_STATUS_UNSUPPORTED = 5,
  PE_STATUS_INFEASIBLE = 6,
  PE_STATUS_CONFIG = 7,
  PE_STATUS_IO = 8,
  PE_STATUS_PANIC = 9,
} PeStatus;

typedef enum PeRegime {
  PE_REGIME_FREE_RUNNING = 0,
  PE_REGIME_ATTENUATED = 1,
  PE_REGIME_GATED = 2,
  PE_REGIME_GATED_PLUS_ATTENUATED = 3,
} PeRegime;

typedef enum PeGating {
  PE_GATING_ALLOWED = 0,
  PE_GATING_BEAM_SPLITTER_ONLY = 1,
} PeGating;

/**
 * Detector network description.
 */
typedef struct PeNetwork PeNetwork;

/**
 * Emitter ensemble description.
 */
typedef struct PeSource PeSource;

typedef struct PeCriterion {
  uint32_t m;
  double log_p0;
  double log_p0m;
  double d0;
  double d0m;
  double d;
  bool violated;
  bool unbounded;
} PeCriterion;

typedef struct PeSimResult {
  uint64_t open_bins;
  double log_p0_hat;
  double log_p0m_hat;
  double se_log_p0;
  double se_log_p0m;
  double d;
  double sigma_d;
  /**
   * `d/σ_d`; zero when the estimate does not violate the criterion.
   */
  double ratio;
} PeSimResult;

typedef struct PePlan {
  double t_min;
  double t_opt;
  enum PeRegime regime;
  double flux;
  double open_bins;
  double duty_cycle;
  double click_rate;
} PePlan;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next call into the library on this thread.
 */
const char *pe_last_error(void);

/**
 * `n` emitters of single-photon efficiency `eta1`.
 *
 * # Safety
 * `out` must be a valid pointer to a `PeSource*`.
 */
enum PeStatus pe_source_new_ensemble(uint64_t n, double eta1, struct PeSource **out);

/**
 * Source from the TOML body of a `[source]` table.
 *
 * # Safety
 * `toml_text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PeStatus pe_source_from_toml(const char *toml_text, struct PeSource **out);

/**
 * Releases a source. Null is ignored.
 *
 * # Safety
 * `source` must come from this library and not be used afterwards.
 */
void pe_source_free(struct PeSource *source);

/**
 * Balanced `m`-arm network with equal detector efficiency and default
 * timing (10 ns bins, 500 kHz saturation and switching, 25 ns dead time).
 *
 * # Safety
 * `out` must be a valid pointer to a `PeNetwork*`.
 */
enum PeStatus pe_network_symmetric(uint32_t m, double efficiency, struct PeNetwork **out);

/**
 * Network from the TOML body of a `[network]` table.
 *
 * # Safety
 * `toml_text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PeStatus pe_network_from_toml(const char *toml_text, struct PeNetwork **out);

/**
 * Releases a network. Null is ignored.
 *
 * # Safety
 * `network` must come from this library and not be used afterwards.
 */
void pe_network_free(struct PeNetwork *network);

/**
 * Natural-log vacuum probabilities of arm 0 and of all arms at extra
 * transmittance `t`.
 *
 * # Safety
 * Handles must be live; out-pointers must be valid.
 */
enum PeStatus pe_vacuum_logprobs(const struct PeSource *source,
                                 const struct PeNetwork *network,
                                 double t,
                                 double *log_p0,
                                 double *log_p0m);

/**
 * Criterion on given natural-log vacuum probabilities.
 *
 * # Safety
 * `out` must be valid.
 */
enum PeStatus pe_evaluate(double log_p0, double log_p0m, uint32_t m, struct PeCriterion *out);

/**
 * Criterion for a source behind a balanced network at transmittance `t`.
 *
 * # Safety
 * Handles must be live; `out` must be valid.
 */
enum PeStatus pe_evaluate_source(const struct PeSource *source,
                                 const struct PeNetwork *network,
                                 double t,
                                 struct PeCriterion *out);

/**
 * Classical maximum of `P₀ + a·P₀^{⊗M}`.
 *
 * # Safety
 * `out` must be valid.
 */
enum PeStatus pe_threshold_f(uint32_t m, double a, double *out);

/**
 * Minimal efficiency with one thermal mode of mean `nbar` shared by `n`
 * emitters.
 *
 * # Safety
 * `out` must be valid.
 */
enum PeStatus pe_noise_threshold_common(double nbar, uint64_t n, double *out);

/**
 * Minimal efficiency with a thermal mode of mean `nbar` per emitter.
 *
 * # Safety
 * `out` must be valid.
 */
enum PeStatus pe_noise_threshold_per_emitter(double nbar, double *out);

/**
 * Largest emitter count keeping the decay-averaged criterion violated.
 *
 * # Safety
 * `out` must be valid.
 */
enum PeStatus pe_max_emitters_decay(double t_m, double tau_s, double *out);

/**
 * Monte Carlo run over `bins` wall-clock bins.
 *
 * # Safety
 * Handles must be live; `out` must be valid.
 */
enum PeStatus pe_simulate(const struct PeSource *source,
                          const struct PeNetwork *network,
                          uint64_t bins,
                          double duty_cycle,
                          double transmittance,
                          uint64_t seed,
                          struct PeSimResult *out);

/**
 * Transmittance minimising the wall-clock time to `d/σ_d = target`.
 * `gating` takes a [`PeGating`] value.
 *
 * # Safety
 * Handles must be live; `out` must be valid.
 */
enum PeStatus pe_optimize_attenuation(const struct PeSource *source,
                                      const struct PeNetwork *network,
                                      double target,
                                      uint32_t gating,
                                      struct PePlan *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHOTON_ENSEMBLE_H */
