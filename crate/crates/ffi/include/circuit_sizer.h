/* C interface for circuit evaluation and trained-policy deployment. */

#pragma once

/* Generated with cbindgen:0.27.0 */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result of a C-interface call.
typedef enum CsStatus {
  // Call succeeded.
  CS_OK = 0,
  // A required pointer argument was null.
  CS_NULL_ARG = 1,
  // An argument value was rejected (wrong length, unknown name, bad range).
  CS_INVALID_ARG = 2,
  // The circuit evaluator rejected the design or target.
  CS_EVAL_ERROR = 3,
  // File input/output failed.
  CS_IO_ERROR = 4,
  // A loaded file had the wrong format or did not fit the circuit.
  CS_FORMAT_ERROR = 5,
  // Unexpected internal failure.
  CS_INTERNAL = 6,
} CsStatus;

// Opaque circuit environment handle.
typedef struct CsEnv CsEnv;

// Opaque trained-policy handle.
typedef struct CsPolicy CsPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread. The pointer
// stays valid until the next failing call on the same thread. Never null.
const char *cs_last_error(void);

// Opens a built-in circuit environment: `circuit` is "opamp" or "rfpa";
// `fine_fidelity` selects the accurate evaluator for circuits that have a
// coarse one (ignored otherwise). Returns null on failure (see
// `cs_last_error`). Free with `cs_env_free`.
struct CsEnv *cs_env_open(const char *circuit, bool fine_fidelity);

// Releases an environment handle. Null is accepted and ignored.
void cs_env_free(struct CsEnv *env);

// Number of tunable parameters; 0 when `env` is null.
uintptr_t cs_env_param_count(const struct CsEnv *env);

// Number of measured metrics; 0 when `env` is null.
uintptr_t cs_env_spec_count(const struct CsEnv *env);

// Measures a design. `params` holds `n_params` values in netlist parameter
// order; metric values are written to `out_specs`.
enum CsStatus cs_env_evaluate(const struct CsEnv *env,
                              const double *params,
                              uintptr_t n_params,
                              double *out_specs,
                              uintptr_t n_specs);

// Scores measured metrics against a target: the summed normalized
// shortfall, or the environment's success bonus when every target is met.
enum CsStatus cs_env_reward(const struct CsEnv *env,
                            const double *achieved,
                            const double *goal,
                            uintptr_t n_specs,
                            double *out_reward);

// Draws one target from the environment's sampling ranges, deterministic in
// `seed`, into `out_goal`.
enum CsStatus cs_env_sample_goal(const struct CsEnv *env,
                                 uint64_t seed,
                                 double *out_goal,
                                 uintptr_t n_specs);

// Loads a trained policy checkpoint. Returns null on failure (see
// `cs_last_error`). Free with `cs_policy_free`.
struct CsPolicy *cs_policy_load(const char *path);

// Releases a policy handle. Null is accepted and ignored.
void cs_policy_free(struct CsPolicy *policy);

// Greedily deploys a trained policy toward `goal`. Writes the final design
// to `out_params` and its measured metrics to `out_achieved`; `out_reached`
// (optional) reports whether every target was met and `out_steps`
// (optional) how many adjustment steps ran.
enum CsStatus cs_policy_rollout(const struct CsEnv *env,
                                const struct CsPolicy *policy,
                                const double *goal,
                                uintptr_t n_goal,
                                double *out_params,
                                uintptr_t n_params,
                                double *out_achieved,
                                uintptr_t n_specs,
                                bool *out_reached,
                                uintptr_t *out_steps);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
