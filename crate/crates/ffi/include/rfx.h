#ifndef RFX_H
#define RFX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum rfx_status {
  RFX_STATUS_OK = 0,
  RFX_STATUS_NULL_POINTER = 1,
  RFX_STATUS_ARGUMENT = 2,
  RFX_STATUS_IO = 3,
  RFX_STATUS_MODEL = 4,
  RFX_STATUS_STATE = 5,
  RFX_STATUS_FORMAT = 6,
  RFX_STATUS_PANIC = 7,
} rfx_status;

typedef enum rfx_algorithm {
  RFX_ALGORITHM_HOEFFDING = 0,
  RFX_ALGORITHM_BERNSTEIN = 1,
} rfx_algorithm;

/**
 * The planning-phase state left by an exploration run.
 */
typedef struct rfx_exploration rfx_exploration;

/**
 * A validated linear mixture MDP.
 */
typedef struct rfx_mdp rfx_mdp;

typedef struct rfx_dims {
  size_t states;
  size_t actions;
  size_t horizon;
  size_t dim;
} rfx_dims;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *rfx_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void rfx_string_free(char *s);

/**
 * Generates a random valid instance.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum rfx_status rfx_mdp_random(size_t states,
                               size_t actions,
                               size_t horizon,
                               size_t dim,
                               double param_bound,
                               uint64_t seed,
                               struct rfx_mdp **out);

/**
 * Parses and validates a model document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum rfx_status rfx_mdp_from_json(const char *json, struct rfx_mdp **out);

/**
 * Serializes a model; release the result with [`rfx_string_free`].
 *
 * # Safety
 * `mdp` must be a live handle; `out` must be writable.
 */
enum rfx_status rfx_mdp_to_json(const struct rfx_mdp *mdp, char **out);

/**
 * # Safety
 * `mdp` must be NULL or a live handle from this library.
 */
void rfx_mdp_free(struct rfx_mdp *mdp);

/**
 * # Safety
 * `mdp` must be a live handle; `out` must be writable.
 */
enum rfx_status rfx_mdp_dims(const struct rfx_mdp *mdp, struct rfx_dims *out);

/**
 * Lower-bound instance for packing vector `theta_index` of a packing set
 * over `{-1,1}^dprime` drawn from `packing_seed`.
 *
 * # Safety
 * `out` must be writable.
 */
enum rfx_status rfx_hard_mdp(size_t dprime,
                             double gamma,
                             double alpha,
                             size_t theta_index,
                             size_t horizon,
                             uint64_t packing_seed,
                             struct rfx_mdp **out);

/**
 * Runs `episodes` exploration episodes with default settings and the given
 * confidence level.
 *
 * # Safety
 * `mdp` must be a live handle; `out` must be writable.
 */
enum rfx_status rfx_explore(const struct rfx_mdp *mdp,
                            enum rfx_algorithm algorithm,
                            size_t episodes,
                            uint64_t seed,
                            double delta,
                            struct rfx_exploration **out);

/**
 * # Safety
 * `state` must be NULL or a live handle from this library.
 */
void rfx_exploration_free(struct rfx_exploration *state);

/**
 * Plans for `reward` (row-major `H x S x A`) and writes the greedy policy
 * (row-major `H x S`) into `policy_out`.
 *
 * # Safety
 * Handles must be live; `reward` must hold `reward_len` doubles and
 * `policy_out` room for `policy_len` entries.
 */
enum rfx_status rfx_plan(const struct rfx_mdp *mdp,
                         const struct rfx_exploration *state,
                         const double *reward,
                         size_t reward_len,
                         size_t *policy_out,
                         size_t policy_len);

/**
 * Exact `E_{s ~ mu}[V*_1(s) - V^pi_1(s)]` for `reward` (`H x S x A`) and
 * `policy` (`H x S`), both row-major.
 *
 * # Safety
 * `mdp` must be live and the buffers must hold the stated lengths.
 */
enum rfx_status rfx_expected_gap(const struct rfx_mdp *mdp,
                                 const double *reward,
                                 size_t reward_len,
                                 const size_t *policy,
                                 size_t policy_len,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RFX_H */
