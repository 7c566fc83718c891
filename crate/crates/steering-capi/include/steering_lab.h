/* C API for the steering-lab analysis library. */

#ifndef STEERING_LAB_H
#define STEERING_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Model selector for membership tests and witness extraction.
 */
typedef enum SlModel {
  SlModelLhs = 0,
  SlModelNsLhs = 1,
  SlModelToLhs = 2,
  SlModelGms = 3,
} SlModel;

/**
 * Status codes returned by every API function.
 */
typedef enum SlStatus {
  /**
   * Success.
   */
  SlOk = 0,
  /**
   * Null pointer, malformed JSON or an out-of-range argument.
   */
  SlInvalidArgument = 1,
  /**
   * Structurally valid input rejected by a domain rule (e.g. a
   * signaling assemblage passed to a membership test).
   */
  SlDomainError = 2,
  /**
   * The embedded SDP solver failed to produce a certified result.
   */
  SlSolverFailure = 3,
  /**
   * Internal panic; the library state is still valid.
   */
  SlInternalError = 4,
} SlStatus;

/**
 * Opaque assemblage handle.
 */
typedef struct SlAssemblage SlAssemblage;

/**
 * Opaque steering-witness handle.
 */
typedef struct SlWitness SlWitness;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the message of the last error raised on this thread, or null.
 * The pointer stays valid until the next failing call on the thread.
 */
const char *sl_last_error(void);

/**
 * Releases a string returned by this library.
 */
void sl_string_free(char *s);

/**
 * Parses an assemblage from its JSON form.
 */
enum SlStatus sl_assemblage_from_json(const char *json, struct SlAssemblage **out);

/**
 * Serializes an assemblage to JSON (release with `sl_string_free`).
 */
enum SlStatus sl_assemblage_to_json(const struct SlAssemblage *handle, char **out);

/**
 * Releases an assemblage handle.
 */
void sl_assemblage_free(struct SlAssemblage *handle);

/**
 * The built-in tripartite GHZ assemblage.
 */
enum SlStatus sl_assemblage_ghz(struct SlAssemblage **out);

/**
 * The built-in noisy-W assemblage with visibility `v` and measurement
 * parameter `eta`.
 */
enum SlStatus sl_assemblage_noisy_w(double v, double eta, struct SlAssemblage **out);

/**
 * Validates an assemblage: PSD elements, normalization, no-signaling.
 */
enum SlStatus sl_assemblage_validate(const struct SlAssemblage *handle,
                                     int *all_ok,
                                     double *max_violation);

/**
 * Applies the y = a wiring to a tripartite assemblage.
 */
enum SlStatus sl_wire(const struct SlAssemblage *handle, struct SlAssemblage **out);

/**
 * The universal LHS-member initial assemblage whose wiring reproduces the
 * given bipartite target.
 */
enum SlStatus sl_universal_initial(const struct SlAssemblage *target, struct SlAssemblage **out);

/**
 * Membership test against the chosen model. `member` receives 0/1,
 * `optimum` the SDP optimum (nonnegative for members up to tolerance).
 */
enum SlStatus sl_membership_test(const struct SlAssemblage *handle,
                                 enum SlModel model,
                                 int *member,
                                 double *optimum);

/**
 * Full membership report (verdict, optimum, certificate, diagnostics) as
 * JSON (release with `sl_string_free`).
 */
enum SlStatus sl_membership_report_json(const struct SlAssemblage *handle,
                                        enum SlModel model,
                                        char **out);

/**
 * LHS-noise steering robustness.
 */
enum SlStatus sl_robustness(const struct SlAssemblage *handle, double *out);

/**
 * CHSH value of a bipartite assemblage under the built-in trusted bases.
 */
enum SlStatus sl_chsh(const struct SlAssemblage *handle, double *out);

/**
 * Fidelity between two assemblages of the same scenario.
 */
enum SlStatus sl_fidelity(const struct SlAssemblage *a1,
                          const struct SlAssemblage *a2,
                          double *out);

/**
 * The built-in bound-1 bipartite steering witness.
 */
enum SlStatus sl_witness_eq56(struct SlWitness **out);

/**
 * The built-in tripartite NS-LHS table witness.
 */
enum SlStatus sl_witness_ns_lhs(struct SlWitness **out);

/**
 * Parses a witness from its JSON form.
 */
enum SlStatus sl_witness_from_json(const char *json, struct SlWitness **out);

/**
 * Serializes a witness to JSON (release with `sl_string_free`).
 */
enum SlStatus sl_witness_to_json(const struct SlWitness *w, char **out);

/**
 * Releases a witness handle.
 */
void sl_witness_free(struct SlWitness *w);

/**
 * Extracts the optimal witness for the LHS or NS-LHS model from the
 * membership dual (models TO-LHS/GMS are not supported here).
 */
enum SlStatus sl_optimal_witness(const struct SlAssemblage *handle,
                                 enum SlModel model,
                                 struct SlWitness **out);

/**
 * Evaluates a witness: `value` receives the witness value, `violated`
 * 0/1 depending on the witness bound and direction.
 */
enum SlStatus sl_witness_evaluate(const struct SlWitness *w,
                                  const struct SlAssemblage *handle,
                                  double *value,
                                  int *violated);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEERING_LAB_H */
