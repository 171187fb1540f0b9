#ifndef EIR_EQ_H
#define EIR_EQ_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EirStatus {
  EIR_STATUS_OK = 0,
  EIR_STATUS_NULL_POINTER = 1,
  EIR_STATUS_INVALID_UTF8 = 2,
  EIR_STATUS_PARSE = 3,
  EIR_STATUS_INVALID_INSTANCE = 4,
  EIR_STATUS_NOT_CONVERGED = 5,
  EIR_STATUS_NOT_CERTIFIED = 6,
  EIR_STATUS_OUT_OF_RANGE = 7,
  EIR_STATUS_UNKNOWN_NAME = 8,
  EIR_STATUS_INTERNAL = 99,
} EirStatus;

typedef enum EirDesignKind {
  EIR_DESIGN_KIND_EMO = 0,
  EIR_DESIGN_KIND_EMIR = 1,
  EIR_DESIGN_KIND_EMO_LF = 2,
} EirDesignKind;

// Opaque market instance.
typedef struct EirInstance EirInstance;

// Opaque solved equilibrium, with the model it was solved on.
typedef struct EirSolution EirSolution;

typedef struct EirSolveOptions {
  double tol;
  uint32_t max_iters;
  uint32_t restarts;
  uint64_t seed;
} EirSolveOptions;

// Aggregate results of a solution.
typedef struct EirSummary {
  double lam_da;
  double expected_lam_rt;
  double rho;
  double lam_lf;
  double total_v_da;
  double total_g_da;
  double total_e;
  double d_da;
} EirSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or an empty string.
// The pointer stays valid until the next call into this library.
const char *eir_last_error(void);

// Library version as a static NUL-terminated string.
const char *eir_version(void);

struct EirSolveOptions eir_solve_options_default(void);

// Parses and validates a JSON instance.
//
// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum EirStatus eir_instance_from_json(const char *json, struct EirInstance **out);

// Serializes an instance; free the result with [`eir_string_free`].
//
// # Safety
// `inst` must be a live handle; `out` must be writable.
enum EirStatus eir_instance_to_json(const struct EirInstance *inst, char **out);

// Replaces the market design. `k` is ignored unless the design is EMIR and
// `fer` is ignored for energy-only.
//
// # Safety
// `inst` must be a live handle.
enum EirStatus eir_instance_set_design(struct EirInstance *inst,
                                       enum EirDesignKind kind,
                                       double k,
                                       double fer);

// Sets every generator's risk level.
//
// # Safety
// `inst` must be a live handle.
enum EirStatus eir_instance_set_generator_alpha(struct EirInstance *inst, double alpha);

// # Safety
// `inst` must be a live handle.
enum EirStatus eir_instance_set_demand_alpha(struct EirInstance *inst, double alpha);

// # Safety
// `inst` must be null or a handle not yet freed.
void eir_instance_free(struct EirInstance *inst);

// Solves the CVaR equilibrium from the default start. A handle is produced
// whenever the solver ran; the status is [`EirStatus::NotConverged`] if it
// did not reach the tolerance. `opts` may be null for defaults.
//
// # Safety
// `inst` must be a live handle; `opts` null or readable; `out` writable.
enum EirStatus eir_solve(const struct EirInstance *inst,
                         const struct EirSolveOptions *opts,
                         struct EirSolution **out);

// # Safety
// `sol` must be null or a handle not yet freed.
void eir_solution_free(struct EirSolution *sol);

// Complementarity error of the solved point.
//
// # Safety
// `sol` must be a live handle; `out` writable.
enum EirStatus eir_solution_error(const struct EirSolution *sol, double *out);

// Checks every agent's best response and the money balance. Writes the
// largest best-response gap to `max_gap` (if non-null).
//
// # Safety
// `sol` must be a live handle; `max_gap` null or writable.
enum EirStatus eir_solution_certify(const struct EirSolution *sol, double *max_gap);

// # Safety
// `sol` must be a live handle; `out` writable.
enum EirStatus eir_solution_summary(const struct EirSolution *sol, struct EirSummary *out);

// Copies the real-time prices into `buf`. `len` is the capacity on entry
// and the number of scenarios on return; if the buffer is too small nothing
// is copied and the status is [`EirStatus::OutOfRange`].
//
// # Safety
// `sol` must be a live handle; `len` writable; `buf` valid for `*len` doubles.
enum EirStatus eir_solution_lam_rt(const struct EirSolution *sol, double *buf, size_t *len);

// Value of a variable by name, e.g. `"lam_da"` or `"g_da[1]"`.
//
// # Safety
// `sol` must be a live handle; `name` NUL-terminated; `out` writable.
enum EirStatus eir_solution_variable(const struct EirSolution *sol, const char *name, double *out);

// Every variable by name as a JSON object; free with [`eir_string_free`].
//
// # Safety
// `sol` must be a live handle; `out` writable.
enum EirStatus eir_solution_to_json(const struct EirSolution *sol, char **out);

// # Safety
// `s` must be null or a string returned by this library and not yet freed.
void eir_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EIR_EQ_H */
