#ifndef FKCHAIN_H
#define FKCHAIN_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define FK_BOUNDARY_BOTH 0

#define FK_BOUNDARY_MOTOR1_ONLY 1

#define FK_BOUNDARY_FREE 2

/**
 * Result code of every call.
 */
typedef enum FkStatus {
  FK_STATUS_OK = 0,
  FK_STATUS_NULL_POINTER = 1,
  FK_STATUS_INVALID_ARGUMENT = 2,
  FK_STATUS_DIVERGED = 3,
  FK_STATUS_INFEASIBLE = 4,
  FK_STATUS_IO = 5,
  FK_STATUS_BUFFER_TOO_SMALL = 6,
  FK_STATUS_PANIC = 7,
} FkStatus;

/**
 * Opaque simulation handle.
 */
typedef struct FkChain FkChain;

/**
 * Opaque extremum seeking loop.
 */
typedef struct FkEsc FkEsc;

/**
 * Physical constants; `boundary` is one of the `FK_BOUNDARY_*` values.
 */
typedef struct FkParams {
  size_t n;
  double inertia;
  double mass;
  double length;
  double gravity;
  double k;
  double b;
  double gamma;
  uint32_t boundary;
} FkParams;

typedef struct FkMotorCommand {
  double phi_m1;
  double omega_m1;
  double phi_m2;
  double omega_m2;
} FkMotorCommand;

typedef struct FkEscConfig {
  size_t window;
  double gain;
  double dither_freq;
  double dither_amplitude;
  double hpf_cutoff;
  double sample_period;
  double lambda_max;
  double demod_phase;
} FkEscConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Writes the identified laboratory parameters for a chain of `n` pendulums.
 */
enum FkStatus fk_params_identified(size_t n, struct FkParams *out);

/**
 * Creates a chain at rest. Release it with [`fk_chain_free`].
 */
enum FkStatus fk_chain_new(const struct FkParams *params, struct FkChain **out);

/**
 * Releases a chain; null is accepted.
 */
void fk_chain_free(struct FkChain *chain);

/**
 * Sets time, angles and velocities; both arrays hold `n` values.
 */
enum FkStatus fk_chain_set_state(struct FkChain *chain,
                                 double time,
                                 const double *angles,
                                 const double *velocities,
                                 size_t n);

/**
 * Copies the current state; `time` may be null.
 */
enum FkStatus fk_chain_get_state(const struct FkChain *chain,
                                 double *time,
                                 double *angles,
                                 double *velocities,
                                 size_t n);

/**
 * Advances `steps` RK4 steps of size `dt` with the motors held at `cmd`.
 */
enum FkStatus fk_chain_step(struct FkChain *chain,
                            const struct FkMotorCommand *cmd,
                            double dt,
                            size_t steps);

/**
 * Total mechanical energy of the chain (J).
 */
enum FkStatus fk_chain_energy(const struct FkChain *chain, double *out);

/**
 * Path-graph Laplacian of size `n`, row-major into `out` (`len >= n*n`).
 */
enum FkStatus fk_laplacian(size_t n, double *out, size_t len);

/**
 * Largest real part among the eigenvalues of the synchronization error dynamics.
 */
enum FkStatus fk_jacobian_max_real_part(const struct FkParams *params, double *out);

/**
 * Default extremum seeking settings.
 */
enum FkStatus fk_esc_default_config(struct FkEscConfig *out);

/**
 * Creates an extremum seeking loop starting at gain `lambda0`.
 */
enum FkStatus fk_esc_new(const struct FkEscConfig *cfg, double lambda0, struct FkEsc **out);

/**
 * Feeds one value of the performance index and returns the new gain.
 */
enum FkStatus fk_esc_step(struct FkEsc *esc, double index, double t, double *lambda);

void fk_esc_free(struct FkEsc *esc);

/**
 * Runs a scenario file and writes its CSV and summary into `out_dir`.
 */
enum FkStatus fk_run_scenario(const char *path, const char *out_dir);

/**
 * Copies the calling thread's last error message (NUL-terminated, possibly
 * truncated) into `buf` and returns the full message length in bytes.
 */
size_t fk_last_error(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FKCHAIN_H */
