#ifndef PWM_FFI_H
#define PWM_FFI_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PwmStatus {
  PWM_STATUS_OK = 0,
  PWM_STATUS_NULL_POINTER = 1,
  PWM_STATUS_INVALID_ARGUMENT = 2,
  PWM_STATUS_NOT_FOUND = 3,
  PWM_STATUS_RUNTIME = 4,
  PWM_STATUS_PANIC = 5,
} PwmStatus;

typedef struct PwmLstm PwmLstm;

typedef struct PwmVae PwmVae;

/**
 * Simulated crossing scenario plus its camera settings.
 */
typedef struct PwmWorld PwmWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Length in bytes of the last error message on this thread, without the NUL; 0 if none.
 */
size_t pwm_last_error_length(void);

/**
 * Copies the last error message (NUL-terminated, truncated to fit) into `buf`.
 * Returns the number of bytes written excluding the NUL.
 */
size_t pwm_last_error_message(char *buf, size_t len);

/**
 * Static, NUL-terminated crate version.
 */
const char *pwm_version(void);

/**
 * Builds a world from a scenario JSON object (NULL for defaults).
 */
enum PwmStatus pwm_world_new(const char *config_json,
                             uint64_t seed,
                             size_t height,
                             size_t width,
                             struct PwmWorld **out);

void pwm_world_free(struct PwmWorld *world);

/**
 * Advances the world by one 60 ms step.
 */
enum PwmStatus pwm_world_step(struct PwmWorld *world);

enum PwmStatus pwm_world_step_count(const struct PwmWorld *world, uint64_t *out);

/**
 * Index of the ego body state: 0 walk1 … 7 end.
 */
enum PwmStatus pwm_world_ego_state(const struct PwmWorld *world, uint32_t *out);

enum PwmStatus pwm_world_agent_counts(const struct PwmWorld *world,
                                      size_t *pedestrians,
                                      size_t *vehicles);

/**
 * Renders the ego view as `height × width` category indices into `labels`.
 */
enum PwmStatus pwm_world_render(const struct PwmWorld *world, uint8_t *labels, size_t len);

enum PwmStatus pwm_vae_load(const char *path_utf8, struct PwmVae **out);

void pwm_vae_free(struct PwmVae *vae);

/**
 * Frame height, width, channel count and latent width of a VAE.
 */
enum PwmStatus pwm_vae_shape(const struct PwmVae *vae,
                             size_t *height,
                             size_t *width,
                             size_t *channels,
                             size_t *latent);

/**
 * Encodes one label frame into `mu` and `logvar` (each `latent` floats).
 */
enum PwmStatus pwm_vae_encode(const struct PwmVae *vae,
                              const uint8_t *labels,
                              size_t labels_len,
                              float *mu,
                              float *logvar,
                              size_t latent);

/**
 * Decodes a latent into per-pixel class probabilities, `height × width × channels`.
 */
enum PwmStatus pwm_vae_decode(const struct PwmVae *vae,
                              const float *z,
                              size_t latent,
                              float *probs,
                              size_t probs_len);

enum PwmStatus pwm_lstm_load(const char *path_utf8, struct PwmLstm **out);

void pwm_lstm_free(struct PwmLstm *lstm);

/**
 * Closed-loop rollout from one label frame. `actions` holds `n_actions` rows of
 * (moved, body yaw, head yaw); the last row repeats past the end. Writes
 * `steps × latent` floats to `latents`.
 */
enum PwmStatus pwm_dream(const struct PwmVae *vae,
                         const struct PwmLstm *lstm,
                         const uint8_t *labels,
                         size_t labels_len,
                         const float *actions,
                         size_t n_actions,
                         float tau,
                         size_t steps,
                         uint64_t seed,
                         float *latents,
                         size_t latents_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PWM_FFI_H */
