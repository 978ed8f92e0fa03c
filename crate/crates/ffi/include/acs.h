#ifndef ACS_H
#define ACS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AcsStatus {
  ACS_STATUS_OK = 0,
  ACS_STATUS_OTHER = 1,
  // Null pointer, bad UTF-8 or an out-of-range argument.
  ACS_STATUS_INVALID_ARGUMENT = 2,
  ACS_STATUS_CONFIG = 3,
  ACS_STATUS_MISSING_FILE = 4,
  ACS_STATUS_FORMAT = 5,
  ACS_STATUS_INVARIANT = 6,
  ACS_STATUS_NUMERIC = 7,
  // Output buffer too small; the required length was written back.
  ACS_STATUS_BUFFER_TOO_SMALL = 8,
  ACS_STATUS_PANIC = 9,
} AcsStatus;

typedef struct AcsAdapter AcsAdapter;

typedef struct AcsAxisModel AcsAxisModel;

typedef struct AcsConfig AcsConfig;

typedef struct AcsEditor AcsEditor;

// One edit step as seen through the C ABI.
typedef struct AcsStep {
  size_t step;
  // Mean concept coordinate over the evaluation views.
  double cbar;
  double coord;
  double loss_sds;
  size_t selected;
} AcsStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until
// the next failing call on the same thread.
const char *acs_last_error(void);

// Library version as a static NUL-terminated string.
const char *acs_version(void);

// Default run configuration.
//
// # Safety
// `out` must be a valid pointer to writable storage.
enum AcsStatus acs_config_new(struct AcsConfig **out);

// JSON config file; missing keys take defaults.
//
// # Safety
// `path` must be a NUL-terminated string, `out` a valid pointer.
enum AcsStatus acs_config_load(const char *path, struct AcsConfig **out);

// Applies a dotted `key=value` override such as `edit.gamma=0.2`. The
// config is left unchanged on failure.
//
// # Safety
// `cfg` must come from `acs_config_new`/`acs_config_load`; `assignment`
// must be a NUL-terminated string.
enum AcsStatus acs_config_set(struct AcsConfig *cfg, const char *assignment);

// # Safety
// `cfg` must be null or a live config handle.
void acs_config_free(struct AcsConfig *cfg);

// Generates the synthetic features and fits the concept axis model.
//
// # Safety
// `cfg` must be a live config handle, `out` a valid pointer.
enum AcsStatus acs_axis_fit(const struct AcsConfig *cfg, struct AcsAxisModel **out);

// # Safety
// `path` must be a NUL-terminated string, `out` a valid pointer.
enum AcsStatus acs_axis_load(const char *path, struct AcsAxisModel **out);

// # Safety
// `model` must be a live handle, `path` a NUL-terminated string.
enum AcsStatus acs_axis_save(const struct AcsAxisModel *model, const char *path);

// Feature dimension, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t acs_axis_dim(const struct AcsAxisModel *model);

// Number of stages, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t acs_axis_stages(const struct AcsAxisModel *model);

// Copies the unit concept direction of `stage` (1-based) into `buf`,
// which must hold `acs_axis_dim` values.
//
// # Safety
// `model` must be a live handle; `buf` must point to `len` writable doubles.
enum AcsStatus acs_axis_direction(const struct AcsAxisModel *model,
                                  uint32_t stage,
                                  double *buf,
                                  size_t len);

// # Safety
// `model` must be null or a live handle.
void acs_axis_free(struct AcsAxisModel *model);

// Trains the slider adapter against a fitted axis model.
//
// # Safety
// `cfg` and `model` must be live handles, `out` a valid pointer.
enum AcsStatus acs_adapter_train(const struct AcsConfig *cfg,
                                 const struct AcsAxisModel *model,
                                 struct AcsAdapter **out);

// # Safety
// `path` must be a NUL-terminated string, `out` a valid pointer.
enum AcsStatus acs_adapter_load(const char *path, struct AcsAdapter **out);

// # Safety
// `adapter` must be a live handle, `path` a NUL-terminated string.
enum AcsStatus acs_adapter_save(const struct AcsAdapter *adapter, const char *path);

// # Safety
// `adapter` must be null or a live handle.
void acs_adapter_free(struct AcsAdapter *adapter);

// Edit session on the configured initial scene. `adapter` may be null
// when the config targets the axis directly.
//
// # Safety
// `cfg` and `model` must be live handles, `adapter` null or live, `out`
// a valid pointer. The editor keeps its own copies of all three.
enum AcsStatus acs_editor_new(const struct AcsConfig *cfg,
                              const struct AcsAxisModel *model,
                              const struct AcsAdapter *adapter,
                              struct AcsEditor **out);

// Moves the slider. `changed` (may be null) receives whether the value
// differed from the current one.
//
// # Safety
// `editor` must be a live handle; `changed` null or writable.
enum AcsStatus acs_editor_set_alpha(struct AcsEditor *editor, double alpha, bool *changed);

// Runs one edit step; `out` (may be null) receives its record.
//
// # Safety
// `editor` must be a live handle; `out` null or writable.
enum AcsStatus acs_editor_step(struct AcsEditor *editor, struct AcsStep *out);

// Steps completed so far, or 0 for a null handle.
//
// # Safety
// `editor` must be null or a live handle.
size_t acs_editor_steps_done(const struct AcsEditor *editor);

// Current mean and readout concept coordinates of the scene.
//
// # Safety
// `editor` must be a live handle; `cbar` and `coord` writable.
enum AcsStatus acs_editor_measure(const struct AcsEditor *editor, double *cbar, double *coord);

// Number of primitives in the scene, or 0 for a null handle.
//
// # Safety
// `editor` must be null or a live handle.
size_t acs_editor_primitives(const struct AcsEditor *editor);

// Renders a `size` x `size` RGBA8 frame into `buf`. `len` is the buffer
// size in bytes; when it is too small the required size is written to
// `needed` (may be null) and `ACS_STATUS_BUFFER_TOO_SMALL` is returned.
//
// # Safety
// `editor` must be a live handle; `buf` must point to `len` writable bytes.
enum AcsStatus acs_editor_render_rgba(const struct AcsEditor *editor,
                                      size_t size,
                                      uint8_t *buf,
                                      size_t len,
                                      size_t *needed);

// Writes the current scene as JSON.
//
// # Safety
// `editor` must be a live handle, `path` a NUL-terminated string.
enum AcsStatus acs_editor_save_scene(const struct AcsEditor *editor, const char *path);

// # Safety
// `editor` must be null or a live handle.
void acs_editor_free(struct AcsEditor *editor);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACS_H */
