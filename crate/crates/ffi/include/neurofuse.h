#ifndef NEUROFUSE_H
#define NEUROFUSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NfStatus {
  NF_STATUS_OK = 0,
  NF_STATUS_CONFIG = 2,
  NF_STATUS_IO = 3,
  NF_STATUS_DATA = 4,
  NF_STATUS_MARKERS = 5,
  NF_STATUS_NULL_ARGUMENT = 10,
  NF_STATUS_INVALID_UTF8 = 11,
  NF_STATUS_BUFFER_TOO_SMALL = 12,
  NF_STATUS_PANIC = 13,
} NfStatus;

typedef enum NfCondition {
  NF_CONDITION_OUTSIDE = 0,
  NF_CONDITION_SCANNER_OFF = 1,
  NF_CONDITION_SCANNER_ON = 2,
} NfCondition;

typedef enum NfAlign {
  NF_ALIGN_VOLUME = 0,
  NF_ALIGN_SLICE = 1,
} NfAlign;

/**
 * 4-D fMRI series.
 */
typedef struct NfFmri NfFmri;

/**
 * Synthetic dataset with its ground truth.
 */
typedef struct NfPhantom NfPhantom;

/**
 * Multichannel EEG with markers.
 */
typedef struct NfRecording NfRecording;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Writes the last error message of this thread, NUL-terminated and
 * truncated to `cap` bytes. Returns the untruncated length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t nf_last_error(char *buf, size_t cap);

/**
 * Generates the default phantom with `seed` and `duration_s` (0 keeps the
 * default duration).
 *
 * # Safety
 * `out` must be a valid pointer; the handle is released with [`nf_phantom_free`].
 */
enum NfStatus nf_phantom_new(uint64_t seed, double duration_s, struct NfPhantom **out);

/**
 * Generates a phantom from a TOML document of phantom settings.
 *
 * # Safety
 * `toml_text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NfStatus nf_phantom_from_toml(const char *toml_text, struct NfPhantom **out);

/**
 * # Safety
 * `p` must be null or a handle from this library, not yet freed.
 */
void nf_phantom_free(struct NfPhantom *p);

/**
 * EEG of one recording condition.
 *
 * # Safety
 * `p` must be a live phantom handle and `out` a valid pointer.
 */
enum NfStatus nf_phantom_emit(const struct NfPhantom *p,
                              enum NfCondition condition,
                              struct NfRecording **out);

/**
 * # Safety
 * `p` must be a live phantom handle and `out` a valid pointer.
 */
enum NfStatus nf_phantom_fmri(const struct NfPhantom *p, struct NfFmri **out);

/**
 * True R-peak sample indices.
 *
 * # Safety
 * `buf` must hold `cap` elements; `len` may be null.
 */
enum NfStatus nf_phantom_r_peaks(const struct NfPhantom *p, size_t *buf, size_t cap, size_t *len);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NfStatus nf_recording_load(const char *path, struct NfRecording **out);

/**
 * Writes `<stem>.vhdr/.vmrk/.eeg`; `float32` selects IEEE float samples,
 * otherwise int16 at 0.1 µV resolution.
 *
 * # Safety
 * `rec` must be a live handle and `stem` a NUL-terminated string.
 */
enum NfStatus nf_recording_save(const struct NfRecording *rec, const char *stem, bool float32);

/**
 * # Safety
 * `rec` must be null or a handle from this library, not yet freed.
 */
void nf_recording_free(struct NfRecording *rec);

/**
 * Channels, samples and rate of a recording. Null handles give zeros.
 *
 * # Safety
 * `rec` must be null or a live handle.
 */
void nf_recording_shape(const struct NfRecording *rec,
                        size_t *n_channels,
                        size_t *n_samples,
                        double *rate_hz);

/**
 * Row index of a channel label.
 *
 * # Safety
 * `rec` must be a live handle, `label` NUL-terminated, `index` valid.
 */
enum NfStatus nf_recording_channel_index(const struct NfRecording *rec,
                                         const char *label,
                                         size_t *index);

/**
 * Copies one channel (µV).
 *
 * # Safety
 * `buf` must hold `cap` doubles; `len` may be null.
 */
enum NfStatus nf_recording_channel(const struct NfRecording *rec,
                                   size_t channel,
                                   double *buf,
                                   size_t cap,
                                   size_t *len);

/**
 * Average artifact subtraction aligned to volume or slice triggers.
 *
 * # Safety
 * `rec` must be a live handle and `out` a valid pointer.
 */
enum NfStatus nf_aas_correct(const struct NfRecording *rec,
                             enum NfAlign align,
                             size_t window_epochs,
                             struct NfRecording **out);

/**
 * R-peak sample indices detected on `channel`.
 *
 * # Safety
 * `buf` must hold `cap` elements; `len` may be null.
 */
enum NfStatus nf_detect_r_peaks(const struct NfRecording *rec,
                                const char *channel,
                                size_t *buf,
                                size_t cap,
                                size_t *len);

/**
 * Pulse-artifact template subtraction. `skip_channel` (nullable) is left
 * untouched, normally the ECG.
 *
 * # Safety
 * `peaks` must hold `n_peaks` elements; strings NUL-terminated or null.
 */
enum NfStatus nf_bcg_correct(const struct NfRecording *rec,
                             const size_t *peaks,
                             size_t n_peaks,
                             double delay_s,
                             size_t window_epochs,
                             const char *skip_channel,
                             struct NfRecording **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NfStatus nf_fmri_load(const char *path, struct NfFmri **out);

/**
 * # Safety
 * `f` must be null or a handle from this library, not yet freed.
 */
void nf_fmri_free(struct NfFmri *f);

/**
 * Voxel count, volume count and TR. Null handles give zeros.
 *
 * # Safety
 * `f` must be null or a live handle.
 */
void nf_fmri_shape(const struct NfFmri *f, size_t *n_voxels, size_t *n_volumes, double *tr_s);

/**
 * Band-power envelope of `channel` on the TR grid, convolved with the
 * canonical HRF and z-scored. Writes `n_volumes` values.
 *
 * # Safety
 * `buf` must hold `cap` doubles; `len` may be null.
 */
enum NfStatus nf_eeg_predictor(const struct NfRecording *rec,
                               const char *channel,
                               double band_lo_hz,
                               double band_hi_hz,
                               double tr_s,
                               size_t n_volumes,
                               double *buf,
                               size_t cap,
                               size_t *len);

/**
 * Pearson r of two equal-length vectors.
 *
 * # Safety
 * `x` and `y` must hold `n` doubles; `r` must be valid.
 */
enum NfStatus nf_pearson(const double *x, const double *y, size_t n, double *r);

/**
 * Per-voxel Pearson r against a predictor of `n` volumes.
 *
 * # Safety
 * `predictor` must hold `n` doubles; `buf` must hold `cap` doubles.
 */
enum NfStatus nf_pearson_map(const struct NfFmri *f,
                             const double *predictor,
                             size_t n,
                             double *buf,
                             size_t cap,
                             size_t *len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEUROFUSE_H */
