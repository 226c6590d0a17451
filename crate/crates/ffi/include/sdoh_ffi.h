#ifndef SDOH_FFI_H
#define SDOH_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

enum SdohStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  SDOH_STATUS_OK = 0,
  SDOH_STATUS_NULL_POINTER = 1,
  SDOH_STATUS_INVALID_UTF8 = 2,
  SDOH_STATUS_TAXONOMY = 4,
  SDOH_STATUS_METRICS = 5,
  SDOH_STATUS_OUT_OF_RANGE = 6,
  SDOH_STATUS_PANIC = 99,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum SdohStatus SdohStatus;
#else
typedef int32_t SdohStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/*
 Confusion matrix over a fixed label set plus the out-of-set column.
 */
typedef struct SdohMatrix SdohMatrix;

/*
 Parsed label taxonomy.
 */
typedef struct SdohTaxonomy SdohTaxonomy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. Free with
 `sdoh_string_free`.
 */
char *sdoh_last_error_message(void);

/*
 # Safety
 `s` must be null or a string returned by this library, freed once.
 */
void sdoh_string_free(char *s);

/*
 The built-in fourteen-label taxonomy. Never null.
 */
struct SdohTaxonomy *sdoh_taxonomy_builtin(void);

/*
 Parses a taxonomy from TOML text.

 # Safety
 `toml` must be a NUL-terminated string; `out` must be writable.
 */
SdohStatus sdoh_taxonomy_from_toml(const char *toml, struct SdohTaxonomy **out);

/*
 # Safety
 `t` must be null or a handle from this library, freed once.
 */
void sdoh_taxonomy_free(struct SdohTaxonomy *t);

/*
 Number of label definitions.

 # Safety
 `t` must be a live taxonomy handle; `out` must be writable.
 */
SdohStatus sdoh_taxonomy_len(const struct SdohTaxonomy *t, size_t *out);

/*
 Canonical name of the `index`-th definition, e.g. `t3_Eviction_pending`.

 # Safety
 `t` must be a live taxonomy handle; `out` must be writable. The returned
 string is freed with `sdoh_string_free`.
 */
SdohStatus sdoh_taxonomy_label_name(const struct SdohTaxonomy *t, size_t index, char **out);

/*
 Parses a label token (canonical or short name). Writes 1 to
 `out_eviction` when the label belongs to the eviction family.

 # Safety
 `name` must be a NUL-terminated string; `out_canonical` and
 `out_eviction` must be writable.
 */
SdohStatus sdoh_label_parse(const char *name, char **out_canonical, int32_t *out_eviction);

/*
 Creates an empty matrix over `n_labels` distinct label strings.

 # Safety
 `labels` must point to `n_labels` NUL-terminated strings; `out` must be
 writable.
 */
SdohStatus sdoh_matrix_new(const char *const *labels, size_t n_labels, struct SdohMatrix **out);

/*
 # Safety
 `m` must be null or a handle from this library, freed once.
 */
void sdoh_matrix_free(struct SdohMatrix *m);

/*
 Records one (gold, predicted) pair. A prediction outside the label set
 lands in the reserved column; a gold outside it is an error.

 # Safety
 `m` must be a live matrix handle; `gold` and `pred` NUL-terminated.
 */
SdohStatus sdoh_matrix_add(struct SdohMatrix *m, const char *gold, const char *pred);

/*
 # Safety
 `m` must be a live matrix handle; `out` must be writable.
 */
SdohStatus sdoh_matrix_total(const struct SdohMatrix *m, uint64_t *out);

/*
 # Safety
 `m` must be a live matrix handle; `out` must be writable.
 */
SdohStatus sdoh_matrix_micro_f1(const struct SdohMatrix *m, double *out);

/*
 # Safety
 `m` must be a live matrix handle; `out` must be writable.
 */
SdohStatus sdoh_matrix_macro_f1(const struct SdohMatrix *m, double *out);

/*
 Multiclass Matthews correlation.

 # Safety
 `m` must be a live matrix handle; `out` must be writable.
 */
SdohStatus sdoh_matrix_mcc(const struct SdohMatrix *m, double *out);

/*
 One-vs-rest F1 for a single label.

 # Safety
 `m` must be a live matrix handle; `label` NUL-terminated; `out` writable.
 */
SdohStatus sdoh_matrix_f1_for(const struct SdohMatrix *m, const char *label, double *out);

/*
 95% Student-t interval over per-run scores.

 # Safety
 `scores` must point to `n` doubles; the three outputs must be writable.
 */
SdohStatus sdoh_ci95(const double *scores,
                     size_t n,
                     double *out_mean,
                     double *out_lower,
                     double *out_upper);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDOH_FFI_H */
