/* Copyright 2026 The ctdiff Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef CTDIFF_H
#define CTDIFF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum {
  CTDIFF_STATUS_OK = 0,
  CTDIFF_STATUS_NULL_POINTER = 1,
  CTDIFF_STATUS_INVALID_UTF8 = 2,
  CTDIFF_STATUS_INVALID_ARGUMENT = 3,
  CTDIFF_STATUS_ASSEMBLE = 4,
  CTDIFF_STATUS_EXECUTION = 5,
  CTDIFF_STATUS_TRACE = 6,
  CTDIFF_STATUS_ANALYSIS = 7,
  CTDIFF_STATUS_PANIC = 8,
} CtdiffStatus;

typedef enum {
  CTDIFF_CLASSIFICATION_NONE = 0,
  CTDIFF_CLASSIFICATION_CF_ONLY = 1,
  CTDIFF_CLASSIFICATION_MEM_ONLY = 2,
  CTDIFF_CLASSIFICATION_BOTH = 3,
} CtdiffClassification;

// An assembled MiniISA program.
typedef struct CtdiffProgram CtdiffProgram;

// An analysis report.
typedef struct CtdiffReport CtdiffReport;

// An ordered set of traces, one per run index.
typedef struct CtdiffTraceSet CtdiffTraceSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ctdiff_version(void);

// Message for the last failed call on this thread, or NULL. Valid until
// the next ctdiff call on the same thread.
const char *ctdiff_last_error(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from a ctdiff call and not have been freed.
void ctdiff_string_free(char *s);

// Assembles MiniISA source text.
//
// # Safety
// `source` must be a NUL-terminated string; `out` must be writable.
CtdiffStatus ctdiff_program_assemble(const char *source, CtdiffProgram **out);

// Assembles one of the built-in fixtures by manifest name.
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be writable.
CtdiffStatus ctdiff_program_fixture(const char *name, CtdiffProgram **out);

// # Safety
// `program` must be NULL or a live handle.
void ctdiff_program_free(CtdiffProgram *program);

// Creates an empty trace set for traces added with
// [`ctdiff_trace_set_push`].
//
// # Safety
// `out` must be writable.
CtdiffStatus ctdiff_trace_set_new(CtdiffTraceSet **out);

// Runs `program` under run indices `0..runs` and collects the traces.
//
// # Safety
// `program` must be a live handle; `out` must be writable.
CtdiffStatus ctdiff_trace_set_collect(const CtdiffProgram *program,
                                      size_t runs,
                                      CtdiffTraceSet **out);

// Decodes one trace in text form and appends it to `set`.
//
// # Safety
// `set` must be a live handle; `text` a NUL-terminated string.
CtdiffStatus ctdiff_trace_set_push(CtdiffTraceSet *set, const char *text);

// Number of traces in `set`; 0 for NULL.
//
// # Safety
// `set` must be NULL or a live handle.
size_t ctdiff_trace_set_len(const CtdiffTraceSet *set);

// Encodes trace `index` of `set` as text.
//
// # Safety
// `set` must be a live handle; `out` must be writable.
CtdiffStatus ctdiff_trace_set_encode(const CtdiffTraceSet *set, size_t index, char **out);

// # Safety
// `set` must be NULL or a live handle.
void ctdiff_trace_set_free(CtdiffTraceSet *set);

// Diffs every trace in `set` against run 0 and builds a report.
//
// `program` (may be NULL) supplies function symbols. `known_issues` (may
// be NULL) is a known-issue list in text form.
//
// # Safety
// `set` must be a live handle, `program` NULL or a live handle,
// `known_issues` NULL or a NUL-terminated string, `out` writable.
CtdiffStatus ctdiff_analyze(const CtdiffTraceSet *set,
                            const CtdiffProgram *program,
                            size_t window,
                            size_t horizon,
                            const char *known_issues,
                            CtdiffReport **out);

// # Safety
// `report` must be a live handle; `out` must be writable.
CtdiffStatus ctdiff_report_classification(const CtdiffReport *report, CtdiffClassification *out);

// Number of findings, counting filtered ones only when asked.
//
// # Safety
// `report` must be a live handle; `out` must be writable.
CtdiffStatus ctdiff_report_finding_count(const CtdiffReport *report,
                                         bool include_filtered,
                                         size_t *out);

// The report as pretty-printed JSON.
//
// # Safety
// `report` must be a live handle; `out` must be writable.
CtdiffStatus ctdiff_report_to_json(const CtdiffReport *report, char **out);

// # Safety
// `report` must be NULL or a live handle.
void ctdiff_report_free(CtdiffReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTDIFF_H */
