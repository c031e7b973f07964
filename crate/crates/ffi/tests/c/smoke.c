/* Copyright 2026 The ctdiff Authors
 * SPDX-License-Identifier: Apache-2.0 */

#include <stdio.h>
#include <string.h>

#include "ctdiff.h"

#define CHECK(call)                                                        \
  do {                                                                     \
    CtdiffStatus s_ = (call);                                              \
    if (s_ != CTDIFF_STATUS_OK) {                                          \
      fprintf(stderr, "%s: %d %s\n", #call, (int)s_, ctdiff_last_error()); \
      return 1;                                                            \
    }                                                                      \
  } while (0)

static int classify(const char *fixture, CtdiffClassification *out) {
  CtdiffProgram *program = NULL;
  CtdiffTraceSet *set = NULL;
  CtdiffReport *report = NULL;
  CHECK(ctdiff_program_fixture(fixture, &program));
  CHECK(ctdiff_trace_set_collect(program, 8, &set));
  CHECK(ctdiff_analyze(set, program, 8, 4096, NULL, &report));
  CHECK(ctdiff_report_classification(report, out));
  char *json = NULL;
  CHECK(ctdiff_report_to_json(report, &json));
  if (strstr(json, "\"classification\"") == NULL) return 1;
  ctdiff_string_free(json);
  ctdiff_report_free(report);
  ctdiff_trace_set_free(set);
  ctdiff_program_free(program);
  return 0;
}

int main(void) {
  CtdiffClassification c;
  if (classify("select_leaky", &c) || c != CTDIFF_CLASSIFICATION_CF_ONLY) return 2;
  if (classify("modexp_sel_leaky", &c) || c != CTDIFF_CLASSIFICATION_MEM_ONLY) return 3;
  if (classify("select_ct", &c) || c != CTDIFF_CLASSIFICATION_NONE) return 4;

  CtdiffProgram *bad = NULL;
  if (ctdiff_program_assemble("frob r1", &bad) != CTDIFF_STATUS_ASSEMBLE) return 5;
  if (bad != NULL || ctdiff_last_error() == NULL) return 6;
  printf("ok %s\n", ctdiff_version());
  return 0;
}
