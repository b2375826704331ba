/* Compiled as C: the public header must not need a C++ compiler. */
#include <stdio.h>
#include <string.h>

#include "ffield/ffield.h"

int main(void) {
  ff_train_options train;
  ff_model* model = NULL;
  ff_status status;

  if (ff_version() == NULL || ff_version()[0] == '\0') return 1;
  if (strcmp(ff_status_name(FF_NOT_FOUND), "not found") != 0) {
    fprintf(stderr, "unexpected status name %s\n", ff_status_name(FF_NOT_FOUND));
    return 1;
  }
  ff_train_options_default(&train);
  if (train.iterations <= 0 || train.samples <= 0) return 1;

  status = ff_model_load("/nonexistent/model.ffld", &model);
  if (status == FF_OK || model != NULL) return 1;
  if (ff_last_error()[0] == '\0') return 1;
  printf("ffield %s: C header ok (%s)\n", ff_version(), ff_status_name(status));
  return 0;
}
