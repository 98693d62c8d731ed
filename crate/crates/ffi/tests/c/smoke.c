/* Exercises the C header against the shared library.
   Usage: smoke <checkpoint>. Exit status 0 on success. */
#include <math.h>
#include <stdio.h>
#include <string.h>

#include "ugac.h"

#define CHECK(cond)                                                        \
  do {                                                                     \
    if (!(cond)) {                                                         \
      fprintf(stderr, "%s:%d: %s (last error: %s)\n", __FILE__, __LINE__, \
              #cond, ugac_last_error());                                   \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(int argc, char **argv) {
  double v = 0.0;
  CHECK(argc == 2);
  CHECK(ugac_lgamma(5.0, &v) == UGAC_STATUS_OK);
  CHECK(fabs(v - log(24.0)) < 1e-10);
  CHECK(ugac_lgamma(-1.0, &v) == UGAC_STATUS_NUMERICAL_ERROR);
  CHECK(strstr(ugac_last_error(), "lgamma") != NULL);
  CHECK(ugac_digamma(1.0, NULL) == UGAC_STATUS_NULL_POINTER);

  double recon[4] = {0.1, 0.5, 0.9, 0.3};
  double target[4] = {0.2, 0.5, 0.4, 0.0};
  double ones[4] = {1.0, 1.0, 1.0, 1.0};
  double g[4];
  CHECK(ugac_l_alpha_beta(recon, ones, ones, target, 4, &v, g, NULL, NULL) == UGAC_STATUS_OK);
  CHECK(fabs(v - (0.1 + 0.0 + 0.5 + 0.3) / 4.0) < 1e-12);
  CHECK(g[0] == -0.25 && g[2] == 0.25);

  double img[16 * 16], out[16 * 16], sig[16 * 16];
  for (int i = 0; i < 16 * 16; i++) img[i] = (double)((i * 7) % 16) / 15.0;
  CHECK(ugac_ssim(img, img, 16, 16, &v) == UGAC_STATUS_OK && fabs(v - 1.0) < 1e-12);
  CHECK(ugac_psnr(img, img, 16, 16, 1.0, &v) == UGAC_STATUS_OK && isinf(v));

  UgacGenerator *gen = NULL;
  CHECK(ugac_generator_load("/nonexistent.ckpt", &gen) == UGAC_STATUS_DATA_ERROR && gen == NULL);
  CHECK(ugac_generator_load(argv[1], &gen) == UGAC_STATUS_OK && gen != NULL);
  size_t mult = 0;
  CHECK(ugac_generator_size_multiple(gen, &mult) == UGAC_STATUS_OK && 16 % mult == 0);
  CHECK(ugac_generator_translate(gen, img, 16, 16, out) == UGAC_STATUS_OK);
  for (int i = 0; i < 16 * 16; i++) CHECK(out[i] >= 0.0 && out[i] <= 1.0);
  UgacUncertaintyMaps maps = {0};
  maps.sigma_total = sig;
  CHECK(ugac_generator_uncertainty(gen, img, 16, 16, 1, 0, &maps) == UGAC_STATUS_INVALID_ARGUMENT);
  CHECK(ugac_generator_uncertainty(gen, img, 16, 16, 4, 0, &maps) == UGAC_STATUS_OK);
  for (int i = 0; i < 16 * 16; i++) CHECK(sig[i] > 0.0);
  ugac_generator_free(gen);
  ugac_generator_free(NULL);
  printf("ok %s\n", ugac_version());
  return 0;
}
