/* Loads a checkpoint, stages a synthetic night and checks error paths. */
#include <math.h>
#include <stdio.h>
#include <string.h>

#include "somnoflow.h"

#define SAMPLES (40 * 30 + 7)

int main(int argc, char **argv) {
    if (argc != 2) {
        fprintf(stderr, "usage: smoke <checkpoint>\n");
        return 2;
    }
    sf_model *model = NULL;
    if (sf_model_load("/nonexistent/model.ckpt", &model) != SF_STATUS_IO || model != NULL) {
        fprintf(stderr, "missing file not reported as IO\n");
        return 1;
    }
    if (sf_model_load(argv[1], &model) != SF_STATUS_OK) {
        fprintf(stderr, "load: %s\n", sf_last_error());
        return 1;
    }

    static double hr[SAMPLES];
    static uint8_t quality[SAMPLES];
    for (size_t i = 0; i < SAMPLES; i++) {
        hr[i] = 62.0 + 10.0 * sin((double)i / 120.0);
        quality[i] = (i % 97 == 0) ? 2 : 0;
    }

    size_t n = sf_epoch_count(SAMPLES);
    double p_wake[64];
    uint8_t stages[64];
    size_t got = 0;
    sf_status st = sf_predict(model, hr, quality, SAMPLES, p_wake, stages, 64, &got);
    if (st != SF_STATUS_OK || got != n || n != 40) {
        fprintf(stderr, "predict: status %d, %zu epochs: %s\n", (int)st, got, sf_last_error());
        return 1;
    }
    for (size_t e = 0; e < n; e++) {
        if (!(p_wake[e] >= 0.0 && p_wake[e] <= 1.0) || stages[e] != (p_wake[e] > 0.5)) {
            fprintf(stderr, "epoch %zu: p_wake %f stage %u\n", e, p_wake[e], stages[e]);
            return 1;
        }
    }
    if (sf_predict(model, hr, quality, SAMPLES, p_wake, stages, 10, &got) != SF_STATUS_BUFFER_TOO_SMALL
        || strlen(sf_last_error()) == 0) {
        fprintf(stderr, "small buffer not reported\n");
        return 1;
    }
    printf("somnoflow %s: %zu epochs staged\n", sf_version(), n);
    sf_model_free(model);
    return 0;
}
