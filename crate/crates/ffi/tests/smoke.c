#include <stdio.h>
#include <string.h>

#include "motioncache.h"

static const char *CONFIG =
    "{\"scenario\": {\"frames_per_chunk\": 2, \"num_chunks\": 1, \"height\": 5, \"width\": 5,"
    " \"blob_radius\": 1.5, \"blob_start\": [2, 2], \"blob_velocity\": [0, 0.5]},"
    " \"schedule\": {\"total_steps\": 6, \"window\": 1},"
    " \"policies\": [{\"kind\": \"vanilla\"}, {\"kind\": \"chunk-level\", \"m\": 1}]}";

int main(void) {
    McEngine *engine = NULL;
    if (mc_engine_new(CONFIG, &engine) != MC_STATUS_OK) {
        fprintf(stderr, "new: %s\n", mc_last_error_message());
        return 1;
    }
    char *summary = NULL;
    if (mc_engine_run(engine, NULL, &summary) != MC_STATUS_OK) {
        fprintf(stderr, "run: %s\n", mc_last_error_message());
        return 1;
    }
    if (strstr(summary, "\"chunk-level\"") == NULL) {
        fprintf(stderr, "summary lacks the chunk-level run\n");
        return 1;
    }
    mc_string_free(summary);

    McEngine *bad = NULL;
    if (mc_engine_new("{\"seeds\": []}", &bad) != MC_STATUS_CONFIG || bad != NULL) {
        fprintf(stderr, "empty seed list accepted\n");
        return 1;
    }
    double proxy[3] = {1, 2, 3}, oracle[3] = {1, 2, 3}, v = 0;
    if (mc_ndcg(proxy, oracle, 3, &v) != MC_STATUS_OK || v != 1.0) {
        fprintf(stderr, "ndcg\n");
        return 1;
    }
    mc_engine_free(engine);
    printf("ok %s\n", mc_version());
    return 0;
}
