#include <stdio.h>
#include <string.h>
#include "splatbalance.h"

int main(void) {
    SbSkewParams p;
    if (sb_skew_default(&p) != SB_STATUS_OK) return 10;
    p.tiles = 300;
    SbLoads *loads = NULL;
    if (sb_loads_generate(&p, &loads) != SB_STATUS_OK) return 11;
    for (uint32_t v = SB_KERNEL_VARIANT_NAIVE; v <= SB_KERNEL_VARIANT_SHARED_MEM_OPT; v++) {
        SbSimMetrics m;
        if (sb_simulate(loads, v, NULL, NULL, &m) != SB_STATUS_OK) return 12;
        printf("%u %.17g %llu\n", m.variant, m.makespan, (unsigned long long)m.tasks);
    }
    SbSimMetrics m;
    if (sb_simulate(loads, 99, NULL, NULL, &m) != SB_STATUS_INVALID_INPUT) return 13;
    char msg[256];
    sb_last_error_message(msg, sizeof msg);
    printf("error %s\n", msg);
    sb_loads_free(loads);

    SbScene *scene = NULL;
    if (sb_scene_load("/nonexistent.json", &scene) != SB_STATUS_IO || scene != NULL) return 14;
    return 0;
}
