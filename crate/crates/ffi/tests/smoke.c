#include <math.h>
#include <stdio.h>
#include "attnsphere.h"

int main(void) {
    double t = 0.0;
    if (attn_threshold_crossing_time(ATTN_MODEL_SA, 32, 1.0, 0.0, 0.999, &t) != ATTN_STATUS_OK) {
        return 1;
    }
    AttnConfiguration *cfg = NULL;
    if (attn_configuration_uniform(6, 3, 7, &cfg) != ATTN_STATUS_OK) {
        return 2;
    }
    AttnTrajectory *traj = NULL;
    if (attn_integrate(cfg, ATTN_MODEL_SA, 1.0, ATTN_METHOD_PROJECTED_RK4, 0.05, 40.0, 0, 0.999, &traj)
        != ATTN_STATUS_OK) {
        return 3;
    }
    size_t len = attn_trajectory_len(traj);
    double min_ip[4096];
    size_t needed = 0;
    if (attn_trajectory_series(traj, "min_pairwise", min_ip, 4096, &needed) != ATTN_STATUS_OK || needed != len) {
        return 4;
    }
    double c = 0.0;
    AttnStatus bad = attn_longcontext_correlation(2.0, 1.0, 1e8, &c);
    const char *msg = attn_last_error();
    printf("%.17g %zu %.17g %d %s\n", t, len, min_ip[len - 1], (int)bad, msg ? msg : "");
    attn_trajectory_free(traj);
    attn_configuration_free(cfg);
    return 0;
}
