#include <math.h>
#include <stdio.h>
#include "weingarten.h"

static const char *CONFIG =
    "k = 1\n"
    "cap_radius = 1.0\n"
    "rings = 8\n"
    "sectors = 16\n"
    "psi = \"0.8\"\n"
    "[sphere]\n"
    "center = [0.0, 0.0, 0.2]\n"
    "radius = 1.0\n";

int main(void) {
    WgConfig *cfg = NULL;
    WgSolution *sol = NULL;
    double kappa[2] = {1.0, 3.0};
    double s = 0.0, res = 1.0;

    if (wg_elem_sym_norm(kappa, 2, 1, &s) != WG_STATUS_OK || fabs(s - 2.0) > 1e-15) return 1;
    if (wg_config_from_toml(CONFIG, &cfg) != WG_STATUS_OK) {
        fprintf(stderr, "%s\n", wg_last_error());
        return 2;
    }
    if (wg_solve(cfg, &sol) != WG_STATUS_OK) {
        fprintf(stderr, "%s\n", wg_last_error());
        return 3;
    }
    if (wg_solution_node_count(sol) != 1 + 8 * 16) return 4;
    if (wg_solution_residual(sol, &res) != WG_STATUS_OK || !(res < 1e-9)) return 5;
    wg_solution_free(sol);
    wg_config_free(cfg);
    printf("ok\n");
    return 0;
}
