#include <math.h>
#include <stdio.h>
#include "twisted_reeb.h"

int main(void) {
    TrSystem *sys = NULL;
    if (tr_system_sphere(2, 1.0, 1, &sys) != TR_STATUS_OK) return 1;
    double x0[4] = {1.0, 0.0, 0.0, 0.0};
    TrOrbit *orbit = NULL;
    if (tr_orbit_refine(sys, x0, 4, 3.0, 0.0, 0, &orbit) != TR_STATUS_OK) return 2;
    TrOrbitInfo info;
    if (tr_orbit_info(orbit, &info) != TR_STATUS_OK) return 3;
    if (fabs(info.tau - 3.14159265358979) > 1e-8) return 4;
    double h;
    if (tr_system_energy(sys, x0, 3, &h) != TR_STATUS_DIMENSION_MISMATCH) return 5;
    char msg[128];
    tr_last_error(msg, sizeof msg);
    printf("%s tau=%.12f (%s)\n", tr_version(), info.tau, msg);
    tr_orbit_free(orbit);
    tr_system_free(sys);
    return 0;
}
