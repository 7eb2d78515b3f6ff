#include <math.h>
#include <stdio.h>
#include "pearcey.h"

int main(void) {
    double taus[2] = {-0.3, 0.4};
    PearceyKernelHandle *k = NULL;
    if (pearcey_kernel_new(taus, 2, 1, &k) != PEARCEY_STATUS_OK) return 1;

    double bounds[4] = {-1.0, 0.5, 0.0, 1.0};
    size_t counts[2] = {1, 1};
    PearceySystemHandle *sys = NULL;
    if (pearcey_system_new(k, bounds, counts, 16, &sys) != PEARCEY_STATUS_OK) return 2;
    pearcey_kernel_free(k);

    double det = -1.0;
    if (pearcey_system_gap_probability(sys, &det) != PEARCEY_STATUS_OK) return 3;
    if (!(det > 0.0 && det < 1.0)) return 4;

    double grad[4];
    size_t len = 0;
    if (pearcey_system_log_det_gradient(sys, grad, 4, &len) != PEARCEY_STATUS_OK || len != 4) return 5;
    pearcey_system_free(sys);

    double re[2], im[2];
    if (pearcey_roots(2, re, im, 2, &len) != PEARCEY_STATUS_OK) return 6;
    if (fabs(re[0] - 0.5) > 1e-12 || fabs(im[1] - 0.5) > 1e-12) return 7;

    if (pearcey_kernel_new(taus, 2, 0, &k) != PEARCEY_STATUS_INVALID_ARGUMENT) return 8;
    if (pearcey_last_error()[0] == '\0') return 9;
    printf("%.17g\n", det);
    return 0;
}
