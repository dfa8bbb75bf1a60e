#include <math.h>
#include <stdio.h>
#include "aisc.h"

int main(void) {
    double xy[10] = {0, 0, 1, 0, 0, 1, 2, 3, -1, 2};
    /* the same points under x' = 2x + y + 5, y' = -x + 3y - 1 */
    double moved[10];
    for (int i = 0; i < 5; i++) {
        double x = xy[2 * i], y = xy[2 * i + 1];
        moved[2 * i] = 2 * x + y + 5;
        moved[2 * i + 1] = -x + 3 * y - 1;
    }
    AiscShape *a = NULL, *b = NULL;
    if (aisc_shape_new(xy, 5, &a) != AISC_STATUS_OK) return 10;
    if (aisc_shape_new(moved, 5, &b) != AISC_STATUS_OK) return 11;
    double norm = -1, angles[2];
    if (aisc_compare(a, b, true, NULL, &norm, angles) != AISC_STATUS_OK) return 12;
    if (!(norm <= 1e-8)) return 13;

    double grad_a[10], grad_b[10], upstream[25] = {0};
    upstream[1] = 1.0;
    if (aisc_backward(a, b, true, AISC_BACKWARD_PATH_PROJECTOR, upstream, grad_a, grad_b) != AISC_STATUS_OK) return 14;

    double line[6] = {0, 0, 1, 1, 2, 2};
    AiscShape *bad = NULL;
    if (aisc_shape_new(line, 3, &bad) != AISC_STATUS_DEGENERATE) return 15;
    char msg[256];
    size_t n = aisc_last_error_message(msg, sizeof msg);
    if (n == 0 || msg[0] == 0) return 16;
    if (aisc_compare(NULL, b, true, NULL, &norm, NULL) != AISC_STATUS_NULL_ARGUMENT) return 17;

    aisc_shape_free(a);
    aisc_shape_free(b);
    aisc_shape_free(NULL);
    printf("norm=%g angle0=%g\n", norm, angles[0]);
    return 0;
}
