#include <stdio.h>
#include <string.h>
#include "vep.h"

static const char *TWO_POINT =
    "[[support]]\nperiod_ms = 100\nprobability = 0.5\n"
    "[[support]]\nperiod_ms = 300\nprobability = 0.5\n";

int main(void) {
    VepDistribution *d = NULL;
    double w = 0.0;
    if (vep_dist_parse(TWO_POINT, &d) != VEP_STATUS_OK) return 1;
    if (vep_waiting_mean(d, &w) != VEP_STATUS_OK) return 2;
    vep_dist_free(d);
    if (w < 124.999 || w > 125.001) return 3;

    if (vep_dist_parse("broken [", &d) != VEP_STATUS_PARSE) return 4;
    if (vep_last_error() == NULL || strlen(vep_last_error()) == 0) return 5;

    VepLocalchain *c = NULL;
    size_t n = 0;
    if (vep_localchain_new(1, &c) != VEP_STATUS_OK) return 6;
    vep_localchain_len(c, &n);
    vep_localchain_free(c);
    if (n != 1) return 7;

    printf("%.3f\n", w);
    return 0;
}
