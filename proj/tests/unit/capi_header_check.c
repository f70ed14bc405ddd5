/* The public header must compile as C. */
#include "twincov/twincov.h"

int twincov_header_is_c(void) {
    twincov_matrix* m = NULL;
    double v[2] = {1.0, 2.0};
    if (twincov_matrix_create(1, 2, v, &m) != TWINCOV_OK) return 0;
    int ok = twincov_matrix_cols(m) == 2;
    twincov_matrix_free(m);
    return ok;
}
