#include <math.h>
#include <stdio.h>
#include <string.h>

#include "gripassist.h"

#define CHECK(cond)                                              \
    do {                                                         \
        if (!(cond)) {                                           \
            fprintf(stderr, "%s:%d: %s\n", __FILE__, __LINE__, #cond); \
            return 1;                                            \
        }                                                        \
    } while (0)

int main(void) {
    double d[2];
    CHECK(ga_numpad_direction("9", d) == GA_STATUS_OK);
    CHECK(fabs(d[0] - sqrt(0.5)) < 1e-12 && fabs(d[1] - sqrt(0.5)) < 1e-12);

    CHECK(ga_session_new(NULL, 0, 7, NULL) == GA_STATUS_NULL_POINTER);
    CHECK(ga_last_error() != NULL);

    GaSession *s = NULL;
    CHECK(ga_session_new("{not json", 0, GA_MODE_MANUAL, &s) == GA_STATUS_PARSE);
    CHECK(s == NULL);

    CHECK(ga_session_new(NULL, 0, GA_MODE_ASSISTED, &s) == GA_STATUS_OK);
    GaState st;
    CHECK(ga_session_state(s, &st) == GA_STATUS_OK);
    double y0 = st.y;
    for (int i = 0; i < 10; i++) {
        CHECK(ga_session_tick(s, 0.0, -50.0, GA_APERTURE_KEY_HOLD, &st) == GA_STATUS_OK);
    }
    CHECK(st.tick == 10);
    CHECK(st.y < y0);
    CHECK(st.grasp_id >= 0);

    char *setup = NULL;
    CHECK(ga_session_setup_json(s, &setup) == GA_STATUS_OK);
    CHECK(strstr(setup, "\"candidates\"") != NULL);
    ga_string_free(setup);
    ga_session_free(s);
    printf("ok %s\n", ga_version());
    return 0;
}
