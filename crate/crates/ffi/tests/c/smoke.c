#include <stdio.h>
#include <string.h>

#include "eir_eq.h"

static const char *SINGLE =
    "{\"scenarios\": {\"pi\": [0.5, 0.5], \"d_rt\": [75, 125]},"
    " \"generators\": [{\"c\": 0, \"c_f\": 13, \"q\": 150, \"c_i\": [10, 15], \"r\": [0, 0]}],"
    " \"demand\": {\"alpha\": 1, \"participates_da\": false},"
    " \"design\": {\"kind\": \"emo\"}}";

int main(void) {
    EirInstance *inst = NULL;
    if (eir_instance_from_json(SINGLE, &inst) != EIR_STATUS_OK) {
        fprintf(stderr, "parse: %s\n", eir_last_error());
        return 1;
    }
    if (eir_instance_set_design(inst, EIR_DESIGN_KIND_EMIR, 12.0, 90.0) != EIR_STATUS_OK ||
        eir_instance_set_generator_alpha(inst, 0.4) != EIR_STATUS_OK) {
        fprintf(stderr, "update: %s\n", eir_last_error());
        return 1;
    }
    EirSolveOptions opts = eir_solve_options_default();
    EirSolution *sol = NULL;
    if (eir_solve(inst, &opts, &sol) != EIR_STATUS_OK) {
        fprintf(stderr, "solve: %s\n", eir_last_error());
        return 2;
    }
    double gap = 0.0;
    if (eir_solution_certify(sol, &gap) != EIR_STATUS_OK) {
        fprintf(stderr, "certify: %s\n", eir_last_error());
        return 3;
    }
    EirSummary s;
    eir_solution_summary(sol, &s);
    double prices[4];
    size_t n = 4;
    eir_solution_lam_rt(sol, prices, &n);
    printf("v_da %.4f g_da %.4f e %.4f scenarios %zu lam_rt2 %.4f\n", s.total_v_da, s.total_g_da,
           s.total_e, n, prices[1]);

    double missing;
    int bad = eir_solution_variable(sol, "nope", &missing) != EIR_STATUS_UNKNOWN_NAME ||
              strlen(eir_last_error()) == 0;
    eir_solution_free(sol);
    eir_instance_free(inst);
    return bad ? 4 : 0;
}
