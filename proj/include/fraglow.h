/* fraglow C API: RL dataflow programs, fragment plans, local and
 * distributed execution behind opaque handles. All functions return 0 on
 * success or a nonzero error code; flw_last_error() describes the failure
 * for the calling thread. Strings returned through out-parameters are
 * heap-allocated and released with flw_string_free(). */
#ifndef FRAGLOW_H
#define FRAGLOW_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct flw_program flw_program;

enum {
    FLW_OK = 0,
    FLW_ERR_CONFIG = 2,  /* bad configuration or policy not applicable */
    FLW_ERR_RUNTIME = 3, /* execution failure */
    FLW_ERR_BIND = 4,    /* worker cannot bind its listen address */
    FLW_ERR_CHECK = 5    /* self-check found failures */
};

enum {
    FLW_DUMP_DFG = 0,  /* dataflow graph JSON */
    FLW_DUMP_FDG = 1,  /* fragmented dataflow graph JSON */
    FLW_DUMP_PLAN = 2, /* placement plan JSON */
    FLW_DUMP_DOT = 3   /* FDG in DOT format */
};

typedef struct {
    uint64_t seed;
    int64_t episodes;        /* 0: take from the algorithm config */
    int64_t latency_us;      /* injected delay per tcp send */
    int64_t timeout_ms;      /* 0: default (30s) */
    double reward_threshold; /* <0: no threshold tracking */
    int unpartitioned;       /* nonzero: run the plain single-process interpreter */
} flw_run_options;

/* Builds the annotated dataflow graph, the FDG and the placement plan from
 * two JSON configuration documents. */
int flw_program_create(const char* algo_json, const char* deploy_json, flw_program** out);
void flw_program_destroy(flw_program* p);

int flw_program_dump(const flw_program* p, int what, char** out_text);

/* Structural plan validation; out_report lists violations as JSON. */
int flw_validate_plan(const flw_program* p, char** out_report, int* n_violations);

/* Runs every fragment instance in this process. metrics_csv has the schema
 * episode,wall_ms,reward,bytes_total; summary_json carries final reward,
 * bytes per channel, gradient message counts, a parameter checksum and
 * time-to-threshold when requested. */
int flw_run_local(const flw_program* p, const flw_run_options* opts, char** metrics_csv,
                  char** summary_json);

/* Drives the workers listed in the deployment config. */
int flw_run_distributed(const flw_program* p, const flw_run_options* opts, char** metrics_csv,
                        char** summary_json);

/* Serves a worker until a Shutdown message arrives. The _notify variant
 * writes "<port>\n" to ready_fd once the listener is bound. */
int flw_worker_serve(const char* listen_addr);
int flw_worker_serve_notify(const char* listen_addr, int ready_fd);

/* Gradient checks, collective fuzz, wire round trips, partition
 * properties. *ok is 1 when everything passed. inject_grad_bug deliberately
 * corrupts a gradient to prove the check catches it. */
int flw_self_check(int inject_grad_bug, char** report, int* ok);

void flw_string_free(char* s);
const char* flw_last_error(void);

#ifdef __cplusplus
}
#endif

#endif /* FRAGLOW_H */
