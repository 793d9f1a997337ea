#include "../include/fraglow.h"

#include <cstring>

#include "../vendor/json.hpp"
#include "config.hpp"
#include "fdgc/fdg.hpp"
#include "run/coordinator.hpp"
#include "run/selfcheck.hpp"
#include "run/worker.hpp"

using namespace fraglow;

struct flw_program {
    dfg::AlgoConfig algo;
    plan::DeploymentConfig deploy;
    dfg::DataflowGraph graph;
    fdgc::FDG fdg;
    plan::PlacementPlan placement;
};

namespace {

thread_local std::string g_last_error;

int code_of(const Error& e) {
    switch (e.code()) {
        case Errc::Config:
        case Errc::UnknownEnv:
        case Errc::PolicyInapplicable:
        case Errc::InsufficientSlots:
        case Errc::NotReplicable:
            return FLW_ERR_CONFIG;
        case Errc::Bind:
            return FLW_ERR_BIND;
        case Errc::CheckFailed:
            return FLW_ERR_CHECK;
        default:
            return FLW_ERR_RUNTIME;
    }
}

template <typename F>
int guarded(F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        g_last_error = std::string(errc_name(e.code())) + ": " + e.what();
        return code_of(e);
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return FLW_ERR_RUNTIME;
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

run::RunOptions to_options(const flw_program* p, const flw_run_options* opts) {
    run::RunOptions o;
    o.loop = p->graph.loop;
    if (opts) {
        o.seed = opts->seed;
        if (opts->episodes > 0) o.loop.episodes = opts->episodes;
        o.latency_us = opts->latency_us;
        if (opts->timeout_ms > 0) o.timeout_ms = opts->timeout_ms;
    }
    return o;
}

std::string summarize(const run::RunMetrics& m, const flw_run_options* opts) {
    nlohmann::ordered_json j;
    j["episodes"] = m.episodes.size();
    j["steps"] = m.steps;
    j["grad_messages"] = m.grad_messages;
    double final_reward = m.episodes.empty() ? 0.0 : m.episodes.back().reward;
    j["final_reward"] = final_reward;
    double total_ms = 0.0;
    for (const auto& e : m.episodes) total_ms += e.wall_ms;
    j["total_wall_ms"] = total_ms;
    int64_t bytes = 0;
    nlohmann::ordered_json per_channel = nlohmann::ordered_json::object();
    for (const auto& [c, b] : m.bytes_per_channel) {
        bytes += b;
        per_channel[std::to_string(c)] = b;
    }
    j["bytes_total"] = bytes;
    j["bytes_per_channel"] = per_channel;
    double sum = 0.0, sumsq = 0.0;
    for (double v : m.final_params) {
        sum += v;
        sumsq += v * v;
    }
    j["param_count"] = m.final_params.size();
    j["param_checksum"] = sum;
    j["param_l2"] = std::sqrt(sumsq);
    if (opts && opts->reward_threshold >= 0.0) {
        double t = -1.0, acc = 0.0;
        for (const auto& e : m.episodes) {
            acc += e.wall_ms;
            if (e.reward >= opts->reward_threshold) {
                t = acc;
                break;
            }
        }
        j["reward_threshold"] = opts->reward_threshold;
        j["time_to_threshold_ms"] = t;
    }
    return j.dump(2);
}

run::RunMetrics metrics_from_local_result(const fdgc::LocalRunResult& r) {
    run::RunMetrics m;
    for (double rew : r.episode_rewards) m.episodes.push_back({0.0, rew, 0});
    m.steps = r.steps;
    m.grad_messages = r.grad_messages;
    m.final_params = r.final_params;
    return m;
}

}  // namespace

extern "C" {

int flw_program_create(const char* algo_json, const char* deploy_json, flw_program** out) {
    return guarded([&] {
        auto p = std::make_unique<flw_program>();
        p->algo = parse_algo_config(algo_json ? algo_json : "{}");
        p->deploy = deploy_json && *deploy_json ? parse_deploy_config(deploy_json)
                                                : plan::DeploymentConfig{{"local"}, 8, 8, plan::Policy::DpA};
        p->graph = dfg::standard_program(p->algo.algorithm, p->algo);
        p->fdg = fdgc::generate_fdg(p->graph);
        p->placement = plan::make_plan(p->fdg, p->deploy, p->algo);
        *out = p.release();
        return FLW_OK;
    });
}

void flw_program_destroy(flw_program* p) { delete p; }

int flw_program_dump(const flw_program* p, int what, char** out_text) {
    return guarded([&] {
        std::string text;
        switch (what) {
            case FLW_DUMP_DFG: text = dfg::dump_json(p->graph); break;
            case FLW_DUMP_FDG: text = fdgc::dump_json(p->fdg); break;
            case FLW_DUMP_PLAN: text = plan::dump_json(p->placement); break;
            case FLW_DUMP_DOT: text = fdgc::dump_dot(p->fdg); break;
            default: fail(Errc::Config, "unknown dump kind");
        }
        *out_text = dup_string(text);
        return FLW_OK;
    });
}

int flw_validate_plan(const flw_program* p, char** out_report, int* n_violations) {
    return guarded([&] {
        auto violations = plan::validate_plan(p->placement, p->deploy);
        nlohmann::ordered_json j = nlohmann::ordered_json::array();
        for (const auto& v : violations) j.push_back({{"code", v.code}, {"message", v.message}});
        if (out_report) *out_report = dup_string(j.dump(2));
        if (n_violations) *n_violations = static_cast<int>(violations.size());
        return FLW_OK;
    });
}

int flw_run_local(const flw_program* p, const flw_run_options* opts, char** metrics_csv,
                  char** summary_json) {
    return guarded([&] {
        run::RunOptions o = to_options(p, opts);
        run::RunMetrics m;
        if (opts && opts->unpartitioned) {
            dfg::DataflowGraph g = p->graph;
            g.loop = o.loop;
            m = metrics_from_local_result(fdgc::run_unpartitioned(g, o.seed));
        } else {
            m = run::run_plan_local(p->graph, p->placement, o);
        }
        if (metrics_csv) *metrics_csv = dup_string(m.to_csv());
        if (summary_json) *summary_json = dup_string(summarize(m, opts));
        return FLW_OK;
    });
}

int flw_run_distributed(const flw_program* p, const flw_run_options* opts, char** metrics_csv,
                        char** summary_json) {
    return guarded([&] {
        run::RunOptions o = to_options(p, opts);
        run::RunMetrics m = run::run_distributed(p->graph, p->placement, p->algo, p->deploy, o);
        if (metrics_csv) *metrics_csv = dup_string(m.to_csv());
        if (summary_json) *summary_json = dup_string(summarize(m, opts));
        return FLW_OK;
    });
}

int flw_worker_serve(const char* listen_addr) {
    return guarded([&] {
        run::serve_worker(listen_addr);
        return FLW_OK;
    });
}

int flw_worker_serve_notify(const char* listen_addr, int ready_fd) {
    return guarded([&] {
        run::serve_worker_notify(listen_addr, ready_fd);
        return FLW_OK;
    });
}

int flw_self_check(int inject_grad_bug, char** report, int* ok) {
    return guarded([&] {
        auto rep = run::self_check(inject_grad_bug != 0);
        if (report) *report = dup_string(rep.text);
        if (ok) *ok = rep.ok ? 1 : 0;
        return rep.ok ? FLW_OK : FLW_ERR_CHECK;
    });
}

void flw_string_free(char* s) { std::free(s); }

const char* flw_last_error(void) { return g_last_error.c_str(); }

}  // extern "C"
