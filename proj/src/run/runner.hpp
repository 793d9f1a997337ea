#pragma once

#include <atomic>
#include <functional>

#include "../plan/plan.hpp"
#include "channels.hpp"
#include "interp.hpp"

namespace fraglow::run {

struct RunOptions {
    uint64_t seed = 0;
    dfg::LoopSpec loop;
    int64_t latency_us = 0;    // injected delay per tcp send
    int64_t timeout_ms = 30000;
};

struct UnitReport {
    std::vector<double> episode_reward_sum;
    int64_t env_count = 0;
    int64_t steps = 0;
    int64_t grad_messages = 0;
    std::vector<double> final_params;
};

// Streams are derived deterministically from the plan on every participant,
// so no id negotiation happens on the wire.
struct StreamTable {
    struct Info {
        int plan_channel = -1;
        int datum = 0;
        int from_unit = -1, to_unit = -1;
        bool async = false;
    };
    std::vector<Info> streams;
    std::map<std::tuple<int, int, int, int>, uint32_t> index;

    static StreamTable build(const plan::PlacementPlan& p);
    uint32_t id(int channel, int datum, int from, int to) const;
};

// Per-process runtime context shared by the unit threads.
struct RunnerShared {
    const dfg::DataflowGraph* graph = nullptr;
    const plan::PlacementPlan* plan = nullptr;
    RunOptions opts;
    ChannelHub hub;
    StreamTable streams;
    std::set<int> local_units;

    // Remote delivery; unset in pure local mode.
    std::function<void(uint32_t stream, uint32_t tag, const Tensor&, bool async)> remote_send;

    std::mutex bytes_mu;
    std::map<int, int64_t> bytes_per_channel;
    void account(int channel, const Tensor& t);
    int64_t bytes_total();

    // Injected network latency, charged once per burst of frames: packets
    // pipeline in flight, so fan-out costs one delay, not one per peer.
    void latency_burst(bool any_remote) const;

    // Episode lockstep gate, raised by the driver.
    std::mutex gate_mu;
    std::condition_variable gate_cv;
    int64_t gate_episode = -1;
    void raise_gate(int64_t ep);
    void wait_gate(int64_t ep, int64_t timeout_ms);

    std::function<void(int unit, int64_t ep)> on_episode_done;

    std::mutex err_mu;
    std::string first_error;
    void record_error(const std::string& msg);

    // Delivery into this process (from a local unit or the network).
    void deliver_local(uint32_t stream, uint32_t tag, Tensor t, bool async);
};

// Thread body for one execution unit.
void run_unit(RunnerShared& ctx, int unit_id, UnitReport& report);

struct RunMetrics {
    struct Episode {
        double wall_ms = 0.0;
        double reward = 0.0;
        int64_t bytes_total = 0;
    };
    std::vector<Episode> episodes;
    std::map<int, int64_t> bytes_per_channel;
    int64_t grad_messages = 0;
    int64_t steps = 0;
    std::vector<double> final_params;

    std::string to_csv() const;
};

// Runs every unit of the plan in this process on one thread per unit.
RunMetrics run_plan_local(const dfg::DataflowGraph& g, const plan::PlacementPlan& p,
                          const RunOptions& opts);

}  // namespace fraglow::run
