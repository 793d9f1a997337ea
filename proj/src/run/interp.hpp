#pragma once

#include <functional>
#include <map>
#include <memory>
#include <set>

#include "../dfg/programs.hpp"
#include "../envs/envs.hpp"

namespace fraglow::run {

using dfg::DataflowGraph;
using dfg::NodeId;
using dfg::OpNode;
using dfg::Phase;

struct ExecContext {
    int64_t episode = 0;
    int64_t step = 0;
    int64_t train_iter = 0;
};

// Hook between GradCompute and OptimStep; distribution policies use it for
// gradient aggregation across learner replicas.
using GradSync = std::function<std::vector<double>(const std::vector<double>&, const ExecContext&)>;

envs::EnvSpec env_spec_from_node(const OpNode& n);

// Evaluates an owned subset of a dataflow graph, holding all stateful node
// state: parameters and optimizer moments, environment instances for an env
// index range, replay buffer contents, and the per-episode sample cache.
// The same engine runs the unpartitioned oracle and every fragment instance.
class Interp {
  public:
    Interp(const DataflowGraph* g, std::set<NodeId> owned, uint64_t run_seed, int64_t env_lo,
           int64_t env_hi, int64_t env_total);

    // Whole-graph executor owning every node and all environments.
    static Interp whole(const DataflowGraph* g, uint64_t run_seed);

    // Nodes whose values arrive from outside (channel entries, loop inputs);
    // eval skips them.
    void mark_external(NodeId id);

    void bind(NodeId id, Tensor value);
    bool has_value(NodeId id) const { return values_.count(id) > 0; }
    const Tensor& value(NodeId id) const;

    // Evaluates every owned node of `phase` in topological order.
    void eval_phase(Phase phase, const ExecContext& ctx);

    void set_grad_sync(GradSync fn) { grad_sync_ = std::move(fn); }

    // Learn-phase repeat count: max train_iters over owned optimizer nodes.
    int64_t learn_iters() const;

    // Parameter access for synchronization channels.
    std::vector<double> flat_params(const std::vector<NodeId>& params) const;
    void write_flat_params(const std::vector<NodeId>& params, const std::vector<double>& flat);

    int64_t env_count() const { return env_hi_ - env_lo_; }
    int64_t env_lo() const { return env_lo_; }
    double episode_reward_sum() const { return episode_reward_sum_; }
    int64_t steps_executed() const { return steps_executed_; }

    const std::set<NodeId>& owned() const { return owned_; }
    const DataflowGraph& graph() const { return *g_; }

  private:
    void eval_node(const OpNode& n, const ExecContext& ctx);
    Tensor backward_flat(const OpNode& grad_node);

    const DataflowGraph* g_;
    std::set<NodeId> owned_;
    std::set<NodeId> external_;
    uint64_t run_seed_;
    int64_t env_lo_, env_hi_, env_total_;

    std::vector<NodeId> topo_;
    std::vector<Phase> phases_;
    std::map<NodeId, Tensor> values_;

    // Stateful node backing.
    struct EnvGroup {
        envs::EnvSpec spec;
        std::vector<envs::EnvState> states;
        std::vector<std::vector<double>> last_obs;  // absorbing copy after done
    };
    std::map<int64_t, EnvGroup> env_groups_;

    struct BufferState {
        std::vector<std::vector<double>> step_blocks;  // row-major [rows, width] per step
        int64_t rows_per_step = 0;
        Tensor cached_sample;
        int64_t cached_episode = -1;
    };
    std::map<int64_t, BufferState> buffers_;

    struct OptimState {
        compute::AdamState adam;
        bool ready = false;
    };
    std::map<NodeId, OptimState> optim_;

    struct LossSide {
        rl::LossTerms terms;
        std::vector<NodeId> inputs;
    };
    std::map<NodeId, LossSide> loss_side_;  // per-eval byproducts for backward

    GradSync grad_sync_;
    double episode_reward_sum_ = 0.0;
    int64_t steps_executed_ = 0;
};

}  // namespace fraglow::run
