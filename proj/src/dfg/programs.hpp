#pragma once

#include "../envs/envs.hpp"
#include "../rl/rl.hpp"
#include "graph.hpp"

namespace fraglow::dfg {

struct AlgoConfig {
    std::string algorithm = "ppo";  // ppo | a3c | mappo
    int64_t agents = 1;
    int64_t actors = 1;  // replica count for the actor/env group
    int64_t envs = 1;    // total environment instances
    std::string env_name = "gridline";
    std::map<std::string, double> env_params;
    std::vector<int64_t> hidden = {16, 16};
    std::string activation = "tanh";
    rl::Hyperparams hyper;
    LoopSpec loop{1, 32};

    void validate() const;
};

// Canonical annotated graphs for the three algorithms. PPO and MAPPO carry
// the five boundaries Reset/Action/Step/Buffer/Learner; A3C swaps the
// trajectory exchange for Grads/Learner gradient exchange.
DataflowGraph standard_program(const std::string& name, const AlgoConfig& cfg);

// Param node ids in flat-gradient order, and their element offsets.
std::vector<NodeId> param_list(const DataflowGraph& g, const OpNode& grad_or_optim);

}  // namespace fraglow::dfg
