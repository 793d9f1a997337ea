#pragma once

#include <string>

#include "../dfg/graph.hpp"

namespace fraglow::run {

struct SelfCheckReport {
    bool ok = true;
    double max_grad_rel_err = 0.0;
    std::vector<std::string> failed;  // names of failing sections
    std::string text;                 // human-readable section report
};

// Gradient checks, in-process collective fuzz, wire round trips and FDG
// partition properties. `inject_grad_bug` drops a gradient term on purpose
// (negative control for the check itself).
SelfCheckReport self_check(bool inject_grad_bug = false);

// Layered random annotated DAG: boundaries cut between layers, every datum
// crosses into exactly one consumer fragment. Up to 50 nodes, 5 boundaries.
dfg::DataflowGraph random_annotated_dag(uint64_t seed);

}  // namespace fraglow::run
