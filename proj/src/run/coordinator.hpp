#pragma once

#include "runner.hpp"

namespace fraglow::run {

// Drives a distributed run: Hello / LoadFragment handshake with every
// worker, per-episode barriers, tensor routing between workers, metrics
// collection and Shutdown.
RunMetrics run_distributed(const dfg::DataflowGraph& g, const plan::PlacementPlan& p,
                           const dfg::AlgoConfig& algo, const plan::DeploymentConfig& deploy,
                           const RunOptions& opts);

}  // namespace fraglow::run
