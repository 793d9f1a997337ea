#pragma once

#include "dfg/programs.hpp"
#include "plan/plan.hpp"

namespace fraglow {

// Algorithm configuration: agent/actor/learner/env sections with
// hyper-parameters under learner.params.
dfg::AlgoConfig parse_algo_config(const std::string& json_text);
std::string algo_to_json(const dfg::AlgoConfig& cfg);

// Deployment configuration: worker addresses, slots per worker and the
// distribution policy (short "dp-a" or descriptive spelling).
plan::DeploymentConfig parse_deploy_config(const std::string& json_text);
std::string deploy_to_json(const plan::DeploymentConfig& cfg);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace fraglow
