#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "../core/tensor.hpp"

namespace fraglow::envs {

struct EnvSpec {
    std::string name;
    int64_t obs_dim = 1;
    int64_t n_actions = 2;
    int64_t max_steps = 0;  // 0: no internal horizon, runtime drives episode length
    int64_t n_agents = 1;   // spread_lite only
    bool accel_capable = false;
    std::map<std::string, double> params;

    double param(const std::string& k, double dflt) const {
        auto it = params.find(k);
        return it == params.end() ? dflt : it->second;
    }
};

struct EnvState {
    std::vector<double> state;
    int64_t step_count = 0;
    uint64_t rng_counter = 0;
    uint64_t seed = 0;
    bool done = false;
};

struct StepResult {
    double reward = 0.0;             // summed over agents for multi-agent
    std::vector<double> rewards;     // per agent
    std::vector<double> obs;         // [n_agents * obs_dim]
    bool done = false;
};

// Registry names accepted in algorithm configs: gridline | cartpole_lite | spread_lite.
EnvSpec make_spec(const std::string& name, const std::map<std::string, double>& params = {});
bool env_known(const std::string& name);

// Deterministic in (spec, seed): same seed, same initial observation.
EnvState env_reset(const EnvSpec& spec, uint64_t seed, std::vector<double>* obs);

// Deterministic in (state, actions); errors on out-of-range actions and on
// stepping a finished environment.
StepResult env_step(const EnvSpec& spec, EnvState& state, const std::vector<int64_t>& actions);

// Result i == env_step(states[i], actions[i]); order preserved. `parallel`
// fans the loop across threads and must be bit-identical to sequential.
std::vector<StepResult> env_batch_step(const EnvSpec& spec, std::vector<EnvState>& states,
                                       const std::vector<std::vector<int64_t>>& actions,
                                       bool parallel = false);

// Reward for an optimal policy over one episode; calibrates learning checks.
double optimal_episode_reward(const EnvSpec& spec);

}  // namespace fraglow::envs
