#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "../compute/mlp.hpp"

namespace fraglow::rl {

struct Hyperparams {
    double gamma = 0.97;        // discount, (0, 1]
    double lam = 0.95;          // GAE lambda, [0, 1]
    double clip_eps = 0.2;      // PPO clip, (0, 1)
    double lr = 3e-3;
    int64_t train_iters = 4;    // PPO epochs per episode
    double value_coef = 0.5;
    double entropy_coef = 0.01;
    bool normalize_adv = true;

    void validate() const;
};

struct StepRecord {
    std::vector<double> state;
    int64_t action = 0;
    double reward = 0.0;
    std::vector<double> next_state;
    bool done = false;
    double logp = 0.0;
    double value = 0.0;
};

// R_t = r_t + gamma * R_{t+1}, bootstrapped with last_value; a done flag
// zeroes the tail across episode boundaries.
std::vector<double> discounted_return(const std::vector<double>& rewards,
                                      const std::vector<uint8_t>& dones, double last_value,
                                      double gamma);

// delta_t = r_t + gamma * V_{t+1} - V_t, A_t = delta_t + gamma * lam * A_{t+1}.
std::vector<double> gae(const std::vector<double>& rewards, const std::vector<double>& values,
                        const std::vector<uint8_t>& dones, double last_value, double gamma,
                        double lam);

// Interleaved multi-stream variants over t-major [T*E] rows; stream i of E
// owns rows t*E + i. Used by the learner over gathered batches.
std::vector<double> discounted_return_streams(const std::vector<double>& rewards,
                                              const std::vector<uint8_t>& dones,
                                              const std::vector<double>& last_values, double gamma,
                                              int64_t n_streams);
std::vector<double> gae_streams(const std::vector<double>& rewards, const std::vector<double>& values,
                                const std::vector<uint8_t>& dones,
                                const std::vector<double>& last_values, double gamma, double lam,
                                int64_t n_streams);

// In-place (x - mean) / (std + 1e-8); skipped when std < 1e-8.
void normalize_advantages(std::vector<double>& adv);

// Loss terms shared by the function-level API and the graph executor: value
// and gradient of the mean-reduced loss with respect to logits and values.
struct LossTerms {
    double loss = 0.0;
    Tensor dlogits;               // [N, A]
    std::vector<double> dvalues;  // [N]
};

// Clipped PPO surrogate + value MSE + entropy bonus. Advantages and returns
// are treated as constants.
LossTerms ppo_loss_core(const Tensor& logits, const std::vector<double>& values,
                        const std::vector<int64_t>& actions, const std::vector<double>& logp_old,
                        const std::vector<double>& advantages, const std::vector<double>& returns,
                        const Hyperparams& h);

// A3C: policy gradient with advantage = R - V (constant for the policy term),
// plus value MSE and entropy bonus.
LossTerms a3c_loss_core(const Tensor& logits, const std::vector<double>& values,
                        const std::vector<int64_t>& actions, const std::vector<double>& returns,
                        const Hyperparams& h);

struct PolicyGrads {
    double loss = 0.0;
    compute::MlpParams policy;
    compute::MlpParams value;
};

// Full PPO loss and gradients through the given nets on a batch of records.
PolicyGrads ppo_loss(const compute::MlpParams& policy, const compute::MlpParams& value_net,
                     const std::vector<StepRecord>& batch, const std::vector<double>& returns,
                     const std::vector<double>& advantages, const Hyperparams& h);

// A3C actor-side gradients over one local trajectory (single environment).
PolicyGrads a3c_actor_grads(const compute::MlpParams& policy, const compute::MlpParams& value_net,
                            const std::vector<StepRecord>& trajectory, const Hyperparams& h);

// Central critic over joint observations; one value per agent, evaluated
// with the agent's one-hot appended to the joint block.
std::vector<double> mappo_central_critic_eval(const compute::MlpParams& critic,
                                              const std::vector<double>& joint_obs, int64_t n_agents);

// Bounded FIFO of record batches; sampling drains in insertion order.
class ReplayBuffer {
  public:
    explicit ReplayBuffer(size_t capacity = 0) : capacity_(capacity) {}

    void insert(std::vector<StepRecord> batch);
    std::vector<StepRecord> sample();  // drains everything, FIFO order
    size_t size() const { return batches_.size(); }
    bool empty() const { return batches_.empty(); }
    void clear() { batches_.clear(); }

  private:
    size_t capacity_;
    std::deque<std::vector<StepRecord>> batches_;
};

}  // namespace fraglow::rl
