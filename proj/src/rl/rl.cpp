#include "rl.hpp"

#include <cmath>

namespace fraglow::rl {

void Hyperparams::validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) fail(Errc::Config, "gamma must be in (0,1]");
    if (!(lam >= 0.0 && lam <= 1.0)) fail(Errc::Config, "lam must be in [0,1]");
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) fail(Errc::Config, "clip_eps must be in (0,1)");
    if (train_iters < 1) fail(Errc::Config, "train_iters must be >= 1");
}

std::vector<double> discounted_return(const std::vector<double>& rewards,
                                      const std::vector<uint8_t>& dones, double last_value,
                                      double gamma) {
    int64_t t_len = static_cast<int64_t>(rewards.size());
    std::vector<double> out(t_len);
    double running = last_value;
    for (int64_t t = t_len - 1; t >= 0; --t) {
        if (!dones.empty() && dones[t]) running = 0.0;
        running = rewards[t] + gamma * running;
        out[t] = running;
    }
    return out;
}

std::vector<double> gae(const std::vector<double>& rewards, const std::vector<double>& values,
                        const std::vector<uint8_t>& dones, double last_value, double gamma,
                        double lam) {
    int64_t t_len = static_cast<int64_t>(rewards.size());
    if (values.size() != rewards.size()) fail(Errc::Shape, "gae: lengths differ");
    std::vector<double> out(t_len);
    double acc = 0.0;
    for (int64_t t = t_len - 1; t >= 0; --t) {
        bool done = !dones.empty() && dones[t];
        double next_v = t + 1 < t_len ? values[t + 1] : last_value;
        if (done) {
            next_v = 0.0;
            acc = 0.0;
        }
        double delta = rewards[t] + gamma * next_v - values[t];
        acc = delta + gamma * lam * acc;
        out[t] = acc;
    }
    return out;
}

namespace {

template <typename F>
std::vector<double> per_stream(const std::vector<double>& rewards, int64_t n_streams, F f) {
    int64_t n = static_cast<int64_t>(rewards.size());
    if (n_streams < 1 || n % n_streams != 0) fail(Errc::Shape, "stream count does not divide rows");
    int64_t t_len = n / n_streams;
    std::vector<double> out(n);
    for (int64_t s = 0; s < n_streams; ++s) {
        std::vector<double> res = f(s, t_len);
        for (int64_t t = 0; t < t_len; ++t) out[t * n_streams + s] = res[t];
    }
    return out;
}

}  // namespace

std::vector<double> discounted_return_streams(const std::vector<double>& rewards,
                                              const std::vector<uint8_t>& dones,
                                              const std::vector<double>& last_values, double gamma,
                                              int64_t n_streams) {
    return per_stream(rewards, n_streams, [&](int64_t s, int64_t t_len) {
        std::vector<double> r(t_len), lv;
        std::vector<uint8_t> d(t_len);
        for (int64_t t = 0; t < t_len; ++t) {
            r[t] = rewards[t * n_streams + s];
            d[t] = dones.empty() ? 0 : dones[t * n_streams + s];
        }
        return discounted_return(r, d, last_values[s], gamma);
    });
}

std::vector<double> gae_streams(const std::vector<double>& rewards, const std::vector<double>& values,
                                const std::vector<uint8_t>& dones,
                                const std::vector<double>& last_values, double gamma, double lam,
                                int64_t n_streams) {
    return per_stream(rewards, n_streams, [&](int64_t s, int64_t t_len) {
        std::vector<double> r(t_len), v(t_len);
        std::vector<uint8_t> d(t_len);
        for (int64_t t = 0; t < t_len; ++t) {
            r[t] = rewards[t * n_streams + s];
            v[t] = values[t * n_streams + s];
            d[t] = dones.empty() ? 0 : dones[t * n_streams + s];
        }
        return gae(r, v, d, last_values[s], gamma, lam);
    });
}

void normalize_advantages(std::vector<double>& adv) {
    if (adv.empty()) return;
    double mean = 0.0;
    for (double a : adv) mean += a;
    mean /= static_cast<double>(adv.size());
    double var = 0.0;
    for (double a : adv) var += (a - mean) * (a - mean);
    double std = std::sqrt(var / static_cast<double>(adv.size()));
    if (std < 1e-8) return;
    for (double& a : adv) a = (a - mean) / (std + 1e-8);
}

namespace {

struct RowDist {
    std::vector<double> p;      // softmax probabilities
    std::vector<double> logp;   // log probabilities
    double entropy = 0.0;
};

RowDist row_dist(const Tensor& logits, int64_t row) {
    int64_t a_dim = logits.dim(1);
    RowDist d;
    d.p.resize(a_dim);
    d.logp.resize(a_dim);
    double mx = logits.at(row * a_dim);
    for (int64_t j = 1; j < a_dim; ++j) mx = std::max(mx, logits.at(row * a_dim + j));
    double denom = 0.0;
    for (int64_t j = 0; j < a_dim; ++j) denom += std::exp(logits.at(row * a_dim + j) - mx);
    double log_denom = std::log(denom);
    for (int64_t j = 0; j < a_dim; ++j) {
        d.logp[j] = logits.at(row * a_dim + j) - mx - log_denom;
        d.p[j] = std::exp(d.logp[j]);
        d.entropy -= d.p[j] * d.logp[j];
    }
    return d;
}

}  // namespace

LossTerms ppo_loss_core(const Tensor& logits, const std::vector<double>& values,
                        const std::vector<int64_t>& actions, const std::vector<double>& logp_old,
                        const std::vector<double>& advantages, const std::vector<double>& returns,
                        const Hyperparams& h) {
    int64_t n = logits.dim(0);
    if (n == 0) fail(Errc::DegenerateBatch, "ppo_loss: empty batch");
    int64_t a_dim = logits.dim(1);
    LossTerms out;
    out.dlogits = Tensor({n, a_dim}, logits.dtype());
    out.dvalues.assign(n, 0.0);
    double inv_n = 1.0 / static_cast<double>(n);
    double policy_loss = 0.0, value_loss = 0.0, entropy = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        RowDist d = row_dist(logits, i);
        int64_t a = actions[i];
        double ratio = std::exp(d.logp[a] - logp_old[i]);
        double clipped = std::min(std::max(ratio, 1.0 - h.clip_eps), 1.0 + h.clip_eps);
        double s1 = ratio * advantages[i];
        double s2 = clipped * advantages[i];
        policy_loss -= std::min(s1, s2) * inv_n;
        // Gradient flows through the unclipped branch only; a saturated clip
        // contributes nothing.
        double dlogp_coef = s1 <= s2 ? -inv_n * ratio * advantages[i] : 0.0;
        double verr = values[i] - returns[i];
        value_loss += h.value_coef * verr * verr * inv_n;
        out.dvalues[i] = 2.0 * h.value_coef * verr * inv_n;
        entropy += d.entropy * inv_n;
        for (int64_t j = 0; j < a_dim; ++j) {
            double g = dlogp_coef * ((j == a ? 1.0 : 0.0) - d.p[j]);
            g += (h.entropy_coef * inv_n) * d.p[j] * (d.logp[j] + d.entropy);
            out.dlogits.set(i * a_dim + j, g);
        }
    }
    out.loss = policy_loss + value_loss - h.entropy_coef * entropy;
    return out;
}

LossTerms a3c_loss_core(const Tensor& logits, const std::vector<double>& values,
                        const std::vector<int64_t>& actions, const std::vector<double>& returns,
                        const Hyperparams& h) {
    int64_t n = logits.dim(0);
    if (n == 0) fail(Errc::EmptyTrajectory, "a3c_loss: empty trajectory");
    int64_t a_dim = logits.dim(1);
    LossTerms out;
    out.dlogits = Tensor({n, a_dim}, logits.dtype());
    out.dvalues.assign(n, 0.0);
    double inv_n = 1.0 / static_cast<double>(n);
    double policy_loss = 0.0, value_loss = 0.0, entropy = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        RowDist d = row_dist(logits, i);
        int64_t a = actions[i];
        double adv = returns[i] - values[i];  // constant for the policy term
        policy_loss -= d.logp[a] * adv * inv_n;
        double verr = values[i] - returns[i];
        value_loss += h.value_coef * verr * verr * inv_n;
        out.dvalues[i] = 2.0 * h.value_coef * verr * inv_n;
        entropy += d.entropy * inv_n;
        for (int64_t j = 0; j < a_dim; ++j) {
            double g = -inv_n * adv * ((j == a ? 1.0 : 0.0) - d.p[j]);
            g += (h.entropy_coef * inv_n) * d.p[j] * (d.logp[j] + d.entropy);
            out.dlogits.set(i * a_dim + j, g);
        }
    }
    out.loss = policy_loss + value_loss - h.entropy_coef * entropy;
    return out;
}

namespace {

Tensor states_tensor(const std::vector<StepRecord>& batch, DType dtype) {
    int64_t n = static_cast<int64_t>(batch.size());
    int64_t s_dim = static_cast<int64_t>(batch[0].state.size());
    Tensor x({n, s_dim}, dtype);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < s_dim; ++j) x.set(i * s_dim + j, batch[i].state[j]);
    return x;
}

}  // namespace

PolicyGrads ppo_loss(const compute::MlpParams& policy, const compute::MlpParams& value_net,
                     const std::vector<StepRecord>& batch, const std::vector<double>& returns,
                     const std::vector<double>& advantages, const Hyperparams& h) {
    if (batch.empty()) fail(Errc::DegenerateBatch, "ppo_loss: empty batch");
    DType dt = policy.layers[0].weight.dtype();
    Tensor x = states_tensor(batch, dt);
    compute::MlpCache pc, vc;
    Tensor logits = compute::mlp_forward(policy, x, &pc);
    Tensor v = compute::mlp_forward(value_net, x, &vc);
    std::vector<double> values(batch.size());
    std::vector<int64_t> actions(batch.size());
    std::vector<double> logp_old(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        values[i] = v.at(static_cast<int64_t>(i));
        actions[i] = batch[i].action;
        logp_old[i] = batch[i].logp;
    }
    LossTerms terms = ppo_loss_core(logits, values, actions, logp_old, advantages, returns, h);
    PolicyGrads out;
    out.loss = terms.loss;
    out.policy = compute::mlp_backward(policy, pc, terms.dlogits);
    Tensor dv({static_cast<int64_t>(batch.size()), 1}, dt);
    for (size_t i = 0; i < batch.size(); ++i) dv.set(static_cast<int64_t>(i), terms.dvalues[i]);
    out.value = compute::mlp_backward(value_net, vc, dv);
    return out;
}

PolicyGrads a3c_actor_grads(const compute::MlpParams& policy, const compute::MlpParams& value_net,
                            const std::vector<StepRecord>& trajectory, const Hyperparams& h) {
    if (trajectory.empty()) fail(Errc::EmptyTrajectory, "a3c_actor_grads: empty trajectory");
    DType dt = policy.layers[0].weight.dtype();
    Tensor x = states_tensor(trajectory, dt);
    compute::MlpCache pc, vc;
    Tensor logits = compute::mlp_forward(policy, x, &pc);
    Tensor v = compute::mlp_forward(value_net, x, &vc);
    std::vector<double> values(trajectory.size());
    std::vector<double> rewards(trajectory.size());
    std::vector<uint8_t> dones(trajectory.size());
    std::vector<int64_t> actions(trajectory.size());
    for (size_t i = 0; i < trajectory.size(); ++i) {
        values[i] = v.at(static_cast<int64_t>(i));
        rewards[i] = trajectory[i].reward;
        dones[i] = trajectory[i].done ? 1 : 0;
        actions[i] = trajectory[i].action;
    }
    double last_value = 0.0;
    if (!trajectory.back().done) {
        const auto& ns = trajectory.back().next_state;
        Tensor xs({1, static_cast<int64_t>(ns.size())}, dt);
        for (size_t j = 0; j < ns.size(); ++j) xs.set(static_cast<int64_t>(j), ns[j]);
        last_value = compute::mlp_forward(value_net, xs).at(0);
    }
    std::vector<double> returns = discounted_return(rewards, dones, last_value, h.gamma);
    LossTerms terms = a3c_loss_core(logits, values, actions, returns, h);
    PolicyGrads out;
    out.loss = terms.loss;
    out.policy = compute::mlp_backward(policy, pc, terms.dlogits);
    Tensor dv({static_cast<int64_t>(trajectory.size()), 1}, dt);
    for (size_t i = 0; i < trajectory.size(); ++i) dv.set(static_cast<int64_t>(i), terms.dvalues[i]);
    out.value = compute::mlp_backward(value_net, vc, dv);
    return out;
}

std::vector<double> mappo_central_critic_eval(const compute::MlpParams& critic,
                                              const std::vector<double>& joint_obs, int64_t n_agents) {
    int64_t in = critic.in_dim();
    int64_t joint = static_cast<int64_t>(joint_obs.size());
    if (joint + n_agents != in)
        fail(Errc::Shape, "central critic expects joint(" + std::to_string(joint) + ") + onehot(" +
                              std::to_string(n_agents) + ") == " + std::to_string(in));
    Tensor x({n_agents, in}, critic.layers[0].weight.dtype());
    for (int64_t a = 0; a < n_agents; ++a) {
        for (int64_t j = 0; j < joint; ++j) x.set(a * in + j, joint_obs[j]);
        x.set(a * in + joint + a, 1.0);
    }
    Tensor v = compute::mlp_forward(critic, x);
    std::vector<double> out(n_agents);
    for (int64_t a = 0; a < n_agents; ++a) out[a] = v.at(a);
    return out;
}

void ReplayBuffer::insert(std::vector<StepRecord> batch) {
    batches_.push_back(std::move(batch));
    while (capacity_ > 0 && batches_.size() > capacity_) batches_.pop_front();
}

std::vector<StepRecord> ReplayBuffer::sample() {
    if (batches_.empty()) fail(Errc::EmptyBuffer, "replay buffer is empty");
    std::vector<StepRecord> out;
    for (auto& b : batches_)
        for (auto& r : b) out.push_back(std::move(r));
    batches_.clear();
    return out;
}

}  // namespace fraglow::rl
