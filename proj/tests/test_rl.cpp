#include <deque>

#include "core/rng.hpp"
#include "doctest.h"
#include "rl/rl.hpp"

using namespace fraglow;
using namespace fraglow::rl;

TEST_CASE("discounted return: hand sums and pure bootstrap powers") {
    auto r = discounted_return({1, 1}, {}, 0.0, 1.0);
    CHECK(r == std::vector<double>{2, 1});
    auto boot = discounted_return({0, 0, 0}, {}, 2.0, 0.9);
    CHECK(boot[0] == doctest::Approx(0.729 * 2.0));
    CHECK(boot[1] == doctest::Approx(0.81 * 2.0));
    CHECK(boot[2] == doctest::Approx(0.9 * 2.0));
}

TEST_CASE("discounted return matches the O(T^2) brute-force definition") {
    const int T = 50;
    std::vector<double> rewards(T);
    std::vector<uint8_t> dones(T, 0);
    for (int t = 0; t < T; ++t) {
        rewards[static_cast<size_t>(t)] = rng::uniform_range(rng::key(5, t), -1, 1);
        if (rng::uniform(6, t) < 0.1) dones[static_cast<size_t>(t)] = 1;
    }
    double gamma = 0.93, last = 0.7;
    auto fast = discounted_return(rewards, dones, last, gamma);
    for (int t = 0; t < T; ++t) {
        double acc = 0.0, g = 1.0;
        bool terminated = false;
        for (int k = t; k < T && !terminated; ++k) {
            acc += g * rewards[static_cast<size_t>(k)];
            g *= gamma;
            terminated = dones[static_cast<size_t>(k)];
        }
        if (!terminated) acc += g * last;
        CHECK(fast[static_cast<size_t>(t)] == doctest::Approx(acc).epsilon(1e-6));
    }
}

TEST_CASE("gae: zeros in, zeros out; lambda=0 collapses to TD residuals") {
    auto zero = gae({0, 0, 0}, {0, 0, 0}, {}, 0.0, 0.9, 0.95);
    for (double a : zero) CHECK(a == 0.0);

    std::vector<double> rewards{1, -1, 0.5}, values{0.2, 0.4, -0.1};
    double gamma = 0.9, last = 0.3;
    auto td = gae(rewards, values, {}, last, gamma, 0.0);
    CHECK(td[0] == doctest::Approx(rewards[0] + gamma * values[1] - values[0]));
    CHECK(td[1] == doctest::Approx(rewards[1] + gamma * values[2] - values[1]));
    CHECK(td[2] == doctest::Approx(rewards[2] + gamma * last - values[2]));
}

TEST_CASE("gae with lambda=1, gamma=1 equals discounted returns minus values") {
    const int T = 20;
    std::vector<double> rewards(T), values(T);
    for (int t = 0; t < T; ++t) {
        rewards[static_cast<size_t>(t)] = rng::uniform_range(rng::key(8, t), -1, 1);
        values[static_cast<size_t>(t)] = rng::uniform_range(rng::key(9, t), -1, 1);
    }
    double last = 0.25;
    auto adv = gae(rewards, values, {}, last, 1.0, 1.0);
    auto ret = discounted_return(rewards, {}, last, 1.0);
    for (int t = 0; t < T; ++t)
        CHECK(adv[static_cast<size_t>(t)] ==
              doctest::Approx(ret[static_cast<size_t>(t)] - values[static_cast<size_t>(t)]).epsilon(1e-6));
}

TEST_CASE("interleaved stream variants equal per-stream computation") {
    const int T = 6, E = 3;
    std::vector<double> rewards(T * E), values(T * E), last(E);
    std::vector<uint8_t> dones(T * E, 0);
    for (int i = 0; i < T * E; ++i) {
        rewards[static_cast<size_t>(i)] = rng::uniform_range(rng::key(12, i), -1, 1);
        values[static_cast<size_t>(i)] = rng::uniform_range(rng::key(13, i), -1, 1);
        dones[static_cast<size_t>(i)] = rng::uniform(14, i) < 0.15;
    }
    for (int e = 0; e < E; ++e) last[static_cast<size_t>(e)] = rng::uniform(15, e);
    auto got = gae_streams(rewards, values, dones, last, 0.9, 0.8, E);
    for (int e = 0; e < E; ++e) {
        std::vector<double> r(T), v(T);
        std::vector<uint8_t> d(T);
        for (int t = 0; t < T; ++t) {
            r[static_cast<size_t>(t)] = rewards[static_cast<size_t>(t * E + e)];
            v[static_cast<size_t>(t)] = values[static_cast<size_t>(t * E + e)];
            d[static_cast<size_t>(t)] = dones[static_cast<size_t>(t * E + e)];
        }
        auto one = gae(r, v, d, last[static_cast<size_t>(e)], 0.9, 0.8);
        for (int t = 0; t < T; ++t)
            CHECK(got[static_cast<size_t>(t * E + e)] == one[static_cast<size_t>(t)]);
    }
}

namespace {

Tensor random_logits(int n, int a_dim, uint64_t seed) {
    Tensor logits({n, a_dim}, DType::F64);
    for (int64_t i = 0; i < logits.size(); ++i)
        logits.set(i, rng::uniform_range(rng::key(seed, 70, i), -2, 2));
    return logits;
}

}  // namespace

TEST_CASE("ppo surrogate with ratio one reduces to minus mean advantage") {
    Hyperparams h;
    h.value_coef = 0.0;
    h.entropy_coef = 0.0;
    int n = 4, a_dim = 3;
    Tensor logits = random_logits(n, a_dim, 1);
    std::vector<int64_t> actions{0, 1, 2, 1};
    std::vector<double> values(4, 0.0), returns(4, 0.0), adv{0.5, -1.0, 2.0, 0.25};
    // logp_old equal to the current log-probabilities makes every ratio 1.
    std::vector<double> logp_old(4);
    Tensor p = ops::softmax(logits);
    for (int i = 0; i < n; ++i)
        logp_old[static_cast<size_t>(i)] = std::log(p.at(i * a_dim + actions[static_cast<size_t>(i)]));
    auto terms = ppo_loss_core(logits, values, actions, logp_old, adv, returns, h);
    double mean_adv = (0.5 - 1.0 + 2.0 + 0.25) / 4.0;
    CHECK(terms.loss == doctest::Approx(-mean_adv).epsilon(1e-9));
}

TEST_CASE("ppo with zero clip takes min of ratio-weighted and raw advantage") {
    Hyperparams h;
    h.clip_eps = 0.0;  // core-level contract check; config validation forbids it upstream
    h.value_coef = 0.0;
    h.entropy_coef = 0.0;
    Tensor logits({2, 2}, DType::F64, {1.0, 0.0, 0.0, 1.0});
    std::vector<int64_t> actions{0, 1};
    std::vector<double> values{0, 0}, returns{0, 0}, adv{1.0, -1.0};
    std::vector<double> logp_old{-1.5, -0.2};
    auto terms = ppo_loss_core(logits, values, actions, logp_old, adv, returns, h);
    Tensor p = ops::softmax(logits);
    double expect = 0.0;
    for (int i = 0; i < 2; ++i) {
        double ratio = std::exp(std::log(p.at(i * 2 + actions[static_cast<size_t>(i)])) -
                                logp_old[static_cast<size_t>(i)]);
        expect -= std::min(ratio * adv[static_cast<size_t>(i)], adv[static_cast<size_t>(i)]) / 2.0;
    }
    CHECK(terms.loss == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("ppo clip saturation: saturated records get zero policy gradient") {
    Hyperparams h;
    h.clip_eps = 0.2;
    h.value_coef = 0.0;
    h.entropy_coef = 0.0;
    Tensor logits({2, 2}, DType::F64, {2.0, -2.0, -2.0, 2.0});
    std::vector<int64_t> actions{0, 1};
    std::vector<double> values{0, 0}, returns{0, 0};
    // Record 0: ratio far above 1+eps with positive advantage -> saturated.
    // Record 1: ratio ~1 -> active gradient.
    Tensor p = ops::softmax(logits);
    std::vector<double> logp_old{std::log(p.at(0)) - 1.0, std::log(p.at(3))};
    std::vector<double> adv{1.0, 1.0};
    auto terms = ppo_loss_core(logits, values, actions, logp_old, adv, returns, h);
    CHECK(terms.dlogits.at(0) == 0.0);
    CHECK(terms.dlogits.at(1) == 0.0);
    CHECK(terms.dlogits.at(2) != 0.0);
}

TEST_CASE("ppo loss is invariant to constant advantage shifts once normalized") {
    Hyperparams h;
    Tensor logits = random_logits(6, 3, 4);
    std::vector<int64_t> actions{0, 1, 2, 0, 1, 2};
    std::vector<double> values(6, 0.1), returns(6, 0.2), logp_old(6, -1.0);
    std::vector<double> adv{0.3, -0.4, 1.2, 0.9, -0.7, 0.05};
    std::vector<double> shifted = adv;
    for (double& a : shifted) a += 17.5;
    normalize_advantages(adv);
    normalize_advantages(shifted);
    auto t1 = ppo_loss_core(logits, values, actions, logp_old, adv, returns, h);
    auto t2 = ppo_loss_core(logits, values, actions, logp_old, shifted, returns, h);
    CHECK(t1.loss == doctest::Approx(t2.loss).epsilon(1e-9));
}

TEST_CASE("normalization is skipped on zero-variance advantages") {
    std::vector<double> adv(5, 3.0);
    normalize_advantages(adv);
    for (double a : adv) CHECK(a == 3.0);
}

TEST_CASE("ppo gradients pass central differences on a fixed batch") {
    Hyperparams h;
    auto policy = compute::mlp_init({3, 8, 2}, compute::Activation::Tanh,
                                    compute::FinalLayer::Linear, 50, DType::F64);
    auto value = compute::mlp_init({3, 8, 1}, compute::Activation::Tanh,
                                   compute::FinalLayer::Linear, 51, DType::F64);
    std::vector<StepRecord> batch(8);
    std::vector<double> returns, advantages;
    for (size_t i = 0; i < batch.size(); ++i) {
        batch[i].state = {rng::uniform(60, i), rng::uniform(61, i), rng::uniform(62, i)};
        batch[i].action = static_cast<int64_t>(rng::uniform(63, i) * 2);
        batch[i].logp = -0.7 - rng::uniform(64, i);
        returns.push_back(rng::uniform_range(rng::key(65, i), -1, 1));
        advantages.push_back(rng::uniform_range(rng::key(66, i), -1, 1));
    }
    auto grads = rl::ppo_loss(policy, value, batch, returns, advantages, h);
    auto fp = [&](const std::vector<double>& flat) {
        auto p2 = policy;
        compute::mlp_unflatten(p2, flat);
        return rl::ppo_loss(p2, value, batch, returns, advantages, h).loss;
    };
    auto rp = compute::grad_check(fp, compute::mlp_flatten(policy), compute::mlp_flatten(grads.policy));
    CHECK(rp.max_rel_err < 1e-4);
    auto fv = [&](const std::vector<double>& flat) {
        auto v2 = value;
        compute::mlp_unflatten(v2, flat);
        return rl::ppo_loss(policy, v2, batch, returns, advantages, h).loss;
    };
    auto rv = compute::grad_check(fv, compute::mlp_flatten(value), compute::mlp_flatten(grads.value));
    CHECK(rv.max_rel_err < 1e-4);
    CHECK_THROWS_AS((void)rl::ppo_loss(policy, value, {}, {}, {}, h), Error);
}

TEST_CASE("a3c: zero advantage trajectory gives zero gradients") {
    Hyperparams h;
    h.entropy_coef = 0.0;
    h.gamma = 1.0;
    auto policy = compute::mlp_init({2, 4, 2}, compute::Activation::Tanh,
                                    compute::FinalLayer::Linear, 70, DType::F64);
    // A value net that always predicts zero, with zero rewards: R = V = 0.
    auto value = compute::mlp_init({2, 4, 1}, compute::Activation::Tanh,
                                   compute::FinalLayer::Linear, 71, DType::F64);
    for (auto& l : value.layers) {
        l.weight = Tensor(l.weight.shape(), DType::F64);
        l.bias = Tensor(l.bias.shape(), DType::F64);
    }
    std::vector<StepRecord> traj(3);
    for (auto& r : traj) {
        r.state = {0.5, -0.5};
        r.next_state = r.state;
        r.action = 1;
        r.reward = 0.0;
        r.done = false;
    }
    traj.back().done = true;
    auto g = rl::a3c_actor_grads(policy, value, traj, h);
    for (const auto& l : g.policy.layers)
        for (int64_t i = 0; i < l.weight.size(); ++i) CHECK(l.weight.at(i) == 0.0);
    for (const auto& l : g.value.layers)
        for (int64_t i = 0; i < l.weight.size(); ++i) CHECK(l.weight.at(i) == 0.0);
    CHECK_THROWS_AS((void)rl::a3c_actor_grads(policy, value, {}, h), Error);
}

TEST_CASE("a3c single step equals REINFORCE with baseline on a 2-action softmax") {
    Hyperparams h;
    h.entropy_coef = 0.0;
    h.value_coef = 0.0;
    h.gamma = 0.9;
    Tensor logits({1, 2}, DType::F64, {0.3, -0.2});
    std::vector<double> values{0.4};
    std::vector<int64_t> actions{0};
    std::vector<double> returns{1.5};
    auto terms = a3c_loss_core(logits, values, actions, returns, h);
    // d(-logp(a) * adv)/dlogits = -adv * (onehot - p)
    Tensor p = ops::softmax(logits);
    double adv = returns[0] - values[0];
    CHECK(terms.dlogits.at(0) == doctest::Approx(-adv * (1.0 - p.at(0))).epsilon(1e-9));
    CHECK(terms.dlogits.at(1) == doctest::Approx(-adv * (0.0 - p.at(1))).epsilon(1e-9));
}

TEST_CASE("a3c gradients pass central differences") {
    Hyperparams h;
    auto policy = compute::mlp_init({3, 8, 2}, compute::Activation::Tanh,
                                    compute::FinalLayer::Linear, 80, DType::F64);
    auto value = compute::mlp_init({3, 8, 1}, compute::Activation::Tanh,
                                   compute::FinalLayer::Linear, 81, DType::F64);
    std::vector<StepRecord> traj(6);
    for (size_t i = 0; i < traj.size(); ++i) {
        traj[i].state = {rng::uniform(82, i), rng::uniform(83, i), rng::uniform(84, i)};
        traj[i].next_state = {rng::uniform(85, i), rng::uniform(86, i), rng::uniform(87, i)};
        traj[i].action = static_cast<int64_t>(rng::uniform(88, i) * 2);
        traj[i].reward = rng::uniform_range(rng::key(89, i), -1, 1);
    }
    auto g = rl::a3c_actor_grads(policy, value, traj, h);
    auto fp = [&](const std::vector<double>& flat) {
        auto p2 = policy;
        compute::mlp_unflatten(p2, flat);
        return rl::a3c_actor_grads(p2, value, traj, h).loss;
    };
    auto rep = compute::grad_check(fp, compute::mlp_flatten(policy), compute::mlp_flatten(g.policy));
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("central critic: one agent equals direct evaluation, permutation matters") {
    auto critic = compute::mlp_init({3, 8, 1}, compute::Activation::Tanh,
                                    compute::FinalLayer::Linear, 90, DType::F64);
    std::vector<double> obs{0.2, -0.4};
    auto vals = rl::mappo_central_critic_eval(critic, obs, 1);
    Tensor x({1, 3}, DType::F64, {0.2, -0.4, 1.0});
    CHECK(vals[0] == compute::mlp_forward(critic, x).at(0));

    auto critic2 = compute::mlp_init({6, 8, 1}, compute::Activation::Tanh,
                                     compute::FinalLayer::Linear, 91, DType::F64);
    std::vector<double> joint{0.1, 0.2, 0.8, -0.3};
    std::vector<double> swapped{0.8, -0.3, 0.1, 0.2};
    auto v1 = rl::mappo_central_critic_eval(critic2, joint, 2);
    auto v2 = rl::mappo_central_critic_eval(critic2, swapped, 2);
    CHECK(v1[0] != v2[0]);

    auto zero = critic2;
    for (auto& l : zero.layers) {
        l.weight = Tensor(l.weight.shape(), DType::F64);
        l.bias = Tensor(l.bias.shape(), DType::F64);
    }
    for (double v : rl::mappo_central_critic_eval(zero, joint, 2)) CHECK(v == 0.0);
}

TEST_CASE("replay buffer: fifo drain, capacity drops oldest, fuzz vs model") {
    auto rec = [](double reward) {
        StepRecord r;
        r.reward = reward;
        return r;
    };
    ReplayBuffer buf;
    buf.insert({rec(1)});
    buf.insert({rec(2)});
    buf.insert({rec(3)});
    auto got = buf.sample();
    REQUIRE(got.size() == 3);
    CHECK(got[0].reward == 1);
    CHECK(got[2].reward == 3);
    CHECK_THROWS_AS((void)buf.sample(), Error);

    ReplayBuffer bounded(2);
    bounded.insert({rec(1)});
    bounded.insert({rec(2)});
    bounded.insert({rec(3)});
    auto newest = bounded.sample();
    REQUIRE(newest.size() == 2);
    CHECK(newest[0].reward == 2);
    CHECK(newest[1].reward == 3);

    // Model-based fuzz against a plain deque of batches.
    ReplayBuffer fuzz(4);
    std::deque<std::vector<double>> model;
    double next = 0;
    for (int op = 0; op < 500; ++op) {
        if (rng::uniform(99, op) < 0.7 || model.empty()) {
            int n = 1 + static_cast<int>(rng::uniform(98, op) * 3);
            std::vector<StepRecord> batch;
            std::vector<double> ids;
            for (int i = 0; i < n; ++i) {
                batch.push_back(rec(next));
                ids.push_back(next);
                next += 1;
            }
            fuzz.insert(batch);
            model.push_back(ids);
            while (model.size() > 4) model.pop_front();
        } else {
            auto drained = fuzz.sample();
            std::vector<double> expect;
            for (auto& b : model)
                for (double v : b) expect.push_back(v);
            model.clear();
            REQUIRE(drained.size() == expect.size());
            for (size_t i = 0; i < expect.size(); ++i) CHECK(drained[i].reward == expect[i]);
        }
    }
}
