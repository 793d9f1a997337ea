#include <thread>

#include "doctest.h"
#include "run/channels.hpp"
#include "run/coordinator.hpp"
#include "run/selfcheck.hpp"

using namespace fraglow;

namespace {

dfg::AlgoConfig algo(const std::string& name, int actors, int envs, int64_t episodes = 3,
                     int64_t steps = 8) {
    dfg::AlgoConfig cfg;
    cfg.algorithm = name;
    cfg.actors = actors;
    cfg.envs = envs;
    cfg.env_name = "gridline";
    cfg.hidden = {8, 8};
    cfg.loop = {episodes, steps};
    return cfg;
}

plan::DeploymentConfig local_deploy(plan::Policy p, int workers = 1) {
    plan::DeploymentConfig d;
    for (int w = 0; w < workers; ++w) d.workers.push_back("local" + std::to_string(w));
    d.cpu_slots = 12;
    d.accel_slots = 12;
    d.policy = p;
    return d;
}

run::RunMetrics run_local(const dfg::AlgoConfig& a, plan::Policy policy, uint64_t seed,
                          int workers = 1) {
    auto g = dfg::standard_program(a.algorithm, a);
    auto fdg = fdgc::generate_fdg(g);
    auto d = local_deploy(policy, workers);
    auto p = plan::make_plan(fdg, d, a);
    run::RunOptions opts;
    opts.seed = seed;
    opts.loop = a.loop;
    return run::run_plan_local(g, p, opts);
}

void check_params_equal(const std::vector<double>& a, const std::vector<double>& b,
                        double tol = 0.0) {
    REQUIRE(a.size() == b.size());
    REQUIRE_FALSE(a.empty());
    for (size_t i = 0; i < a.size(); ++i) {
        if (tol == 0.0) {
            CHECK(a[i] == b[i]);
        } else {
            double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-12});
            CHECK(std::abs(a[i] - b[i]) / denom < tol);
        }
    }
}

}  // namespace

TEST_CASE("channel hub: tagged delivery, timeout, close") {
    run::ChannelHub hub;
    hub.push(7, 3, Tensor::scalar(5.0));
    Tensor t = hub.pop(7, 3, 100);
    CHECK(t.at(0) == 5.0);
    CHECK_THROWS_AS(hub.pop(7, 4, 50), Error);  // timeout
    std::thread closer([&] { hub.close(); });
    CHECK_THROWS_AS(hub.pop(9, 0, 5000), Error);  // closed while waiting
    closer.join();
}

TEST_CASE("collectives match their single-process definitions") {
    run::ChannelHub hub;
    // AllGather of [1] and [2] across 2 peers: both receive [1,2].
    run::CollectiveGroup g{&hub, 0, 2, 2000};
    Tensor r0, r1;
    std::thread t0([&] { r0 = run::all_gather(g, 0, Tensor({1}, DType::F32, {1.0}), 1); });
    std::thread t1([&] { r1 = run::all_gather(g, 1, Tensor({1}, DType::F32, {2.0}), 1); });
    t0.join();
    t1.join();
    CHECK(r0.encode() == r1.encode());
    CHECK(r0.at(0) == 1.0);
    CHECK(r0.at(1) == 2.0);

    // Scatter of [4,S] to 2 peers: peer0 rows 0-1, peer1 rows 2-3.
    run::CollectiveGroup g2{&hub, 100, 2, 2000};
    Tensor full({4, 2}, DType::F32, {0, 1, 2, 3, 4, 5, 6, 7});
    Tensor s0, s1;
    std::thread t2([&] { s0 = run::scatter(g2, 0, 0, full, 1); });
    std::thread t3([&] { s1 = run::scatter(g2, 0, 1, Tensor{}, 1); });
    t2.join();
    t3.join();
    CHECK(s0.shape() == Shape{2, 2});
    CHECK(s0.at(0) == 0.0);
    CHECK(s1.at(0) == 4.0);
    CHECK(s1.at(3) == 7.0);

    // Gather at root 1, broadcast from root 0.
    run::CollectiveGroup g3{&hub, 200, 3, 2000};
    Tensor gath;
    std::thread t4([&] { run::gather(g3, 1, 0, Tensor({1}, DType::F32, {10.0}), 2); });
    std::thread t5([&] { gath = run::gather(g3, 1, 1, Tensor({1}, DType::F32, {11.0}), 2); });
    std::thread t6([&] { run::gather(g3, 1, 2, Tensor({1}, DType::F32, {12.0}), 2); });
    t4.join();
    t5.join();
    t6.join();
    CHECK(gath.data() == std::vector<double>{10.0, 11.0, 12.0});
}

TEST_CASE("local dp-a with fused actor replicas matches the unpartitioned interpreter bit-exactly") {
    auto a = algo("ppo", 2, 4);
    auto g = dfg::standard_program("ppo", a);
    auto direct = fdgc::run_unpartitioned(g, 9);
    auto metrics = run_local(a, plan::Policy::DpA, 9);
    check_params_equal(metrics.final_params, direct.final_params);
    REQUIRE(metrics.episodes.size() == direct.episode_rewards.size());
    for (size_t e = 0; e < metrics.episodes.size(); ++e)
        CHECK(metrics.episodes[e].reward == doctest::Approx(direct.episode_rewards[e]).epsilon(1e-12));
}

TEST_CASE("local dp-b matches the unpartitioned interpreter bit-exactly") {
    auto a = algo("ppo", 2, 4);
    auto g = dfg::standard_program("ppo", a);
    auto direct = fdgc::run_unpartitioned(g, 11);
    auto metrics = run_local(a, plan::Policy::DpB, 11, 2);
    check_params_equal(metrics.final_params, direct.final_params);
}

TEST_CASE("local dp-c is deterministic and learners stay in lockstep") {
    auto a = algo("ppo", 2, 4);
    auto m1 = run_local(a, plan::Policy::DpC, 5, 2);
    auto m2 = run_local(a, plan::Policy::DpC, 5, 2);
    check_params_equal(m1.final_params, m2.final_params);
    for (double v : m1.final_params) CHECK(std::isfinite(v));
}

TEST_CASE("local dp-d runs the fused loop with gradient aggregation") {
    auto a = algo("ppo", 2, 4);
    auto m = run_local(a, plan::Policy::DpD, 5, 2);
    REQUIRE_FALSE(m.final_params.empty());
    for (double v : m.final_params) CHECK(std::isfinite(v));
}

TEST_CASE("local dp-e and dp-f complete and the server applies deltas") {
    auto a = algo("ppo", 2, 4);
    auto me = run_local(a, plan::Policy::DpE, 5, 3);
    REQUIRE_FALSE(me.final_params.empty());
    auto mf = run_local(a, plan::Policy::DpF, 5, 3);
    REQUIRE_FALSE(mf.final_params.empty());
    CHECK(mf.grad_messages == 2 * a.loop.episodes);  // one delta per learner per episode
}

TEST_CASE("a3c: learner applies one async gradient message per actor per episode") {
    auto a = algo("a3c", 2, 2, 4);
    auto m = run_local(a, plan::Policy::DpA, 13);
    CHECK(m.grad_messages == 2 * 4);
}

TEST_CASE("byte accounting matches the analytic encoding sizes") {
    auto a = algo("ppo", 1, 2, 2, 4);
    auto g = dfg::standard_program("ppo", a);
    auto fdg = fdgc::generate_fdg(g);
    auto d = local_deploy(plan::Policy::DpA);
    auto p = plan::make_plan(fdg, d, a);
    run::RunOptions opts;
    opts.seed = 3;
    opts.loop = a.loop;
    auto m = run::run_plan_local(g, p, opts);

    // Analytic expectation: per firing, each datum costs its encoding plus
    // the 8-byte channel/tag header, once per leg.
    for (const auto& pc : p.channels) {
        if (pc.kind != plan::PlanChannel::Kind::Data) continue;
        const auto& ch = p.fdg.channels[static_cast<size_t>(pc.fdg_channel)];
        int64_t firings = 0;
        if (pc.timing == fdgc::Timing::PerStep)
            firings = a.loop.episodes * a.loop.steps_per_episode;
        else
            firings = a.loop.episodes;
        int64_t expect = 0;
        for (const auto& datum : ch.spec.data) {
            int64_t elems = 1;
            for (int64_t s : datum.shape) elems *= s;
            int64_t payload = 2 + 4 * static_cast<int64_t>(datum.shape.size()) +
                              elems * (datum.dtype == DType::F64 ? 8 : 4);
            expect += (payload + 8) * static_cast<int64_t>(pc.legs.size()) * firings;
        }
        auto it = m.bytes_per_channel.find(pc.id);
        int64_t got = it == m.bytes_per_channel.end() ? 0 : it->second;
        CHECK(got == expect);
    }
}

TEST_CASE("self check passes clean and catches an injected gradient bug") {
    auto rep = run::self_check(false);
    CHECK(rep.ok);
    CHECK(rep.max_grad_rel_err < 1e-4);
    auto bad = run::self_check(true);
    CHECK_FALSE(bad.ok);
    bool named = false;
    for (auto& f : bad.failed) named |= f == "grad_check";
    CHECK(named);
}

TEST_CASE("a stale lower tag on a stream is reported as schedule skew") {
    run::ChannelHub hub;
    hub.push(5, 2, Tensor::scalar(1.0));
    CHECK_THROWS_AS((void)hub.pop(5, 4, 200), Error);  // tag 2 never consumed
    CHECK_NOTHROW((void)hub.pop(5, 2, 200));
}
