#include <sys/wait.h>
#include <unistd.h>

#include <csignal>
#include <thread>

#include "doctest.h"
#include "run/coordinator.hpp"
#include "run/net.hpp"
#include "run/worker.hpp"

using namespace fraglow;

namespace {

struct ForkedWorker {
    pid_t pid = -1;
    std::string address;

    static ForkedWorker spawn() {
        int fds[2];
        REQUIRE(pipe(fds) == 0);
        pid_t pid = fork();
        if (pid == 0) {
            close(fds[0]);
            try {
                run::serve_worker_notify("127.0.0.1:0", fds[1]);
            } catch (...) {
            }
            _exit(0);
        }
        close(fds[1]);
        std::string port;
        char c;
        while (read(fds[0], &c, 1) == 1 && c != '\n') port.push_back(c);
        close(fds[0]);
        REQUIRE_FALSE(port.empty());
        return ForkedWorker{pid, "127.0.0.1:" + port};
    }

    void stop() {
        if (pid > 0) {
            kill(pid, SIGKILL);
            waitpid(pid, nullptr, 0);
            pid = -1;
        }
    }
    ForkedWorker() = default;
    ForkedWorker(pid_t p, std::string addr) : pid(p), address(std::move(addr)) {}
    ForkedWorker(ForkedWorker&& o) noexcept : pid(o.pid), address(std::move(o.address)) { o.pid = -1; }
    ForkedWorker& operator=(ForkedWorker&& o) noexcept {
        stop();
        pid = o.pid;
        address = std::move(o.address);
        o.pid = -1;
        return *this;
    }
    ForkedWorker(const ForkedWorker&) = delete;
    ForkedWorker& operator=(const ForkedWorker&) = delete;
    ~ForkedWorker() { stop(); }
};

dfg::AlgoConfig small_algo() {
    dfg::AlgoConfig cfg;
    cfg.algorithm = "ppo";
    cfg.actors = 2;
    cfg.envs = 4;
    cfg.env_name = "gridline";
    cfg.hidden = {8, 8};
    cfg.loop = {2, 6};
    return cfg;
}

}  // namespace

TEST_CASE("two-process dp-a matches the unpartitioned interpreter") {
    auto a = small_algo();
    auto g = dfg::standard_program("ppo", a);
    auto direct = fdgc::run_unpartitioned(g, 17);

    auto w0 = ForkedWorker::spawn();
    auto w1 = ForkedWorker::spawn();
    plan::DeploymentConfig d;
    d.workers = {w0.address, w1.address};
    d.cpu_slots = 8;
    d.accel_slots = 8;
    d.policy = plan::Policy::DpA;
    auto fdg = fdgc::generate_fdg(g);
    auto p = plan::make_plan(fdg, d, a);
    run::RunOptions opts;
    opts.seed = 17;
    opts.loop = a.loop;
    auto m = run::run_distributed(g, p, a, d, opts);

    REQUIRE(m.final_params.size() == direct.final_params.size());
    for (size_t i = 0; i < m.final_params.size(); ++i)
        CHECK(m.final_params[i] == direct.final_params[i]);
    REQUIRE(m.episodes.size() == 2);
    for (size_t e = 0; e < m.episodes.size(); ++e)
        CHECK(m.episodes[e].reward == doctest::Approx(direct.episode_rewards[e]).epsilon(1e-12));
}

TEST_CASE("worker survives a malformed frame and keeps serving") {
    auto w = ForkedWorker::spawn();
    {
        auto conn = run::tcp_connect(w.address);
        run::Frame junk;
        junk.type = run::MsgType::Hello;
        junk.payload.assign(300, 0xff);
        junk.payload[0] = 0x01;
        // Craft a malformed wire blob directly: bogus type byte.
        std::vector<uint8_t> raw = {5, 0, 0, 0, 0xEE, 1, 2, 3, 4};
        (void)junk;
        // send raw bytes through a fresh socket
        auto bad = run::tcp_connect(w.address);
        run::Frame f;
        f.type = static_cast<run::MsgType>(0);
        f.payload = raw;  // legal frame carrying garbage payload is fine too
        bad->send(f);
    }
    // A fresh, well-formed session still works.
    auto conn = run::tcp_connect(w.address);
    run::Frame hello;
    hello.type = run::MsgType::Hello;
    run::put_u32(hello.payload, 0);
    conn->send(hello);
    run::Frame ack;
    REQUIRE(conn->recv(&ack));
    CHECK(ack.type == run::MsgType::Ack);
    run::Frame bye;
    bye.type = run::MsgType::Shutdown;
    conn->send(bye);
    int status = 0;
    waitpid(w.pid, &status, 0);
    CHECK(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 0);
    w.pid = -1;
}

TEST_CASE("unreachable worker is reported by address") {
    CHECK_THROWS_WITH_AS((void)run::tcp_connect("127.0.0.1:1"),
                         doctest::Contains("127.0.0.1:1"), Error);
}

namespace {

run::RunMetrics run_with_workers(const dfg::AlgoConfig& a, plan::Policy policy, int n_workers,
                                 uint64_t seed, int64_t timeout_ms = 30000) {
    std::vector<ForkedWorker> pool;
    plan::DeploymentConfig d;
    d.cpu_slots = 12;
    d.accel_slots = 12;
    d.policy = policy;
    for (int i = 0; i < n_workers; ++i) {
        pool.push_back(ForkedWorker::spawn());
        d.workers.push_back(pool.back().address);
    }
    auto g = dfg::standard_program(a.algorithm, a);
    auto fdg = fdgc::generate_fdg(g);
    auto p = plan::make_plan(fdg, d, a);
    run::RunOptions opts;
    opts.seed = seed;
    opts.loop = a.loop;
    opts.timeout_ms = timeout_ms;
    return run::run_distributed(g, p, a, d, opts);
}

run::RunMetrics run_local_policy(const dfg::AlgoConfig& a, plan::Policy policy, uint64_t seed) {
    auto g = dfg::standard_program(a.algorithm, a);
    auto fdg = fdgc::generate_fdg(g);
    plan::DeploymentConfig d;
    d.workers = {"local"};
    d.cpu_slots = 12;
    d.accel_slots = 12;
    d.policy = policy;
    auto p = plan::make_plan(fdg, d, a);
    run::RunOptions opts;
    opts.seed = seed;
    opts.loop = a.loop;
    return run::run_plan_local(g, p, opts);
}

}  // namespace

TEST_CASE("two-process dp-c matches the single-process run of the same policy") {
    auto a = small_algo();
    auto dist = run_with_workers(a, plan::Policy::DpC, 2, 23);
    auto local = run_local_policy(a, plan::Policy::DpC, 23);
    REQUIRE(dist.final_params.size() == local.final_params.size());
    for (size_t i = 0; i < dist.final_params.size(); ++i)
        CHECK(dist.final_params[i] == local.final_params[i]);
}

TEST_CASE("distributed a3c delivers one async gradient per actor per episode") {
    auto a = small_algo();
    a.algorithm = "a3c";
    a.actors = 2;
    a.envs = 2;
    a.loop = {3, 6};
    auto m = run_with_workers(a, plan::Policy::DpA, 3, 29);
    CHECK(m.grad_messages == 2 * 3);
    for (double v : m.final_params) CHECK(std::isfinite(v));
}

TEST_CASE("distributed dp-f pushes deltas to the central server") {
    auto a = small_algo();
    a.loop = {2, 6};
    auto m = run_with_workers(a, plan::Policy::DpF, 3, 31);
    REQUIRE_FALSE(m.final_params.empty());
    CHECK(m.grad_messages == 2 * 2);  // two learners, two episodes
}

TEST_CASE("a killed worker aborts the run with partial metrics reported") {
    auto a = small_algo();
    a.env_params["sleep_us"] = 2000;
    a.loop = {200, 8};
    auto w0 = ForkedWorker::spawn();
    auto w1 = ForkedWorker::spawn();
    plan::DeploymentConfig d;
    d.workers = {w0.address, w1.address};
    d.cpu_slots = 12;
    d.accel_slots = 12;
    d.policy = plan::Policy::DpA;
    auto g = dfg::standard_program("ppo", a);
    auto fdg = fdgc::generate_fdg(g);
    auto p = plan::make_plan(fdg, d, a);
    run::RunOptions opts;
    opts.seed = 5;
    opts.loop = a.loop;
    opts.timeout_ms = 8000;
    std::thread killer([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(300));
        w0.stop();
    });
    CHECK_THROWS_WITH_AS(run::run_distributed(g, p, a, d, opts),
                         doctest::Contains("episodes completed"), Error);
    killer.join();
}

TEST_CASE("a worker hosting no fragments still answers episode barriers") {
    auto a = small_algo();
    a.actors = 1;  // dp-a on 3 workers leaves the middle worker empty
    auto m = run_with_workers(a, plan::Policy::DpA, 3, 37, 8000);
    CHECK(m.episodes.size() == 2);
    REQUIRE_FALSE(m.final_params.empty());
}

TEST_CASE("distributed mappo dp-a reproduces the unpartitioned interpreter") {
    dfg::AlgoConfig a;
    a.algorithm = "mappo";
    a.agents = 2;
    a.actors = 2;
    a.envs = 4;
    a.env_name = "spread_lite";
    a.hidden = {8, 8};
    a.loop = {2, 6};
    auto g = dfg::standard_program("mappo", a);
    auto direct = fdgc::run_unpartitioned(g, 41);
    auto m = run_with_workers(a, plan::Policy::DpA, 3, 41);
    REQUIRE(m.final_params.size() == direct.final_params.size());
    for (size_t i = 0; i < m.final_params.size(); ++i)
        CHECK(m.final_params[i] == direct.final_params[i]);
}

TEST_CASE("dp-e with a dedicated env worker matches its in-process execution") {
    auto a = small_algo();
    a.loop = {2, 6};
    auto g = dfg::standard_program("ppo", a);
    auto fdg = fdgc::generate_fdg(g);
    plan::DeploymentConfig d;
    d.cpu_slots = 12;
    d.accel_slots = 12;
    d.policy = plan::Policy::DpE;

    // In-process reference over the same three-worker plan shape.
    plan::DeploymentConfig ref = d;
    ref.workers = {"w0", "w1", "w2"};
    auto ref_plan = plan::make_plan(fdg, ref, a);
    run::RunOptions opts;
    opts.seed = 43;
    opts.loop = a.loop;
    auto local = run::run_plan_local(g, ref_plan, opts);

    auto dist = run_with_workers(a, plan::Policy::DpE, 3, 43);
    REQUIRE(dist.final_params.size() == local.final_params.size());
    for (size_t i = 0; i < dist.final_params.size(); ++i)
        CHECK(dist.final_params[i] == local.final_params[i]);
}

TEST_CASE("zero-episode runs produce empty metrics locally and distributed") {
    auto a = small_algo();
    a.loop = {0, 6};
    auto local = run_local_policy(a, plan::Policy::DpA, 3);
    (void)local;
    CHECK(local.episodes.empty());
    CHECK(local.steps == 0);
    auto dist = run_with_workers(a, plan::Policy::DpA, 2, 3);
    CHECK(dist.episodes.empty());
    CHECK(dist.steps == 0);
}
