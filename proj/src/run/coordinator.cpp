#include "coordinator.hpp"

#include <chrono>
#include <thread>

#include "../../vendor/json.hpp"
#include "../config.hpp"
#include "../core/log.hpp"
#include "net.hpp"

namespace fraglow::run {

using nlohmann::json;

namespace {

struct Barriers {
    std::mutex mu;
    std::condition_variable cv;
    std::map<int64_t, std::set<int>> arrived;
    bool failed = false;
    std::string error;

    void arrive(int worker, int64_t ep) {
        {
            std::lock_guard<std::mutex> lk(mu);
            arrived[ep].insert(worker);
        }
        cv.notify_all();
    }
    void fail_with(const std::string& msg) {
        {
            std::lock_guard<std::mutex> lk(mu);
            if (!failed) {
                failed = true;
                error = msg;
            }
        }
        cv.notify_all();
    }
    bool wait(int64_t ep, size_t n_workers, int64_t timeout_ms) {
        std::unique_lock<std::mutex> lk(mu);
        return cv.wait_for(lk, std::chrono::milliseconds(timeout_ms),
                           [&] { return failed || arrived[ep].size() == n_workers; }) &&
               !failed;
    }
};

}  // namespace

RunMetrics run_distributed(const dfg::DataflowGraph& g, const plan::PlacementPlan& p,
                           const dfg::AlgoConfig& algo, const plan::DeploymentConfig& deploy,
                           const RunOptions& opts) {
    size_t n_workers = deploy.workers.size();
    std::vector<std::unique_ptr<TcpConn>> conns;
    for (size_t w = 0; w < n_workers; ++w) conns.push_back(tcp_connect(deploy.workers[w]));

    StreamTable streams = StreamTable::build(p);
    std::vector<int> worker_of_unit(p.units.size());
    for (const plan::ExecUnit& u : p.units) worker_of_unit[static_cast<size_t>(u.id)] = u.slot.worker;

    // Hello: assign worker indices.
    for (size_t w = 0; w < n_workers; ++w) {
        Frame hello;
        hello.type = MsgType::Hello;
        put_u32(hello.payload, static_cast<uint32_t>(w));
        conns[w]->send(hello);
        Frame ack;
        if (!conns[w]->recv(&ack) || ack.type != MsgType::Ack)
            fail(Errc::WorkerUnreachable, "no Hello ack from " + deploy.workers[w]);
    }

    // LoadFragment: the graph travels as JSON; FDG and placement re-derive
    // deterministically on the worker.
    json bundle;
    bundle["graph"] = dfg::dump_json(g);
    bundle["algo"] = algo_to_json(algo);
    bundle["deploy"] = deploy_to_json(deploy);
    bundle["seed"] = opts.seed;
    bundle["episodes"] = opts.loop.episodes;
    bundle["steps"] = opts.loop.steps_per_episode;
    bundle["latency_us"] = opts.latency_us;
    bundle["timeout_ms"] = opts.timeout_ms;
    std::string body = bundle.dump();
    log::info("dispatching fragments to " + std::to_string(n_workers) + " workers");
    for (size_t w = 0; w < n_workers; ++w) {
        Frame load;
        load.type = MsgType::LoadFragment;
        load.payload.assign(body.begin(), body.end());
        conns[w]->send(load);
        Frame ack;
        if (!conns[w]->recv(&ack) || ack.type != MsgType::Ack)
            fail(Errc::LoadRejected, "no LoadFragment ack from " + deploy.workers[w]);
        if (get_u32(ack.payload.data()) != 0)
            fail(Errc::LoadRejected,
                 "worker " + deploy.workers[w] + " rejected load: " +
                     std::string(ack.payload.begin() + 4, ack.payload.end()));
    }

    Barriers barriers;
    std::mutex metrics_mu;
    std::vector<std::string> metrics_bodies(n_workers);
    std::condition_variable metrics_cv;
    size_t metrics_received = 0;

    // Router: worker -> coordinator -> destination worker.
    std::vector<std::thread> routers;
    for (size_t w = 0; w < n_workers; ++w) {
        routers.emplace_back([&, w] {
            try {
                Frame f;
                while (conns[w]->recv(&f)) {
                    switch (f.type) {
                        case MsgType::TensorData:
                        case MsgType::GradAsync: {
                            uint32_t stream = get_u32(f.payload.data());
                            int to_unit = streams.streams.at(stream).to_unit;
                            conns[static_cast<size_t>(worker_of_unit[static_cast<size_t>(to_unit)])]->send(f);
                            break;
                        }
                        case MsgType::Barrier:
                            barriers.arrive(static_cast<int>(w),
                                            static_cast<int64_t>(get_u32(f.payload.data())));
                            break;
                        case MsgType::Metrics: {
                            {
                                std::lock_guard<std::mutex> lk(metrics_mu);
                                metrics_bodies[w].assign(f.payload.begin(), f.payload.end());
                                metrics_received++;
                            }
                            metrics_cv.notify_all();
                            break;
                        }
                        default:
                            break;
                    }
                }
            } catch (const std::exception& e) {
                barriers.fail_with("worker " + deploy.workers[w] + ": " + e.what());
            }
            barriers.fail_with("worker " + deploy.workers[w] + " disconnected");
        });
    }

    RunMetrics metrics;
    bool aborted = false;
    for (int64_t ep = 0; ep < opts.loop.episodes; ++ep) {
        auto t0 = std::chrono::steady_clock::now();
        Frame start;
        start.type = MsgType::StartEpisode;
        put_u32(start.payload, static_cast<uint32_t>(ep));
        for (auto& c : conns) c->send(start);
        if (!barriers.wait(ep, n_workers, opts.timeout_ms * 2)) {
            aborted = true;
            break;
        }
        auto t1 = std::chrono::steady_clock::now();
        RunMetrics::Episode e;
        e.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        metrics.episodes.push_back(e);
    }

    if (!aborted) {
        Frame req;
        req.type = MsgType::Metrics;
        for (auto& c : conns) c->send(req);
        std::unique_lock<std::mutex> lk(metrics_mu);
        metrics_cv.wait_for(lk, std::chrono::milliseconds(opts.timeout_ms),
                            [&] { return metrics_received == n_workers; });
    }
    Frame bye;
    bye.type = MsgType::Shutdown;
    for (auto& c : conns) {
        try {
            c->send(bye);
        } catch (...) {
        }
    }
    for (auto& c : conns) c->close();
    for (auto& t : routers) t.join();
    if (aborted)
        fail(Errc::WorkerFailure,
             (barriers.error.empty() ? std::string("episode barrier timed out") : barriers.error) +
                 " (" + std::to_string(metrics.episodes.size()) + " of " +
                 std::to_string(opts.loop.episodes) + " episodes completed)");

    // Merge worker metrics.
    struct UnitAgg {
        std::vector<double> rewards;
        int64_t env_count = 0;
    };
    std::vector<UnitAgg> aggs;
    std::string remote_error;
    for (size_t w = 0; w < n_workers; ++w) {
        if (metrics_bodies[w].empty()) continue;
        json j = json::parse(metrics_bodies[w]);
        if (j.contains("error")) remote_error = j["error"].get<std::string>();
        for (const auto& ju : j["units"]) {
            UnitAgg a;
            a.rewards = ju["rewards"].get<std::vector<double>>();
            a.env_count = ju["env_count"].get<int64_t>();
            metrics.steps += ju["steps"].get<int64_t>();
            metrics.grad_messages += ju["grad_messages"].get<int64_t>();
            auto fp = ju["final_params"].get<std::vector<double>>();
            if (metrics.final_params.empty() && !fp.empty()) metrics.final_params = fp;
            aggs.push_back(std::move(a));
        }
        for (auto it = j["bytes"].begin(); it != j["bytes"].end(); ++it)
            metrics.bytes_per_channel[std::stoi(it.key())] += it->get<int64_t>();
    }
    if (!remote_error.empty()) fail(Errc::WorkerFailure, remote_error);
    int64_t cumulative = 0;
    for (auto& [c, b] : metrics.bytes_per_channel) cumulative += b;
    for (size_t ep = 0; ep < metrics.episodes.size(); ++ep) {
        double sum = 0.0;
        int64_t envs = 0;
        for (const UnitAgg& a : aggs) {
            if (a.env_count == 0) continue;
            if (ep < a.rewards.size()) sum += a.rewards[ep];
            envs += a.env_count;
        }
        metrics.episodes[ep].reward = envs ? sum / static_cast<double>(envs) : 0.0;
        metrics.episodes[ep].bytes_total =
            metrics.episodes.empty() ? 0 : cumulative / static_cast<int64_t>(metrics.episodes.size());
    }
    return metrics;
}

}  // namespace fraglow::run
