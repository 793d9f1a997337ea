#include "worker.hpp"

#include <unistd.h>

#include <thread>

#include "../../vendor/json.hpp"
#include "../config.hpp"
#include "../core/log.hpp"
#include "../fdgc/fdg.hpp"
#include "net.hpp"
#include "runner.hpp"

namespace fraglow::run {

using nlohmann::json;

namespace {

struct WorkerSession {
    TcpConn* conn;
    int worker_index = -1;

    dfg::DataflowGraph graph;
    dfg::AlgoConfig algo;
    plan::DeploymentConfig deploy;
    plan::PlacementPlan placement;
    RunnerShared ctx;
    std::vector<std::thread> unit_threads;
    std::vector<UnitReport> reports;
    std::map<int64_t, size_t> done_count;
    std::mutex done_mu;
    size_t local_count = 0;
    bool loaded = false;

    void load(const std::vector<uint8_t>& payload) {
        json j = json::parse(payload.begin(), payload.end());
        graph = dfg::graph_from_json(j.at("graph").get<std::string>());
        algo = parse_algo_config(j.at("algo").get<std::string>());
        deploy = parse_deploy_config(j.at("deploy").get<std::string>());
        fdgc::FDG fdg = fdgc::generate_fdg(graph);
        placement = plan::make_plan(fdg, deploy, algo);
        ctx.graph = &graph;
        ctx.plan = &placement;
        ctx.opts.seed = j.at("seed").get<uint64_t>();
        ctx.opts.loop.episodes = j.at("episodes").get<int64_t>();
        ctx.opts.loop.steps_per_episode = j.at("steps").get<int64_t>();
        ctx.opts.latency_us = j.value("latency_us", 0);
        ctx.opts.timeout_ms = j.value("timeout_ms", 30000);
        ctx.streams = StreamTable::build(placement);
        for (const plan::ExecUnit& u : placement.units)
            if (u.slot.worker == worker_index) ctx.local_units.insert(u.id);
        local_count = ctx.local_units.size();

        // The latency burst is charged at the channel firing, not per frame.
        ctx.remote_send = [this](uint32_t stream, uint32_t tag, const Tensor& t, bool async) {
            Frame f;
            f.type = async ? MsgType::GradAsync : MsgType::TensorData;
            f.payload = encode_tensor_msg(stream, tag, t);
            conn->send(f);
        };
        ctx.on_episode_done = [this](int, int64_t ep) {
            size_t done;
            {
                std::lock_guard<std::mutex> lk(done_mu);
                done = ++done_count[ep];
            }
            if (done == local_count) {
                Frame f;
                f.type = MsgType::Barrier;
                put_u32(f.payload, static_cast<uint32_t>(ep));
                conn->send(f);
            }
        };
        reports.resize(placement.units.size());
        for (int uid : ctx.local_units)
            unit_threads.emplace_back(
                [this, uid] { run_unit(ctx, uid, reports[static_cast<size_t>(uid)]); });
        loaded = true;
    }

    std::string metrics_json() {
        json j;
        j["worker"] = worker_index;
        j["units"] = json::array();
        for (int uid : ctx.local_units) {
            const UnitReport& r = reports[static_cast<size_t>(uid)];
            json ju;
            ju["unit"] = uid;
            ju["env_count"] = r.env_count;
            ju["rewards"] = r.episode_reward_sum;
            ju["steps"] = r.steps;
            ju["grad_messages"] = r.grad_messages;
            ju["final_params"] = r.final_params;
            j["units"].push_back(ju);
        }
        json jb = json::object();
        {
            std::lock_guard<std::mutex> lk(ctx.bytes_mu);
            for (auto& [c, b] : ctx.bytes_per_channel) jb[std::to_string(c)] = b;
        }
        j["bytes"] = jb;
        if (!ctx.first_error.empty()) j["error"] = ctx.first_error;
        return j.dump();
    }

    void shutdown_threads() {
        ctx.hub.close();
        ctx.raise_gate(1 << 30);
        for (auto& t : unit_threads) t.join();
        unit_threads.clear();
    }
};

// One coordinator session; returns true when the worker should keep serving.
bool handle_session(TcpConn& conn) {
    WorkerSession s;
    s.conn = &conn;
    Frame f;
    bool keep_serving = true;
    try {
        while (conn.recv(&f)) {
            switch (f.type) {
                case MsgType::Hello: {
                    s.worker_index = static_cast<int>(get_u32(f.payload.data()));
                    log::info("worker " + std::to_string(s.worker_index) + ": coordinator connected");
                    Frame ack;
                    ack.type = MsgType::Ack;
                    put_u32(ack.payload, 0);
                    conn.send(ack);
                    break;
                }
                case MsgType::LoadFragment: {
                    Frame ack;
                    ack.type = MsgType::Ack;
                    try {
                        s.load(f.payload);
                        put_u32(ack.payload, 0);
                        log::info("worker " + std::to_string(s.worker_index) + ": loaded " +
                                  std::to_string(s.ctx.local_units.size()) + " fragment instances");
                    } catch (const std::exception& e) {
                        log::error(std::string("fragment load rejected: ") + e.what());
                        put_u32(ack.payload, 1);
                        std::string msg = e.what();
                        ack.payload.insert(ack.payload.end(), msg.begin(), msg.end());
                    }
                    conn.send(ack);
                    break;
                }
                case MsgType::StartEpisode: {
                    auto ep = static_cast<int64_t>(get_u32(f.payload.data()));
                    s.ctx.raise_gate(ep);
                    // A worker hosting no fragment instances still takes part
                    // in the episode barrier.
                    if (s.loaded && s.local_count == 0) {
                        Frame done;
                        done.type = MsgType::Barrier;
                        put_u32(done.payload, static_cast<uint32_t>(ep));
                        conn.send(done);
                    }
                    break;
                }
                case MsgType::TensorData:
                case MsgType::GradAsync: {
                    uint32_t stream, tag;
                    Tensor t;
                    decode_tensor_msg(f.payload, &stream, &tag, &t);
                    s.ctx.deliver_local(stream, tag, std::move(t), f.type == MsgType::GradAsync);
                    break;
                }
                case MsgType::Metrics: {
                    Frame reply;
                    reply.type = MsgType::Metrics;
                    std::string body = s.metrics_json();
                    reply.payload.assign(body.begin(), body.end());
                    conn.send(reply);
                    break;
                }
                case MsgType::Shutdown:
                    log::info("worker shutting down");
                    keep_serving = false;
                    if (s.loaded) s.shutdown_threads();
                    return keep_serving;
                default:
                    break;
            }
        }
    } catch (const std::exception& e) {
        // Malformed frame or broken pipe: drop this session, keep the
        // listener alive for the next coordinator.
        log::error(std::string("session dropped: ") + e.what());
    }
    if (s.loaded) s.shutdown_threads();
    return keep_serving;
}

}  // namespace

int serve_worker(const std::string& listen_addr) { return serve_worker_notify(listen_addr, -1); }

int serve_worker_notify(const std::string& listen_addr, int ready_fd) {
    TcpListener listener(listen_addr);
    if (ready_fd >= 0) {
        std::string msg = std::to_string(listener.port()) + "\n";
        ssize_t n = ::write(ready_fd, msg.data(), msg.size());
        (void)n;
    }
    while (true) {
        auto conn = listener.accept();
        if (!handle_session(*conn)) return 0;
    }
}

}  // namespace fraglow::run
