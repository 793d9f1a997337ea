#include "selfcheck.hpp"

#include <cmath>
#include <sstream>
#include <thread>

#include "../compute/mlp.hpp"
#include "../core/rng.hpp"
#include "../fdgc/fdg.hpp"
#include "../rl/rl.hpp"
#include "channels.hpp"
#include "wire.hpp"

namespace fraglow::run {

using dfg::DataflowGraph;
using dfg::GraphBuilder;
using dfg::NodeId;
using dfg::OpKind;

DataflowGraph random_annotated_dag(uint64_t seed) {
    GraphBuilder b;
    int n_segments = 2 + static_cast<int>(rng::uniform(seed, 1) * 5);  // 2..6 -> 1..5 boundaries
    std::vector<std::vector<NodeId>> segments(static_cast<size_t>(n_segments));
    int total = 0;
    uint64_t draw = 100;
    // The last node of each segment is the boundary datum; only it crosses
    // into the next segment, and nothing inside its own segment consumes it,
    // so every common node lands in exactly two fragments.
    for (int s = 0; s < n_segments; ++s) {
        int size = 1 + static_cast<int>(rng::uniform(seed, draw++) * 7);
        if (total + size > 50) size = std::max(1, 50 - total);
        total += size;
        for (int i = 0; i < size; ++i) {
            std::vector<NodeId>& own = segments[static_cast<size_t>(s)];
            auto pick_own = [&]() {
                return own[static_cast<size_t>(rng::uniform(seed, draw++) * own.size())];
            };
            NodeId id;
            if (s == 0 && i == 0) {
                id = b.add(OpKind::Const, {}, {2}, DType::F32, {{"fill", rng::uniform(seed, draw++)}});
            } else {
                NodeId prev_datum = s > 0 ? segments[static_cast<size_t>(s - 1)].back() : -1;
                NodeId a = i == 0 ? prev_datum : own.back();
                double r = rng::uniform(seed, draw++);
                if (r < 0.3) {
                    id = b.add(OpKind::Tanh, {a}, {}, DType::F32);
                } else if (r < 0.5) {
                    id = b.add(OpKind::Relu, {a}, {}, DType::F32);
                } else {
                    NodeId c = !own.empty() && (s == 0 || rng::uniform(seed, draw++) < 0.7)
                                   ? pick_own()
                                   : (s > 0 ? prev_datum : pick_own());
                    id = b.add(r < 0.75 ? OpKind::Add : OpKind::Mul, {a, c}, {}, DType::F32);
                }
            }
            own.push_back(id);
        }
    }
    for (int s = 0; s + 1 < n_segments; ++s) {
        NodeId datum = segments[static_cast<size_t>(s)].back();
        b.annotate({datum}, dfg::CommOp::AllGather, {datum}, "cut" + std::to_string(s));
    }
    // Every sink is an output, so nothing is orphaned.
    auto cons2 = b.peek().consumers(false);
    for (const dfg::OpNode& n : b.peek().nodes)
        if (cons2[static_cast<size_t>(n.id)].empty()) b.mark_output(n.id);
    return b.finish({1, 1});
}

namespace {

struct Section {
    std::ostringstream& out;
    SelfCheckReport& rep;
    std::string name;
    bool ok = true;

    Section(std::ostringstream& o, SelfCheckReport& r, std::string n) : out(o), rep(r), name(std::move(n)) {}
    void check(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            out << "    FAIL: " << what << "\n";
        }
    }
    ~Section() {
        out << "  " << name << ": " << (ok ? "ok" : "FAILED") << "\n";
        if (!ok) {
            rep.ok = false;
            rep.failed.push_back(name);
        }
    }
};

std::vector<rl::StepRecord> fixed_batch(int n, int s_dim, uint64_t seed) {
    std::vector<rl::StepRecord> batch(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto& r = batch[static_cast<size_t>(i)];
        for (int j = 0; j < s_dim; ++j) r.state.push_back(rng::uniform_range(rng::key(seed, 1, i, j), -1, 1));
        r.next_state = r.state;
        r.action = static_cast<int64_t>(rng::uniform(seed, 2, i) * 3);
        r.reward = rng::uniform_range(rng::key(seed, 3, i), -1, 1);
        r.logp = -1.0 - rng::uniform(seed, 4, i);
        r.done = false;
    }
    return batch;
}

}  // namespace

SelfCheckReport self_check(bool inject_grad_bug) {
    SelfCheckReport rep;
    std::ostringstream out;
    out << "self-check\n";

    {
        Section s(out, rep, "grad_check");
        rl::Hyperparams h;
        auto policy = compute::mlp_init({4, 16, 16, 3}, compute::Activation::Tanh,
                                        compute::FinalLayer::Linear, 11, DType::F64);
        auto value = compute::mlp_init({4, 16, 16, 1}, compute::Activation::Tanh,
                                       compute::FinalLayer::Linear, 12, DType::F64);
        auto batch = fixed_batch(8, 4, 21);
        std::vector<double> returns, advantages;
        for (size_t i = 0; i < batch.size(); ++i) {
            returns.push_back(rng::uniform_range(rng::key(22, i), -1, 1));
            advantages.push_back(rng::uniform_range(rng::key(23, i), -1, 1));
        }
        auto grads = rl::ppo_loss(policy, value, batch, returns, advantages, h);
        std::vector<double> flat = compute::mlp_flatten(grads.policy);
        if (inject_grad_bug)
            for (size_t i = 0; i < flat.size(); i += 3) flat[i] = 0.0;  // dropped term
        auto f = [&](const std::vector<double>& params) {
            compute::MlpParams p2 = policy;
            compute::mlp_unflatten(p2, params);
            return rl::ppo_loss(p2, value, batch, returns, advantages, h).loss;
        };
        auto gc = compute::grad_check(f, compute::mlp_flatten(policy), flat, 1e-6, 256, 7);
        rep.max_grad_rel_err = gc.max_rel_err;
        out << "    ppo policy grad max rel err = " << gc.max_rel_err << "\n";
        s.check(gc.ok(1e-4), "ppo gradient mismatch vs central differences");
    }

    {
        Section s(out, rep, "collectives");
        for (int peers = 2; peers <= 8; ++peers) {
            for (int trial = 0; trial < 8; ++trial) {
                ChannelHub hub;
                CollectiveGroup g{&hub, 0, peers, 5000};
                int64_t rows = 1 + static_cast<int64_t>(rng::uniform(40, peers, trial) * 4);
                int64_t cols = 1 + static_cast<int64_t>(rng::uniform(41, peers, trial) * 5);
                std::vector<Tensor> locals;
                for (int pi = 0; pi < peers; ++pi) {
                    Tensor t({rows, cols}, DType::F32);
                    for (int64_t i = 0; i < t.size(); ++i)
                        t.set(i, rng::uniform_range(rng::key(42, peers, trial, pi * 1000 + i), -2, 2));
                    locals.push_back(std::move(t));
                }
                std::vector<const Tensor*> ptrs;
                for (auto& t : locals) ptrs.push_back(&t);
                Tensor expect = ops::concat(ptrs, 0);
                std::vector<Tensor> got(static_cast<size_t>(peers));
                std::vector<std::thread> ts;
                for (int pi = 0; pi < peers; ++pi)
                    ts.emplace_back([&, pi] {
                        got[static_cast<size_t>(pi)] =
                            all_gather(g, pi, locals[static_cast<size_t>(pi)], static_cast<uint32_t>(trial));
                    });
                for (auto& t : ts) t.join();
                for (int pi = 0; pi < peers; ++pi)
                    s.check(got[static_cast<size_t>(pi)].encode() == expect.encode(),
                            "all_gather result mismatch at peer " + std::to_string(pi));
            }
        }
    }

    {
        Section s(out, rep, "wire_roundtrip");
        for (int trial = 0; trial < 2000; ++trial) {
            Frame f;
            f.type = static_cast<MsgType>(static_cast<int>(rng::uniform(50, trial) * 9));
            size_t len = static_cast<size_t>(rng::uniform(51, trial) * 64);
            for (size_t i = 0; i < len; ++i)
                f.payload.push_back(static_cast<uint8_t>(rng::key(52, trial, i) & 0xff));
            auto bytes = encode_frame(f);
            Frame back;
            size_t used = decode_frame(bytes.data(), bytes.size(), &back);
            s.check(used == bytes.size() && back.type == f.type && back.payload == f.payload,
                    "frame round trip failed");
        }
    }

    {
        Section s(out, rep, "fdg_partition");
        for (uint64_t seed = 0; seed < 50; ++seed) {
            auto g = random_annotated_dag(seed);
            auto fdg = fdgc::generate_fdg(g);
            auto boundaries = fdgc::annotation_parser(g);
            auto commons = fdgc::label_common_nodes(g, boundaries);
            std::map<NodeId, int> count;
            for (const auto& f : fdg.fragments)
                for (NodeId id : f.nodes) count[id]++;
            for (const dfg::OpNode& n : g.nodes) {
                int expected = commons.count(n.id) ? 2 : 1;
                s.check(count[n.id] == expected,
                        "node " + std::to_string(n.id) + " appears " + std::to_string(count[n.id]) +
                            " times (seed " + std::to_string(seed) + ")");
            }
        }
    }

    rep.text = out.str() + (rep.ok ? "all sections ok\n" : "FAILURES present\n");
    return rep;
}

}  // namespace fraglow::run
