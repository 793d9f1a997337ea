#include <functional>

#include "core/rng.hpp"
#include "dfg/graph.hpp"
#include "doctest.h"

using namespace fraglow;
using namespace fraglow::dfg;

TEST_CASE("builder: derived nodes get the next dense id, shapes must agree") {
    GraphBuilder b;
    NodeId w = b.add(OpKind::Param, {}, {4, 2}, DType::F32);
    NodeId x = b.add(OpKind::Input, {}, {2}, DType::F32);
    NodeId y = b.add(OpKind::MatMul, {w, x}, {4}, DType::F32);
    CHECK(y == 2);
    CHECK(b.peek().node(y).out_shape == Shape{4});

    NodeId a = b.add(OpKind::Const, {}, {3}, DType::F32);
    NodeId c = b.add(OpKind::Const, {}, {4}, DType::F32);
    CHECK_THROWS_AS(b.add(OpKind::Add, {a, c}, {}, DType::F32), Error);  // elementwise mismatch
    CHECK_THROWS_AS(b.add(OpKind::MatMul, {w, x}, {5}, DType::F32), Error);  // contradicts inference
}

TEST_CASE("builder: unknown inputs and invalid resources are rejected") {
    GraphBuilder b;
    CHECK_THROWS_AS(b.add(OpKind::Tanh, {7}, {}, DType::F32), Error);
    CHECK_THROWS_AS(b.add(OpKind::EnvStep, {}, {2, 3}, DType::F32, {}, Resource::Accel), Error);
    CHECK_THROWS_AS(b.add(OpKind::EnvReset, {}, {2, 1}, DType::F32, {}, Resource::Accel), Error);
}

TEST_CASE("annotate: duplicate tags and unknown nodes fail; crossing check is deferred") {
    GraphBuilder b;
    NodeId a = b.add(OpKind::Const, {}, {2}, DType::F32, {{"fill", 1.0}});
    NodeId m = b.add(OpKind::Tanh, {a}, {}, DType::F32);
    NodeId out = b.add(OpKind::Relu, {m}, {}, DType::F32);
    b.mark_output(out);
    int id = b.annotate({m}, CommOp::AllGather, {m}, "Step");
    CHECK(id == 0);
    CHECK_THROWS_AS(b.annotate({m}, CommOp::Gather, {m}, "Step"), Error);       // duplicate tag
    CHECK_THROWS_AS(b.annotate({99}, CommOp::Gather, {m}, "Other"), Error);     // unknown node
    // A datum consumed only pre-boundary is accepted here, rejected by validate.
    b.annotate({out}, CommOp::AllGather, {a}, "Dangling");
    auto g = b.finish();
    auto violations = validate(g);
    bool dangling = false;
    for (const auto& v : violations) dangling |= v.kind == Violation::Kind::DanglingBoundaryData;
    CHECK(dangling);
}

TEST_CASE("validate: clean chain passes, orphan nodes are reported, idempotent") {
    GraphBuilder b;
    NodeId a = b.add(OpKind::Const, {}, {2}, DType::F32);
    NodeId m = b.add(OpKind::Tanh, {a}, {}, DType::F32);
    NodeId c = b.add(OpKind::Relu, {m}, {}, DType::F32);
    b.annotate({m}, CommOp::AllGather, {m}, "Cut");
    b.mark_output(c);
    NodeId orphan = b.add(OpKind::Const, {}, {2}, DType::F32);
    (void)orphan;
    auto g = b.finish();
    auto v1 = validate(g);
    REQUIRE(v1.size() == 1);
    CHECK(v1[0].kind == Violation::Kind::OrphanNode);
    CHECK(v1[0].subject == orphan);
    auto v2 = validate(g);
    CHECK(v1.size() == v2.size());
    CHECK(v1[0].subject == v2[0].subject);
}

TEST_CASE("topo order: chains, diamonds, and the edge-direction oracle on random dags") {
    GraphBuilder b;
    NodeId n0 = b.add(OpKind::Const, {}, {2}, DType::F32);
    NodeId n1 = b.add(OpKind::Tanh, {n0}, {}, DType::F32);
    NodeId n2 = b.add(OpKind::Relu, {n1}, {}, DType::F32);
    b.mark_output(n2);
    auto g = b.finish();
    CHECK(topo_order(g) == std::vector<NodeId>{0, 1, 2});

    GraphBuilder d;
    NodeId d0 = d.add(OpKind::Const, {}, {2}, DType::F32);
    NodeId d1 = d.add(OpKind::Tanh, {d0}, {}, DType::F32);
    NodeId d2 = d.add(OpKind::Relu, {d0}, {}, DType::F32);
    NodeId d3 = d.add(OpKind::Add, {d1, d2}, {}, DType::F32);
    d.mark_output(d3);
    CHECK(topo_order(d.finish()) == std::vector<NodeId>{0, 1, 2, 3});

    for (uint64_t seed = 0; seed < 40; ++seed) {
        GraphBuilder rb;
        int n = 2 + static_cast<int>(rng::uniform(seed, 1000) * 48);
        for (int i = 0; i < n; ++i) {
            if (i == 0 || rng::uniform(seed, 2000, i) < 0.2) {
                rb.add(OpKind::Const, {}, {2}, DType::F32);
            } else {
                NodeId a = static_cast<NodeId>(rng::uniform(seed, 3000, i) * i);
                if (rng::uniform(seed, 4000, i) < 0.5) {
                    rb.add(OpKind::Tanh, {a}, {}, DType::F32);
                } else {
                    NodeId c = static_cast<NodeId>(rng::uniform(seed, 5000, i) * i);
                    rb.add(OpKind::Add, {a, c}, {}, DType::F32);
                }
            }
        }
        auto rg = rb.finish();
        auto order = topo_order(rg);
        // permutation of 0..n-1
        std::vector<char> seen(rg.size(), 0);
        for (NodeId id : order) {
            REQUIRE(id >= 0);
            REQUIRE(static_cast<size_t>(id) < rg.size());
            CHECK_FALSE(seen[static_cast<size_t>(id)]);
            seen[static_cast<size_t>(id)] = 1;
        }
        // every edge goes forward in the order (independent brute-force check)
        std::vector<int> pos(rg.size());
        for (size_t i = 0; i < order.size(); ++i) pos[static_cast<size_t>(order[i])] = static_cast<int>(i);
        for (const OpNode& node : rg.nodes)
            for (NodeId in : node.inputs)
                CHECK(pos[static_cast<size_t>(in)] < pos[static_cast<size_t>(node.id)]);
    }
}

TEST_CASE("builder graphs are acyclic by construction (independent dfs check)") {
    for (uint64_t seed = 100; seed < 130; ++seed) {
        GraphBuilder rb;
        int n = 3 + static_cast<int>(rng::uniform(seed, 1) * 30);
        for (int i = 0; i < n; ++i) {
            if (i == 0) {
                rb.add(OpKind::Const, {}, {2}, DType::F32);
            } else {
                NodeId a = static_cast<NodeId>(rng::uniform(seed, 2, i) * i);
                NodeId c = static_cast<NodeId>(rng::uniform(seed, 3, i) * i);
                rb.add(OpKind::Mul, {a, c}, {}, DType::F32);
            }
        }
        auto g = rb.finish();
        // DFS cycle detection over forward edges.
        auto cons = g.consumers(false);
        std::vector<int> color(g.size(), 0);
        bool cycle = false;
        std::function<void(NodeId)> dfs = [&](NodeId u) {
            color[static_cast<size_t>(u)] = 1;
            for (NodeId v : cons[static_cast<size_t>(u)]) {
                if (color[static_cast<size_t>(v)] == 1) cycle = true;
                if (color[static_cast<size_t>(v)] == 0 && !cycle) dfs(v);
            }
            color[static_cast<size_t>(u)] = 2;
        };
        for (const OpNode& node : g.nodes)
            if (color[static_cast<size_t>(node.id)] == 0) dfs(node.id);
        CHECK_FALSE(cycle);
    }
}

TEST_CASE("every validated annotation cuts the graph") {
    // Removing the crossing edges of an annotation's data must disconnect
    // some output from some source.
    GraphBuilder b;
    NodeId src = b.add(OpKind::Const, {}, {2}, DType::F32);
    NodeId m1 = b.add(OpKind::Tanh, {src}, {}, DType::F32);
    NodeId m2 = b.add(OpKind::Relu, {m1}, {}, DType::F32);
    NodeId out = b.add(OpKind::Add, {m2, m2}, {}, DType::F32);
    b.mark_output(out);
    b.annotate({m1}, CommOp::AllGather, {m1}, "Cut");
    auto g = b.finish();
    REQUIRE(validate(g).empty());
    for (const auto& anno : g.annotations) {
        std::set<NodeId> data(anno.data.begin(), anno.data.end());
        // reachability from sources to outputs without edges out of data nodes
        std::vector<char> reach(g.size(), 0);
        std::vector<NodeId> stack;
        for (const OpNode& node : g.nodes)
            if (node.inputs.empty()) {
                reach[static_cast<size_t>(node.id)] = 1;
                stack.push_back(node.id);
            }
        auto cons = g.consumers(false);
        while (!stack.empty()) {
            NodeId u = stack.back();
            stack.pop_back();
            if (data.count(u)) continue;  // crossing edges removed
            for (NodeId v : cons[static_cast<size_t>(u)])
                if (!reach[static_cast<size_t>(v)]) {
                    reach[static_cast<size_t>(v)] = 1;
                    stack.push_back(v);
                }
        }
        bool some_output_cut = false;
        for (NodeId o : g.outputs) some_output_cut |= !reach[static_cast<size_t>(o)];
        CHECK(some_output_cut);
    }
}
