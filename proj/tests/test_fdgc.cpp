#include <cstdlib>
#include <fstream>

#include "../vendor/json.hpp"
#include "doctest.h"
#include "fdgc/fdg.hpp"
#include "run/selfcheck.hpp"

using namespace fraglow;
using namespace fraglow::fdgc;
using dfg::NodeId;
using dfg::OpKind;

namespace {

dfg::AlgoConfig canonical_ppo() {
    dfg::AlgoConfig cfg;
    cfg.algorithm = "ppo";
    cfg.actors = 2;
    cfg.envs = 8;
    cfg.env_name = "gridline";
    cfg.hidden = {16, 16};
    cfg.loop = {3, 32};
    return cfg;
}

std::map<std::string, int> role_multiset(const FDG& fdg) {
    std::map<std::string, int> roles;
    for (const auto& f : fdg.fragments) roles[role_name(f.role)]++;
    return roles;
}

}  // namespace

TEST_CASE("annotation_parser: one boundary per annotation with resolved shapes") {
    auto g = dfg::standard_program("ppo", canonical_ppo());
    auto boundaries = annotation_parser(g);
    CHECK(boundaries.size() == 5);

    // The Step boundary carries reward [E] and new_state [E,S].
    bool found_step = false;
    for (const auto& [id, b] : boundaries) {
        if (b.spec.tag != "Step") continue;
        found_step = true;
        bool reward_ok = false, state_ok = false;
        for (const auto& d : b.spec.data) {
            if (d.shape == Shape{8}) reward_ok = true;
            if (d.shape == Shape{8, 1}) state_ok = true;
        }
        CHECK(reward_ok);
        CHECK(state_ok);
        CHECK(b.timing == Timing::PerStep);
    }
    CHECK(found_step);

    dfg::GraphBuilder empty;
    NodeId c = empty.add(OpKind::Const, {}, {2}, DType::F32);
    empty.mark_output(c);
    CHECK(annotation_parser(empty.finish()).empty());
}

TEST_CASE("label_common_nodes: ppo roles present; equals the data-list union") {
    auto g = dfg::standard_program("ppo", canonical_ppo());
    auto boundaries = annotation_parser(g);
    auto commons = label_common_nodes(g, boundaries);

    // brute-force union oracle
    std::set<NodeId> expect;
    for (const auto& a : g.annotations) expect.insert(a.data.begin(), a.data.end());
    CHECK(commons == expect);

    // the Alg.-style roles all appear among the common nodes
    bool has_reset = false, has_action = false, has_sample = false, has_param = false;
    for (NodeId id : commons) {
        switch (g.node(id).kind) {
            case OpKind::EnvReset: has_reset = true; break;
            case OpKind::BufferSample: has_sample = true; break;
            case OpKind::Param: has_param = true; break;
            case OpKind::Slice:
                if (g.node(id).out_dtype == DType::I64) has_action = true;
                break;
            default: break;
        }
    }
    CHECK(has_reset);
    CHECK(has_action);
    CHECK(has_sample);
    CHECK(has_param);

    CHECK(label_common_nodes(g, {}).empty());
}

TEST_CASE("minimal chain: one boundary after B yields {A,B} and {B',C}") {
    dfg::GraphBuilder b;
    NodeId a = b.add(OpKind::Const, {}, {2}, DType::F32, {{"fill", 0.5}});
    NodeId mid = b.add(OpKind::Tanh, {a}, {}, DType::F32);
    NodeId c = b.add(OpKind::Relu, {mid}, {}, DType::F32);
    b.mark_output(c);
    b.annotate({mid}, dfg::CommOp::AllGather, {mid}, "Cut");
    auto g = b.finish({1, 1});
    auto fdg = generate_fdg(g);
    REQUIRE(fdg.fragments.size() == 2);
    CHECK(fdg.fragments[0].nodes == std::set<NodeId>{a, mid});
    CHECK(fdg.fragments[0].entry_nodes.empty());
    REQUIRE(fdg.fragments[0].exits.size() == 1);
    CHECK(fdg.fragments[0].exits[0].data[0].node == mid);
    CHECK(fdg.fragments[1].nodes == std::set<NodeId>{mid, c});
    CHECK(fdg.fragments[1].entry_nodes == std::set<NodeId>{mid});
    REQUIRE(fdg.fragments[1].entries.size() == 1);
    REQUIRE(fdg.channels.size() == 1);
    CHECK(fdg.channels[0].from_fragment == 0);
    CHECK(fdg.channels[0].to_fragment == 1);
}

TEST_CASE("adjacent duplicate annotations raise EmptyFragment") {
    dfg::GraphBuilder b;
    NodeId a = b.add(OpKind::Const, {}, {2}, DType::F32);
    NodeId mid = b.add(OpKind::Tanh, {a}, {}, DType::F32);
    NodeId c = b.add(OpKind::Relu, {mid}, {}, DType::F32);
    b.mark_output(c);
    b.annotate({mid}, dfg::CommOp::AllGather, {mid}, "CutA");
    b.annotate({mid}, dfg::CommOp::Gather, {mid}, "CutB");
    auto g = b.finish({1, 1});
    CHECK_THROWS_AS((void)generate_fdg(g), Error);
}

TEST_CASE("partition property, no hidden edges, determinism over random dags") {
    for (uint64_t seed = 0; seed < 120; ++seed) {
        auto g = run::random_annotated_dag(seed);
        REQUIRE(dfg::validate(g).empty());
        auto fdg = generate_fdg(g);
        auto commons = label_common_nodes(g, annotation_parser(g));

        // multiset union: parent nodes plus one duplicate per common node
        std::map<NodeId, int> count;
        for (const auto& f : fdg.fragments)
            for (NodeId id : f.nodes) count[id]++;
        for (const auto& n : g.nodes) CHECK(count[n.id] == (commons.count(n.id) ? 2 : 1));

        // no hidden edges: every edge is internal or carried by exactly one channel
        for (const auto& n : g.nodes)
            for (NodeId in : n.inputs) {
                int fu = fdg.fragment_of(in), fv = fdg.fragment_of(n.id);
                if (fu == fv) continue;
                int carriers = 0;
                for (const auto& ch : fdg.channels) {
                    if (ch.from_fragment != fu || ch.to_fragment != fv) continue;
                    for (const auto& d : ch.spec.data) carriers += d.node == in ? 1 : 0;
                }
                CHECK(carriers == 1);
            }

        // determinism: a second run yields an identical structure
        auto fdg2 = generate_fdg(g);
        CHECK(dump_json(fdg) == dump_json(fdg2));
    }
}

TEST_CASE("local fdg execution equals direct interpretation for all three programs") {
    for (const char* name : {"ppo", "a3c", "mappo"}) {
        dfg::AlgoConfig cfg;
        cfg.algorithm = name;
        cfg.actors = 2;
        cfg.envs = 2;
        cfg.agents = std::string(name) == "mappo" ? 2 : 1;
        cfg.env_name = std::string(name) == "mappo" ? "spread_lite" : "gridline";
        cfg.hidden = {8, 8};
        cfg.loop = {2, 6};
        auto g = dfg::standard_program(name, cfg);
        auto direct = run_unpartitioned(g, 77);
        auto fdg = generate_fdg(g);
        auto local = fdg_execute_local(fdg, 77, g.loop);
        REQUIRE(local.final_params.size() == direct.final_params.size());
        for (size_t i = 0; i < direct.final_params.size(); ++i)
            CHECK(local.final_params[i] == direct.final_params[i]);
    }
}

TEST_CASE("zero-episode loop spec executes nothing") {
    auto g = dfg::standard_program("ppo", canonical_ppo());
    auto fdg = generate_fdg(g);
    auto res = fdg_execute_local(fdg, 1, {0, 8});
    CHECK(res.episode_rewards.empty());
    CHECK(res.steps == 0);
}

TEST_CASE("default partition: same fragment count as the annotated path") {
    auto g = dfg::standard_program("ppo", canonical_ppo());
    auto annotated = generate_fdg(g);
    dfg::DataflowGraph stripped = g;
    stripped.annotations.clear();
    auto fdg = default_partition(stripped);
    CHECK(fdg.fragments.size() == annotated.fragments.size());
    CHECK(role_multiset(fdg) == role_multiset(annotated));
}

TEST_CASE("default partition: single component collapses to one fragment") {
    dfg::GraphBuilder b;
    NodeId a = b.add(OpKind::Const, {}, {2}, DType::F32, {{"component", std::string("env")}});
    NodeId m = b.add(OpKind::Tanh, {a}, {}, DType::F32, {{"component", std::string("env")}});
    b.mark_output(m);
    auto fdg = default_partition(b.finish({1, 1}));
    CHECK(fdg.fragments.size() == 1);
    CHECK(fdg.channels.empty());
}

TEST_CASE("default partition: one producer fanning out to consumers picks Broadcast") {
    dfg::GraphBuilder b;
    NodeId src = b.add(OpKind::Const, {}, {2}, DType::F32, {{"component", std::string("env")}});
    NodeId a1 = b.add(OpKind::Tanh, {src}, {}, DType::F32, {{"component", std::string("actor")}});
    NodeId a2 = b.add(OpKind::Relu, {src}, {}, DType::F32, {{"component", std::string("actor")}});
    b.mark_output(a1);
    b.mark_output(a2);
    auto fdg = default_partition(b.finish({1, 1}));
    REQUIRE(fdg.fragments.size() == 3);
    REQUIRE_FALSE(fdg.channels.empty());
    for (const auto& ch : fdg.channels) CHECK(ch.spec.op == dfg::CommOp::Broadcast);
}

TEST_CASE("default partition requires component labels") {
    dfg::GraphBuilder b;
    NodeId a = b.add(OpKind::Const, {}, {2}, DType::F32);
    b.mark_output(a);
    CHECK_THROWS_AS((void)default_partition(b.finish({1, 1})), Error);
}

TEST_CASE("golden structure snapshot for the standard programs") {
    nlohmann::ordered_json got;
    for (const char* name : {"ppo", "a3c", "mappo"}) {
        dfg::AlgoConfig cfg = canonical_ppo();
        cfg.algorithm = name;
        if (std::string(name) == "a3c") {
            cfg.actors = 2;
            cfg.envs = 2;
        }
        if (std::string(name) == "mappo") {
            cfg.agents = 2;
            cfg.env_name = "spread_lite";
        }
        auto g = dfg::standard_program(name, cfg);
        auto fdg = generate_fdg(g);
        nlohmann::ordered_json entry;
        entry["node_count"] = g.nodes.size();
        entry["fragment_count"] = fdg.fragments.size();
        entry["channel_count"] = fdg.channels.size();
        nlohmann::ordered_json roles = nlohmann::ordered_json::object();
        for (auto& [role, n] : role_multiset(fdg)) roles[role] = n;
        entry["roles"] = roles;
        std::vector<std::string> tags;
        for (const auto& a : g.annotations) tags.push_back(a.tag);
        entry["tags"] = tags;
        got[name] = entry;
    }

    std::string path = std::string(GOLDEN_DIR) + "/program_structure.json";
    if (std::getenv("FRAGLOW_UPDATE_GOLDEN")) {
        std::ofstream out(path);
        out << got.dump(2) << "\n";
    }
    std::ifstream in(path);
    REQUIRE_MESSAGE(in.good(), "golden file missing; run with FRAGLOW_UPDATE_GOLDEN=1");
    nlohmann::ordered_json expect = nlohmann::ordered_json::parse(in);
    CHECK(got.dump(2) == expect.dump(2));
}
