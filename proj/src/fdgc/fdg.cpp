#include "fdg.hpp"

#include <algorithm>
#include <sstream>

#include "../../vendor/json.hpp"

namespace fraglow::fdgc {

using dfg::OpKind;
using dfg::OpNode;
using dfg::Phase;

const char* role_name(RoleTag r) {
    switch (r) {
        case RoleTag::ActorLike: return "actor";
        case RoleTag::LearnerLike: return "learner";
        case RoleTag::EnvLike: return "env";
        case RoleTag::Fused: return "fused";
        case RoleTag::Other: return "other";
    }
    return "?";
}

const char* timing_name(Timing t) {
    switch (t) {
        case Timing::Reset: return "reset";
        case Timing::PerStep: return "per_step";
        case Timing::PerEpisode: return "per_episode";
    }
    return "?";
}

int FDG::fragment_of(NodeId node) const {
    for (const Fragment& f : fragments)
        if (f.nodes.count(node) && !f.entry_nodes.count(node)) return f.id;
    return -1;
}

namespace {

CommDatum datum_for(const DataflowGraph& g, NodeId id) {
    const OpNode& n = g.node(id);
    CommDatum d;
    d.node = id;
    d.shape = n.out_shape;
    d.dtype = n.out_dtype;
    d.row_layout = n.attr_str("rows", "");
    d.rows_n = n.attr_int("rows_n", 1);
    d.rows_t = n.attr_int("rows_t", 1);
    return d;
}

Timing timing_for_tag(const DataflowGraph& g, const dfg::PartitionAnnotation& a,
                      const std::vector<Phase>& phases) {
    if (a.tag == "Action" || a.tag == "Step") return Timing::PerStep;
    if (a.tag == "Reset") return Timing::Reset;
    if (a.tag == "Buffer" || a.tag == "Learner" || a.tag == "Grads") return Timing::PerEpisode;
    // Generic graphs: derive from the data nodes' phases.
    for (NodeId d : a.data) {
        Phase p = phases[static_cast<size_t>(d)];
        if (p == Phase::Reset) return Timing::Reset;
        if (p == Phase::Learn) return Timing::PerEpisode;
    }
    (void)g;
    return Timing::PerStep;
}

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(size_t n) : parent(n) {
        for (size_t i = 0; i < n; ++i) parent[i] = static_cast<int>(i);
    }
    int find(int x) {
        while (parent[static_cast<size_t>(x)] != x) {
            parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
            x = parent[static_cast<size_t>(x)];
        }
        return x;
    }
    void unite(int a, int b) { parent[static_cast<size_t>(find(a))] = find(b); }
};

struct CutEdge {
    NodeId from, to;
    int boundary;
};

// Shared assembly: regions from the cut set, common-node duplication,
// interface generation, channel synthesis.
FDG assemble(const DataflowGraph& g, const std::map<int, Boundary>& boundaries,
             const std::vector<CutEdge>& cuts, UnionFind& uf) {
    // Stateful affinities: env reset/step pairs and buffer insert/sample
    // pairs share single-owner state and must land in one fragment.
    for (const OpNode& a : g.nodes) {
        if (a.kind == OpKind::EnvReset) {
            for (const OpNode& b : g.nodes)
                if (b.kind == OpKind::EnvStep && a.attr_int("env_group", 0) == b.attr_int("env_group", 0))
                    uf.unite(a.id, b.id);
        } else if (a.kind == OpKind::BufferInsert) {
            for (const OpNode& b : g.nodes)
                if (b.kind == OpKind::BufferSample && a.attr_int("buffer", 0) == b.attr_int("buffer", 0))
                    uf.unite(a.id, b.id);
        }
    }

    FDG fdg;
    fdg.parent = &g;
    // Fragment ids ordered by the smallest node id in each region.
    std::map<int, std::vector<NodeId>> regions;
    for (const OpNode& n : g.nodes) regions[uf.find(n.id)].push_back(n.id);
    std::vector<std::pair<NodeId, int>> order;
    for (auto& [root, members] : regions) order.emplace_back(*std::min_element(members.begin(), members.end()), root);
    std::sort(order.begin(), order.end());
    std::map<int, int> frag_of_root;
    auto phases = dfg::node_phases(g);
    for (auto& [min_id, root] : order) {
        Fragment f;
        f.id = static_cast<int>(fdg.fragments.size());
        for (NodeId m : regions[root]) f.nodes.insert(m);
        frag_of_root[root] = f.id;
        fdg.fragments.push_back(std::move(f));
    }
    auto frag_of = [&](NodeId n) { return frag_of_root.at(uf.find(n)); };

    // Channels: one per (boundary, producer fragment, consumer fragment).
    std::map<std::tuple<int, int, int>, std::vector<NodeId>> groups;
    for (const CutEdge& c : cuts) {
        int from = frag_of(c.from), to = frag_of(c.to);
        if (from == to) continue;  // value is locally available
        auto& data = groups[{c.boundary, from, to}];
        if (std::find(data.begin(), data.end(), c.from) == data.end()) data.push_back(c.from);
        fdg.fragments[static_cast<size_t>(to)].nodes.insert(c.from);
        fdg.fragments[static_cast<size_t>(to)].entry_nodes.insert(c.from);
    }
    for (auto& [key, data] : groups) {
        auto [bid, from, to] = key;
        const Boundary& b = boundaries.at(bid);
        ChannelDef ch;
        ch.id = static_cast<int>(fdg.channels.size());
        ch.from_fragment = from;
        ch.to_fragment = to;
        ch.spec.op = b.spec.op;
        ch.spec.blocking = b.spec.blocking && !b.async;
        ch.spec.tag = b.spec.tag;
        ch.spec.annotation = bid;
        // keep the boundary's declared datum order
        for (const CommDatum& d : b.spec.data)
            if (std::find(data.begin(), data.end(), d.node) != data.end()) ch.spec.data.push_back(d);
        ch.timing = b.timing;
        ch.async = b.async;
        fdg.channels.push_back(std::move(ch));
    }

    // Feedback channels: time-shifted deliveries into Input bindings.
    for (const auto& fb : g.feedbacks()) {
        auto add_feedback = [&](NodeId src, Timing timing) {
            if (src < 0) return;
            int from = frag_of(src), to = frag_of(fb.input);
            if (from == to) return;
            ChannelDef ch;
            ch.id = static_cast<int>(fdg.channels.size());
            ch.from_fragment = from;
            ch.to_fragment = to;
            ch.feedback = true;
            ch.feedback_input = fb.input;
            ch.timing = timing;
            ch.spec.op = CommOp::SendRecv;
            ch.spec.tag = timing == Timing::Reset ? "Reset/feedback" : "Step/feedback";
            for (const auto& [bid, b] : boundaries)
                for (const CommDatum& d : b.spec.data)
                    if (d.node == src) {
                        ch.spec.op = b.spec.op;
                        ch.spec.tag = b.spec.tag + "/feedback";
                        ch.spec.annotation = bid;
                    }
            ch.spec.data.push_back(datum_for(g, src));
            fdg.channels.push_back(std::move(ch));
        };
        add_feedback(fb.reset_from, Timing::Reset);
        add_feedback(fb.step_from, Timing::PerStep);
    }

    // Interfaces, resource, role, sync.
    for (Fragment& f : fdg.fragments) {
        for (const ChannelDef& ch : fdg.channels) {
            if (ch.from_fragment == f.id) f.exits.push_back(ch.spec);
            if (ch.to_fragment == f.id) f.entries.push_back(ch.spec);
        }
        f.resource = dfg::Resource::Cpu;
        bool has_step = false;
        bool has_optim = false, has_env = false, has_policy = false;
        for (NodeId id : f.nodes) {
            if (f.entry_nodes.count(id)) continue;
            const OpNode& n = g.node(id);
            if (n.resource == dfg::Resource::Accel) f.resource = dfg::Resource::Accel;
            if (phases[static_cast<size_t>(id)] == Phase::Step) has_step = true;
            if (n.kind == OpKind::OptimStep) has_optim = true;
            if (n.kind == OpKind::EnvReset || n.kind == OpKind::EnvStep) has_env = true;
            if (n.kind == OpKind::PolicyApply) has_policy = true;
        }
        f.sync = has_step ? SyncKind::PerStep : SyncKind::PerEpisode;
        f.role = has_optim ? RoleTag::LearnerLike
                 : has_env ? RoleTag::EnvLike
                 : has_policy ? RoleTag::ActorLike
                              : RoleTag::Other;
    }
    return fdg;
}

}  // namespace

std::map<int, Boundary> annotation_parser(const DataflowGraph& g) {
    std::map<int, Boundary> out;
    auto phases = dfg::node_phases(g);
    for (const auto& a : g.annotations) {
        Boundary b;
        b.annotation = a.id;
        b.after = a.after_nodes;
        b.spec.op = a.comm_op;
        b.spec.tag = a.tag;
        b.spec.annotation = a.id;
        for (NodeId d : a.data) b.spec.data.push_back(datum_for(g, d));
        b.timing = timing_for_tag(g, a, phases);
        for (NodeId d : a.data)
            if (g.node(d).kind == OpKind::GradCompute && a.comm_op == CommOp::SendRecv) b.async = true;
        b.spec.blocking = !b.async;
        out[a.id] = b;
    }
    return out;
}

std::set<NodeId> label_common_nodes(const DataflowGraph& g, const std::map<int, Boundary>& boundaries) {
    (void)g;
    std::set<NodeId> out;
    for (const auto& [id, b] : boundaries)
        for (const CommDatum& d : b.spec.data) out.insert(d.node);
    return out;
}

FDG generate_fdg(const DataflowGraph& g) {
    auto violations = dfg::validate(g);
    if (!violations.empty())
        fail(Errc::Runtime, "generate_fdg on invalid graph: " + violations.front().message);
    auto boundaries = annotation_parser(g);

    // Adjacent duplicate annotations enclose no nodes between their cuts.
    for (auto it = boundaries.begin(); it != boundaries.end(); ++it)
        for (auto jt = std::next(it); jt != boundaries.end(); ++jt) {
            auto data_set = [](const Boundary& b) {
                std::set<NodeId> s;
                for (const CommDatum& d : b.spec.data) s.insert(d.node);
                return s;
            };
            if (it->second.after == jt->second.after && data_set(it->second) == data_set(jt->second))
                fail(Errc::EmptyFragment, "annotations '" + it->second.spec.tag + "' and '" +
                                              jt->second.spec.tag + "' enclose no nodes");
        }

    auto consumers = g.consumers(false);
    std::vector<CutEdge> cuts;
    std::set<std::pair<NodeId, NodeId>> cut_set;
    for (const auto& [bid, b] : boundaries) {
        std::set<NodeId> roots = b.after;
        for (const CommDatum& d : b.spec.data) roots.insert(d.node);
        std::set<NodeId> pre = dfg::backward_closure(g, roots);
        for (const CommDatum& d : b.spec.data) {
            bool is_param = g.node(d.node).kind == OpKind::Param;
            for (NodeId c : consumers[static_cast<size_t>(d.node)]) {
                if (!is_param && pre.count(c)) continue;
                if (cut_set.insert({d.node, c}).second) cuts.push_back({d.node, c, bid});
            }
        }
    }

    UnionFind uf(g.size());
    for (const OpNode& n : g.nodes)
        for (NodeId in : n.inputs)
            if (!cut_set.count({in, n.id})) uf.unite(in, n.id);
    // A Param named in a boundary belongs to the boundary's home region.
    for (const auto& [bid, b] : boundaries)
        for (const CommDatum& d : b.spec.data)
            if (g.node(d.node).kind == OpKind::Param && !b.after.empty())
                uf.unite(d.node, *b.after.begin());

    return assemble(g, boundaries, cuts, uf);
}

FDG default_partition(const DataflowGraph& g) {
    if (!g.annotations.empty())
        fail(Errc::Config, "default partitioning applies to annotation-free graphs");
    for (const OpNode& n : g.nodes)
        if (n.attr_str("component").empty())
            fail(Errc::MissingLabel, "node " + std::to_string(n.id) + " carries no component label");

    auto label = [&](NodeId id) { return g.node(id).attr_str("component"); };
    UnionFind uf(g.size());
    std::vector<CutEdge> cuts;
    for (const OpNode& n : g.nodes)
        for (NodeId in : n.inputs) {
            if (label(in) == label(n.id))
                uf.unite(in, n.id);
            else
                cuts.push_back({in, n.id, -1});
        }

    // Synthesize one boundary per crossing label pair; the communication op
    // follows the fan pattern between the producer and consumer components.
    std::map<std::pair<std::string, std::string>, std::vector<CutEdge*>> pairs;
    for (CutEdge& c : cuts) pairs[{label(c.from), label(c.to)}].push_back(&c);
    std::map<int, Boundary> boundaries;
    auto phases = dfg::node_phases(g);
    int next_id = 0;
    for (auto& [lp, edges] : pairs) {
        Boundary b;
        b.annotation = next_id;
        std::set<int> producers, consumers;
        std::set<NodeId> data_seen;
        for (CutEdge* e : edges) {
            e->boundary = next_id;
            producers.insert(uf.find(e->from));
            consumers.insert(uf.find(e->to));
            if (data_seen.insert(e->from).second) {
                b.spec.data.push_back(datum_for(g, e->from));
                b.after.insert(e->from);
            }
        }
        size_t np = producers.size(), nc = consumers.size();
        b.spec.op = np > 1 && nc == 1   ? CommOp::Gather
                    : np == 1 && nc > 1 ? CommOp::Broadcast
                    : np == 1 && nc == 1 ? CommOp::SendRecv
                                         : CommOp::AllGather;
        b.spec.tag = lp.first + ">" + lp.second;
        b.timing = Timing::PerStep;
        for (NodeId d : b.after) {
            Phase p = phases[static_cast<size_t>(d)];
            if (p == Phase::Reset) b.timing = Timing::Reset;
            if (p == Phase::Learn) b.timing = Timing::PerEpisode;
        }
        boundaries[next_id] = b;
        next_id++;
    }
    return assemble(g, boundaries, cuts, uf);
}

std::string dump_json(const FDG& fdg) {
    using json = nlohmann::ordered_json;
    json out;
    auto spec_json = [](const CommSpec& s) {
        json js;
        js["op"] = dfg::comm_name(s.op);
        js["tag"] = s.tag;
        js["blocking"] = s.blocking;
        js["data"] = json::array();
        for (const CommDatum& d : s.data)
            js["data"].push_back({{"node", d.node}, {"shape", d.shape}, {"dtype", dtype_name(d.dtype)}});
        return js;
    };
    out["fragments"] = nlohmann::ordered_json::array();
    for (const Fragment& f : fdg.fragments) {
        json jf;
        jf["id"] = f.id;
        jf["nodes"] = std::vector<NodeId>(f.nodes.begin(), f.nodes.end());
        jf["entry"] = json::array();
        for (const CommSpec& s : f.entries) jf["entry"].push_back(spec_json(s));
        jf["exit"] = json::array();
        for (const CommSpec& s : f.exits) jf["exit"].push_back(spec_json(s));
        jf["resource"] = f.resource == dfg::Resource::Accel ? "accel" : "cpu";
        jf["role"] = role_name(f.role);
        jf["sync"] = f.sync == SyncKind::PerStep ? "per_step" : "per_episode";
        out["fragments"].push_back(jf);
    }
    out["channels"] = json::array();
    for (const ChannelDef& c : fdg.channels) {
        json jc;
        jc["id"] = c.id;
        jc["from"] = c.from_fragment;
        jc["to"] = c.to_fragment;
        jc["timing"] = timing_name(c.timing);
        jc["feedback"] = c.feedback;
        jc["async"] = c.async;
        jc["spec"] = spec_json(c.spec);
        out["channels"].push_back(jc);
    }
    return out.dump(2);
}

std::string dump_dot(const FDG& fdg) {
    std::ostringstream os;
    os << "digraph fdg {\n  rankdir=LR;\n  node [shape=box];\n";
    for (const Fragment& f : fdg.fragments) {
        os << "  f" << f.id << " [label=\"F" << f.id << " " << role_name(f.role) << "\\n"
           << f.nodes.size() << " nodes, " << (f.resource == dfg::Resource::Accel ? "accel" : "cpu")
           << "\"];\n";
    }
    for (const ChannelDef& c : fdg.channels) {
        os << "  f" << c.from_fragment << " -> f" << c.to_fragment << " [label=\"" << c.spec.tag
           << "\"" << (c.feedback ? ", style=dashed" : "") << "];\n";
    }
    os << "}\n";
    return os.str();
}

}  // namespace fraglow::fdgc
