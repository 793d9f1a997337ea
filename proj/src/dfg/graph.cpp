#include "graph.hpp"

#include <algorithm>
#include <queue>

#include "../../vendor/json.hpp"

namespace fraglow::dfg {

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Param: return "Param";
        case OpKind::Const: return "Const";
        case OpKind::Input: return "Input";
        case OpKind::MatMul: return "MatMul";
        case OpKind::Add: return "Add";
        case OpKind::Mul: return "Mul";
        case OpKind::Tanh: return "Tanh";
        case OpKind::Relu: return "Relu";
        case OpKind::Softmax: return "Softmax";
        case OpKind::Concat: return "Concat";
        case OpKind::Slice: return "Slice";
        case OpKind::ReduceMean: return "ReduceMean";
        case OpKind::ReduceSum: return "ReduceSum";
        case OpKind::EnvReset: return "EnvReset";
        case OpKind::EnvStep: return "EnvStep";
        case OpKind::BufferInsert: return "BufferInsert";
        case OpKind::BufferSample: return "BufferSample";
        case OpKind::PolicyApply: return "PolicyApply";
        case OpKind::GaeAdv: return "GaeAdv";
        case OpKind::DiscountedReturn: return "DiscountedReturn";
        case OpKind::PpoLoss: return "PpoLoss";
        case OpKind::A3cLoss: return "A3cLoss";
        case OpKind::GradCompute: return "GradCompute";
        case OpKind::OptimStep: return "OptimStep";
        case OpKind::Output: return "Output";
    }
    return "?";
}

const char* comm_name(CommOp op) {
    switch (op) {
        case CommOp::AllGather: return "AllGather";
        case CommOp::Gather: return "Gather";
        case CommOp::Scatter: return "Scatter";
        case CommOp::Broadcast: return "Broadcast";
        case CommOp::SendRecv: return "SendRecv";
    }
    return "?";
}

const char* violation_name(Violation::Kind k) {
    switch (k) {
        case Violation::Kind::OrphanNode: return "OrphanNode";
        case Violation::Kind::DanglingBoundaryData: return "DanglingBoundaryData";
        case Violation::Kind::BadFeedbackRef: return "BadFeedbackRef";
        case Violation::Kind::UnknownOutput: return "UnknownOutput";
    }
    return "?";
}

bool is_tensor_compute(OpKind k) {
    switch (k) {
        case OpKind::MatMul:
        case OpKind::Add:
        case OpKind::Mul:
        case OpKind::Tanh:
        case OpKind::Relu:
        case OpKind::Softmax:
        case OpKind::Concat:
        case OpKind::Slice:
        case OpKind::ReduceMean:
        case OpKind::ReduceSum:
        case OpKind::PolicyApply:
        case OpKind::GaeAdv:
        case OpKind::DiscountedReturn:
        case OpKind::PpoLoss:
        case OpKind::A3cLoss:
        case OpKind::GradCompute:
        case OpKind::OptimStep:
            return true;
        default:
            return false;
    }
}

bool is_source(OpKind k) {
    return k == OpKind::Param || k == OpKind::Const || k == OpKind::Input ||
           k == OpKind::EnvReset || k == OpKind::BufferSample;
}

int64_t OpNode::attr_int(const std::string& k, int64_t dflt) const {
    auto it = attrs.find(k);
    if (it == attrs.end()) return dflt;
    if (const int64_t* v = std::get_if<int64_t>(&it->second)) return *v;
    if (const double* v = std::get_if<double>(&it->second)) return static_cast<int64_t>(*v);
    return dflt;
}

double OpNode::attr_num(const std::string& k, double dflt) const {
    auto it = attrs.find(k);
    if (it == attrs.end()) return dflt;
    if (const double* v = std::get_if<double>(&it->second)) return *v;
    if (const int64_t* v = std::get_if<int64_t>(&it->second)) return static_cast<double>(*v);
    return dflt;
}

std::string OpNode::attr_str(const std::string& k, const std::string& dflt) const {
    auto it = attrs.find(k);
    if (it == attrs.end()) return dflt;
    if (const std::string* v = std::get_if<std::string>(&it->second)) return *v;
    return dflt;
}

std::vector<DataflowGraph::Feedback> DataflowGraph::feedbacks() const {
    std::vector<Feedback> out;
    for (const OpNode& n : nodes) {
        if (n.kind != OpKind::Input) continue;
        if (!n.has_attr("reset_from") && !n.has_attr("step_from")) continue;
        Feedback f;
        f.input = n.id;
        f.reset_from = static_cast<NodeId>(n.attr_int("reset_from", -1));
        f.step_from = static_cast<NodeId>(n.attr_int("step_from", -1));
        out.push_back(f);
    }
    return out;
}

std::vector<std::vector<NodeId>> DataflowGraph::consumers(bool with_feedback) const {
    std::vector<std::vector<NodeId>> out(nodes.size());
    for (const OpNode& n : nodes)
        for (NodeId in : n.inputs) out[static_cast<size_t>(in)].push_back(n.id);
    if (with_feedback) {
        for (const Feedback& f : feedbacks()) {
            if (f.reset_from >= 0) out[static_cast<size_t>(f.reset_from)].push_back(f.input);
            if (f.step_from >= 0) out[static_cast<size_t>(f.step_from)].push_back(f.input);
        }
    }
    return out;
}

std::optional<Shape> infer_shape(const DataflowGraph& g, OpKind kind,
                                 const std::vector<NodeId>& inputs, const Attrs& attrs) {
    auto shape_of = [&](size_t i) -> const Shape& { return g.node(inputs[i]).out_shape; };
    auto attr_i = [&](const std::string& k, int64_t dflt) {
        auto it = attrs.find(k);
        if (it == attrs.end()) return dflt;
        if (const int64_t* v = std::get_if<int64_t>(&it->second)) return *v;
        if (const double* v = std::get_if<double>(&it->second)) return static_cast<int64_t>(*v);
        return dflt;
    };
    switch (kind) {
        case OpKind::Add:
        case OpKind::Mul: {
            const Shape &a = shape_of(0), &b = shape_of(1);
            // bias-style suffix broadcast keeps the lhs shape
            if (a == b) return a;
            if (b.size() <= a.size() &&
                std::equal(b.rbegin(), b.rend(), a.rbegin()))
                return a;
            fail(Errc::Shape, "elementwise shapes " + shape_str(a) + " vs " + shape_str(b));
        }
        case OpKind::Tanh:
        case OpKind::Relu:
        case OpKind::Softmax:
        case OpKind::Output:
            return shape_of(0);
        case OpKind::MatMul: {
            const Shape &a = shape_of(0), &b = shape_of(1);
            if (a.size() == 2 && b.size() == 2) {
                if (a[1] != b[0]) fail(Errc::Shape, "matmul inner dims");
                return Shape{a[0], b[1]};
            }
            if (a.size() == 2 && b.size() == 1) {
                if (a[1] != b[0]) fail(Errc::Shape, "matmul inner dims");
                return Shape{a[0]};
            }
            if (a.size() == 1 && b.size() == 2) {
                if (a[0] != b[0]) fail(Errc::Shape, "matmul inner dims");
                return Shape{b[1]};
            }
            fail(Errc::Shape, "matmul ranks " + shape_str(a) + " x " + shape_str(b));
        }
        case OpKind::Concat: {
            int64_t axis = attr_i("axis", 0);
            Shape s = shape_of(0);
            if (axis < 0 || axis >= static_cast<int64_t>(s.size())) fail(Errc::Shape, "concat axis");
            int64_t total = 0;
            for (size_t i = 0; i < inputs.size(); ++i) {
                const Shape& si = shape_of(i);
                if (si.size() != s.size()) fail(Errc::Shape, "concat rank mismatch");
                for (size_t d = 0; d < s.size(); ++d)
                    if (static_cast<int64_t>(d) != axis && si[d] != s[d])
                        fail(Errc::Shape, "concat non-axis dims");
                total += si[axis];
            }
            s[static_cast<size_t>(axis)] = total;
            return s;
        }
        case OpKind::Slice: {
            int64_t axis = attr_i("axis", 0), start = attr_i("start", 0), stop = attr_i("stop", 0);
            bool squeeze = attr_i("squeeze", 0) != 0;
            Shape s = shape_of(0);
            if (axis < 0 || axis >= static_cast<int64_t>(s.size())) fail(Errc::Shape, "slice axis");
            if (start < 0 || stop <= start || stop > s[static_cast<size_t>(axis)])
                fail(Errc::Shape, "slice range");
            s[static_cast<size_t>(axis)] = stop - start;
            if (squeeze && stop - start == 1) {
                Shape sq;
                for (size_t d = 0; d < s.size(); ++d)
                    if (static_cast<int64_t>(d) != axis) sq.push_back(s[d]);
                if (sq.empty()) sq = {1};
                return sq;
            }
            return s;
        }
        case OpKind::ReduceMean:
        case OpKind::ReduceSum: {
            int64_t axis = attr_i("axis", -1);
            if (axis < 0) return Shape{1};
            Shape s = shape_of(0);
            if (axis >= static_cast<int64_t>(s.size())) fail(Errc::Shape, "reduce axis");
            Shape out;
            for (size_t d = 0; d < s.size(); ++d)
                if (static_cast<int64_t>(d) != axis) out.push_back(s[d]);
            if (out.empty()) out = {1};
            return out;
        }
        case OpKind::PolicyApply: {
            const Shape& l = shape_of(0);
            if (l.size() != 2) fail(Errc::Shape, "policy apply expects [rows, actions] logits");
            return Shape{l[0], 2};  // columns: action index, log-probability
        }
        case OpKind::GaeAdv: {
            return shape_of(0);
        }
        case OpKind::DiscountedReturn:
            return shape_of(0);
        case OpKind::PpoLoss:
        case OpKind::A3cLoss:
            return Shape{1};
        case OpKind::BufferInsert:
        case OpKind::OptimStep:
            return Shape{1};
        default:
            return std::nullopt;  // declared shapes: Param/Const/Input/Env*/BufferSample/GradCompute
    }
}

NodeId GraphBuilder::add(OpKind kind, std::vector<NodeId> inputs, Shape out_shape, DType dtype,
                         Attrs attrs, Resource resource) {
    for (NodeId in : inputs)
        if (in < 0 || static_cast<size_t>(in) >= g_.nodes.size())
            fail(Errc::UnknownInput, "input node " + std::to_string(in) + " does not exist");
    if ((kind == OpKind::EnvReset || kind == OpKind::EnvStep) && resource == Resource::Accel)
        fail(Errc::InvalidResource, std::string(op_name(kind)) + " cannot require an accelerator");
    if (resource == Resource::Accel && !is_tensor_compute(kind))
        fail(Errc::InvalidResource, std::string(op_name(kind)) + " is outside the tensor-compute family");
    if (auto inferred = infer_shape(g_, kind, inputs, attrs)) {
        if (!out_shape.empty() && out_shape != *inferred)
            fail(Errc::Shape, std::string(op_name(kind)) + ": declared " + shape_str(out_shape) +
                                  " contradicts inferred " + shape_str(*inferred));
        out_shape = *inferred;
    }
    for (int64_t d : out_shape)
        if (d < 1) fail(Errc::Shape, "shape dims must be >= 1");
    OpNode n;
    n.id = static_cast<NodeId>(g_.nodes.size());
    n.kind = kind;
    n.inputs = std::move(inputs);
    n.out_shape = std::move(out_shape);
    n.out_dtype = dtype;
    n.attrs = std::move(attrs);
    n.resource = resource;
    g_.nodes.push_back(std::move(n));
    return g_.nodes.back().id;
}

int GraphBuilder::annotate(std::set<NodeId> after_nodes, CommOp comm_op, std::vector<NodeId> data,
                           std::string tag) {
    auto known = [&](NodeId id) { return id >= 0 && static_cast<size_t>(id) < g_.nodes.size(); };
    for (NodeId id : after_nodes)
        if (!known(id)) fail(Errc::UnknownNode, "annotation after unknown node " + std::to_string(id));
    for (NodeId id : data)
        if (!known(id)) fail(Errc::UnknownNode, "annotation data unknown node " + std::to_string(id));
    for (const auto& a : g_.annotations)
        if (a.tag == tag) fail(Errc::DuplicateTag, "annotation tag '" + tag + "' already used");
    PartitionAnnotation a;
    a.id = static_cast<int>(g_.annotations.size());
    a.after_nodes = std::move(after_nodes);
    a.comm_op = comm_op;
    a.data = std::move(data);
    a.tag = std::move(tag);
    g_.annotations.push_back(std::move(a));
    return g_.annotations.back().id;
}

void GraphBuilder::set_attr(NodeId id, const std::string& key, AttrValue value) {
    if (id < 0 || static_cast<size_t>(id) >= g_.nodes.size())
        fail(Errc::UnknownNode, "set_attr on unknown node " + std::to_string(id));
    g_.nodes[static_cast<size_t>(id)].attrs[key] = std::move(value);
}

void GraphBuilder::mark_output(NodeId id) {
    if (id < 0 || static_cast<size_t>(id) >= g_.nodes.size())
        fail(Errc::UnknownNode, "output node " + std::to_string(id) + " does not exist");
    g_.outputs.push_back(id);
}

DataflowGraph GraphBuilder::finish(LoopSpec loop) {
    if (loop.episodes < 0 || loop.steps_per_episode < 1)
        fail(Errc::Config, "loop spec requires episodes >= 0 and steps >= 1");
    g_.loop = loop;
    return std::move(g_);
}

std::set<NodeId> backward_closure(const DataflowGraph& g, const std::set<NodeId>& roots) {
    std::set<NodeId> seen = roots;
    std::vector<NodeId> stack(roots.begin(), roots.end());
    while (!stack.empty()) {
        NodeId id = stack.back();
        stack.pop_back();
        for (NodeId in : g.node(id).inputs)
            if (seen.insert(in).second) stack.push_back(in);
    }
    return seen;
}

namespace {

// Stateful pairs that must stay reachable through their state link: buffer
// inserts feed later samples, env resets feed later steps.
std::vector<std::pair<NodeId, NodeId>> state_bridges(const DataflowGraph& g) {
    std::vector<std::pair<NodeId, NodeId>> out;
    for (const OpNode& a : g.nodes) {
        if (a.kind == OpKind::BufferInsert) {
            for (const OpNode& b : g.nodes)
                if (b.kind == OpKind::BufferSample &&
                    a.attr_int("buffer", 0) == b.attr_int("buffer", 0))
                    out.emplace_back(a.id, b.id);
        } else if (a.kind == OpKind::EnvReset) {
            for (const OpNode& b : g.nodes)
                if (b.kind == OpKind::EnvStep && a.attr_int("env_group", 0) == b.attr_int("env_group", 0))
                    out.emplace_back(a.id, b.id);
        }
    }
    return out;
}

}  // namespace

std::vector<Violation> validate(const DataflowGraph& g) {
    std::vector<Violation> out;
    for (NodeId o : g.outputs)
        if (o < 0 || static_cast<size_t>(o) >= g.nodes.size())
            out.push_back({Violation::Kind::UnknownOutput, o, "output id out of range"});

    // Reachability to any output over edges, feedbacks and state bridges.
    auto cons = g.consumers(true);
    for (auto [from, to] : state_bridges(g)) cons[static_cast<size_t>(from)].push_back(to);
    std::vector<char> reaches(g.size(), 0);
    std::vector<NodeId> stack;
    for (NodeId o : g.outputs)
        if (o >= 0 && static_cast<size_t>(o) < g.size() && !reaches[static_cast<size_t>(o)]) {
            reaches[static_cast<size_t>(o)] = 1;
            stack.push_back(o);
        }
    // walk backwards: mark ancestors of outputs under the forward relation
    std::vector<std::vector<NodeId>> producers(g.size());
    for (size_t i = 0; i < g.size(); ++i)
        for (NodeId c : cons[i]) producers[static_cast<size_t>(c)].push_back(static_cast<NodeId>(i));
    while (!stack.empty()) {
        NodeId id = stack.back();
        stack.pop_back();
        for (NodeId p : producers[static_cast<size_t>(id)])
            if (!reaches[static_cast<size_t>(p)]) {
                reaches[static_cast<size_t>(p)] = 1;
                stack.push_back(p);
            }
    }
    for (const OpNode& n : g.nodes)
        if (!reaches[static_cast<size_t>(n.id)])
            out.push_back({Violation::Kind::OrphanNode, n.id,
                           std::string(op_name(n.kind)) + " node " + std::to_string(n.id) +
                               " never reaches an output"});

    for (const auto& f : g.feedbacks()) {
        auto bad = [&](NodeId id) { return id < -1 || id >= static_cast<NodeId>(g.size()); };
        if (bad(f.reset_from) || bad(f.step_from))
            out.push_back({Violation::Kind::BadFeedbackRef, f.input, "feedback references unknown node"});
    }

    // Each annotation datum must be produced on the pre-boundary side and
    // consumed across the cut. Parameter nodes ship to every consumer (all
    // their edges are cut at the boundary), so any consumer crosses.
    auto cons_fb = g.consumers(true);
    for (const PartitionAnnotation& a : g.annotations) {
        std::set<NodeId> roots = a.after_nodes;
        roots.insert(a.data.begin(), a.data.end());
        std::set<NodeId> pre = backward_closure(g, roots);
        for (NodeId d : a.data) {
            bool is_param = g.node(d).kind == OpKind::Param;
            bool crosses = false;
            for (NodeId c : cons_fb[static_cast<size_t>(d)])
                if (is_param || !pre.count(c)) {
                    crosses = true;
                    break;
                }
            if (!crosses)
                out.push_back({Violation::Kind::DanglingBoundaryData, a.id,
                               "annotation '" + a.tag + "' datum " + std::to_string(d) +
                                   " is not consumed across the cut"});
        }
    }
    return out;
}

std::vector<NodeId> topo_order(const DataflowGraph& g) {
    std::vector<int> indeg(g.size(), 0);
    for (const OpNode& n : g.nodes) indeg[static_cast<size_t>(n.id)] = static_cast<int>(n.inputs.size());
    auto cons = g.consumers(false);
    std::priority_queue<NodeId, std::vector<NodeId>, std::greater<>> ready;
    for (const OpNode& n : g.nodes)
        if (indeg[static_cast<size_t>(n.id)] == 0) ready.push(n.id);
    std::vector<NodeId> order;
    order.reserve(g.size());
    while (!ready.empty()) {
        NodeId id = ready.top();
        ready.pop();
        order.push_back(id);
        for (NodeId c : cons[static_cast<size_t>(id)])
            if (--indeg[static_cast<size_t>(c)] == 0) ready.push(c);
    }
    if (order.size() != g.size()) fail(Errc::Runtime, "graph has a cycle");
    return order;
}

std::vector<Phase> node_phases(const DataflowGraph& g) {
    std::vector<Phase> phase(g.size(), Phase::Step);
    for (const OpNode& n : g.nodes) {
        if (n.kind == OpKind::Param || n.kind == OpKind::Const)
            phase[static_cast<size_t>(n.id)] = Phase::Resident;
        else if (n.kind == OpKind::EnvReset)
            phase[static_cast<size_t>(n.id)] = Phase::Reset;
    }
    // Learn: the forward closure of buffer samples.
    auto cons = g.consumers(false);
    std::vector<NodeId> stack;
    for (const OpNode& n : g.nodes)
        if (n.kind == OpKind::BufferSample) {
            phase[static_cast<size_t>(n.id)] = Phase::Learn;
            stack.push_back(n.id);
        }
    while (!stack.empty()) {
        NodeId id = stack.back();
        stack.pop_back();
        for (NodeId c : cons[static_cast<size_t>(id)]) {
            Phase& p = phase[static_cast<size_t>(c)];
            if (p != Phase::Learn && p != Phase::Resident) {
                p = Phase::Learn;
                stack.push_back(c);
            }
        }
    }
    return phase;
}

std::string dump_json(const DataflowGraph& g) {
    using json = nlohmann::ordered_json;
    json out;
    out["nodes"] = json::array();
    for (const OpNode& n : g.nodes) {
        json jn;
        jn["id"] = n.id;
        jn["kind"] = op_name(n.kind);
        jn["inputs"] = n.inputs;
        jn["shape"] = n.out_shape;
        jn["dtype"] = dtype_name(n.out_dtype);
        json attrs = json::object();
        for (const auto& [k, v] : n.attrs) {
            if (const int64_t* i = std::get_if<int64_t>(&v))
                attrs[k] = *i;
            else if (const double* d = std::get_if<double>(&v))
                attrs[k] = *d;
            else
                attrs[k] = std::get<std::string>(v);
        }
        jn["attrs"] = attrs;
        jn["resource"] = n.resource == Resource::Cpu ? "cpu" : n.resource == Resource::Accel ? "accel" : "any";
        out["nodes"].push_back(jn);
    }
    out["annotations"] = json::array();
    for (const PartitionAnnotation& a : g.annotations) {
        json ja;
        ja["id"] = a.id;
        ja["after"] = std::vector<NodeId>(a.after_nodes.begin(), a.after_nodes.end());
        ja["comm"] = comm_name(a.comm_op);
        ja["data"] = a.data;
        ja["tag"] = a.tag;
        out["annotations"].push_back(ja);
    }
    out["outputs"] = g.outputs;
    out["loop"] = {{"episodes", g.loop.episodes},
                   {"steps_per_episode", g.loop.steps_per_episode},
                   {"learn_every", g.loop.learn_every == LoopSpec::LearnEvery::Step ? "step" : "episode"}};
    return out.dump(2);
}

namespace {

OpKind op_from_name(const std::string& s) {
    for (int k = 0; k <= static_cast<int>(OpKind::Output); ++k)
        if (s == op_name(static_cast<OpKind>(k))) return static_cast<OpKind>(k);
    fail(Errc::Config, "unknown op kind '" + s + "'");
}

CommOp comm_from_name(const std::string& s) {
    for (int k = 0; k <= static_cast<int>(CommOp::SendRecv); ++k)
        if (s == comm_name(static_cast<CommOp>(k))) return static_cast<CommOp>(k);
    fail(Errc::Config, "unknown comm op '" + s + "'");
}

DType dtype_from_name(const std::string& s) {
    if (s == "f32") return DType::F32;
    if (s == "f64") return DType::F64;
    if (s == "i64") return DType::I64;
    if (s == "bool") return DType::Bool;
    fail(Errc::Config, "unknown dtype '" + s + "'");
}

}  // namespace

DataflowGraph graph_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    DataflowGraph g;
    for (const auto& jn : j.at("nodes")) {
        OpNode n;
        n.id = jn.at("id").get<NodeId>();
        n.kind = op_from_name(jn.at("kind").get<std::string>());
        n.inputs = jn.at("inputs").get<std::vector<NodeId>>();
        n.out_shape = jn.at("shape").get<Shape>();
        n.out_dtype = dtype_from_name(jn.at("dtype").get<std::string>());
        for (auto it = jn.at("attrs").begin(); it != jn.at("attrs").end(); ++it) {
            if (it->is_number_integer())
                n.attrs[it.key()] = it->get<int64_t>();
            else if (it->is_number())
                n.attrs[it.key()] = it->get<double>();
            else
                n.attrs[it.key()] = it->get<std::string>();
        }
        std::string res = jn.at("resource").get<std::string>();
        n.resource = res == "cpu" ? Resource::Cpu : res == "accel" ? Resource::Accel : Resource::Any;
        if (n.id != static_cast<NodeId>(g.nodes.size())) fail(Errc::Config, "node ids must be dense");
        g.nodes.push_back(std::move(n));
    }
    for (const auto& ja : j.at("annotations")) {
        PartitionAnnotation a;
        a.id = ja.at("id").get<int>();
        auto after = ja.at("after").get<std::vector<NodeId>>();
        a.after_nodes.insert(after.begin(), after.end());
        a.comm_op = comm_from_name(ja.at("comm").get<std::string>());
        a.data = ja.at("data").get<std::vector<NodeId>>();
        a.tag = ja.at("tag").get<std::string>();
        g.annotations.push_back(std::move(a));
    }
    g.outputs = j.at("outputs").get<std::vector<NodeId>>();
    g.loop.episodes = j.at("loop").at("episodes").get<int64_t>();
    g.loop.steps_per_episode = j.at("loop").at("steps_per_episode").get<int64_t>();
    g.loop.learn_every = j.at("loop").at("learn_every").get<std::string>() == "step"
                             ? LoopSpec::LearnEvery::Step
                             : LoopSpec::LearnEvery::Episode;
    return g;
}

}  // namespace fraglow::dfg
