#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "../core/tensor.hpp"

namespace fraglow::dfg {

using NodeId = int32_t;

enum class OpKind : uint8_t {
    Param,
    Const,
    Input,
    MatMul,
    Add,
    Mul,
    Tanh,
    Relu,
    Softmax,
    Concat,
    Slice,
    ReduceMean,
    ReduceSum,
    EnvReset,
    EnvStep,
    BufferInsert,
    BufferSample,
    PolicyApply,
    GaeAdv,
    DiscountedReturn,
    PpoLoss,
    A3cLoss,
    GradCompute,
    OptimStep,
    Output,
};

const char* op_name(OpKind k);
bool is_tensor_compute(OpKind k);  // the family allowed on accelerator slots
bool is_source(OpKind k);          // no dataflow inputs

enum class Resource : uint8_t { Cpu, Accel, Any };
enum class CommOp : uint8_t { AllGather, Gather, Scatter, Broadcast, SendRecv };
const char* comm_name(CommOp op);

using AttrValue = std::variant<int64_t, double, std::string>;
using Attrs = std::map<std::string, AttrValue>;

struct OpNode {
    NodeId id = -1;
    OpKind kind = OpKind::Const;
    std::vector<NodeId> inputs;
    Shape out_shape;
    DType out_dtype = DType::F32;
    Attrs attrs;
    Resource resource = Resource::Any;

    int64_t attr_int(const std::string& k, int64_t dflt) const;
    double attr_num(const std::string& k, double dflt) const;
    std::string attr_str(const std::string& k, const std::string& dflt = "") const;
    bool has_attr(const std::string& k) const { return attrs.count(k) > 0; }
};

struct PartitionAnnotation {
    int id = -1;
    std::set<NodeId> after_nodes;  // the cut lies immediately after these producers
    CommOp comm_op = CommOp::AllGather;
    std::vector<NodeId> data;      // values crossing the boundary
    std::string tag;
};

struct LoopSpec {
    int64_t episodes = 1;
    int64_t steps_per_episode = 1;
    enum class LearnEvery : uint8_t { Step, Episode } learn_every = LearnEvery::Episode;
};

// Execution phase of a node within the training loop; the loop itself stays
// in the runtime, never in the graph.
enum class Phase : uint8_t { Reset, Step, Learn, Resident };

struct DataflowGraph {
    std::vector<OpNode> nodes;
    std::vector<PartitionAnnotation> annotations;
    std::vector<NodeId> outputs;
    LoopSpec loop;

    const OpNode& node(NodeId id) const { return nodes.at(static_cast<size_t>(id)); }
    size_t size() const { return nodes.size(); }

    // Time-shifted bindings feeding Input nodes across loop iterations.
    struct Feedback {
        NodeId input = -1;
        NodeId reset_from = -1;  // value at episode start
        NodeId step_from = -1;   // value produced in step t, consumed in t+1
    };
    std::vector<Feedback> feedbacks() const;

    // Edge consumers plus feedback consumers, per node.
    std::vector<std::vector<NodeId>> consumers(bool with_feedback = true) const;
};

struct Violation {
    enum class Kind { OrphanNode, DanglingBoundaryData, BadFeedbackRef, UnknownOutput } kind;
    int subject = -1;  // node or annotation id
    std::string message;
};
const char* violation_name(Violation::Kind k);

class GraphBuilder {
  public:
    // Appends a node; inputs must exist; inferred shape must agree with
    // out_shape where inference is defined for the kind.
    NodeId add(OpKind kind, std::vector<NodeId> inputs, Shape out_shape, DType dtype = DType::F32,
               Attrs attrs = {}, Resource resource = Resource::Any);

    int annotate(std::set<NodeId> after_nodes, CommOp comm_op, std::vector<NodeId> data,
                 std::string tag);

    // Late attribute patch; needed for feedback references created after the
    // consuming Input node.
    void set_attr(NodeId id, const std::string& key, AttrValue value);

    void mark_output(NodeId id);
    DataflowGraph finish(LoopSpec loop = {});

    const DataflowGraph& peek() const { return g_; }

  private:
    DataflowGraph g_;
};

// Shape inference for derived kinds; empty optional when the kind's shape is
// declared rather than inferred.
std::optional<Shape> infer_shape(const DataflowGraph& g, OpKind kind,
                                 const std::vector<NodeId>& inputs, const Attrs& attrs);

// All violations; side-effect free and idempotent.
std::vector<Violation> validate(const DataflowGraph& g);

// Deterministic topological order: among ready nodes, lowest id first.
std::vector<NodeId> topo_order(const DataflowGraph& g);

// Per-node execution phase.
std::vector<Phase> node_phases(const DataflowGraph& g);

// Ancestors of `roots` over dataflow edges, including the roots.
std::set<NodeId> backward_closure(const DataflowGraph& g, const std::set<NodeId>& roots);

std::string dump_json(const DataflowGraph& g);

// Inverse of dump_json; dump-parse round trips are exact.
DataflowGraph graph_from_json(const std::string& text);

}  // namespace fraglow::dfg
