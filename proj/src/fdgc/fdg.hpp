#pragma once

#include <map>

#include "../dfg/graph.hpp"
#include "../run/interp.hpp"

namespace fraglow::fdgc {

using dfg::CommOp;
using dfg::DataflowGraph;
using dfg::NodeId;

struct CommDatum {
    NodeId node = -1;
    Shape shape;
    DType dtype = DType::F32;
    // Leading-dim semantics for replication-aware reassembly:
    // "env" (E rows), "agent_env" (N*E), "time_agent_env" (T*N*E), "" (whole).
    std::string row_layout;
    int64_t rows_n = 1;  // agent blocks
    int64_t rows_t = 1;  // time blocks
};

struct CommSpec {
    CommOp op = CommOp::AllGather;
    std::vector<CommDatum> data;
    bool blocking = true;
    std::string tag;
    int annotation = -1;
};

enum class RoleTag : uint8_t { ActorLike, LearnerLike, EnvLike, Fused, Other };
const char* role_name(RoleTag r);

enum class SyncKind : uint8_t { PerStep, PerEpisode };

// Channel firing point within the episode loop.
enum class Timing : uint8_t { Reset, PerStep, PerEpisode };
const char* timing_name(Timing t);

struct Fragment {
    int id = -1;
    std::set<NodeId> nodes;       // owned nodes plus duplicated entry commons
    std::set<NodeId> entry_nodes; // the duplicated commons (externally fed)
    std::vector<CommSpec> entries;
    std::vector<CommSpec> exits;
    dfg::Resource resource = dfg::Resource::Cpu;
    RoleTag role = RoleTag::Other;
    SyncKind sync = SyncKind::PerEpisode;
};

struct ChannelDef {
    int id = -1;
    int from_fragment = -1;
    int to_fragment = -1;
    CommSpec spec;
    Timing timing = Timing::PerStep;
    bool feedback = false;  // deliver one step later, into an Input binding
    bool async = false;     // gradient push, bypasses barriers
    NodeId feedback_input = -1;
};

struct FDG {
    std::vector<Fragment> fragments;
    std::vector<ChannelDef> channels;
    const DataflowGraph* parent = nullptr;

    const Fragment& fragment(int id) const { return fragments.at(static_cast<size_t>(id)); }
    int fragment_of(NodeId node) const;  // owning fragment (not entry copies)
};

struct Boundary {
    int annotation = -1;
    CommSpec spec;
    std::set<NodeId> after;
    Timing timing = Timing::PerStep;
    bool async = false;
};

// One boundary entry per annotation, with shapes resolved from node shapes.
std::map<int, Boundary> annotation_parser(const DataflowGraph& g);

// Union of all boundaries' data node ids.
std::set<NodeId> label_common_nodes(const DataflowGraph& g, const std::map<int, Boundary>& boundaries);

// Alg. 2: partition the graph at the common nodes, duplicate them into both
// adjacent fragments, and attach entry/exit interfaces.
FDG generate_fdg(const DataflowGraph& g);

// Annotation-free partitioning along component labels (actor/learner/env/...);
// communication chosen from the dataflow fan pattern.
FDG default_partition(const DataflowGraph& g);

struct LocalRunResult {
    std::vector<double> episode_rewards;  // mean per environment
    std::map<NodeId, Tensor> outputs;
    std::vector<double> final_params;  // flat, optimizer order; empty if none
    int64_t grad_messages = 0;
    int64_t steps = 0;
};

// Single-process, single-threaded reference execution of an FDG; the
// determinism oracle the distributed runtime is checked against.
LocalRunResult fdg_execute_local(const FDG& fdg, uint64_t seed, const dfg::LoopSpec& loop);

// Direct interpretation of the unpartitioned graph under the same seed.
LocalRunResult run_unpartitioned(const DataflowGraph& g, uint64_t seed,
                                 const std::map<NodeId, Tensor>& input_bindings = {});

std::string dump_json(const FDG& fdg);
std::string dump_dot(const FDG& fdg);

}  // namespace fraglow::fdgc
