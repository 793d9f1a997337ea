#pragma once

#include "../dfg/programs.hpp"
#include "../fdgc/fdg.hpp"

namespace fraglow::plan {

enum class SlotKind : uint8_t { Cpu, Accel };

struct DeviceSlot {
    int worker = 0;
    int slot = 0;
    SlotKind kind = SlotKind::Cpu;
};

enum class Policy : uint8_t { DpA, DpB, DpC, DpD, DpE, DpF };
Policy parse_policy(const std::string& name);  // short ("dp-a") or paper spelling
const char* policy_name(Policy p);

struct DeploymentConfig {
    std::vector<std::string> workers;  // network addresses; index = worker id
    int cpu_slots = 4;
    int accel_slots = 2;
    Policy policy = Policy::DpA;

    void validate() const;
    int worker_count() const { return static_cast<int>(workers.size()); }
};

struct Instance {
    int id = -1;
    int fragment = -1;
    int replica = 0;
    DeviceSlot slot;
    int64_t env_lo = 0, env_hi = 0;  // environment ownership, aligned by replica
};

// Post-fusion execution unit: one Interp at runtime. A fused group of
// replicas becomes a single unit owning the union of their rows.
struct ExecUnit {
    int id = -1;
    int fragment = -1;
    std::vector<int> instance_ids;
    DeviceSlot slot;
    int64_t env_lo = 0, env_hi = 0;
    int grad_group = -1;     // learners aggregating gradients together
    bool param_server = false;
};

struct ChannelLeg {
    int from_unit = -1, to_unit = -1;
    bool tcp = false;
};

struct PlanChannel {
    int id = -1;
    int fdg_channel = -1;  // -1: synthetic (gradient sync / parameter server)
    enum class Kind : uint8_t { Data, GradSync, ServerPush, ServerBroadcast } kind = Kind::Data;
    fdgc::Timing timing = fdgc::Timing::PerStep;
    std::vector<ChannelLeg> legs;
};

struct PlacementPlan {
    fdgc::FDG fdg;  // possibly transformed (DP-D fuses the full loop)
    Policy policy = Policy::DpA;
    int64_t env_total = 0;
    std::vector<Instance> instances;
    std::vector<std::vector<int>> fusion_groups;  // instance ids sharing one unit
    std::vector<ExecUnit> units;
    std::vector<PlanChannel> channels;
    int server_unit = -1;                   // DP-F
    std::vector<dfg::NodeId> server_params;

    const ExecUnit& unit_of_instance(int instance_id) const;
};

// Maps fragment instances to worker device slots per the chosen policy.
PlacementPlan make_plan(const fdgc::FDG& fdg, const DeploymentConfig& deploy,
                        const dfg::AlgoConfig& algo);

// Declares k instances of a fragment; arity of its boundaries follows at
// plan materialization. Single-learner policies refuse learner replication.
struct Replication {
    std::map<int, int> counts;  // fragment -> k
    int count(int frag) const {
        auto it = counts.find(frag);
        return it == counts.end() ? 1 : it->second;
    }
};
void replicate(Replication& rep, const fdgc::FDG& fdg, int fragment, int k, Policy policy);

// Fuses co-located replicas of one fragment into a batched unit.
void fuse(PlacementPlan& plan, const std::vector<int>& instance_ids);

// Even environment division, remainder to the lowest replica indices.
std::vector<std::pair<int64_t, int64_t>> split_envs(int64_t total, int k);

struct PlanViolation {
    std::string code;
    std::string message;
};

std::vector<PlanViolation> validate_plan(const PlacementPlan& plan, const DeploymentConfig& deploy);

std::string dump_json(const PlacementPlan& plan);

}  // namespace fraglow::plan
