#include "plan.hpp"

#include <algorithm>

#include "../../vendor/json.hpp"

namespace fraglow::plan {

using dfg::OpKind;
using fdgc::ChannelDef;
using fdgc::FDG;
using fdgc::Fragment;
using fdgc::RoleTag;
using fdgc::Timing;

Policy parse_policy(const std::string& name) {
    std::string n = name;
    std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
    if (n == "dp-a" || n == "single_learner_coarse") return Policy::DpA;
    if (n == "dp-b" || n == "single_learner_fine") return Policy::DpB;
    if (n == "dp-c" || n == "multiple_learners") return Policy::DpC;
    if (n == "dp-d" || n == "gpu_only") return Policy::DpD;
    if (n == "dp-e" || n == "environments") return Policy::DpE;
    if (n == "dp-f" || n == "central") return Policy::DpF;
    fail(Errc::Config, "unknown distribution policy '" + name + "'");
}

const char* policy_name(Policy p) {
    switch (p) {
        case Policy::DpA: return "dp-a";
        case Policy::DpB: return "dp-b";
        case Policy::DpC: return "dp-c";
        case Policy::DpD: return "dp-d";
        case Policy::DpE: return "dp-e";
        case Policy::DpF: return "dp-f";
    }
    return "?";
}

void DeploymentConfig::validate() const {
    if (workers.empty()) fail(Errc::Config, "deployment needs at least one worker");
    if (cpu_slots < 1) fail(Errc::Config, "each worker needs at least one cpu slot");
    if (accel_slots < 0) fail(Errc::Config, "negative accel slot count");
}

std::vector<std::pair<int64_t, int64_t>> split_envs(int64_t total, int k) {
    std::vector<std::pair<int64_t, int64_t>> out;
    int64_t base = total / k, rem = total % k, lo = 0;
    for (int r = 0; r < k; ++r) {
        int64_t n = base + (r < rem ? 1 : 0);
        out.emplace_back(lo, lo + n);
        lo += n;
    }
    return out;
}

const ExecUnit& PlacementPlan::unit_of_instance(int instance_id) const {
    for (const ExecUnit& u : units)
        for (int i : u.instance_ids)
            if (i == instance_id) return u;
    fail(Errc::Runtime, "instance " + std::to_string(instance_id) + " not in any unit");
}

namespace {

// A fragment is replica-fusible when concatenating replica rows preserves
// semantics: no cross-row reductions or optimizer state inside.
bool fusible(const FDG& fdg, int frag) {
    const Fragment& f = fdg.fragment(frag);
    const dfg::DataflowGraph& g = *fdg.parent;
    for (dfg::NodeId id : f.nodes) {
        if (f.entry_nodes.count(id)) continue;
        switch (g.node(id).kind) {
            case OpKind::PpoLoss:
            case OpKind::A3cLoss:
            case OpKind::GradCompute:
            case OpKind::OptimStep:
            case OpKind::GaeAdv:
            case OpKind::DiscountedReturn:
            case OpKind::ReduceMean:
            case OpKind::ReduceSum:
                return false;
            default:
                break;
        }
    }
    return true;
}

bool has_optim(const FDG& fdg, int frag) {
    const Fragment& f = fdg.fragment(frag);
    for (dfg::NodeId id : f.nodes)
        if (!f.entry_nodes.count(id) && fdg.parent->node(id).kind == OpKind::OptimStep) return true;
    return false;
}

struct Draft {
    int fragment;
    int replica;
    int worker;
};

struct SlotAlloc {
    const DeploymentConfig* deploy;
    std::vector<int> cpu_used, accel_used;

    explicit SlotAlloc(const DeploymentConfig& d)
        : deploy(&d), cpu_used(d.workers.size(), 0), accel_used(d.workers.size(), 0) {}

    DeviceSlot take(int worker, SlotKind kind) {
        int& used = kind == SlotKind::Accel ? accel_used[static_cast<size_t>(worker)]
                                            : cpu_used[static_cast<size_t>(worker)];
        int cap = kind == SlotKind::Accel ? deploy->accel_slots : deploy->cpu_slots;
        if (used >= cap)
            fail(Errc::InsufficientSlots,
                 std::string(kind == SlotKind::Accel ? "accel" : "cpu") + " slots exhausted on worker " +
                     std::to_string(worker));
        return DeviceSlot{worker, used++, kind};
    }
};

bool grad_sync_policy(Policy p) { return p == Policy::DpC || p == Policy::DpD || p == Policy::DpE; }

void build_units_and_channels(PlacementPlan& plan, const DeploymentConfig& deploy) {
    plan.units.clear();
    plan.channels.clear();
    SlotAlloc alloc(deploy);

    // Instance -> fusion group (if any).
    std::map<int, int> group_of;
    for (size_t gi = 0; gi < plan.fusion_groups.size(); ++gi)
        for (int inst : plan.fusion_groups[gi]) group_of[inst] = static_cast<int>(gi);

    std::vector<char> group_done(plan.fusion_groups.size(), 0);
    std::map<int, std::vector<int>> units_of_fragment;
    for (const Instance& inst : plan.instances) {
        auto git = group_of.find(inst.id);
        ExecUnit u;
        if (git != group_of.end()) {
            if (group_done[static_cast<size_t>(git->second)]) continue;
            group_done[static_cast<size_t>(git->second)] = 1;
            const auto& members = plan.fusion_groups[static_cast<size_t>(git->second)];
            u.fragment = inst.fragment;
            u.instance_ids = members;
            u.env_lo = plan.instances[static_cast<size_t>(members.front())].env_lo;
            u.env_hi = plan.instances[static_cast<size_t>(members.back())].env_hi;
        } else {
            u.fragment = inst.fragment;
            u.instance_ids = {inst.id};
            u.env_lo = inst.env_lo;
            u.env_hi = inst.env_hi;
        }
        int worker = plan.instances[static_cast<size_t>(u.instance_ids.front())].slot.worker;
        SlotKind kind = plan.fdg.fragment(u.fragment).resource == dfg::Resource::Accel
                            ? SlotKind::Accel
                            : SlotKind::Cpu;
        u.slot = alloc.take(worker, kind);
        for (int m : u.instance_ids) plan.instances[static_cast<size_t>(m)].slot = u.slot;
        u.id = static_cast<int>(plan.units.size());
        units_of_fragment[u.fragment].push_back(u.id);
        plan.units.push_back(std::move(u));
    }

    // Gradient aggregation groups across optimizer-bearing units.
    if (grad_sync_policy(plan.policy)) {
        for (auto& [frag, uids] : units_of_fragment) {
            if (!has_optim(plan.fdg, frag) || uids.size() < 2) continue;
            for (int uid : uids) plan.units[static_cast<size_t>(uid)].grad_group = 0;
            PlanChannel sync;
            sync.id = static_cast<int>(plan.channels.size());
            sync.kind = PlanChannel::Kind::GradSync;
            sync.timing = Timing::PerEpisode;
            for (int a : uids)
                for (int b : uids)
                    if (a != b)
                        sync.legs.push_back({a, b,
                                             plan.units[static_cast<size_t>(a)].slot.worker !=
                                                 plan.units[static_cast<size_t>(b)].slot.worker});
            plan.channels.push_back(std::move(sync));
        }
    }

    // Physical legs for every FDG channel.
    for (const ChannelDef& ch : plan.fdg.channels) {
        PlanChannel pc;
        pc.id = static_cast<int>(plan.channels.size());
        pc.fdg_channel = ch.id;
        pc.timing = ch.timing;
        const auto& from_units = units_of_fragment[ch.from_fragment];
        const auto& to_units = units_of_fragment[ch.to_fragment];
        bool aligned = from_units.size() == to_units.size() && from_units.size() > 1;
        if (aligned) {
            for (size_t i = 0; i < from_units.size(); ++i) {
                const ExecUnit &a = plan.units[static_cast<size_t>(from_units[i])],
                               &b = plan.units[static_cast<size_t>(to_units[i])];
                if (a.env_lo != b.env_lo || a.env_hi != b.env_hi) {
                    aligned = false;
                    break;
                }
            }
        }
        // Whole-tensor synchronous data (parameter refreshes) come from one
        // producer per consumer: replicated producers are in lockstep.
        bool whole = !ch.async && !ch.spec.data.empty();
        for (const fdgc::CommDatum& d : ch.spec.data) whole &= d.row_layout.empty();
        auto add_leg = [&](int fu, int tu) {
            pc.legs.push_back({fu, tu,
                               plan.units[static_cast<size_t>(fu)].slot.worker !=
                                   plan.units[static_cast<size_t>(tu)].slot.worker});
        };
        if (aligned) {
            for (size_t i = 0; i < from_units.size(); ++i) add_leg(from_units[i], to_units[i]);
        } else if (whole && from_units.size() > 1) {
            for (size_t i = 0; i < to_units.size(); ++i)
                add_leg(from_units[i < from_units.size() ? i : 0], to_units[i]);
        } else {
            for (int fu : from_units)
                for (int tu : to_units) add_leg(fu, tu);
        }
        plan.channels.push_back(std::move(pc));
    }

    // Parameter-server channels (DP-F).
    if (plan.policy == Policy::DpF) {
        ExecUnit server;
        server.id = static_cast<int>(plan.units.size());
        server.fragment = -1;
        server.param_server = true;
        server.slot = alloc.take(0, SlotKind::Cpu);
        plan.server_unit = server.id;
        plan.units.push_back(server);
        PlanChannel push;
        push.id = static_cast<int>(plan.channels.size());
        push.kind = PlanChannel::Kind::ServerPush;
        push.timing = Timing::PerEpisode;
        for (const ExecUnit& u : plan.units) {
            if (u.fragment < 0 || !has_optim(plan.fdg, u.fragment)) continue;
            push.legs.push_back({u.id, plan.server_unit,
                                 u.slot.worker != plan.units[static_cast<size_t>(plan.server_unit)].slot.worker});
        }
        plan.channels.push_back(std::move(push));
        PlanChannel bcast;
        bcast.id = static_cast<int>(plan.channels.size());
        bcast.kind = PlanChannel::Kind::ServerBroadcast;
        bcast.timing = Timing::PerEpisode;
        for (const ExecUnit& u : plan.units) {
            if (u.fragment < 0 || !has_optim(plan.fdg, u.fragment)) continue;
            bcast.legs.push_back({plan.server_unit, u.id,
                                  u.slot.worker != plan.units[static_cast<size_t>(plan.server_unit)].slot.worker});
        }
        plan.channels.push_back(std::move(bcast));
        for (const Fragment& f : plan.fdg.fragments) {
            if (!has_optim(plan.fdg, f.id)) continue;
            for (dfg::NodeId id : f.nodes)
                if (plan.fdg.parent->node(id).kind == OpKind::OptimStep) {
                    plan.server_params = dfg::param_list(*plan.fdg.parent, plan.fdg.parent->node(id));
                    break;
                }
        }
    }
}

// Default fusion grouping: replicas of a fusible fragment drafted onto one
// worker share a slot as one batched unit.
std::vector<std::vector<int>> default_fusion(const PlacementPlan& plan) {
    std::map<std::pair<int, int>, std::vector<int>> by_frag_worker;
    for (const Instance& inst : plan.instances)
        by_frag_worker[{inst.fragment, inst.slot.worker}].push_back(inst.id);
    std::vector<std::vector<int>> groups;
    for (auto& [key, members] : by_frag_worker)
        if (members.size() > 1 && fusible(plan.fdg, key.first)) groups.push_back(members);
    return groups;
}

FDG fuse_full_loop(const FDG& fdg) {
    FDG out;
    out.parent = fdg.parent;
    Fragment all;
    all.id = 0;
    for (const dfg::OpNode& n : fdg.parent->nodes) all.nodes.insert(n.id);
    all.role = RoleTag::Fused;
    all.resource = dfg::Resource::Accel;
    all.sync = fdgc::SyncKind::PerStep;
    out.fragments.push_back(std::move(all));
    return out;
}

bool env_accel_capable(const FDG& fdg) {
    for (const Fragment& f : fdg.fragments)
        for (dfg::NodeId id : f.nodes) {
            const dfg::OpNode& n = fdg.parent->node(id);
            if (n.kind == OpKind::EnvReset) return run::env_spec_from_node(n).accel_capable;
        }
    return false;
}

}  // namespace

void replicate(Replication& rep, const FDG& fdg, int fragment, int k, Policy policy) {
    if (k < 1) fail(Errc::Config, "replica count must be >= 1");
    const Fragment& f = fdg.fragment(fragment);
    if (k > 1 && f.role == RoleTag::LearnerLike && (policy == Policy::DpA || policy == Policy::DpB))
        fail(Errc::NotReplicable, "the single learner cannot be replicated under " +
                                      std::string(policy_name(policy)));
    rep.counts[fragment] = k;
}

PlacementPlan make_plan(const fdgc::FDG& fdg_in, const DeploymentConfig& deploy,
                        const dfg::AlgoConfig& algo) {
    deploy.validate();
    algo.validate();
    PlacementPlan plan;
    plan.policy = deploy.policy;
    plan.env_total = algo.envs;
    int w_count = deploy.worker_count();
    int k = static_cast<int>(algo.actors);

    plan.fdg = fdg_in;
    if (deploy.policy == Policy::DpD) {
        if (!env_accel_capable(fdg_in))
            fail(Errc::PolicyInapplicable,
                 "dp-d requires an accelerator-capable environment implementation");
        plan.fdg = fuse_full_loop(fdg_in);
    }

    Replication rep;
    std::vector<Draft> drafts;
    auto env_ranges = split_envs(algo.envs, k);
    // Contiguous replica blocks per worker keep fused units' environment
    // ranges contiguous.
    auto draft_replicas = [&](int frag, const std::vector<int>& workers) {
        replicate(rep, plan.fdg, frag, k, plan.policy);
        auto nw = static_cast<int64_t>(workers.size());
        for (int r = 0; r < k; ++r)
            drafts.push_back({frag, r, workers[static_cast<size_t>((r * nw) / k)]});
    };
    std::vector<int> all_workers(static_cast<size_t>(w_count));
    for (int w = 0; w < w_count; ++w) all_workers[static_cast<size_t>(w)] = w;

    switch (deploy.policy) {
        case Policy::DpA: {
            int learner_worker = w_count > 1 ? w_count - 1 : 0;
            std::vector<int> actor_workers;
            for (int w = 0; w < (w_count > 1 ? w_count - 1 : 1); ++w) actor_workers.push_back(w);
            for (const Fragment& f : plan.fdg.fragments) {
                if (f.role == RoleTag::LearnerLike)
                    drafts.push_back({f.id, 0, learner_worker});
                else
                    draft_replicas(f.id, actor_workers);
            }
            break;
        }
        case Policy::DpB: {
            int learner_worker = w_count > 1 ? w_count - 1 : 0;
            std::vector<int> env_workers;
            for (int w = 0; w < (w_count > 1 ? w_count - 1 : 1); ++w) env_workers.push_back(w);
            for (const Fragment& f : plan.fdg.fragments) {
                if (f.role == RoleTag::EnvLike)
                    draft_replicas(f.id, env_workers);
                else
                    drafts.push_back({f.id, 0, learner_worker});
            }
            break;
        }
        case Policy::DpC:
        case Policy::DpD: {
            for (const Fragment& f : plan.fdg.fragments) draft_replicas(f.id, all_workers);
            break;
        }
        case Policy::DpE: {
            if (w_count < 2)
                fail(Errc::InsufficientSlots, "dp-e needs a dedicated environment worker (>= 2 workers)");
            std::vector<int> compute_workers;
            for (int w = 1; w < w_count; ++w) compute_workers.push_back(w);
            for (const Fragment& f : plan.fdg.fragments) {
                if (f.role == RoleTag::EnvLike)
                    draft_replicas(f.id, {0});
                else
                    draft_replicas(f.id, compute_workers);
            }
            break;
        }
        case Policy::DpF: {
            if (w_count < 2)
                fail(Errc::InsufficientSlots, "dp-f needs a dedicated server worker (>= 2 workers)");
            std::vector<int> compute_workers;
            for (int w = 1; w < w_count; ++w) compute_workers.push_back(w);
            for (const Fragment& f : plan.fdg.fragments) draft_replicas(f.id, compute_workers);
            break;
        }
    }

    std::sort(drafts.begin(), drafts.end(), [](const Draft& a, const Draft& b) {
        return std::tie(a.fragment, a.replica) < std::tie(b.fragment, b.replica);
    });
    for (const Draft& d : drafts) {
        Instance inst;
        inst.id = static_cast<int>(plan.instances.size());
        inst.fragment = d.fragment;
        inst.replica = d.replica;
        inst.slot.worker = d.worker;
        int reps = rep.count(d.fragment);
        if (reps > 1) {
            inst.env_lo = env_ranges[static_cast<size_t>(d.replica)].first;
            inst.env_hi = env_ranges[static_cast<size_t>(d.replica)].second;
        } else {
            inst.env_lo = 0;
            inst.env_hi = algo.envs;
        }
        plan.instances.push_back(inst);
    }

    plan.fusion_groups = default_fusion(plan);
    build_units_and_channels(plan, deploy);

    return plan;
}

void fuse(PlacementPlan& plan, const std::vector<int>& instance_ids) {
    if (instance_ids.size() < 2) return;  // group of one is the identity
    int frag = -1, worker = -1;
    int64_t expect_lo = -1;
    std::vector<int> sorted = instance_ids;
    std::sort(sorted.begin(), sorted.end(), [&](int a, int b) {
        return plan.instances[static_cast<size_t>(a)].env_lo < plan.instances[static_cast<size_t>(b)].env_lo;
    });
    for (int id : sorted) {
        if (id < 0 || static_cast<size_t>(id) >= plan.instances.size())
            fail(Errc::UnknownNode, "fuse: unknown instance " + std::to_string(id));
        const Instance& inst = plan.instances[static_cast<size_t>(id)];
        if (frag == -1) {
            frag = inst.fragment;
            worker = inst.slot.worker;
            expect_lo = inst.env_lo;
        }
        if (inst.fragment != frag)
            fail(Errc::HeterogeneousGroup, "fuse: instances of different fragments");
        if (inst.slot.worker != worker)
            fail(Errc::HeterogeneousGroup, "fuse: instances on different workers");
        if (inst.env_lo != expect_lo)
            fail(Errc::HeterogeneousGroup, "fuse: non-contiguous replica rows");
        expect_lo = inst.env_hi;
    }
    if (!fusible(plan.fdg, frag))
        fail(Errc::HeterogeneousGroup, "fuse: fragment has cross-row reductions");
    // Drop any existing groups containing these instances, then regroup.
    std::vector<std::vector<int>> groups;
    for (auto& g : plan.fusion_groups) {
        bool overlaps = false;
        for (int id : g)
            if (std::find(sorted.begin(), sorted.end(), id) != sorted.end()) overlaps = true;
        if (!overlaps) groups.push_back(g);
    }
    groups.push_back(sorted);
    plan.fusion_groups = std::move(groups);
    DeploymentConfig synth;  // capacity bookkeeping only needs worker count
    synth.workers.assign(static_cast<size_t>(1 + [&] {
                             int mx = 0;
                             for (const Instance& i : plan.instances) mx = std::max(mx, i.slot.worker);
                             return mx;
                         }()),
                         "local");
    synth.cpu_slots = 1 << 20;
    synth.accel_slots = 1 << 20;
    synth.policy = plan.policy;
    build_units_and_channels(plan, synth);
}

std::vector<PlanViolation> validate_plan(const PlacementPlan& plan, const DeploymentConfig& deploy) {
    std::vector<PlanViolation> out;
    auto add = [&](const std::string& code, const std::string& msg) { out.push_back({code, msg}); };

    std::set<std::pair<int, int>> seen;
    for (const Instance& inst : plan.instances) {
        if (!seen.insert({inst.fragment, inst.replica}).second)
            add("DuplicateInstance", "fragment " + std::to_string(inst.fragment) + " replica " +
                                         std::to_string(inst.replica) + " placed twice");
        if (inst.slot.worker < 0 || inst.slot.worker >= deploy.worker_count())
            add("UnknownWorker", "instance on worker " + std::to_string(inst.slot.worker));
        int cap = inst.slot.kind == SlotKind::Accel ? deploy.accel_slots : deploy.cpu_slots;
        if (inst.slot.slot >= cap) add("SlotCapacity", "slot index exceeds capacity");
    }
    for (const ExecUnit& u : plan.units) {
        if (u.fragment < 0) continue;
        const Fragment& f = plan.fdg.fragment(u.fragment);
        if (f.resource == dfg::Resource::Accel && u.slot.kind != SlotKind::Accel)
            add("ResourceMismatch", "accel fragment " + std::to_string(u.fragment) + " on cpu slot");
    }
    for (const auto& g : plan.fusion_groups) {
        int frag = plan.instances[static_cast<size_t>(g.front())].fragment;
        for (int id : g)
            if (plan.instances[static_cast<size_t>(id)].fragment != frag)
                add("HeterogeneousGroup", "fusion group mixes fragments");
    }
    for (const PlanChannel& pc : plan.channels)
        for (const ChannelLeg& leg : pc.legs)
            if (leg.from_unit < 0 || leg.to_unit < 0 ||
                static_cast<size_t>(leg.from_unit) >= plan.units.size() ||
                static_cast<size_t>(leg.to_unit) >= plan.units.size())
                add("BadChannelEndpoint", "channel leg references unknown unit");

    auto role_count = [&](RoleTag role) {
        int c = 0;
        for (const ExecUnit& u : plan.units)
            if (u.fragment >= 0 && plan.fdg.fragment(u.fragment).role == role) ++c;
        return c;
    };
    auto channel_tag = [&](const PlanChannel& pc) -> std::string {
        if (pc.fdg_channel < 0) return "";
        return plan.fdg.channels[static_cast<size_t>(pc.fdg_channel)].spec.tag;
    };

    switch (plan.policy) {
        case Policy::DpA: {
            if (role_count(RoleTag::LearnerLike) != 1)
                add("SingleLearnerViolated", "dp-a relies on a single learner");
            std::set<int> learner_workers, replica_workers;
            for (const ExecUnit& u : plan.units) {
                if (u.fragment < 0) continue;
                if (plan.fdg.fragment(u.fragment).role == RoleTag::LearnerLike)
                    learner_workers.insert(u.slot.worker);
                else
                    replica_workers.insert(u.slot.worker);
            }
            for (int w : replica_workers) {
                bool has_actor = false, has_env = false;
                for (const ExecUnit& u : plan.units) {
                    if (u.fragment < 0 || u.slot.worker != w) continue;
                    RoleTag r = plan.fdg.fragment(u.fragment).role;
                    has_actor |= r == RoleTag::ActorLike;
                    has_env |= r == RoleTag::EnvLike;
                }
                if (!has_actor || !has_env)
                    add("ActorEnvPairMissing", "worker " + std::to_string(w) +
                                                   " lacks a replicated actor/env pair");
            }
            for (const PlanChannel& pc : plan.channels)
                if (channel_tag(pc) == "Buffer" && pc.timing != Timing::PerEpisode)
                    add("TrajectoryNotBatched", "dp-a trajectory channel must be per-episode");
            break;
        }
        case Policy::DpB: {
            if (role_count(RoleTag::LearnerLike) != 1)
                add("SingleLearnerViolated", "dp-b relies on a single learner");
            for (const PlanChannel& pc : plan.channels) {
                std::string tag = channel_tag(pc);
                if (tag == "Learner")
                    for (const ChannelLeg& leg : pc.legs)
                        if (leg.tcp)
                            add("ParamChannelCrossesWorkers",
                                "dp-b must not communicate policy parameters between workers");
                if ((tag == "Action" || tag == "Step") && pc.timing != Timing::PerStep)
                    add("StepChannelNotPerStep", "dp-b exchanges training data at each step");
            }
            break;
        }
        case Policy::DpC: {
            for (const PlanChannel& pc : plan.channels) {
                if (pc.kind == PlanChannel::Kind::GradSync) continue;
                for (const ChannelLeg& leg : pc.legs)
                    if (leg.tcp)
                        add("CrossWorkerDataChannel",
                            "dp-c workers exchange only trained-policy information");
            }
            break;
        }
        case Policy::DpD: {
            if (plan.fdg.fragments.size() != 1 ||
                plan.fdg.fragments[0].role != RoleTag::Fused)
                add("LoopNotFused", "dp-d requires the full training loop in one fragment");
            std::set<std::pair<int, int>> slots;
            for (const ExecUnit& u : plan.units)
                if (!slots.insert({u.slot.worker, u.slot.slot}).second)
                    add("SlotSharingViolated", "dp-d places one fragment per slot");
            break;
        }
        case Policy::DpE: {
            std::set<int> env_workers;
            for (const ExecUnit& u : plan.units)
                if (u.fragment >= 0 && plan.fdg.fragment(u.fragment).role == RoleTag::EnvLike)
                    env_workers.insert(u.slot.worker);
            if (env_workers.size() > 1)
                add("DedicatedEnvWorkerViolated", "dp-e dedicates one worker to environments");
            break;
        }
        case Policy::DpF: {
            int servers = 0;
            for (const ExecUnit& u : plan.units) servers += u.param_server ? 1 : 0;
            if (servers != 1) add("CentralServerViolated", "dp-f needs exactly one parameter server");
            for (const ExecUnit& u : plan.units) {
                if (u.fragment < 0 || !has_optim(plan.fdg, u.fragment)) continue;
                bool linked = false;
                for (const PlanChannel& pc : plan.channels)
                    if (pc.kind == PlanChannel::Kind::ServerPush)
                        for (const ChannelLeg& leg : pc.legs)
                            if (leg.from_unit == u.id) linked = true;
                if (!linked) add("LearnerNotLinkedToServer", "learner unit lacks a server channel");
            }
            break;
        }
    }
    return out;
}

std::string dump_json(const PlacementPlan& plan) {
    using json = nlohmann::ordered_json;
    json out;
    out["policy"] = policy_name(plan.policy);
    out["env_total"] = plan.env_total;
    out["instances"] = json::array();
    for (const Instance& i : plan.instances)
        out["instances"].push_back({{"fragment", i.fragment},
                                    {"replica", i.replica},
                                    {"worker", i.slot.worker},
                                    {"slot", i.slot.slot},
                                    {"kind", i.slot.kind == SlotKind::Accel ? "accel" : "cpu"},
                                    {"env_lo", i.env_lo},
                                    {"env_hi", i.env_hi}});
    out["fusion_groups"] = plan.fusion_groups;
    out["channels"] = json::array();
    for (const PlanChannel& pc : plan.channels) {
        json jc;
        jc["fdg_channel"] = pc.fdg_channel;
        jc["kind"] = pc.kind == PlanChannel::Kind::Data          ? "data"
                     : pc.kind == PlanChannel::Kind::GradSync    ? "grad_sync"
                     : pc.kind == PlanChannel::Kind::ServerPush   ? "server_push"
                                                                  : "server_broadcast";
        jc["sync"] = pc.timing == Timing::PerStep ? "per_step" : "per_episode";
        jc["legs"] = json::array();
        for (const ChannelLeg& leg : pc.legs)
            jc["legs"].push_back(
                {{"from", leg.from_unit}, {"to", leg.to_unit}, {"transport", leg.tcp ? "tcp" : "inproc"}});
        out["channels"].push_back(jc);
    }
    if (plan.server_unit >= 0) out["param_server_unit"] = plan.server_unit;
    return out.dump(2);
}

}  // namespace fraglow::plan
