#include <algorithm>

#include "fdg.hpp"

namespace fraglow::fdgc {

using dfg::OpKind;
using dfg::OpNode;
using dfg::Phase;
using run::ExecContext;
using run::Interp;

namespace {

int64_t graph_env_total(const DataflowGraph& g) {
    int64_t total = 0;
    for (const OpNode& n : g.nodes)
        if (n.kind == OpKind::EnvReset) total = std::max(total, n.attr_int("num", 0));
    return total == 0 ? 1 : total;
}

std::vector<double> optimizer_params(const DataflowGraph& g, const Interp& it) {
    for (const OpNode& n : g.nodes)
        if (n.kind == OpKind::OptimStep && it.owned().count(n.id) && it.has_value(n.id))
            return it.flat_params(dfg::param_list(g, n));
    return {};
}

// Deterministic fragment order respecting the given channels; fails on a
// cyclic fragment graph (no per-step schedule exists at this granularity).
std::vector<int> fragment_topo(const FDG& fdg, const std::function<bool(const ChannelDef&)>& use) {
    size_t n = fdg.fragments.size();
    std::vector<int> indeg(n, 0);
    std::vector<std::vector<int>> out(n);
    for (const ChannelDef& c : fdg.channels) {
        if (!use(c)) continue;
        out[static_cast<size_t>(c.from_fragment)].push_back(c.to_fragment);
        indeg[static_cast<size_t>(c.to_fragment)]++;
    }
    std::vector<int> order;
    std::set<int> ready;
    for (size_t i = 0; i < n; ++i)
        if (indeg[i] == 0) ready.insert(static_cast<int>(i));
    while (!ready.empty()) {
        int f = *ready.begin();
        ready.erase(ready.begin());
        order.push_back(f);
        for (int t : out[static_cast<size_t>(f)])
            if (--indeg[static_cast<size_t>(t)] == 0) ready.insert(t);
    }
    if (order.size() != n) fail(Errc::Runtime, "fragment graph is cyclic; no schedule exists");
    return order;
}

}  // namespace

LocalRunResult run_unpartitioned(const DataflowGraph& g, uint64_t seed,
                                 const std::map<NodeId, Tensor>& input_bindings) {
    Interp it = Interp::whole(&g, seed);
    for (const auto& [id, t] : input_bindings) it.bind(id, t);
    auto fbs = g.feedbacks();
    LocalRunResult res;
    for (int64_t ep = 0; ep < g.loop.episodes; ++ep) {
        it.eval_phase(Phase::Reset, {ep, 0, 0});
        for (const auto& fb : fbs)
            if (fb.reset_from >= 0) it.bind(fb.input, it.value(fb.reset_from));
        for (int64_t st = 0; st < g.loop.steps_per_episode; ++st) {
            it.eval_phase(Phase::Step, {ep, st, 0});
            for (const auto& fb : fbs)
                if (fb.step_from >= 0) it.bind(fb.input, it.value(fb.step_from));
        }
        int64_t iters = it.learn_iters();
        for (int64_t k = 0; k < iters; ++k)
            it.eval_phase(Phase::Learn, {ep, g.loop.steps_per_episode, k});
        res.episode_rewards.push_back(it.episode_reward_sum() /
                                      static_cast<double>(std::max<int64_t>(1, it.env_count())));
    }
    res.steps = it.steps_executed();
    for (NodeId o : g.outputs)
        if (it.has_value(o)) res.outputs[o] = it.value(o);
    res.final_params = optimizer_params(g, it);
    return res;
}

LocalRunResult fdg_execute_local(const FDG& fdg, uint64_t seed, const dfg::LoopSpec& loop) {
    const DataflowGraph& g = *fdg.parent;
    int64_t env_total = graph_env_total(g);
    auto phases = dfg::node_phases(g);

    std::vector<Interp> insts;
    insts.reserve(fdg.fragments.size());
    for (const Fragment& f : fdg.fragments) {
        Interp inst(&g, f.nodes, seed, 0, env_total, env_total);
        for (NodeId e : f.entry_nodes) inst.mark_external(e);
        insts.push_back(std::move(inst));
    }

    auto owns_phase = [&](const Fragment& f, Phase p) {
        for (NodeId id : f.nodes)
            if (!f.entry_nodes.count(id) && phases[static_cast<size_t>(id)] == p) return true;
        return false;
    };

    // Route one channel: copy exit values into consumer bindings.
    LocalRunResult res;
    auto route = [&](const ChannelDef& ch) {
        Interp& from = insts[static_cast<size_t>(ch.from_fragment)];
        Interp& to = insts[static_cast<size_t>(ch.to_fragment)];
        for (const CommDatum& d : ch.spec.data) {
            if (ch.feedback)
                to.bind(ch.feedback_input, from.value(d.node));
            else
                to.bind(d.node, from.value(d.node));
        }
        if (ch.async) res.grad_messages++;
    };

    // Parameter refreshes apply after the episode's learning, so they do not
    // order the learn-stage schedule (gradients flow against them).
    auto param_refresh = [&g](const ChannelDef& c) {
        bool all_params = !c.spec.data.empty();
        for (const CommDatum& d : c.spec.data)
            all_params &= g.node(d.node).kind == OpKind::Param;
        return all_params;
    };
    auto step_order =
        fragment_topo(fdg, [](const ChannelDef& c) { return c.timing == Timing::PerStep && !c.feedback; });
    auto learn_order = fragment_topo(fdg, [&](const ChannelDef& c) {
        return c.timing == Timing::PerEpisode && !c.feedback && !param_refresh(c);
    });

    for (int64_t ep = 0; ep < loop.episodes; ++ep) {
        ExecContext rctx{ep, 0, 0};
        for (size_t i = 0; i < insts.size(); ++i)
            if (owns_phase(fdg.fragments[i], Phase::Reset)) insts[i].eval_phase(Phase::Reset, rctx);
        for (const ChannelDef& ch : fdg.channels)
            if (ch.timing == Timing::Reset) route(ch);

        for (int64_t st = 0; st < loop.steps_per_episode; ++st) {
            ExecContext ctx{ep, st, 0};
            for (int fid : step_order) {
                if (!owns_phase(fdg.fragments[static_cast<size_t>(fid)], Phase::Step)) continue;
                insts[static_cast<size_t>(fid)].eval_phase(Phase::Step, ctx);
                for (const ChannelDef& ch : fdg.channels)
                    if (ch.from_fragment == fid && ch.timing == Timing::PerStep && !ch.feedback)
                        route(ch);
            }
            // Feedback delivers into the next step's bindings.
            for (const ChannelDef& ch : fdg.channels)
                if (ch.timing == Timing::PerStep && ch.feedback) route(ch);
        }

        for (int fid : learn_order) {
            Interp& inst = insts[static_cast<size_t>(fid)];
            if (owns_phase(fdg.fragments[static_cast<size_t>(fid)], Phase::Learn)) {
                int64_t iters = inst.learn_iters();
                for (int64_t k = 0; k < iters; ++k)
                    inst.eval_phase(Phase::Learn, {ep, loop.steps_per_episode, k});
            }
            for (const ChannelDef& ch : fdg.channels)
                if (ch.from_fragment == fid && ch.timing == Timing::PerEpisode && !ch.feedback)
                    route(ch);
        }

        double reward = 0.0;
        int64_t env_count = 0;
        for (size_t i = 0; i < insts.size(); ++i) {
            if (fdg.fragments[i].role == RoleTag::EnvLike ||
                owns_phase(fdg.fragments[i], Phase::Reset)) {
                reward += insts[i].episode_reward_sum();
                env_count += insts[i].env_count();
            }
        }
        res.episode_rewards.push_back(reward / static_cast<double>(std::max<int64_t>(1, env_count)));
    }
    for (const Interp& inst : insts) res.steps += inst.steps_executed();

    for (NodeId o : g.outputs) {
        int fid = fdg.fragment_of(o);
        if (fid >= 0 && insts[static_cast<size_t>(fid)].has_value(o))
            res.outputs[o] = insts[static_cast<size_t>(fid)].value(o);
    }
    for (const Interp& inst : insts) {
        auto p = optimizer_params(g, inst);
        if (!p.empty()) {
            res.final_params = p;
            break;
        }
    }
    return res;
}

}  // namespace fraglow::fdgc
