#include <chrono>
#include <sstream>
#include <thread>

#include "../compute/ops.hpp"
#include "runner.hpp"

namespace fraglow::run {

using dfg::OpKind;
using dfg::Phase;
using fdgc::ChannelDef;
using fdgc::CommDatum;
using fdgc::Timing;
using plan::ExecUnit;
using plan::PlacementPlan;
using plan::PlanChannel;

StreamTable StreamTable::build(const PlacementPlan& p) {
    StreamTable t;
    for (const PlanChannel& pc : p.channels) {
        int n_data = 1;
        bool async = false;
        if (pc.fdg_channel >= 0) {
            const ChannelDef& ch = p.fdg.channels[static_cast<size_t>(pc.fdg_channel)];
            n_data = static_cast<int>(ch.spec.data.size());
            async = ch.async;
        }
        for (int d = 0; d < n_data; ++d)
            for (const plan::ChannelLeg& leg : pc.legs) {
                Info info{pc.id, d, leg.from_unit, leg.to_unit, async};
                t.index[{pc.id, d, leg.from_unit, leg.to_unit}] =
                    static_cast<uint32_t>(t.streams.size());
                t.streams.push_back(info);
            }
    }
    return t;
}

uint32_t StreamTable::id(int channel, int datum, int from, int to) const {
    auto it = index.find({channel, datum, from, to});
    if (it == index.end()) fail(Errc::Runtime, "unknown stream");
    return it->second;
}

void RunnerShared::account(int channel, const Tensor& t) {
    std::lock_guard<std::mutex> lk(bytes_mu);
    bytes_per_channel[channel] += static_cast<int64_t>(t.encode().size()) + 8;
}

int64_t RunnerShared::bytes_total() {
    std::lock_guard<std::mutex> lk(bytes_mu);
    int64_t sum = 0;
    for (auto& [c, b] : bytes_per_channel) sum += b;
    return sum;
}

void RunnerShared::raise_gate(int64_t ep) {
    {
        std::lock_guard<std::mutex> lk(gate_mu);
        gate_episode = ep;
    }
    gate_cv.notify_all();
}

void RunnerShared::wait_gate(int64_t ep, int64_t timeout_ms) {
    std::unique_lock<std::mutex> lk(gate_mu);
    if (!gate_cv.wait_for(lk, std::chrono::milliseconds(timeout_ms),
                          [&] { return gate_episode >= ep || hub.closed(); }))
        fail(Errc::Timeout, "episode gate timed out");
    if (hub.closed()) fail(Errc::PeerFailure, "run aborted");
}

void RunnerShared::latency_burst(bool any_remote) const {
    if (any_remote && opts.latency_us > 0)
        std::this_thread::sleep_for(std::chrono::microseconds(opts.latency_us));
}

void RunnerShared::record_error(const std::string& msg) {
    {
        std::lock_guard<std::mutex> lk(err_mu);
        if (first_error.empty()) first_error = msg;
    }
    log::error("execution failed: " + msg);
    hub.close();
}

void RunnerShared::deliver_local(uint32_t stream, uint32_t tag, Tensor t, bool async) {
    if (async) {
        const StreamTable::Info& info = streams.streams.at(stream);
        hub.push_async(static_cast<uint32_t>(info.to_unit), tag, stream, std::move(t));
    } else {
        hub.push(stream, tag, std::move(t));
    }
}

namespace {

int64_t row_width(const CommDatum& d) {
    int64_t w = 1;
    for (size_t i = 1; i < d.shape.size(); ++i) w *= d.shape[i];
    return w;
}

// Producer-side restriction of a row-decomposable datum to a consumer range.
Tensor slice_rows_for(const CommDatum& d, int64_t plo, int64_t phi, const Tensor& value,
                      int64_t tlo, int64_t thi) {
    if (d.row_layout.empty()) return value;
    int64_t lo = std::max(plo, tlo), hi = std::min(phi, thi);
    if (lo >= hi) return Tensor{};
    if (lo == plo && hi == phi) return value;
    int64_t pe = phi - plo, ce = hi - lo;
    int64_t w = row_width(d);
    int64_t blocks = d.rows_t * d.rows_n;
    Shape shape = value.shape();
    shape[0] = blocks * ce;
    Tensor out(shape, value.dtype());
    for (int64_t b = 0; b < blocks; ++b)
        for (int64_t e = 0; e < ce; ++e)
            for (int64_t j = 0; j < w; ++j)
                out.raw((b * ce + e) * w + j) = value.at((b * pe + (lo - plo) + e) * w + j);
    return out;
}

// Consumer-side reassembly of parts into the canonical row order for the
// consumer's environment range: time-major, then agent, then environment.
Tensor assemble_parts(const CommDatum& d, int64_t clo, int64_t chi,
                      std::vector<std::tuple<int64_t, int64_t, Tensor>>& parts) {
    if (d.row_layout.empty()) {
        if (parts.size() != 1) fail(Errc::Runtime, "whole-tensor datum with multiple parts");
        return std::move(std::get<2>(parts[0]));
    }
    std::sort(parts.begin(), parts.end(),
              [](const auto& a, const auto& b) { return std::get<0>(a) < std::get<0>(b); });
    if (parts.size() == 1 && std::get<0>(parts[0]) == clo && std::get<1>(parts[0]) == chi)
        return std::move(std::get<2>(parts[0]));
    int64_t ce = chi - clo;
    int64_t w = row_width(d);
    int64_t blocks = d.rows_t * d.rows_n;
    Shape shape = std::get<2>(parts[0]).shape();
    shape[0] = blocks * ce;
    Tensor out(shape, std::get<2>(parts[0]).dtype());
    for (auto& [plo, phi, t] : parts) {
        int64_t lo = std::max(plo, clo), hi = std::min(phi, chi);
        int64_t pe = phi - plo;
        for (int64_t b = 0; b < blocks; ++b)
            for (int64_t e = lo; e < hi; ++e)
                for (int64_t j = 0; j < w; ++j)
                    out.raw((b * ce + (e - clo)) * w + j) = t.at((b * pe + (e - plo)) * w + j);
    }
    return out;
}

struct UnitProgram {
    const ExecUnit* unit;
    const fdgc::Fragment* fragment = nullptr;  // null for the parameter server

    struct EntryChannel {
        const PlanChannel* pc;
        const ChannelDef* fdg;  // null for synthetic channels
        std::vector<const plan::ChannelLeg*> legs;
        bool prelearn = true;
    };
    std::vector<EntryChannel> entries;
    std::vector<EntryChannel> exits;
    std::vector<dfg::DataflowGraph::Feedback> intra_feedbacks;
    int async_entry_legs = 0;
    std::vector<int> grad_peers;  // unit ids in the gradient group, sorted
    const PlanChannel* grad_channel = nullptr;
    const PlanChannel* server_push = nullptr;       // learner -> server
    const PlanChannel* server_broadcast = nullptr;  // server -> learners
    bool owns_reset = false, owns_step = false, owns_learn = false;
};

UnitProgram build_program(const RunnerShared& ctx, int unit_id) {
    const PlacementPlan& p = *ctx.plan;
    UnitProgram up;
    up.unit = &p.units[static_cast<size_t>(unit_id)];
    if (up.unit->fragment >= 0) up.fragment = &p.fdg.fragment(up.unit->fragment);

    auto phases = dfg::node_phases(*ctx.graph);
    if (up.fragment) {
        for (dfg::NodeId id : up.fragment->nodes) {
            if (up.fragment->entry_nodes.count(id)) continue;
            switch (phases[static_cast<size_t>(id)]) {
                case Phase::Reset: up.owns_reset = true; break;
                case Phase::Step: up.owns_step = true; break;
                case Phase::Learn: up.owns_learn = true; break;
                default: break;
            }
        }
        for (const auto& fb : ctx.graph->feedbacks()) {
            int in_frag = p.fdg.fragment_of(fb.input);
            if (in_frag != up.unit->fragment) continue;
            dfg::DataflowGraph::Feedback local = fb;
            if (fb.reset_from >= 0 && p.fdg.fragment_of(fb.reset_from) != in_frag) local.reset_from = -1;
            if (fb.step_from >= 0 && p.fdg.fragment_of(fb.step_from) != in_frag) local.step_from = -1;
            if (local.reset_from >= 0 || local.step_from >= 0) up.intra_feedbacks.push_back(local);
        }
    }

    for (const PlanChannel& pc : p.channels) {
        if (pc.kind == PlanChannel::Kind::GradSync) {
            bool mine = false;
            for (const plan::ChannelLeg& leg : pc.legs)
                if (leg.from_unit == unit_id || leg.to_unit == unit_id) mine = true;
            if (mine) {
                up.grad_channel = &pc;
                std::set<int> peers;
                for (const plan::ChannelLeg& leg : pc.legs) {
                    peers.insert(leg.from_unit);
                    peers.insert(leg.to_unit);
                }
                up.grad_peers.assign(peers.begin(), peers.end());
            }
            continue;
        }
        if (pc.kind == PlanChannel::Kind::ServerPush) {
            for (const plan::ChannelLeg& leg : pc.legs) {
                if (leg.from_unit == unit_id || leg.to_unit == unit_id) up.server_push = &pc;
            }
            continue;
        }
        if (pc.kind == PlanChannel::Kind::ServerBroadcast) {
            for (const plan::ChannelLeg& leg : pc.legs)
                if (leg.from_unit == unit_id || leg.to_unit == unit_id) up.server_broadcast = &pc;
            continue;
        }
        const ChannelDef& ch = p.fdg.channels[static_cast<size_t>(pc.fdg_channel)];
        UnitProgram::EntryChannel ec;
        ec.pc = &pc;
        ec.fdg = &ch;
        for (const plan::ChannelLeg& leg : pc.legs)
            if (leg.to_unit == unit_id) ec.legs.push_back(&leg);
        if (!ec.legs.empty()) {
            if (ch.async) up.async_entry_legs += static_cast<int>(ec.legs.size());
            // Pre-learn when a datum feeds this fragment's Learn nodes.
            // Parameter refreshes are always post-learn: the episode's
            // gradients use the local copies, the broadcast applies after.
            ec.prelearn = false;
            bool param_refresh = true;
            for (const CommDatum& d : ch.spec.data)
                param_refresh &= ctx.graph->node(d.node).kind == dfg::OpKind::Param;
            if (up.fragment && !param_refresh) {
                auto cons = ctx.graph->consumers(false);
                for (const CommDatum& d : ch.spec.data) {
                    if (ch.feedback) continue;
                    for (dfg::NodeId c : cons[static_cast<size_t>(d.node)])
                        if (up.fragment->nodes.count(c) && !up.fragment->entry_nodes.count(c) &&
                            phases[static_cast<size_t>(c)] == Phase::Learn)
                            ec.prelearn = true;
                }
            }
            up.entries.push_back(ec);
        }
        UnitProgram::EntryChannel xc;
        xc.pc = &pc;
        xc.fdg = &ch;
        for (const plan::ChannelLeg& leg : pc.legs)
            if (leg.from_unit == unit_id) xc.legs.push_back(&leg);
        if (!xc.legs.empty()) up.exits.push_back(xc);
    }
    return up;
}

void deliver(RunnerShared& ctx, int to_unit, uint32_t stream, uint32_t tag, const Tensor& t,
             bool async, int channel) {
    ctx.account(channel, t);
    if (ctx.local_units.count(to_unit)) {
        ctx.deliver_local(stream, tag, t, async);
    } else {
        if (!ctx.remote_send) fail(Errc::Runtime, "no transport for remote unit");
        ctx.remote_send(stream, tag, t, async);
    }
}

void send_exits(RunnerShared& ctx, const UnitProgram& up, Interp& interp, Timing timing,
                uint32_t tag, bool feedback_only, bool include_feedback) {
    const PlacementPlan& p = *ctx.plan;
    for (const auto& xc : up.exits) {
        if (xc.pc->timing != timing) continue;
        if (feedback_only && !xc.fdg->feedback) continue;
        if (!feedback_only && xc.fdg->feedback && !include_feedback) continue;
        bool any_remote = false;
        for (const plan::ChannelLeg* leg : xc.legs)
            any_remote |= !ctx.local_units.count(leg->to_unit);
        ctx.latency_burst(any_remote);
        for (size_t di = 0; di < xc.fdg->spec.data.size(); ++di) {
            const CommDatum& d = xc.fdg->spec.data[di];
            const Tensor& v = interp.value(d.node);
            for (const plan::ChannelLeg* leg : xc.legs) {
                const ExecUnit& target = p.units[static_cast<size_t>(leg->to_unit)];
                Tensor part = slice_rows_for(d, up.unit->env_lo, up.unit->env_hi, v, target.env_lo,
                                             target.env_hi);
                if (part.size() == 0 && !d.row_layout.empty()) continue;
                uint32_t stream = ctx.streams.id(xc.pc->id, static_cast<int>(di), leg->from_unit,
                                                 leg->to_unit);
                deliver(ctx, leg->to_unit, stream, tag, part, xc.fdg->async, xc.pc->id);
            }
        }
    }
}

void recv_entries(RunnerShared& ctx, const UnitProgram& up, Interp& interp, Timing timing,
                  uint32_t tag, bool feedback_only, bool prelearn_filter, bool want_prelearn) {
    const PlacementPlan& p = *ctx.plan;
    for (const auto& ec : up.entries) {
        if (ec.pc->timing != timing) continue;
        if (ec.fdg->async) continue;  // async entries drain through the message loop
        if (feedback_only != ec.fdg->feedback) continue;
        if (prelearn_filter && ec.prelearn != want_prelearn) continue;
        for (size_t di = 0; di < ec.fdg->spec.data.size(); ++di) {
            const CommDatum& d = ec.fdg->spec.data[di];
            std::vector<std::tuple<int64_t, int64_t, Tensor>> parts;
            for (const plan::ChannelLeg* leg : ec.legs) {
                const ExecUnit& src = p.units[static_cast<size_t>(leg->from_unit)];
                int64_t lo = std::max(src.env_lo, up.unit->env_lo),
                        hi = std::min(src.env_hi, up.unit->env_hi);
                if (!d.row_layout.empty() && lo >= hi) continue;
                uint32_t stream = ctx.streams.id(ec.pc->id, static_cast<int>(di), leg->from_unit,
                                                 leg->to_unit);
                parts.emplace_back(lo, hi, ctx.hub.pop(stream, tag, ctx.opts.timeout_ms));
            }
            if (parts.empty()) continue;
            Tensor v = assemble_parts(d, up.unit->env_lo, up.unit->env_hi, parts);
            if (ec.fdg->feedback)
                interp.bind(ec.fdg->feedback_input, std::move(v));
            else
                interp.bind(d.node, std::move(v));
        }
    }
}

// Parameter-server unit: applies pushed deltas in arrival order, then
// broadcasts the canonical parameters.
void run_server_unit(RunnerShared& ctx, const UnitProgram& up, UnitReport& report) {
    const PlacementPlan& p = *ctx.plan;
    std::set<dfg::NodeId> owned(p.server_params.begin(), p.server_params.end());
    Interp params(ctx.graph, owned, ctx.opts.seed, 0, p.env_total, p.env_total);
    std::vector<double> canonical = params.flat_params(p.server_params);
    int n_learners = up.server_push ? static_cast<int>(up.server_push->legs.size()) : 0;
    for (int64_t ep = 0; ep < ctx.opts.loop.episodes; ++ep) {
        ctx.wait_gate(ep, ctx.opts.timeout_ms);
        for (int i = 0; i < n_learners; ++i) {
            auto msg = ctx.hub.pop_async(static_cast<uint32_t>(up.unit->id), static_cast<uint32_t>(ep),
                                         ctx.opts.timeout_ms);
            for (size_t j = 0; j < canonical.size(); ++j) canonical[j] += msg.tensor.at(static_cast<int64_t>(j));
            report.grad_messages++;
        }
        Tensor out({static_cast<int64_t>(canonical.size())}, DType::F64, canonical);
        bool any_remote = false;
        for (const plan::ChannelLeg& leg : up.server_broadcast->legs)
            any_remote |= !ctx.local_units.count(leg.to_unit);
        ctx.latency_burst(any_remote);
        for (const plan::ChannelLeg& leg : up.server_broadcast->legs) {
            uint32_t stream = ctx.streams.id(up.server_broadcast->id, 0, leg.from_unit, leg.to_unit);
            deliver(ctx, leg.to_unit, stream, static_cast<uint32_t>(ep), out, false,
                    up.server_broadcast->id);
        }
        ctx.on_episode_done(up.unit->id, ep);
    }
    report.final_params = canonical;
}

}  // namespace

void run_unit(RunnerShared& ctx, int unit_id, UnitReport& report) {
    try {
        UnitProgram up = build_program(ctx, unit_id);
        if (up.unit->param_server) {
            run_server_unit(ctx, up, report);
            return;
        }
        const PlacementPlan& p = *ctx.plan;
        Interp interp(ctx.graph, up.fragment->nodes, ctx.opts.seed, up.unit->env_lo, up.unit->env_hi,
                      p.env_total);
        for (dfg::NodeId e : up.fragment->entry_nodes) interp.mark_external(e);

        // Gradient aggregation across the group: AllGather then the mean in
        // unit-id order, identical at every member.
        int64_t learn_iters = interp.learn_iters();
        if (up.grad_channel) {
            interp.set_grad_sync([&ctx, &up, learn_iters, unit_id](const std::vector<double>& mine,
                                                                   const ExecContext& ec) {
                uint32_t tag = static_cast<uint32_t>(ec.episode * learn_iters + ec.train_iter);
                Tensor t({static_cast<int64_t>(mine.size())}, DType::F64, mine);
                bool any_remote = false;
                for (const plan::ChannelLeg& leg : up.grad_channel->legs)
                    if (leg.from_unit == unit_id) any_remote |= !ctx.local_units.count(leg.to_unit);
                ctx.latency_burst(any_remote);
                for (const plan::ChannelLeg& leg : up.grad_channel->legs)
                    if (leg.from_unit == unit_id) {
                        uint32_t stream =
                            ctx.streams.id(up.grad_channel->id, 0, leg.from_unit, leg.to_unit);
                        deliver(ctx, leg.to_unit, stream, tag, t, false, up.grad_channel->id);
                    }
                std::map<int, std::vector<double>> shards;
                shards[unit_id] = mine;
                for (const plan::ChannelLeg& leg : up.grad_channel->legs)
                    if (leg.to_unit == unit_id) {
                        uint32_t stream =
                            ctx.streams.id(up.grad_channel->id, 0, leg.from_unit, leg.to_unit);
                        Tensor peer = ctx.hub.pop(stream, tag, ctx.opts.timeout_ms);
                        auto& v = shards[leg.from_unit];
                        v.resize(static_cast<size_t>(peer.size()));
                        for (int64_t i = 0; i < peer.size(); ++i) v[static_cast<size_t>(i)] = peer.at(i);
                    }
                std::vector<double> mean(mine.size(), 0.0);
                for (const auto& [uid, shard] : shards)
                    for (size_t i = 0; i < mean.size(); ++i) mean[i] += shard[i];
                for (double& m : mean) m /= static_cast<double>(shards.size());
                return mean;
            });
        }

        bool dpf_learner = p.policy == plan::Policy::DpF && up.server_push != nullptr &&
                           !up.unit->param_server;

        for (int64_t ep = 0; ep < ctx.opts.loop.episodes; ++ep) {
            ctx.wait_gate(ep, ctx.opts.timeout_ms);
            ExecContext rctx{ep, 0, 0};
            if (up.owns_reset) {
                interp.eval_phase(Phase::Reset, rctx);
                for (const auto& fb : up.intra_feedbacks)
                    if (fb.reset_from >= 0) interp.bind(fb.input, interp.value(fb.reset_from));
            }
            send_exits(ctx, up, interp, Timing::Reset, static_cast<uint32_t>(ep), false, true);
            recv_entries(ctx, up, interp, Timing::Reset, static_cast<uint32_t>(ep), false, false, false);
            recv_entries(ctx, up, interp, Timing::Reset, static_cast<uint32_t>(ep), true, false, false);

            for (int64_t st = 0; st < ctx.opts.loop.steps_per_episode; ++st) {
                auto tag = static_cast<uint32_t>(ep * ctx.opts.loop.steps_per_episode + st);
                recv_entries(ctx, up, interp, Timing::PerStep, tag, false, false, false);
                if (up.owns_step) {
                    interp.eval_phase(Phase::Step, {ep, st, 0});
                    for (const auto& fb : up.intra_feedbacks)
                        if (fb.step_from >= 0) interp.bind(fb.input, interp.value(fb.step_from));
                }
                send_exits(ctx, up, interp, Timing::PerStep, tag, false, true);
                recv_entries(ctx, up, interp, Timing::PerStep, tag, true, false, false);
            }

            auto etag = static_cast<uint32_t>(ep);
            recv_entries(ctx, up, interp, Timing::PerEpisode, etag, false, true, true);
            std::vector<double> snapshot;
            if (dpf_learner) snapshot = interp.flat_params(p.server_params);
            if (up.async_entry_legs > 0) {
                for (int m = 0; m < up.async_entry_legs; ++m) {
                    auto msg = ctx.hub.pop_async(static_cast<uint32_t>(unit_id), etag, ctx.opts.timeout_ms);
                    const auto& info = ctx.streams.streams.at(msg.stream);
                    const ChannelDef& ch =
                        p.fdg.channels[static_cast<size_t>(p.channels[static_cast<size_t>(info.plan_channel)].fdg_channel)];
                    interp.bind(ch.spec.data[static_cast<size_t>(info.datum)].node, std::move(msg.tensor));
                    interp.eval_phase(Phase::Learn, {ep, ctx.opts.loop.steps_per_episode, m});
                    report.grad_messages++;
                }
            } else if (up.owns_learn) {
                for (int64_t k = 0; k < learn_iters; ++k)
                    interp.eval_phase(Phase::Learn, {ep, ctx.opts.loop.steps_per_episode, k});
            }
            if (dpf_learner) {
                std::vector<double> now = interp.flat_params(p.server_params);
                std::vector<double> delta(now.size());
                for (size_t i = 0; i < now.size(); ++i) delta[i] = now[i] - snapshot[i];
                for (const plan::ChannelLeg& leg : up.server_push->legs)
                    if (leg.from_unit == unit_id)
                        ctx.latency_burst(!ctx.local_units.count(leg.to_unit));
                for (const plan::ChannelLeg& leg : up.server_push->legs)
                    if (leg.from_unit == unit_id) {
                        uint32_t stream = ctx.streams.id(up.server_push->id, 0, leg.from_unit, leg.to_unit);
                        deliver(ctx, leg.to_unit, stream, etag,
                                Tensor({static_cast<int64_t>(delta.size())}, DType::F64, delta), true,
                                up.server_push->id);
                    }
                for (const plan::ChannelLeg& leg : up.server_broadcast->legs)
                    if (leg.to_unit == unit_id) {
                        uint32_t stream =
                            ctx.streams.id(up.server_broadcast->id, 0, leg.from_unit, leg.to_unit);
                        Tensor canon = ctx.hub.pop(stream, etag, ctx.opts.timeout_ms);
                        interp.write_flat_params(p.server_params, canon.data());
                    }
            }
            send_exits(ctx, up, interp, Timing::PerEpisode, etag, false, true);
            recv_entries(ctx, up, interp, Timing::PerEpisode, etag, false, true, false);

            report.episode_reward_sum.push_back(interp.episode_reward_sum());
            report.steps = interp.steps_executed();
            if (up.owns_reset) report.env_count = interp.env_count();
            for (dfg::NodeId id : up.fragment->nodes)
                if (!up.fragment->entry_nodes.count(id) &&
                    ctx.graph->node(id).kind == OpKind::OptimStep && interp.has_value(id)) {
                    report.final_params =
                        interp.flat_params(dfg::param_list(*ctx.graph, ctx.graph->node(id)));
                    break;
                }
            ctx.on_episode_done(unit_id, ep);
        }
    } catch (const std::exception& e) {
        ctx.record_error(std::string("unit ") + std::to_string(unit_id) + ": " + e.what());
    }
}

std::string RunMetrics::to_csv() const {
    std::ostringstream os;
    os << "episode,wall_ms,reward,bytes_total\n";
    for (size_t i = 0; i < episodes.size(); ++i)
        os << i << "," << episodes[i].wall_ms << "," << episodes[i].reward << ","
           << episodes[i].bytes_total << "\n";
    return os.str();
}

RunMetrics run_plan_local(const dfg::DataflowGraph& g, const plan::PlacementPlan& p,
                          const RunOptions& opts) {
    RunnerShared ctx;
    ctx.graph = &g;
    ctx.plan = &p;
    ctx.opts = opts;
    ctx.streams = StreamTable::build(p);
    for (const plan::ExecUnit& u : p.units) ctx.local_units.insert(u.id);

    size_t n_units = p.units.size();
    std::vector<UnitReport> reports(n_units);
    std::mutex done_mu;
    std::condition_variable done_cv;
    std::map<int64_t, size_t> done_count;
    ctx.on_episode_done = [&](int, int64_t ep) {
        std::lock_guard<std::mutex> lk(done_mu);
        done_count[ep]++;
        done_cv.notify_all();
    };

    std::vector<std::thread> threads;
    threads.reserve(n_units);
    for (size_t u = 0; u < n_units; ++u)
        threads.emplace_back([&, u] { run_unit(ctx, static_cast<int>(u), reports[u]); });

    RunMetrics metrics;
    int64_t prev_bytes = 0;
    for (int64_t ep = 0; ep < opts.loop.episodes; ++ep) {
        auto t0 = std::chrono::steady_clock::now();
        ctx.raise_gate(ep);
        {
            std::unique_lock<std::mutex> lk(done_mu);
            bool ok = done_cv.wait_for(lk, std::chrono::milliseconds(opts.timeout_ms * 2), [&] {
                return done_count[ep] == n_units || ctx.hub.closed();
            });
            if (!ok || (ctx.hub.closed() && done_count[ep] != n_units)) break;
        }
        auto t1 = std::chrono::steady_clock::now();
        RunMetrics::Episode e;
        e.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        int64_t total = ctx.bytes_total();
        e.bytes_total = total - prev_bytes;
        prev_bytes = total;
        metrics.episodes.push_back(e);
    }
    for (auto& t : threads) t.join();
    if (!ctx.first_error.empty()) fail(Errc::Runtime, ctx.first_error);

    // Per-episode mean reward over all environment-owning units.
    for (size_t ep = 0; ep < metrics.episodes.size(); ++ep) {
        double sum = 0.0;
        int64_t envs = 0;
        for (const UnitReport& r : reports) {
            if (r.env_count == 0) continue;
            if (ep < r.episode_reward_sum.size()) sum += r.episode_reward_sum[ep];
            envs += r.env_count;
        }
        metrics.episodes[ep].reward = envs ? sum / static_cast<double>(envs) : 0.0;
    }
    for (const UnitReport& r : reports) {
        metrics.steps += r.steps;
        metrics.grad_messages += r.grad_messages;
        if (metrics.final_params.empty() && !r.final_params.empty()) metrics.final_params = r.final_params;
    }
    {
        std::lock_guard<std::mutex> lk(ctx.bytes_mu);
        metrics.bytes_per_channel = ctx.bytes_per_channel;
    }
    return metrics;
}

}  // namespace fraglow::run
