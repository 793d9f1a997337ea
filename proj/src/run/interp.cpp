#include "interp.hpp"

#include <cmath>
#include <sstream>

#include "../compute/op_eval.hpp"
#include "../core/rng.hpp"

namespace fraglow::run {

using dfg::OpKind;

namespace {

constexpr uint64_t kParamStream = 0x706172;
constexpr uint64_t kActionStream = 0x616374;
constexpr uint64_t kEnvStream = 0x656e76;

std::vector<double> parse_values(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
}

// Slice bounds, re-derived from the actual row count for "last step" slices
// so that sharded learners keep working on smaller batches.
struct SliceBounds {
    int64_t axis, start, stop;
    bool squeeze;
};

SliceBounds slice_bounds(const OpNode& n, const Tensor& x) {
    SliceBounds b{n.attr_int("axis", 0), n.attr_int("start", 0), n.attr_int("stop", 0),
                  n.attr_int("squeeze", 0) != 0};
    int64_t t_of = n.attr_int("last_step_of", 0);
    if (t_of > 0) {
        int64_t rows = x.dim(0);
        b.axis = 0;
        b.start = rows - rows / t_of;
        b.stop = rows;
    }
    return b;
}

}  // namespace

envs::EnvSpec env_spec_from_node(const OpNode& n) {
    std::map<std::string, double> params;
    for (const auto& [k, v] : n.attrs) {
        if (k.rfind("ep_", 0) != 0) continue;
        if (const double* d = std::get_if<double>(&v))
            params[k.substr(3)] = *d;
        else if (const int64_t* i = std::get_if<int64_t>(&v))
            params[k.substr(3)] = static_cast<double>(*i);
    }
    return envs::make_spec(n.attr_str("env", "gridline"), params);
}

Interp::Interp(const DataflowGraph* g, std::set<NodeId> owned, uint64_t run_seed, int64_t env_lo,
               int64_t env_hi, int64_t env_total)
    : g_(g),
      owned_(std::move(owned)),
      run_seed_(run_seed),
      env_lo_(env_lo),
      env_hi_(env_hi),
      env_total_(env_total) {
    topo_ = dfg::topo_order(*g_);
    phases_ = dfg::node_phases(*g_);
    // Parameters and constants materialize up front, identically everywhere.
    for (NodeId id : owned_) {
        const OpNode& n = g_->node(id);
        if (n.kind == OpKind::Param) {
            Tensor t(n.out_shape, n.out_dtype);
            if (n.attr_str("init", "zero") == "xavier") {
                double fan_in = n.attr_num("fan_in", 1), fan_out = n.attr_num("fan_out", 1);
                double a = std::sqrt(6.0 / (fan_in + fan_out));
                for (int64_t i = 0; i < t.size(); ++i)
                    t.set(i, rng::uniform_range(
                                 rng::key(run_seed_, kParamStream, static_cast<uint64_t>(id),
                                          static_cast<uint64_t>(i)),
                                 -a, a));
            }
            values_[id] = std::move(t);
        } else if (n.kind == OpKind::Const) {
            Tensor t(n.out_shape, n.out_dtype);
            if (n.has_attr("values")) {
                auto vals = parse_values(n.attr_str("values"));
                if (static_cast<int64_t>(vals.size()) != t.size())
                    fail(Errc::Shape, "const values length mismatch on node " + std::to_string(id));
                for (int64_t i = 0; i < t.size(); ++i) t.set(i, vals[static_cast<size_t>(i)]);
            } else {
                double fill = n.attr_num("fill", 0.0);
                for (int64_t i = 0; i < t.size(); ++i) t.set(i, fill);
            }
            values_[id] = std::move(t);
        } else if (n.kind == OpKind::Input) {
            external_.insert(id);
        }
    }
}

Interp Interp::whole(const DataflowGraph* g, uint64_t run_seed) {
    std::set<NodeId> all;
    int64_t env_total = 0;
    for (const OpNode& n : g->nodes) {
        all.insert(n.id);
        if (n.kind == OpKind::EnvReset) env_total = std::max(env_total, n.attr_int("num", 0));
    }
    if (env_total == 0) env_total = 1;
    return Interp(g, std::move(all), run_seed, 0, env_total, env_total);
}

void Interp::mark_external(NodeId id) { external_.insert(id); }

void Interp::bind(NodeId id, Tensor value) { values_[id] = std::move(value); }

const Tensor& Interp::value(NodeId id) const {
    auto it = values_.find(id);
    if (it == values_.end())
        fail(Errc::Runtime, "no value for node " + std::to_string(id) + " (" +
                                dfg::op_name(g_->node(id).kind) + ")");
    return it->second;
}

int64_t Interp::learn_iters() const {
    int64_t iters = 1;
    for (NodeId id : owned_) {
        const OpNode& n = g_->node(id);
        if (n.kind == OpKind::OptimStep || n.kind == OpKind::GradCompute)
            iters = std::max(iters, n.attr_int("train_iters", 1));
    }
    return iters;
}

void Interp::eval_phase(Phase phase, const ExecContext& ctx) {
    for (NodeId id : topo_) {
        if (!owned_.count(id)) continue;
        if (phases_[static_cast<size_t>(id)] != phase) continue;
        if (external_.count(id)) continue;
        eval_node(g_->node(id), ctx);
    }
}

void Interp::eval_node(const OpNode& n, const ExecContext& ctx) {
    auto in = [&](size_t i) -> const Tensor& { return value(n.inputs.at(i)); };
    switch (n.kind) {
        case OpKind::Param:
        case OpKind::Const:
        case OpKind::Input:
            return;  // resident or bound
        case OpKind::MatMul:
        case OpKind::Add:
        case OpKind::Mul:
        case OpKind::Tanh:
        case OpKind::Relu:
        case OpKind::Softmax:
        case OpKind::Concat:
        case OpKind::ReduceMean:
        case OpKind::ReduceSum:
        case OpKind::Output: {
            std::vector<const Tensor*> parts;
            parts.reserve(n.inputs.size());
            for (NodeId i : n.inputs) parts.push_back(&value(i));
            values_[n.id] = compute::op_eval(n.kind, parts, n.attrs);
            return;
        }
        case OpKind::Slice: {
            // Bounds re-derived from the live row count for sharded batches.
            SliceBounds b = slice_bounds(n, in(0));
            values_[n.id] = ops::slice(in(0), b.axis, b.start, b.stop, b.squeeze);
            return;
        }
        case OpKind::PolicyApply: {
            const Tensor& logits = in(0);
            Tensor p = ops::softmax(logits);
            int64_t rows = logits.dim(0), a_dim = logits.dim(1);
            int64_t n_agents = n.attr_int("rows_n", 1);
            int64_t e_local = rows / std::max<int64_t>(1, n_agents);
            Tensor out({rows, 2}, n.out_dtype);
            for (int64_t r = 0; r < rows; ++r) {
                int64_t agent = r / e_local, env = r % e_local;
                uint64_t global_row =
                    static_cast<uint64_t>(agent * env_total_ + env_lo_ + env);
                double u = rng::uniform(rng::key(run_seed_, kActionStream,
                                                 static_cast<uint64_t>(ctx.episode),
                                                 static_cast<uint64_t>(ctx.step), global_row));
                double cum = 0.0;
                int64_t chosen = a_dim - 1;
                for (int64_t a = 0; a < a_dim; ++a) {
                    cum += p.at(r * a_dim + a);
                    if (u < cum) {
                        chosen = a;
                        break;
                    }
                }
                out.set(r * 2, static_cast<double>(chosen));
                out.set(r * 2 + 1, std::log(std::max(p.at(r * a_dim + chosen), 1e-30)));
            }
            values_[n.id] = std::move(out);
            return;
        }
        case OpKind::EnvReset: {
            int64_t group = n.attr_int("env_group", 0);
            EnvGroup& eg = env_groups_[group];
            eg.spec = env_spec_from_node(n);
            int64_t e_local = env_count();
            eg.states.clear();
            eg.last_obs.assign(static_cast<size_t>(e_local), {});
            int64_t width = n.out_shape[1];
            Tensor out({e_local, width}, n.out_dtype);
            for (int64_t e = 0; e < e_local; ++e) {
                uint64_t env_seed = rng::key(run_seed_, kEnvStream, static_cast<uint64_t>(env_lo_ + e),
                                             static_cast<uint64_t>(ctx.episode));
                std::vector<double> obs;
                eg.states.push_back(envs::env_reset(eg.spec, env_seed, &obs));
                if (static_cast<int64_t>(obs.size()) != width)
                    fail(Errc::Shape, "env obs width mismatch");
                for (int64_t j = 0; j < width; ++j) out.set(e * width + j, obs[static_cast<size_t>(j)]);
                eg.last_obs[static_cast<size_t>(e)] = obs;
            }
            episode_reward_sum_ = 0.0;
            values_[n.id] = std::move(out);
            return;
        }
        case OpKind::EnvStep: {
            int64_t group = n.attr_int("env_group", 0);
            auto git = env_groups_.find(group);
            if (git == env_groups_.end()) fail(Errc::Runtime, "EnvStep before EnvReset");
            EnvGroup& eg = git->second;
            const Tensor& action = in(0);
            int64_t e_local = static_cast<int64_t>(eg.states.size());
            int64_t n_agents = eg.spec.name == "spread_lite" ? eg.spec.n_agents : 1;
            int64_t width = n.out_shape[1];
            int64_t obs_w = n_agents * eg.spec.obs_dim;
            Tensor out({e_local, width}, n.out_dtype);
            for (int64_t e = 0; e < e_local; ++e) {
                if (eg.states[static_cast<size_t>(e)].done) {
                    // Absorbing after terminal: repeat last obs, zero reward.
                    const auto& obs = eg.last_obs[static_cast<size_t>(e)];
                    for (int64_t j = 0; j < obs_w; ++j) out.set(e * width + j, obs[static_cast<size_t>(j)]);
                    for (int64_t a = 0; a < n_agents; ++a) out.set(e * width + obs_w + a, 0.0);
                    out.set(e * width + obs_w + n_agents, 1.0);
                    continue;
                }
                std::vector<int64_t> acts(static_cast<size_t>(n_agents));
                for (int64_t a = 0; a < n_agents; ++a)
                    acts[static_cast<size_t>(a)] =
                        static_cast<int64_t>(action.at(a * e_local + e) + 0.5);
                envs::StepResult res = envs::env_step(eg.spec, eg.states[static_cast<size_t>(e)], acts);
                for (int64_t j = 0; j < obs_w; ++j) out.set(e * width + j, res.obs[static_cast<size_t>(j)]);
                for (int64_t a = 0; a < n_agents; ++a)
                    out.set(e * width + obs_w + a, res.rewards[static_cast<size_t>(a)]);
                out.set(e * width + obs_w + n_agents, res.done ? 1.0 : 0.0);
                eg.last_obs[static_cast<size_t>(e)] = res.obs;
                episode_reward_sum_ += res.reward;
            }
            steps_executed_ += 1;
            values_[n.id] = std::move(out);
            return;
        }
        case OpKind::BufferInsert: {
            BufferState& bs = buffers_[n.attr_int("buffer", 0)];
            int64_t rows = 0, width = 0;
            std::vector<std::pair<const Tensor*, int64_t>> fields;
            for (NodeId i : n.inputs) {
                const Tensor& t = value(i);
                int64_t w = t.rank() == 2 ? t.dim(1) : 1;
                rows = t.dim(0);
                width += w;
                fields.emplace_back(&t, w);
            }
            std::vector<double> block(static_cast<size_t>(rows * width));
            int64_t col = 0;
            for (auto [t, w] : fields) {
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < w; ++j)
                        block[static_cast<size_t>(r * width + col + j)] = t->at(r * w + j);
                col += w;
            }
            bs.rows_per_step = rows;
            bs.step_blocks.push_back(std::move(block));
            values_[n.id] = Tensor::scalar(static_cast<double>(bs.step_blocks.size()), DType::I64);
            return;
        }
        case OpKind::BufferSample: {
            BufferState& bs = buffers_[n.attr_int("buffer", 0)];
            if (bs.cached_episode == ctx.episode) {
                values_[n.id] = bs.cached_sample;
                return;
            }
            if (bs.step_blocks.empty()) fail(Errc::EmptyBuffer, "buffer sample on empty buffer");
            int64_t width = n.out_shape[1];
            int64_t t_len = static_cast<int64_t>(bs.step_blocks.size());
            Tensor out({t_len * bs.rows_per_step, width}, n.out_dtype);
            for (int64_t t = 0; t < t_len; ++t) {
                const auto& block = bs.step_blocks[static_cast<size_t>(t)];
                for (size_t j = 0; j < block.size(); ++j)
                    out.set(t * bs.rows_per_step * width + static_cast<int64_t>(j), block[j]);
            }
            bs.step_blocks.clear();
            bs.cached_sample = out;
            bs.cached_episode = ctx.episode;
            values_[n.id] = std::move(out);
            return;
        }
        case OpKind::GaeAdv: {
            const Tensor &rew = in(0), &val = in(1), &don = in(2), &last = in(3);
            int64_t streams = last.size();
            std::vector<double> r(rew.data()), v(val.data()), lv(last.data());
            std::vector<uint8_t> d(static_cast<size_t>(don.size()));
            for (int64_t i = 0; i < don.size(); ++i) d[static_cast<size_t>(i)] = don.at(i) > 0.5;
            auto adv = rl::gae_streams(r, v, d, lv, n.attr_num("gamma", 0.99),
                                       n.attr_num("lam", 0.95), streams);
            if (n.attr_int("normalize", 0)) rl::normalize_advantages(adv);
            values_[n.id] = Tensor(rew.shape(), n.out_dtype, std::move(adv));
            return;
        }
        case OpKind::DiscountedReturn: {
            const Tensor &rew = in(0), &don = in(1), &last = in(2);
            int64_t streams = last.size();
            std::vector<double> r(rew.data()), lv(last.data());
            std::vector<uint8_t> d(static_cast<size_t>(don.size()));
            for (int64_t i = 0; i < don.size(); ++i) d[static_cast<size_t>(i)] = don.at(i) > 0.5;
            auto ret = rl::discounted_return_streams(r, d, lv, n.attr_num("gamma", 0.99), streams);
            values_[n.id] = Tensor(rew.shape(), n.out_dtype, std::move(ret));
            return;
        }
        case OpKind::PpoLoss: {
            const Tensor& logits = in(0);
            const Tensor &val = in(1), &act = in(2), &logp = in(3), &adv = in(4), &ret = in(5);
            rl::Hyperparams h;
            h.clip_eps = n.attr_num("clip_eps", 0.2);
            h.value_coef = n.attr_num("value_coef", 0.5);
            h.entropy_coef = n.attr_num("entropy_coef", 0.0);
            std::vector<int64_t> actions(static_cast<size_t>(act.size()));
            for (int64_t i = 0; i < act.size(); ++i)
                actions[static_cast<size_t>(i)] = static_cast<int64_t>(act.at(i) + 0.5);
            LossSide side;
            side.terms = rl::ppo_loss_core(logits, val.data(), actions, logp.data(), adv.data(),
                                           ret.data(), h);
            side.inputs = {n.inputs[0], n.inputs[1]};
            values_[n.id] = Tensor({1}, n.out_dtype, {side.terms.loss});
            loss_side_[n.id] = std::move(side);
            return;
        }
        case OpKind::A3cLoss: {
            const Tensor& logits = in(0);
            const Tensor &val = in(1), &act = in(2), &ret = in(3);
            rl::Hyperparams h;
            h.value_coef = n.attr_num("value_coef", 0.5);
            h.entropy_coef = n.attr_num("entropy_coef", 0.0);
            std::vector<int64_t> actions(static_cast<size_t>(act.size()));
            for (int64_t i = 0; i < act.size(); ++i)
                actions[static_cast<size_t>(i)] = static_cast<int64_t>(act.at(i) + 0.5);
            LossSide side;
            side.terms = rl::a3c_loss_core(logits, val.data(), actions, ret.data(), h);
            side.inputs = {n.inputs[0], n.inputs[1]};
            values_[n.id] = Tensor({1}, n.out_dtype, {side.terms.loss});
            loss_side_[n.id] = std::move(side);
            return;
        }
        case OpKind::GradCompute: {
            values_[n.id] = backward_flat(n);
            return;
        }
        case OpKind::OptimStep: {
            std::vector<double> grads = value(n.inputs[0]).data();
            if (grad_sync_) grads = grad_sync_(grads, ctx);
            auto params = dfg::param_list(*g_, n);
            OptimState& st = optim_[n.id];
            std::vector<double> flat = flat_params(params);
            if (!st.ready) {
                st.adam = compute::adam_init(static_cast<int64_t>(flat.size()), n.attr_num("lr", 1e-3));
                st.adam.beta1 = n.attr_num("beta1", 0.9);
                st.adam.beta2 = n.attr_num("beta2", 0.999);
                st.adam.eps = n.attr_num("eps", 1e-8);
                st.ready = true;
            }
            if (grads.size() != flat.size()) fail(Errc::Shape, "gradient/param size mismatch");
            bool f32 = g_->node(params[0]).out_dtype == DType::F32;
            compute::adam_step(flat, grads, st.adam, f32);
            write_flat_params(params, flat);
            values_[n.id] = Tensor::scalar(static_cast<double>(st.adam.t), n.out_dtype);
            return;
        }
    }
    fail(Errc::Runtime, std::string("no evaluator for ") + dfg::op_name(n.kind));
}

Tensor Interp::backward_flat(const OpNode& grad_node) {
    NodeId loss_id = grad_node.inputs.at(0);
    auto params = dfg::param_list(*g_, grad_node);
    // Adjoint accumulation over the loss ancestor cone, reverse topo order.
    std::set<NodeId> cone = dfg::backward_closure(*g_, {loss_id});
    std::map<NodeId, Tensor> adj;
    adj[loss_id] = Tensor::scalar(1.0, value(loss_id).dtype());
    auto accumulate = [&](NodeId id, const Tensor& d) {
        auto it = adj.find(id);
        if (it == adj.end())
            adj[id] = d;
        else
            it->second = ops::add(it->second, d);
    };
    for (auto rit = topo_.rbegin(); rit != topo_.rend(); ++rit) {
        NodeId id = *rit;
        if (!cone.count(id) || !adj.count(id)) continue;
        const OpNode& n = g_->node(id);
        const Tensor& dy = adj[id];
        switch (n.kind) {
            case OpKind::MatMul:
                accumulate(n.inputs[0], ops::matmul_grad_lhs(dy, value(n.inputs[0]), value(n.inputs[1])));
                accumulate(n.inputs[1], ops::matmul_grad_rhs(dy, value(n.inputs[0]), value(n.inputs[1])));
                break;
            case OpKind::Add:
                accumulate(n.inputs[0], dy);
                accumulate(n.inputs[1], ops::reduce_to_shape(dy, value(n.inputs[1]).shape()));
                break;
            case OpKind::Mul:
                accumulate(n.inputs[0], ops::mul(dy, value(n.inputs[1])));
                accumulate(n.inputs[1],
                           ops::reduce_to_shape(ops::mul(dy, value(n.inputs[0])), value(n.inputs[1]).shape()));
                break;
            case OpKind::Tanh:
                accumulate(n.inputs[0], ops::tanh_grad(dy, value(id)));
                break;
            case OpKind::Relu:
                accumulate(n.inputs[0], ops::relu_grad(dy, value(n.inputs[0])));
                break;
            case OpKind::Softmax:
                accumulate(n.inputs[0], ops::softmax_grad(dy, value(id)));
                break;
            case OpKind::Output:
                accumulate(n.inputs[0], dy);
                break;
            case OpKind::Concat: {
                int64_t axis = n.attr_int("axis", 0);
                int64_t off = 0;
                for (NodeId i : n.inputs) {
                    const Tensor& xi = value(i);
                    accumulate(i, ops::slice(dy, axis, off, off + xi.dim(static_cast<size_t>(axis)), false));
                    off += xi.dim(static_cast<size_t>(axis));
                }
                break;
            }
            case OpKind::Slice: {
                const Tensor& x = value(n.inputs[0]);
                Tensor dx(x.shape(), x.dtype());
                SliceBounds b = slice_bounds(n, x);
                int64_t outer = 1, inner = 1;
                for (int64_t d = 0; d < b.axis; ++d) outer *= x.dim(static_cast<size_t>(d));
                for (size_t d = static_cast<size_t>(b.axis) + 1; d < x.rank(); ++d) inner *= x.dim(d);
                int64_t w = b.stop - b.start;
                for (int64_t o = 0; o < outer; ++o)
                    for (int64_t j = 0; j < w * inner; ++j)
                        dx.set(o * x.dim(static_cast<size_t>(b.axis)) * inner + b.start * inner + j,
                               dy.at(o * w * inner + j));
                accumulate(n.inputs[0], dx);
                break;
            }
            case OpKind::ReduceMean:
            case OpKind::ReduceSum: {
                const Tensor& x = value(n.inputs[0]);
                if (n.attr_int("axis", -1) >= 0) fail(Errc::Runtime, "axis-reduce backward unsupported");
                double coef = n.kind == OpKind::ReduceMean ? 1.0 / static_cast<double>(x.size()) : 1.0;
                Tensor dx(x.shape(), x.dtype());
                for (int64_t i = 0; i < x.size(); ++i) dx.set(i, dy.at(0) * coef);
                accumulate(n.inputs[0], dx);
                break;
            }
            case OpKind::PpoLoss:
            case OpKind::A3cLoss: {
                auto it = loss_side_.find(id);
                if (it == loss_side_.end()) fail(Errc::Runtime, "loss side data missing");
                double g = dy.at(0);
                accumulate(it->second.inputs[0], ops::scale(it->second.terms.dlogits, g));
                Tensor dv(value(it->second.inputs[1]).shape(), dy.dtype());
                for (int64_t i = 0; i < dv.size(); ++i)
                    dv.set(i, g * it->second.terms.dvalues[static_cast<size_t>(i)]);
                accumulate(it->second.inputs[1], dv);
                break;
            }
            default:
                break;  // sources and non-differentiable nodes stop the flow
        }
    }
    int64_t total = 0;
    for (NodeId p : params) total += numel(g_->node(p).out_shape);
    Tensor flat({total}, grad_node.out_dtype);
    int64_t off = 0;
    for (NodeId p : params) {
        int64_t n = numel(g_->node(p).out_shape);
        auto it = adj.find(p);
        for (int64_t i = 0; i < n; ++i) flat.set(off + i, it == adj.end() ? 0.0 : it->second.at(i));
        off += n;
    }
    return flat;
}

std::vector<double> Interp::flat_params(const std::vector<NodeId>& params) const {
    std::vector<double> flat;
    for (NodeId p : params) {
        const Tensor& t = value(p);
        for (int64_t i = 0; i < t.size(); ++i) flat.push_back(t.at(i));
    }
    return flat;
}

void Interp::write_flat_params(const std::vector<NodeId>& params, const std::vector<double>& flat) {
    size_t k = 0;
    for (NodeId p : params) {
        Tensor& t = values_.at(p);
        for (int64_t i = 0; i < t.size(); ++i) t.set(i, flat[k++]);
    }
}

}  // namespace fraglow::run
