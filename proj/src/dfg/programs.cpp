#include "programs.hpp"

#include <sstream>

namespace fraglow::dfg {

void AlgoConfig::validate() const {
    if (algorithm != "ppo" && algorithm != "a3c" && algorithm != "mappo")
        fail(Errc::Config, "unknown algorithm '" + algorithm + "'");
    if (agents < 1 || actors < 1 || envs < 1) fail(Errc::Config, "agent/actor/env counts must be >= 1");
    if (!envs::env_known(env_name)) fail(Errc::UnknownEnv, "unknown environment '" + env_name + "'");
    if (activation != "tanh" && activation != "relu")
        fail(Errc::Config, "activation must be tanh or relu");
    if (hidden.empty()) fail(Errc::Config, "policy needs at least one hidden layer");
    if (loop.episodes < 0 || loop.steps_per_episode < 1) fail(Errc::Config, "bad loop spec");
    if (algorithm == "a3c" && envs != actors)
        fail(Errc::Config, "a3c pairs one environment per actor (envs must equal actors)");
    if (actors > envs) fail(Errc::Config, "more actors than environments");
    hyper.validate();
}

namespace {

std::string join_ids(const std::vector<NodeId>& ids) {
    std::string s;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(ids[i]);
    }
    return s;
}

struct ProgramCtx {
    GraphBuilder b;
    const AlgoConfig& cfg;
    envs::EnvSpec espec;
    std::vector<NodeId> policy_params;
    std::vector<NodeId> critic_params;
};

// Param pairs (W [in,out], b [out]) for an MLP; weights are learner-owned.
std::vector<NodeId> make_mlp_params(ProgramCtx& ctx, const std::string& group,
                                    const std::vector<int64_t>& dims) {
    std::vector<NodeId> params;
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        Attrs wa{{"component", std::string("learner")}, {"init", std::string("xavier")},
                 {"pgroup", group}, {"fan_in", dims[l]}, {"fan_out", dims[l + 1]}};
        params.push_back(ctx.b.add(OpKind::Param, {}, {dims[l], dims[l + 1]}, DType::F32, wa));
        Attrs ba{{"component", std::string("learner")}, {"init", std::string("zero")},
                 {"pgroup", group}};
        params.push_back(ctx.b.add(OpKind::Param, {}, {dims[l + 1]}, DType::F32, ba));
    }
    return params;
}

NodeId apply_mlp(ProgramCtx& ctx, NodeId x, const std::vector<NodeId>& params,
                 const std::string& component) {
    Attrs ca{{"component", component}};
    NodeId h = x;
    size_t layers = params.size() / 2;
    for (size_t l = 0; l < layers; ++l) {
        NodeId z = ctx.b.add(OpKind::MatMul, {h, params[2 * l]}, {}, DType::F32, ca, Resource::Accel);
        NodeId za = ctx.b.add(OpKind::Add, {z, params[2 * l + 1]}, {}, DType::F32, ca);
        if (l + 1 == layers) {
            h = za;
        } else {
            h = ctx.b.add(ctx.cfg.activation == "relu" ? OpKind::Relu : OpKind::Tanh, {za}, {},
                          DType::F32, ca);
        }
    }
    return h;
}

Attrs env_attrs(const ProgramCtx& ctx, int64_t n_envs) {
    Attrs a{{"component", std::string("env")}, {"env", ctx.cfg.env_name}, {"num", n_envs},
            {"env_group", static_cast<int64_t>(0)}, {"rows", std::string("env")}};
    for (const auto& [k, v] : ctx.cfg.env_params) a["ep_" + k] = v;
    if (ctx.cfg.env_name == "spread_lite") a["ep_n_agents"] = static_cast<double>(ctx.cfg.agents);
    return a;
}

struct Rollout {
    NodeId state_in, logits, pa, action, logp;
    NodeId env_reset, env_step, new_state, reward, done;
};

// Input -> policy MLP -> PolicyApply -> EnvStep, plus the feedback wiring.
// `rows` is the policy batch per step (E for single agent, N*E for MAPPO).
Rollout build_rollout(ProgramCtx& ctx, int64_t n_envs, int64_t state_width, NodeId* rows_state_out,
                      int64_t env_out_width) {
    const AlgoConfig& cfg = ctx.cfg;
    int64_t n_agents = cfg.algorithm == "mappo" ? cfg.agents : 1;
    int64_t s_dim = ctx.espec.obs_dim;
    Attrs actor{{"component", std::string("actor")}};
    Rollout r;
    r.state_in = ctx.b.add(OpKind::Input, {}, {n_envs, state_width}, DType::F32,
                           {{"component", std::string("actor")}, {"source", std::string("state")},
                            {"rows", std::string("env")}});
    NodeId rows_state = r.state_in;
    if (n_agents > 1) {
        std::vector<NodeId> per_agent;
        for (int64_t a = 0; a < n_agents; ++a)
            per_agent.push_back(ctx.b.add(OpKind::Slice, {r.state_in}, {}, DType::F32,
                                          {{"component", std::string("actor")}, {"axis", static_cast<int64_t>(1)},
                                           {"start", a * s_dim}, {"stop", (a + 1) * s_dim}}));
        rows_state = ctx.b.add(OpKind::Concat, per_agent, {}, DType::F32,
                               {{"component", std::string("actor")}, {"axis", static_cast<int64_t>(0)},
                                {"rows", std::string("agent_env")}, {"rows_n", n_agents}});
    }
    if (rows_state_out) *rows_state_out = rows_state;
    r.logits = apply_mlp(ctx, rows_state, ctx.policy_params, "actor");
    Attrs pa_attrs = actor;
    pa_attrs["rows_n"] = n_agents;
    r.pa = ctx.b.add(OpKind::PolicyApply, {r.logits}, {}, DType::F32, pa_attrs);
    r.action = ctx.b.add(OpKind::Slice, {r.pa}, {}, DType::I64,
                         {{"component", std::string("actor")}, {"axis", static_cast<int64_t>(1)},
                          {"start", static_cast<int64_t>(0)}, {"stop", static_cast<int64_t>(1)},
                          {"squeeze", static_cast<int64_t>(1)}, {"rows", std::string("agent_env")},
                          {"rows_n", n_agents}});
    r.logp = ctx.b.add(OpKind::Slice, {r.pa}, {}, DType::F32,
                       {{"component", std::string("actor")}, {"axis", static_cast<int64_t>(1)},
                        {"start", static_cast<int64_t>(1)}, {"stop", static_cast<int64_t>(2)},
                        {"squeeze", static_cast<int64_t>(1)}, {"rows", std::string("agent_env")},
                        {"rows_n", n_agents}});
    r.env_reset = ctx.b.add(OpKind::EnvReset, {}, {n_envs, state_width}, DType::F32,
                            env_attrs(ctx, n_envs), Resource::Cpu);
    r.env_step = ctx.b.add(OpKind::EnvStep, {r.action}, {n_envs, env_out_width}, DType::F32,
                           env_attrs(ctx, n_envs), Resource::Cpu);
    Attrs env{{"component", std::string("env")}, {"rows", std::string("env")}};
    auto slice1 = [&](NodeId src, int64_t start, int64_t stop, bool squeeze, DType dt) {
        Attrs a = env;
        a["axis"] = static_cast<int64_t>(1);
        a["start"] = start;
        a["stop"] = stop;
        if (squeeze) a["squeeze"] = static_cast<int64_t>(1);
        return ctx.b.add(OpKind::Slice, {src}, {}, dt, a);
    };
    r.new_state = slice1(r.env_step, 0, state_width, false, DType::F32);
    return r;
}

struct BufferCols {
    NodeId insert = -1, sample = -1;
    std::vector<int64_t> offsets;  // column start per inserted field
    int64_t width = 0;
};

BufferCols make_buffer(ProgramCtx& ctx, const std::vector<NodeId>& fields, int64_t rows_per_step,
                       const std::string& component) {
    BufferCols bc;
    for (NodeId f : fields) {
        const OpNode& n = ctx.b.peek().node(f);
        bc.offsets.push_back(bc.width);
        bc.width += n.out_shape.size() == 2 ? n.out_shape[1] : 1;
    }
    Attrs ia{{"component", component}, {"buffer", static_cast<int64_t>(0)}};
    bc.insert = ctx.b.add(OpKind::BufferInsert, fields, {}, DType::I64, ia);
    int64_t total_rows = ctx.cfg.loop.steps_per_episode * rows_per_step;
    int64_t n_agents = ctx.cfg.algorithm == "mappo" ? ctx.cfg.agents : 1;
    Attrs sa{{"component", component}, {"buffer", static_cast<int64_t>(0)}, {"width", bc.width},
             {"rows", std::string("time_agent_env")}, {"rows_n", n_agents},
             {"rows_t", ctx.cfg.loop.steps_per_episode}};
    bc.sample = ctx.b.add(OpKind::BufferSample, {}, {total_rows, bc.width}, DType::F32, sa);
    return bc;
}

NodeId col_slice(ProgramCtx& ctx, NodeId sample, int64_t start, int64_t width, bool squeeze,
                 const std::string& component) {
    Attrs a{{"component", component}, {"axis", static_cast<int64_t>(1)}, {"start", start},
            {"stop", start + width}};
    if (squeeze && width == 1) a["squeeze"] = static_cast<int64_t>(1);
    return ctx.b.add(OpKind::Slice, {sample}, {}, DType::F32, a);
}

NodeId squeeze_col(ProgramCtx& ctx, NodeId v2d, const std::string& component) {
    return ctx.b.add(OpKind::Slice, {v2d}, {}, DType::F32,
                     {{"component", component}, {"axis", static_cast<int64_t>(1)},
                      {"start", static_cast<int64_t>(0)}, {"stop", static_cast<int64_t>(1)},
                      {"squeeze", static_cast<int64_t>(1)}});
}

struct LearnTail {
    NodeId loss = -1, grads = -1, optim = -1;
};

LearnTail learn_tail(ProgramCtx& ctx, NodeId loss) {
    LearnTail t;
    t.loss = loss;
    std::vector<NodeId> all_params = ctx.policy_params;
    all_params.insert(all_params.end(), ctx.critic_params.begin(), ctx.critic_params.end());
    int64_t total = 0;
    for (NodeId p : all_params) total += numel(ctx.b.peek().node(p).out_shape);
    std::string plist = join_ids(all_params);
    t.grads = ctx.b.add(OpKind::GradCompute, {loss}, {total}, DType::F32,
                        {{"component", std::string("learner")}, {"params", plist},
                         {"train_iters", ctx.cfg.hyper.train_iters}});
    t.optim = ctx.b.add(OpKind::OptimStep, {t.grads}, {}, DType::F32,
                        {{"component", std::string("learner")}, {"params", plist},
                         {"train_iters", ctx.cfg.hyper.train_iters}, {"lr", ctx.cfg.hyper.lr},
                         {"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}});
    return t;
}

DataflowGraph build_ppo(ProgramCtx& ctx) {
    const AlgoConfig& cfg = ctx.cfg;
    int64_t s_dim = ctx.espec.obs_dim, a_dim = ctx.espec.n_actions, n_envs = cfg.envs;
    std::vector<int64_t> pdims{s_dim};
    pdims.insert(pdims.end(), cfg.hidden.begin(), cfg.hidden.end());
    pdims.push_back(a_dim);
    std::vector<int64_t> cdims{s_dim};
    cdims.insert(cdims.end(), cfg.hidden.begin(), cfg.hidden.end());
    cdims.push_back(1);
    ctx.policy_params = make_mlp_params(ctx, "policy", pdims);
    ctx.critic_params = make_mlp_params(ctx, "critic", cdims);

    Rollout r = build_rollout(ctx, n_envs, s_dim, nullptr, s_dim + 2);
    Attrs env{{"component", std::string("env")}, {"rows", std::string("env")}};
    auto esl = [&](int64_t start, int64_t stop, DType dt) {
        Attrs a = env;
        a["axis"] = static_cast<int64_t>(1);
        a["start"] = start;
        a["stop"] = stop;
        a["squeeze"] = static_cast<int64_t>(1);
        return ctx.b.add(OpKind::Slice, {r.env_step}, {}, dt, a);
    };
    r.reward = esl(s_dim, s_dim + 1, DType::F32);
    r.done = esl(s_dim + 1, s_dim + 2, DType::Bool);

    BufferCols bc =
        make_buffer(ctx, {r.state_in, r.action, r.reward, r.new_state, r.done, r.logp}, n_envs, "trainer");

    std::string lc = "learner";
    NodeId states = col_slice(ctx, bc.sample, bc.offsets[0], s_dim, false, lc);
    NodeId actions = col_slice(ctx, bc.sample, bc.offsets[1], 1, true, lc);
    NodeId rewards = col_slice(ctx, bc.sample, bc.offsets[2], 1, true, lc);
    NodeId nexts = col_slice(ctx, bc.sample, bc.offsets[3], s_dim, false, lc);
    NodeId dones = col_slice(ctx, bc.sample, bc.offsets[4], 1, true, lc);
    NodeId logps = col_slice(ctx, bc.sample, bc.offsets[5], 1, true, lc);
    int64_t total_rows = cfg.loop.steps_per_episode * n_envs;
    NodeId last_next = ctx.b.add(OpKind::Slice, {nexts}, {}, DType::F32,
                                 {{"component", lc}, {"axis", static_cast<int64_t>(0)},
                                  {"start", total_rows - n_envs}, {"stop", total_rows},
                                  {"last_step_of", cfg.loop.steps_per_episode}});
    NodeId values = squeeze_col(ctx, apply_mlp(ctx, states, ctx.critic_params, lc), lc);
    NodeId last_value = squeeze_col(ctx, apply_mlp(ctx, last_next, ctx.critic_params, lc), lc);
    NodeId adv = ctx.b.add(OpKind::GaeAdv, {rewards, values, dones, last_value}, {}, DType::F32,
                           {{"component", lc}, {"gamma", cfg.hyper.gamma}, {"lam", cfg.hyper.lam},
                            {"streams", n_envs},
                            {"normalize", static_cast<int64_t>(cfg.hyper.normalize_adv ? 1 : 0)}});
    NodeId ret = ctx.b.add(OpKind::DiscountedReturn, {rewards, dones, last_value}, {}, DType::F32,
                           {{"component", lc}, {"gamma", cfg.hyper.gamma}, {"streams", n_envs}});
    NodeId logits_new = apply_mlp(ctx, states, ctx.policy_params, lc);
    NodeId loss = ctx.b.add(OpKind::PpoLoss, {logits_new, values, actions, logps, adv, ret}, {},
                            DType::F32,
                            {{"component", lc}, {"clip_eps", cfg.hyper.clip_eps},
                             {"value_coef", cfg.hyper.value_coef},
                             {"entropy_coef", cfg.hyper.entropy_coef}});
    LearnTail tail = learn_tail(ctx, loss);
    ctx.b.mark_output(tail.optim);
    ctx.b.mark_output(tail.loss);

    ctx.b.set_attr(r.state_in, "reset_from", static_cast<int64_t>(r.env_reset));
    ctx.b.set_attr(r.state_in, "step_from", static_cast<int64_t>(r.new_state));

    ctx.b.annotate({r.env_reset}, CommOp::AllGather, {r.env_reset}, "Reset");
    ctx.b.annotate({r.action}, CommOp::AllGather, {r.action}, "Action");
    ctx.b.annotate({r.reward, r.new_state, r.done}, CommOp::AllGather,
                   {r.reward, r.new_state, r.done, r.state_in, r.logp}, "Step");
    ctx.b.annotate({bc.sample}, CommOp::AllGather, {bc.sample}, "Buffer");
    ctx.b.annotate({tail.optim}, CommOp::AllGather, ctx.policy_params, "Learner");
    return ctx.b.finish(cfg.loop);
}

DataflowGraph build_a3c(ProgramCtx& ctx) {
    const AlgoConfig& cfg = ctx.cfg;
    int64_t s_dim = ctx.espec.obs_dim, a_dim = ctx.espec.n_actions, n_envs = cfg.envs;
    std::vector<int64_t> pdims{s_dim};
    pdims.insert(pdims.end(), cfg.hidden.begin(), cfg.hidden.end());
    pdims.push_back(a_dim);
    std::vector<int64_t> cdims{s_dim};
    cdims.insert(cdims.end(), cfg.hidden.begin(), cfg.hidden.end());
    cdims.push_back(1);
    ctx.policy_params = make_mlp_params(ctx, "policy", pdims);
    ctx.critic_params = make_mlp_params(ctx, "critic", cdims);

    Rollout r = build_rollout(ctx, n_envs, s_dim, nullptr, s_dim + 2);
    Attrs env{{"component", std::string("env")}, {"rows", std::string("env")}};
    auto esl = [&](int64_t start, int64_t stop, DType dt) {
        Attrs a = env;
        a["axis"] = static_cast<int64_t>(1);
        a["start"] = start;
        a["stop"] = stop;
        a["squeeze"] = static_cast<int64_t>(1);
        return ctx.b.add(OpKind::Slice, {r.env_step}, {}, dt, a);
    };
    r.reward = esl(s_dim, s_dim + 1, DType::F32);
    r.done = esl(s_dim + 1, s_dim + 2, DType::Bool);

    // Local trajectory and gradients live beside the actor: the buffer,
    // loss and GradCompute form a worker-side fragment co-located with its
    // actor by the distribution policy.
    BufferCols bc =
        make_buffer(ctx, {r.state_in, r.action, r.reward, r.new_state, r.done, r.logp}, n_envs, "actor");
    std::string ac = "actor";
    NodeId states = col_slice(ctx, bc.sample, bc.offsets[0], s_dim, false, ac);
    NodeId actions = col_slice(ctx, bc.sample, bc.offsets[1], 1, true, ac);
    NodeId rewards = col_slice(ctx, bc.sample, bc.offsets[2], 1, true, ac);
    NodeId nexts = col_slice(ctx, bc.sample, bc.offsets[3], s_dim, false, ac);
    NodeId dones = col_slice(ctx, bc.sample, bc.offsets[4], 1, true, ac);
    int64_t total_rows = cfg.loop.steps_per_episode * n_envs;
    NodeId last_next = ctx.b.add(OpKind::Slice, {nexts}, {}, DType::F32,
                                 {{"component", ac}, {"axis", static_cast<int64_t>(0)},
                                  {"start", total_rows - n_envs}, {"stop", total_rows},
                                  {"last_step_of", cfg.loop.steps_per_episode}});
    NodeId values = squeeze_col(ctx, apply_mlp(ctx, states, ctx.critic_params, ac), ac);
    NodeId last_value = squeeze_col(ctx, apply_mlp(ctx, last_next, ctx.critic_params, ac), ac);
    NodeId ret = ctx.b.add(OpKind::DiscountedReturn, {rewards, dones, last_value}, {}, DType::F32,
                           {{"component", ac}, {"gamma", cfg.hyper.gamma}, {"streams", n_envs}});
    NodeId logits_new = apply_mlp(ctx, states, ctx.policy_params, ac);
    NodeId loss = ctx.b.add(OpKind::A3cLoss, {logits_new, values, actions, ret}, {}, DType::F32,
                            {{"component", ac}, {"value_coef", cfg.hyper.value_coef},
                             {"entropy_coef", cfg.hyper.entropy_coef}});
    std::vector<NodeId> all_params = ctx.policy_params;
    all_params.insert(all_params.end(), ctx.critic_params.begin(), ctx.critic_params.end());
    int64_t total = 0;
    for (NodeId p : all_params) total += numel(ctx.b.peek().node(p).out_shape);
    std::string plist = join_ids(all_params);
    NodeId grads = ctx.b.add(OpKind::GradCompute, {loss}, {total}, DType::F32,
                             {{"component", ac}, {"params", plist}});
    NodeId optim = ctx.b.add(OpKind::OptimStep, {grads}, {}, DType::F32,
                             {{"component", std::string("learner")}, {"params", plist},
                              {"lr", cfg.hyper.lr}, {"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8},
                              {"async", static_cast<int64_t>(1)}});
    ctx.b.mark_output(optim);
    ctx.b.mark_output(loss);

    ctx.b.set_attr(r.state_in, "reset_from", static_cast<int64_t>(r.env_reset));
    ctx.b.set_attr(r.state_in, "step_from", static_cast<int64_t>(r.new_state));

    ctx.b.annotate({r.env_reset}, CommOp::AllGather, {r.env_reset}, "Reset");
    ctx.b.annotate({r.action}, CommOp::AllGather, {r.action}, "Action");
    ctx.b.annotate({r.reward, r.new_state, r.done}, CommOp::AllGather,
                   {r.reward, r.new_state, r.done, r.state_in, r.logp}, "Step");
    ctx.b.annotate({grads}, CommOp::SendRecv, {grads}, "Grads");
    ctx.b.annotate({optim}, CommOp::Broadcast, all_params, "Learner");
    return ctx.b.finish(cfg.loop);
}

DataflowGraph build_mappo(ProgramCtx& ctx) {
    const AlgoConfig& cfg = ctx.cfg;
    int64_t s_dim = ctx.espec.obs_dim, a_dim = ctx.espec.n_actions;
    int64_t n = cfg.agents, n_envs = cfg.envs;
    int64_t state_w = n * s_dim;           // joint observation width
    int64_t joint = state_w + n;            // critic input: joint obs + agent one-hot
    int64_t rows = n * n_envs;              // policy rows per step, agent-major
    std::vector<int64_t> pdims{s_dim};
    pdims.insert(pdims.end(), cfg.hidden.begin(), cfg.hidden.end());
    pdims.push_back(a_dim);
    std::vector<int64_t> cdims{joint};
    cdims.insert(cdims.end(), cfg.hidden.begin(), cfg.hidden.end());
    cdims.push_back(1);
    ctx.policy_params = make_mlp_params(ctx, "policy", pdims);
    ctx.critic_params = make_mlp_params(ctx, "critic", cdims);

    NodeId rows_state = -1;
    // EnvStep row: [joint obs | per-agent rewards | done]
    Rollout r = build_rollout(ctx, n_envs, state_w, &rows_state, state_w + n + 1);
    Attrs env{{"component", std::string("env")}, {"rows", std::string("env")}};
    auto esl = [&](int64_t start, int64_t stop, bool squeeze, DType dt) {
        Attrs a = env;
        a["axis"] = static_cast<int64_t>(1);
        a["start"] = start;
        a["stop"] = stop;
        if (squeeze) a["squeeze"] = static_cast<int64_t>(1);
        return ctx.b.add(OpKind::Slice, {r.env_step}, {}, dt, a);
    };
    NodeId rewards_ea = esl(state_w, state_w + n, false, DType::F32);  // [E, N]
    r.reward = rewards_ea;
    r.done = esl(state_w + n, state_w + n + 1, true, DType::Bool);

    // Trainer glue: assemble agent-major rows for the buffer.
    std::string tc = "trainer";
    std::vector<NodeId> reward_parts, done_parts, ci_parts, nci_parts;
    for (int64_t a = 0; a < n; ++a) {
        reward_parts.push_back(ctx.b.add(OpKind::Slice, {rewards_ea}, {}, DType::F32,
                                         {{"component", tc}, {"axis", static_cast<int64_t>(1)},
                                          {"start", a}, {"stop", a + 1},
                                          {"squeeze", static_cast<int64_t>(1)}}));
        done_parts.push_back(r.done);
        std::vector<double> oh(static_cast<size_t>(n_envs * n), 0.0);
        for (int64_t e = 0; e < n_envs; ++e) oh[static_cast<size_t>(e * n + a)] = 1.0;
        std::string vals;
        for (size_t i = 0; i < oh.size(); ++i) {
            if (i) vals += ",";
            vals += oh[i] == 1.0 ? "1" : "0";
        }
        NodeId onehot = ctx.b.add(OpKind::Const, {}, {n_envs, n}, DType::F32,
                                  {{"component", tc}, {"values", vals}});
        ci_parts.push_back(ctx.b.add(OpKind::Concat, {r.state_in, onehot}, {}, DType::F32,
                                     {{"component", tc}, {"axis", static_cast<int64_t>(1)}}));
        nci_parts.push_back(ctx.b.add(OpKind::Concat, {r.new_state, onehot}, {}, DType::F32,
                                      {{"component", tc}, {"axis", static_cast<int64_t>(1)}}));
    }
    Attrs rowcat{{"component", tc}, {"axis", static_cast<int64_t>(0)}};
    NodeId reward_rows = ctx.b.add(OpKind::Concat, reward_parts, {}, DType::F32, rowcat);
    NodeId done_rows = n > 1 ? ctx.b.add(OpKind::Concat, done_parts, {}, DType::Bool, rowcat) : r.done;
    NodeId ci_rows = ctx.b.add(OpKind::Concat, ci_parts, {}, DType::F32, rowcat);
    NodeId nci_rows = ctx.b.add(OpKind::Concat, nci_parts, {}, DType::F32, rowcat);

    BufferCols bc = make_buffer(
        ctx, {rows_state, r.action, reward_rows, ci_rows, nci_rows, done_rows, r.logp}, rows, tc);

    std::string lc = "learner";
    NodeId states = col_slice(ctx, bc.sample, bc.offsets[0], s_dim, false, lc);
    NodeId actions = col_slice(ctx, bc.sample, bc.offsets[1], 1, true, lc);
    NodeId rewards = col_slice(ctx, bc.sample, bc.offsets[2], 1, true, lc);
    NodeId ci = col_slice(ctx, bc.sample, bc.offsets[3], joint, false, lc);
    NodeId nci = col_slice(ctx, bc.sample, bc.offsets[4], joint, false, lc);
    NodeId dones = col_slice(ctx, bc.sample, bc.offsets[5], 1, true, lc);
    NodeId logps = col_slice(ctx, bc.sample, bc.offsets[6], 1, true, lc);
    int64_t total_rows = cfg.loop.steps_per_episode * rows;
    NodeId last_nci = ctx.b.add(OpKind::Slice, {nci}, {}, DType::F32,
                                {{"component", lc}, {"axis", static_cast<int64_t>(0)},
                                 {"start", total_rows - rows}, {"stop", total_rows},
                                 {"last_step_of", cfg.loop.steps_per_episode}});
    NodeId values = squeeze_col(ctx, apply_mlp(ctx, ci, ctx.critic_params, lc), lc);
    NodeId last_value = squeeze_col(ctx, apply_mlp(ctx, last_nci, ctx.critic_params, lc), lc);
    NodeId adv = ctx.b.add(OpKind::GaeAdv, {rewards, values, dones, last_value}, {}, DType::F32,
                           {{"component", lc}, {"gamma", cfg.hyper.gamma}, {"lam", cfg.hyper.lam},
                            {"streams", rows},
                            {"normalize", static_cast<int64_t>(cfg.hyper.normalize_adv ? 1 : 0)}});
    NodeId ret = ctx.b.add(OpKind::DiscountedReturn, {rewards, dones, last_value}, {}, DType::F32,
                           {{"component", lc}, {"gamma", cfg.hyper.gamma}, {"streams", rows}});
    NodeId logits_new = apply_mlp(ctx, states, ctx.policy_params, lc);
    NodeId loss = ctx.b.add(OpKind::PpoLoss, {logits_new, values, actions, logps, adv, ret}, {},
                            DType::F32,
                            {{"component", lc}, {"clip_eps", cfg.hyper.clip_eps},
                             {"value_coef", cfg.hyper.value_coef},
                             {"entropy_coef", cfg.hyper.entropy_coef}});
    LearnTail tail = learn_tail(ctx, loss);
    ctx.b.mark_output(tail.optim);
    ctx.b.mark_output(tail.loss);

    ctx.b.set_attr(r.state_in, "reset_from", static_cast<int64_t>(r.env_reset));
    ctx.b.set_attr(r.state_in, "step_from", static_cast<int64_t>(r.new_state));

    ctx.b.annotate({r.env_reset}, CommOp::AllGather, {r.env_reset}, "Reset");
    ctx.b.annotate({r.action}, CommOp::AllGather, {r.action}, "Action");
    ctx.b.annotate({rewards_ea, r.new_state, r.done}, CommOp::AllGather,
                   {rewards_ea, r.new_state, r.done, rows_state, r.state_in, r.logp}, "Step");
    ctx.b.annotate({bc.sample}, CommOp::AllGather, {bc.sample}, "Buffer");
    ctx.b.annotate({tail.optim}, CommOp::AllGather, ctx.policy_params, "Learner");
    return ctx.b.finish(cfg.loop);
}

}  // namespace

DataflowGraph standard_program(const std::string& name, const AlgoConfig& cfg_in) {
    AlgoConfig cfg = cfg_in;
    cfg.algorithm = name;
    cfg.validate();
    ProgramCtx ctx{GraphBuilder{}, cfg, envs::EnvSpec{}, {}, {}};
    std::map<std::string, double> ep = cfg.env_params;
    if (cfg.algorithm == "mappo") ep["n_agents"] = static_cast<double>(cfg.agents);
    ctx.espec = envs::make_spec(cfg.env_name, ep);
    if (cfg.algorithm == "mappo" && cfg.env_name == "spread_lite" &&
        ctx.espec.n_agents != cfg.agents)
        fail(Errc::Config, "agent count does not match spread_lite n_agents");
    DataflowGraph g = name == "ppo"   ? build_ppo(ctx)
                      : name == "a3c" ? build_a3c(ctx)
                                      : build_mappo(ctx);
    auto violations = validate(g);
    if (!violations.empty())
        fail(Errc::Runtime, "standard program failed validation: " + violations.front().message);
    return g;
}

std::vector<NodeId> param_list(const DataflowGraph& g, const OpNode& node) {
    std::vector<NodeId> out;
    std::stringstream ss(node.attr_str("params"));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        NodeId id = static_cast<NodeId>(std::stol(tok));
        if (id < 0 || static_cast<size_t>(id) >= g.size())
            fail(Errc::UnknownNode, "param list references node " + tok);
        out.push_back(id);
    }
    return out;
}

}  // namespace fraglow::dfg
