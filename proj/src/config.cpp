#include "config.hpp"

#include <fstream>
#include <sstream>

#include "../vendor/json.hpp"

namespace fraglow {

using nlohmann::json;

namespace {

json parse_or_fail(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        fail(Errc::Config, std::string("config parse error: ") + e.what());
    }
}

}  // namespace

dfg::AlgoConfig parse_algo_config(const std::string& json_text) {
    json j = parse_or_fail(json_text);
    dfg::AlgoConfig cfg;
    try {
        cfg.algorithm = j.value("algorithm", "ppo");
        if (j.contains("agent")) cfg.agents = j["agent"].value("num", 1);
        if (j.contains("actor")) cfg.actors = j["actor"].value("num", 1);
        if (j.contains("env")) {
            cfg.env_name = j["env"].value("type", "gridline");
            cfg.envs = j["env"].value("num", 1);
            if (j["env"].contains("params"))
                for (auto it = j["env"]["params"].begin(); it != j["env"]["params"].end(); ++it)
                    cfg.env_params[it.key()] = it->get<double>();
        }
        if (j.contains("learner") && j["learner"].contains("params")) {
            const json& p = j["learner"]["params"];
            cfg.hyper.gamma = p.value("gamma", cfg.hyper.gamma);
            cfg.hyper.lam = p.value("lam", cfg.hyper.lam);
            cfg.hyper.clip_eps = p.value("clip_eps", cfg.hyper.clip_eps);
            cfg.hyper.lr = p.value("lr", cfg.hyper.lr);
            cfg.hyper.train_iters = p.value("train_iters", cfg.hyper.train_iters);
            cfg.hyper.value_coef = p.value("value_coef", cfg.hyper.value_coef);
            cfg.hyper.entropy_coef = p.value("entropy_coef", cfg.hyper.entropy_coef);
            cfg.hyper.normalize_adv = p.value("normalize_adv", cfg.hyper.normalize_adv);
        }
        if (j.contains("policy_net")) {
            if (j["policy_net"].contains("hidden"))
                cfg.hidden = j["policy_net"]["hidden"].get<std::vector<int64_t>>();
            cfg.activation = j["policy_net"].value("activation", cfg.activation);
        }
        if (j.contains("loop")) {
            cfg.loop.episodes = j["loop"].value("episodes", cfg.loop.episodes);
            cfg.loop.steps_per_episode = j["loop"].value("steps_per_episode", cfg.loop.steps_per_episode);
        }
    } catch (const json::exception& e) {
        fail(Errc::Config, std::string("algorithm config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::string algo_to_json(const dfg::AlgoConfig& cfg) {
    nlohmann::ordered_json j;
    j["algorithm"] = cfg.algorithm;
    j["agent"] = {{"num", cfg.agents}};
    j["actor"] = {{"num", cfg.actors}};
    nlohmann::ordered_json ep = nlohmann::ordered_json::object();
    for (const auto& [k, v] : cfg.env_params) ep[k] = v;
    j["env"] = {{"type", cfg.env_name}, {"num", cfg.envs}, {"params", ep}};
    j["learner"] = {{"num", 1},
                    {"params",
                     {{"gamma", cfg.hyper.gamma},
                      {"lam", cfg.hyper.lam},
                      {"clip_eps", cfg.hyper.clip_eps},
                      {"lr", cfg.hyper.lr},
                      {"train_iters", cfg.hyper.train_iters},
                      {"value_coef", cfg.hyper.value_coef},
                      {"entropy_coef", cfg.hyper.entropy_coef},
                      {"normalize_adv", cfg.hyper.normalize_adv}}}};
    j["policy_net"] = {{"hidden", cfg.hidden}, {"activation", cfg.activation}};
    j["loop"] = {{"episodes", cfg.loop.episodes}, {"steps_per_episode", cfg.loop.steps_per_episode}};
    return j.dump(2);
}

plan::DeploymentConfig parse_deploy_config(const std::string& json_text) {
    json j = parse_or_fail(json_text);
    plan::DeploymentConfig cfg;
    try {
        cfg.workers = j.value("workers", std::vector<std::string>{"local"});
        if (j.contains("slots_per_worker")) {
            cfg.cpu_slots = j["slots_per_worker"].value("cpu", cfg.cpu_slots);
            cfg.accel_slots = j["slots_per_worker"].value("accel", cfg.accel_slots);
        }
        cfg.policy = plan::parse_policy(j.value("distribution_policy", "dp-a"));
    } catch (const json::exception& e) {
        fail(Errc::Config, std::string("deployment config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::string deploy_to_json(const plan::DeploymentConfig& cfg) {
    nlohmann::ordered_json j;
    j["workers"] = cfg.workers;
    j["slots_per_worker"] = {{"cpu", cfg.cpu_slots}, {"accel", cfg.accel_slots}};
    j["distribution_policy"] = plan::policy_name(cfg.policy);
    return j.dump(2);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::Config, "cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(Errc::Runtime, "cannot write '" + path + "'");
    out << content;
}

}  // namespace fraglow
