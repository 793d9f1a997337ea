#include "envs.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include "../core/rng.hpp"

namespace fraglow::envs {

namespace {

constexpr uint64_t kResetTag = 0x7265736574;  // stream separator for reset draws
constexpr uint64_t kStepTag = 0x73746570;

// Busy compute knob for benchmark workloads; result feeds nothing.
void burn(uint64_t iters, uint64_t k) {
    volatile uint64_t sink = k;
    for (uint64_t i = 0; i < iters; ++i) sink = rng::mix(sink + i);
    (void)sink;
}

struct Gridline {
    static constexpr double kDefaultLength = 8;

    static void reset(const EnvSpec& spec, EnvState& st, std::vector<double>* obs) {
        int64_t len = static_cast<int64_t>(spec.param("length", kDefaultLength));
        int64_t start = static_cast<int64_t>(rng::uniform(st.seed, kResetTag, st.rng_counter) * (len / 2));
        st.state = {static_cast<double>(start), static_cast<double>(len)};
        if (obs) *obs = observe(st);
    }

    static std::vector<double> observe(const EnvState& st) {
        double len = st.state[1];
        return {st.state[0] / (len - 1.0)};
    }

    static StepResult step(const EnvSpec& spec, EnvState& st, int64_t action) {
        StepResult r;
        int64_t len = static_cast<int64_t>(st.state[1]);
        int64_t x = static_cast<int64_t>(st.state[0]);
        x += action == 1 ? 1 : -1;
        if (x < 0) x = 0;
        if (x > len - 1) x = len - 1;
        st.state[0] = static_cast<double>(x);
        if (x == len - 1) {
            r.reward = 1.0;
            r.done = true;
        }
        if (spec.max_steps > 0 && st.step_count + 1 >= spec.max_steps) r.done = true;
        r.obs = observe(st);
        return r;
    }
};

struct CartpoleLite {
    static void reset(const EnvSpec& /*spec*/, EnvState& st, std::vector<double>* obs) {
        st.state.resize(4);
        for (int i = 0; i < 4; ++i)
            st.state[i] = rng::uniform_range(rng::key(st.seed, kResetTag, st.rng_counter, i), -0.05, 0.05);
        if (obs) *obs = st.state;
    }

    static StepResult step(const EnvSpec& spec, EnvState& st, int64_t action) {
        // Classic cart-pole Euler dynamics, fixed constants.
        const double g = 9.8, mc = 1.0, mp = 0.1, l = 0.5, f_mag = 10.0, dt = 0.02;
        double x = st.state[0], xd = st.state[1], th = st.state[2], thd = st.state[3];
        double f = action == 1 ? f_mag : -f_mag;
        double cth = std::cos(th), sth = std::sin(th);
        double temp = (f + mp * l * thd * thd * sth) / (mc + mp);
        double thacc = (g * sth - cth * temp) / (l * (4.0 / 3.0 - mp * cth * cth / (mc + mp)));
        double xacc = temp - mp * l * thacc * cth / (mc + mp);
        st.state[0] = x + dt * xd;
        st.state[1] = xd + dt * xacc;
        st.state[2] = th + dt * thd;
        st.state[3] = thd + dt * thacc;
        StepResult r;
        r.reward = 1.0;
        bool fell = std::abs(st.state[2]) > 12.0 * M_PI / 180.0 || std::abs(st.state[0]) > 2.4;
        r.done = fell || (spec.max_steps > 0 && st.step_count + 1 >= spec.max_steps);
        r.obs = st.state;
        return r;
    }
};

struct SpreadLite {
    // State layout: [agents xy ... | landmarks xy ...], n_agents of each.
    static void reset(const EnvSpec& spec, EnvState& st, std::vector<double>* obs) {
        int64_t n = spec.n_agents;
        st.state.resize(4 * n);
        for (int64_t i = 0; i < 4 * n; ++i)
            st.state[i] = rng::uniform_range(rng::key(st.seed, kResetTag, st.rng_counter, i), -1.0, 1.0);
        if (obs) *obs = observe(spec, st);
    }

    static std::vector<double> observe(const EnvSpec& spec, const EnvState& st) {
        int64_t n = spec.n_agents;
        std::vector<double> obs;
        obs.reserve(n * spec.obs_dim);
        for (int64_t a = 0; a < n; ++a) {
            obs.push_back(st.state[2 * a]);
            obs.push_back(st.state[2 * a + 1]);
            for (int64_t l = 0; l < n; ++l) {
                obs.push_back(st.state[2 * n + 2 * l] - st.state[2 * a]);
                obs.push_back(st.state[2 * n + 2 * l + 1] - st.state[2 * a + 1]);
            }
        }
        return obs;
    }

    static StepResult step(const EnvSpec& spec, EnvState& st, const std::vector<int64_t>& actions) {
        int64_t n = spec.n_agents;
        const double move = 0.1, collide_radius = 0.1, collide_penalty = 0.5;
        for (int64_t a = 0; a < n; ++a) {
            double dx = 0, dy = 0;
            switch (actions[a]) {
                case 0: break;
                case 1: dx = move; break;
                case 2: dx = -move; break;
                case 3: dy = move; break;
                case 4: dy = -move; break;
                default: fail(Errc::OutOfRangeAction, "spread_lite action " + std::to_string(actions[a]));
            }
            st.state[2 * a] += dx;
            st.state[2 * a + 1] += dy;
        }
        StepResult r;
        r.rewards.resize(n, 0.0);
        for (int64_t a = 0; a < n; ++a) {
            double best = 1e18;
            for (int64_t l = 0; l < n; ++l) {
                double dx = st.state[2 * n + 2 * l] - st.state[2 * a];
                double dy = st.state[2 * n + 2 * l + 1] - st.state[2 * a + 1];
                best = std::min(best, std::sqrt(dx * dx + dy * dy));
            }
            r.rewards[a] = -best;
            for (int64_t b = 0; b < n; ++b) {
                if (b == a) continue;
                double dx = st.state[2 * b] - st.state[2 * a];
                double dy = st.state[2 * b + 1] - st.state[2 * a + 1];
                if (std::sqrt(dx * dx + dy * dy) < collide_radius) r.rewards[a] -= collide_penalty;
            }
            r.reward += r.rewards[a];
        }
        r.done = spec.max_steps > 0 && st.step_count + 1 >= spec.max_steps;
        r.obs = observe(spec, st);
        return r;
    }
};

}  // namespace

bool env_known(const std::string& name) {
    return name == "gridline" || name == "cartpole_lite" || name == "spread_lite";
}

EnvSpec make_spec(const std::string& name, const std::map<std::string, double>& params) {
    EnvSpec s;
    s.name = name;
    s.params = params;
    if (name == "gridline") {
        s.obs_dim = 1;
        s.n_actions = 2;
        s.accel_capable = true;  // pure tensor arithmetic step
    } else if (name == "cartpole_lite") {
        s.obs_dim = 4;
        s.n_actions = 2;
    } else if (name == "spread_lite") {
        s.n_agents = static_cast<int64_t>(s.param("n_agents", 2));
        if (s.n_agents < 1) fail(Errc::Config, "spread_lite needs n_agents >= 1");
        s.obs_dim = 2 + 2 * s.n_agents;
        s.n_actions = 5;
    } else {
        fail(Errc::UnknownEnv, "unknown environment '" + name + "'");
    }
    auto it = params.find("max_steps");
    if (it != params.end()) s.max_steps = static_cast<int64_t>(it->second);
    return s;
}

EnvState env_reset(const EnvSpec& spec, uint64_t seed, std::vector<double>* obs) {
    EnvState st;
    st.seed = seed;
    if (spec.name == "gridline")
        Gridline::reset(spec, st, obs);
    else if (spec.name == "cartpole_lite")
        CartpoleLite::reset(spec, st, obs);
    else if (spec.name == "spread_lite")
        SpreadLite::reset(spec, st, obs);
    else
        fail(Errc::UnknownEnv, "unknown environment '" + spec.name + "'");
    st.rng_counter += 1;
    return st;
}

StepResult env_step(const EnvSpec& spec, EnvState& state, const std::vector<int64_t>& actions) {
    if (state.done) fail(Errc::SteppingDoneEnv, "env_step on finished environment");
    if (actions.size() != static_cast<size_t>(spec.name == "spread_lite" ? spec.n_agents : 1))
        fail(Errc::Shape, "env_step: action count mismatch");
    for (int64_t a : actions)
        if (a < 0 || a >= spec.n_actions)
            fail(Errc::OutOfRangeAction, "action " + std::to_string(a) + " not in [0," +
                                             std::to_string(spec.n_actions) + ")");
    // Cost knobs for benchmark workloads: busy compute or wall-clock latency
    // (a stand-in for expensive simulation); neither affects results.
    uint64_t w = static_cast<uint64_t>(spec.param("work_per_step", 0));
    if (w) burn(w, rng::key(state.seed, kStepTag, state.rng_counter));
    int64_t sleep_us = static_cast<int64_t>(spec.param("sleep_us", 0));
    if (sleep_us > 0) std::this_thread::sleep_for(std::chrono::microseconds(sleep_us));
    StepResult r;
    if (spec.name == "gridline")
        r = Gridline::step(spec, state, actions[0]);
    else if (spec.name == "cartpole_lite")
        r = CartpoleLite::step(spec, state, actions[0]);
    else
        r = SpreadLite::step(spec, state, actions);
    if (r.rewards.empty()) r.rewards = {r.reward};
    state.step_count += 1;
    state.rng_counter += 1;
    state.done = r.done;
    return r;
}

std::vector<StepResult> env_batch_step(const EnvSpec& spec, std::vector<EnvState>& states,
                                       const std::vector<std::vector<int64_t>>& actions,
                                       bool parallel) {
    if (states.size() != actions.size()) fail(Errc::Shape, "env_batch_step: list lengths differ");
    std::vector<StepResult> out(states.size());
    std::string first_error;
    auto run_range = [&](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i) {
            try {
                out[i] = env_step(spec, states[i], actions[i]);
            } catch (const Error& e) {
                if (first_error.empty()) first_error = "env " + std::to_string(i) + ": " + e.what();
            }
        }
    };
    if (!parallel || states.size() < 2) {
        run_range(0, states.size());
    } else {
        size_t mid = states.size() / 2;
        std::thread t(run_range, 0, mid);
        run_range(mid, states.size());
        t.join();
    }
    if (!first_error.empty()) fail(Errc::Runtime, "env_batch_step: " + first_error);
    return out;
}

double optimal_episode_reward(const EnvSpec& spec) {
    if (spec.name == "gridline") return 1.0;
    if (spec.name == "cartpole_lite") return static_cast<double>(spec.max_steps);
    return 0.0;  // spread_lite: zero distance, zero collisions
}

}  // namespace fraglow::envs
