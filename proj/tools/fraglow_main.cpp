// fraglow command line: plan, run, worker, check, bench. Thin shell over
// the C API in fraglow.h.
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <csignal>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fraglow.h"
#include "json.hpp"

namespace {

std::string read_file_or_die(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        std::cerr << "error: cannot read '" << path << "'\n";
        std::exit(FLW_ERR_CONFIG);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct OwnedString {
    char* s = nullptr;
    ~OwnedString() { flw_string_free(s); }
    std::string str() const { return s ? s : ""; }
};

[[noreturn]] void die(int code) {
    std::cerr << "error: " << flw_last_error() << "\n";
    std::exit(code);
}

int64_t parse_latency(const std::string& text) {
    if (text.empty()) return 0;
    size_t pos = 0;
    double v = std::stod(text, &pos);
    std::string unit = text.substr(pos);
    if (unit == "ms") return static_cast<int64_t>(v * 1000.0);
    if (unit == "s") return static_cast<int64_t>(v * 1e6);
    return static_cast<int64_t>(v);  // default: microseconds
}

struct ProgramArgs {
    std::string algo_path, deploy_path;
    std::vector<std::string> workers_override;

    flw_program* create() const {
        std::string algo = read_file_or_die(algo_path);
        std::string deploy = deploy_path.empty() ? "" : read_file_or_die(deploy_path);
        if (!workers_override.empty()) {
            nlohmann::json j = deploy.empty() ? nlohmann::json::object() : nlohmann::json::parse(deploy);
            j["workers"] = workers_override;
            deploy = j.dump();
        }
        flw_program* p = nullptr;
        if (int rc = flw_program_create(algo.c_str(), deploy.c_str(), &p)) die(rc);
        return p;
    }
};

// Worker subprocesses for bench sweeps: fork, serve, report the bound port
// through a pipe.
struct WorkerPool {
    std::vector<pid_t> pids;
    std::vector<std::string> addresses;

    void spawn(int n) {
        for (int i = 0; i < n; ++i) {
            int fds[2];
            if (pipe(fds) != 0) {
                std::cerr << "error: pipe failed\n";
                std::exit(FLW_ERR_RUNTIME);
            }
            pid_t pid = fork();
            if (pid == 0) {
                close(fds[0]);
                flw_worker_serve_notify("127.0.0.1:0", fds[1]);
                _exit(0);
            }
            close(fds[1]);
            std::string buf;
            char c;
            while (read(fds[0], &c, 1) == 1 && c != '\n') buf.push_back(c);
            close(fds[0]);
            if (buf.empty()) {
                std::cerr << "error: worker failed to start\n";
                std::exit(FLW_ERR_RUNTIME);
            }
            pids.push_back(pid);
            addresses.push_back("127.0.0.1:" + buf);
        }
    }
    void stop() {
        for (pid_t pid : pids) kill(pid, SIGKILL);
        for (pid_t pid : pids) waitpid(pid, nullptr, 0);
        pids.clear();
        addresses.clear();
    }
    ~WorkerPool() { stop(); }
};

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.empty() ? 0.0 : v[v.size() / 2];
}

double median_episode_ms(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);  // header
    std::vector<double> walls;
    while (std::getline(in, line)) {
        auto p1 = line.find(','), p2 = line.find(',', p1 + 1);
        walls.push_back(std::stod(line.substr(p1 + 1, p2 - p1 - 1)));
    }
    return median(walls);
}

int cmd_plan(const ProgramArgs& args, bool dump_dfg, bool dump_fdg, bool dot) {
    flw_program* p = args.create();
    OwnedString text;
    if (dump_dfg) {
        if (int rc = flw_program_dump(p, FLW_DUMP_DFG, &text.s)) die(rc);
        std::cout << text.str() << "\n";
    } else if (dot) {
        if (int rc = flw_program_dump(p, FLW_DUMP_DOT, &text.s)) die(rc);
        std::cout << text.str();
    } else {
        OwnedString fdg;
        if (int rc = flw_program_dump(p, FLW_DUMP_FDG, &fdg.s)) die(rc);
        if (int rc = flw_program_dump(p, FLW_DUMP_PLAN, &text.s)) die(rc);
        if (dump_fdg) std::cout << fdg.str() << "\n";
        std::cout << text.str() << "\n";
    }
    OwnedString report;
    int violations = 0;
    if (int rc = flw_validate_plan(p, &report.s, &violations)) die(rc);
    if (violations > 0) {
        std::cerr << "plan violations:\n" << report.str() << "\n";
        flw_program_destroy(p);
        return FLW_ERR_CONFIG;
    }
    flw_program_destroy(p);
    return 0;
}

int cmd_run(const ProgramArgs& args, const flw_run_options& opts, bool local,
            const std::string& csv_path) {
    flw_program* p = args.create();
    OwnedString csv, summary;
    int rc = local ? flw_run_local(p, &opts, &csv.s, &summary.s)
                   : flw_run_distributed(p, &opts, &csv.s, &summary.s);
    if (rc) die(rc == FLW_ERR_CONFIG ? FLW_ERR_CONFIG : FLW_ERR_RUNTIME);
    if (csv_path.empty() || csv_path == "-") {
        std::cout << csv.str();
    } else {
        std::ofstream out(csv_path);
        out << csv.str();
    }
    std::cout << summary.str() << "\n";
    flw_program_destroy(p);
    return 0;
}

int cmd_bench(const ProgramArgs& args, const std::string& mode, std::vector<int64_t> values,
              int runs, int episodes, uint64_t seed) {
    // Flushed before forking workers so children do not inherit buffered text.
    std::cout << "mode,value,median_episode_ms" << std::endl;
    for (int64_t value : values) {
        std::vector<double> medians;
        for (int r = 0; r < runs; ++r) {
            std::string algo = read_file_or_die(args.algo_path);
            std::string deploy = args.deploy_path.empty() ? "{}" : read_file_or_die(args.deploy_path);
            nlohmann::json ja = nlohmann::json::parse(algo);
            nlohmann::json jd = nlohmann::json::parse(deploy);
            flw_run_options opts{};
            opts.seed = seed + static_cast<uint64_t>(r);
            opts.episodes = episodes;
            int n_workers = static_cast<int>(jd.value("workers", std::vector<std::string>{"w"}).size());
            if (mode == "actors") {
                ja["actor"]["num"] = value;
                if (ja.value("algorithm", "ppo") == "a3c") ja["env"]["num"] = value;
            } else {
                opts.latency_us = value;
            }
            WorkerPool pool;
            pool.spawn(n_workers);
            jd["workers"] = pool.addresses;
            flw_program* p = nullptr;
            if (int rc = flw_program_create(ja.dump().c_str(), jd.dump().c_str(), &p)) die(rc);
            OwnedString csv, summary;
            if (int rc = flw_run_distributed(p, &opts, &csv.s, &summary.s)) die(rc);
            medians.push_back(median_episode_ms(csv.str()));
            flw_program_destroy(p);
            pool.stop();
        }
        std::cout << mode << "," << value << "," << median(medians) << std::endl;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fraglow: RL training as fragmented dataflow graphs"};
    app.require_subcommand(1);

    ProgramArgs args;
    bool dump_dfg = false, dump_fdg = false, dot = false;

    auto* plan_cmd = app.add_subcommand("plan", "build the FDG and placement plan");
    plan_cmd->add_option("--algo", args.algo_path, "algorithm config JSON")->required();
    plan_cmd->add_option("--deploy", args.deploy_path, "deployment config JSON");
    plan_cmd->add_flag("--dump-dfg", dump_dfg, "print the dataflow graph JSON");
    plan_cmd->add_flag("--dump-fdg", dump_fdg, "also print the FDG JSON");
    plan_cmd->add_flag("--dot", dot, "print the FDG as DOT");

    uint64_t seed = 0;
    int64_t episodes = 0;
    std::string latency, csv_path;
    double reward_threshold = -1.0;
    bool local = false, unpartitioned = false;
    auto* run_cmd = app.add_subcommand("run", "run training locally or on workers");
    run_cmd->add_option("--algo", args.algo_path, "algorithm config JSON")->required();
    run_cmd->add_option("--deploy", args.deploy_path, "deployment config JSON");
    run_cmd->add_option("--seed", seed, "run seed");
    run_cmd->add_option("--episodes", episodes, "episode count override");
    run_cmd->add_flag("--local", local, "run all fragments in this process");
    run_cmd->add_option("--workers", args.workers_override, "worker addresses (host:port)")
        ->delimiter(',');
    run_cmd->add_option("--latency", latency, "injected tcp latency (e.g. 6ms, 200us)");
    run_cmd->add_option("--reward-threshold", reward_threshold, "report time to this reward");
    run_cmd->add_option("--csv", csv_path, "metrics CSV path ('-' for stdout)");
    run_cmd->add_flag("--unpartitioned", unpartitioned, "single-process reference interpreter");

    std::string listen;
    auto* worker_cmd = app.add_subcommand("worker", "serve fragments for a coordinator");
    worker_cmd->add_option("--listen", listen, "listen address host:port")->required();

    bool inject_bug = false;
    auto* check_cmd = app.add_subcommand("check", "run the built-in self checks");
    check_cmd->add_flag("--inject-grad-bug", inject_bug, "negative control: corrupt a gradient")
        ->group("");

    std::string bench_mode = "actors";
    std::vector<int64_t> bench_values;
    int bench_runs = 5, bench_episodes = 3;
    auto* bench_cmd = app.add_subcommand("bench", "sweep actors or latency, emit medians CSV");
    bench_cmd->add_option("--algo", args.algo_path, "algorithm config JSON")->required();
    bench_cmd->add_option("--deploy", args.deploy_path, "deployment config JSON")->required();
    bench_cmd->add_option("--mode", bench_mode, "actors | latency")
        ->check(CLI::IsMember({"actors", "latency"}));
    bench_cmd->add_option("--values", bench_values, "sweep values (actor counts or latency us)")
        ->delimiter(',')
        ->required();
    bench_cmd->add_option("--runs", bench_runs, "runs per value (median reported)");
    bench_cmd->add_option("--episodes", bench_episodes, "episodes per run");
    bench_cmd->add_option("--seed", seed, "base seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*plan_cmd) return cmd_plan(args, dump_dfg, dump_fdg, dot);
        if (*run_cmd) {
            flw_run_options opts{};
            opts.seed = seed;
            opts.episodes = episodes;
            opts.latency_us = parse_latency(latency);
            opts.reward_threshold = reward_threshold;
            opts.unpartitioned = unpartitioned ? 1 : 0;
            return cmd_run(args, opts, local || args.workers_override.empty(), csv_path);
        }
        if (*worker_cmd) {
            if (int rc = flw_worker_serve(listen.c_str())) die(rc);
            return 0;
        }
        if (*check_cmd) {
            OwnedString report;
            int ok = 0;
            int rc = flw_self_check(inject_bug ? 1 : 0, &report.s, &ok);
            std::cout << report.str();
            return ok ? 0 : (rc ? rc : FLW_ERR_CHECK);
        }
        if (*bench_cmd) return cmd_bench(args, bench_mode, bench_values, bench_runs, bench_episodes, seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return FLW_ERR_RUNTIME;
    }
    return 0;
}
