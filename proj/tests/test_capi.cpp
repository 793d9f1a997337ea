#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <string>

#include "doctest.h"
#include "fraglow.h"
#include "json.hpp"

namespace {

const char* kAlgo = R"({
  "algorithm": "ppo",
  "agent": {"num": 1},
  "actor": {"num": 2},
  "env": {"type": "gridline", "num": 4, "params": {"length": 8}},
  "learner": {"num": 1, "params": {"gamma": 0.99, "lr": 0.005}},
  "policy_net": {"hidden": [8, 8], "activation": "tanh"},
  "loop": {"episodes": 2, "steps_per_episode": 8}
})";

const char* kDeploy = R"({
  "workers": ["local"],
  "slots_per_worker": {"cpu": 8, "accel": 8},
  "distribution_policy": "dp-a"
})";

struct Owned {
    char* s = nullptr;
    ~Owned() { flw_string_free(s); }
};

}  // namespace

TEST_CASE("program creation, dumps and plan validation through the c api") {
    flw_program* p = nullptr;
    REQUIRE(flw_program_create(kAlgo, kDeploy, &p) == FLW_OK);
    for (int what : {FLW_DUMP_DFG, FLW_DUMP_FDG, FLW_DUMP_PLAN, FLW_DUMP_DOT}) {
        Owned text;
        REQUIRE(flw_program_dump(p, what, &text.s) == FLW_OK);
        CHECK(std::strlen(text.s) > 10);
    }
    Owned report;
    int violations = -1;
    REQUIRE(flw_validate_plan(p, &report.s, &violations) == FLW_OK);
    CHECK(violations == 0);
    flw_program_destroy(p);
}

TEST_CASE("config errors return FLW_ERR_CONFIG with a message") {
    flw_program* p = nullptr;
    CHECK(flw_program_create("{\"env\": {\"num\": 0}}", kDeploy, &p) == FLW_ERR_CONFIG);
    CHECK(std::strlen(flw_last_error()) > 0);
    CHECK(flw_program_create("not json", kDeploy, &p) == FLW_ERR_CONFIG);
    // dp-d needs an accelerator-capable environment
    std::string algo = kAlgo;
    auto pos = algo.find("gridline");
    algo.replace(pos, 8, "cartpole_lite");
    CHECK(flw_program_create(algo.c_str(), R"({"workers":["a","b"],"distribution_policy":"dp-d"})",
                             &p) == FLW_ERR_CONFIG);
}

TEST_CASE("local runs produce deterministic csv and a summary") {
    flw_program* p = nullptr;
    REQUIRE(flw_program_create(kAlgo, kDeploy, &p) == FLW_OK);
    flw_run_options opts{};
    opts.seed = 7;
    opts.reward_threshold = -1.0;
    Owned csv1, csv2, sum1, sum2;
    REQUIRE(flw_run_local(p, &opts, &csv1.s, &sum1.s) == FLW_OK);
    REQUIRE(flw_run_local(p, &opts, &csv2.s, &sum2.s) == FLW_OK);

    // CSV schema and determinism of the result columns (wall time varies).
    auto strip_wall = [](const std::string& csv) {
        std::string out;
        size_t start = 0;
        while (start < csv.size()) {
            size_t end = csv.find('\n', start);
            std::string line = csv.substr(start, end - start);
            size_t c1 = line.find(','), c2 = line.find(',', c1 + 1);
            out += line.substr(0, c1) + line.substr(c2) + "\n";
            start = end + 1;
        }
        return out;
    };
    std::string s1(csv1.s), s2(csv2.s);
    CHECK(s1.rfind("episode,wall_ms,reward,bytes_total\n", 0) == 0);
    CHECK(strip_wall(s1) == strip_wall(s2));

    auto j1 = nlohmann::json::parse(std::string(sum1.s));
    auto j2 = nlohmann::json::parse(std::string(sum2.s));
    CHECK(j1["param_checksum"] == j2["param_checksum"]);
    CHECK(j1["bytes_total"] == j2["bytes_total"]);
    CHECK(j1["param_count"].get<int>() > 0);
    flw_program_destroy(p);
}

TEST_CASE("the unpartitioned interpreter and the plan agree through the c api") {
    flw_program* p = nullptr;
    REQUIRE(flw_program_create(kAlgo, kDeploy, &p) == FLW_OK);
    flw_run_options opts{};
    opts.seed = 3;
    opts.reward_threshold = -1.0;
    Owned csv_a, sum_a, csv_b, sum_b;
    REQUIRE(flw_run_local(p, &opts, &csv_a.s, &sum_a.s) == FLW_OK);
    opts.unpartitioned = 1;
    REQUIRE(flw_run_local(p, &opts, &csv_b.s, &sum_b.s) == FLW_OK);
    auto ja = nlohmann::json::parse(std::string(sum_a.s));
    auto jb = nlohmann::json::parse(std::string(sum_b.s));
    CHECK(ja["param_checksum"].get<double>() == jb["param_checksum"].get<double>());
    flw_program_destroy(p);
}

TEST_CASE("self check through the c api, including the negative control") {
    Owned report;
    int ok = 0;
    CHECK(flw_self_check(0, &report.s, &ok) == FLW_OK);
    CHECK(ok == 1);
    CHECK(std::string(report.s).find("grad_check: ok") != std::string::npos);
    Owned bad;
    int bad_ok = 1;
    CHECK(flw_self_check(1, &bad.s, &bad_ok) == FLW_ERR_CHECK);
    CHECK(bad_ok == 0);
    CHECK(std::string(bad.s).find("grad_check: FAILED") != std::string::npos);
}
