#include "bner/cli.hpp"
#include "bner/errors.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace bner;
namespace fs = std::filesystem;

namespace {

const std::string data_dir = BNER_DATA_DIR;

struct Outcome {
    int code = 0;
    std::string out;
    std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "bner_cli");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Outcome o;
    o.code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    o.out = out.str();
    o.err = err.str();
    return o;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("bner_cli_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<std::string> data_args() {
    return {"--data", data_dir + "/sample.csv", "--aux", data_dir + "/aux.csv", "--patterns", data_dir + "/patterns.csv",
            "--transform", "log", "--quiet"};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::istringstream in(slurp(p));
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> row;
        std::stringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ',')) row.push_back(f);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

TEST_CASE("command line parsing") {
    RunConfig c;
    std::ostringstream out;
    const char* argv[] = {"prog", "sim1", "--nd", "10,25", "--I", "7", "--seed", "42", "--threads", "3"};
    REQUIRE(parse_command_line(10, argv, c, out));
    CHECK(c.command == Command::sim1);
    CHECK(c.n_d == std::vector<int>{10, 25});
    CHECK(c.I == 7);
    CHECK(c.seed == 42);
    CHECK(c.threads == 3);
    CHECK(c.L == 200);

    RunConfig d;
    const char* help[] = {"prog", "--help"};
    CHECK_FALSE(parse_command_line(2, help, d, out));

    RunConfig e;
    const char* bad[] = {"prog", "explode"};
    CHECK_THROWS(parse_command_line(2, bad, e, out));
    const char* bad_transform[] = {"prog", "fit", "--transform", "sqrt"};
    CHECK_THROWS(parse_command_line(4, bad_transform, e, out));
    CHECK(command_from_name("mse") == Command::mse);
    CHECK(command_name(Command::sim2) == "sim2");
}

TEST_CASE("configuration file values yield to explicit flags") {
    const auto dir = scratch("config");
    {
        std::ofstream cfg(dir / "run.cfg");
        cfg << "B=17\nL=9\nseed=5\ntransform=log\n";
    }
    RunConfig c;
    std::ostringstream out;
    const std::string path = (dir / "run.cfg").string();
    const char* argv[] = {"prog", "mse", "--config", path.c_str(), "--B", "10"};
    REQUIRE(parse_command_line(6, argv, c, out));
    CHECK(c.B == 10);
    CHECK(c.L == 9);
    CHECK(c.seed == 5);
    CHECK(c.transform == "log");
}

TEST_CASE("fit writes identical bytes on repeated runs") {
    const auto a = scratch("fit_a");
    const auto b = scratch("fit_b");
    auto args = data_args();
    args.insert(args.begin(), "fit");
    auto args_a = args, args_b = args;
    args_a.insert(args_a.end(), {"--out", a.string()});
    args_b.insert(args_b.end(), {"--out", b.string()});
    REQUIRE(run_cli(args_a).code == 0);
    REQUIRE(run_cli(args_b).code == 0);
    for (const char* f : {"params.csv", "fit_summary.csv", "random_effects.csv"}) {
        INFO(f);
        CHECK(fs::exists(a / f));
        CHECK(slurp(a / f) == slurp(b / f));
    }
    const auto params = read_csv(a / "params.csv");
    CHECK(params[0] == std::vector<std::string>{"parameter", "estimate", "std_error", "z_value", "p_value", "ci_lower", "ci_upper"});
    CHECK(params.size() == 1 + 8 + 6);
}

TEST_CASE("predict reproduces the sample in a fully sampled domain") {
    const auto dir = scratch("predict");
    auto args = data_args();
    args.insert(args.begin(), "predict");
    args.insert(args.end(), {"--out", dir.string(), "--L", "20"});
    const auto o = run_cli(args);
    REQUIRE_MESSAGE(o.code == 0, o.err);
    const auto rows = read_csv(dir / "estimates.csv");
    REQUIRE(rows.size() == 1 + 52);
    CHECK(rows[0] == std::vector<std::string>{"domain_id", "n_d", "N_d", "dir1", "ebp1", "dir2", "ebp2", "Rdir", "Rebp", "Addir", "Adebp"});
    bool saw_saturated = false, saw_empty = false;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row[1] == row[2]) {
            saw_saturated = true;
            CHECK(row[3] == row[4]);
            CHECK(row[5] == row[6]);
            CHECK(row[7] == row[8]);
            CHECK(row[9] == row[10]);
        }
        if (row[1] == "0") {
            saw_empty = true;
            CHECK(row[3] == "NA");
            CHECK(row[4] != "NA");
        }
    }
    CHECK(saw_saturated);
    CHECK(saw_empty);
}

TEST_CASE("mse writes one row per domain and target") {
    const auto dir = scratch("mse");
    auto args = data_args();
    args.insert(args.begin(), "mse");
    args.insert(args.end(), {"--out", dir.string(), "--L", "5", "--B", "4", "--targets", "A,R"});
    const auto o = run_cli(args);
    REQUIRE_MESSAGE(o.code == 0, o.err);
    const auto rows = read_csv(dir / "mse.csv");
    CHECK(rows[0] == std::vector<std::string>{"domain_id", "n_d", "target", "estimate", "mse", "rrmse_pct"});
    CHECK(rows.size() == 1 + 52 * 2);
    CHECK(fs::exists(dir / "mse_summary.csv"));
}

TEST_CASE("failures are reported as JSON with a non-zero exit code") {
    const auto dir = scratch("errors");
    {
        std::ofstream bad(dir / "bad.csv");
        bad << "domain_id,x1_int,x2_int,z1,z2\nA,1,1,1,2\nA,1,1,-1,2\n";
    }
    const auto o = run_cli({"fit", "--data", (dir / "bad.csv").string(), "--transform", "log", "--out", dir.string(), "--quiet"});
    CHECK(o.code == 1);
    const auto j = nlohmann::json::parse(o.err);
    CHECK(j["error"]["type"] == "data_error");
    CHECK(j["error"]["line"] == 3);

    const auto usage = run_cli({"fit", "--L", "many"});
    CHECK(usage.code == 2);
    CHECK(nlohmann::json::parse(usage.err)["error"]["type"] == "usage_error");

    const auto missing = run_cli({"predict", "--data", data_dir + "/sample.csv", "--out", dir.string(), "--quiet"});
    CHECK(missing.code == 1);
    CHECK(nlohmann::json::parse(missing.err)["error"]["type"] == "usage_error");

    CHECK(error_json(ConsistencyError("x")).find("consistency_error") != std::string::npos);
    CHECK(error_json(RankDeficiencyError("x")).find("rank_deficiency") != std::string::npos);
}

TEST_CASE("sim1 command writes its tables") {
    const auto dir = scratch("sim1");
    const auto o = run_cli({"sim1", "--D", "5", "--Nd", "20", "--nd", "5,10", "--I", "3", "--L", "5", "--out", dir.string(),
                            "--quiet"});
    REQUIRE_MESSAGE(o.code == 0, o.err);
    const auto rows = read_csv(dir / "sim1_metrics.csv");
    CHECK(rows.size() == 1 + 2 * 2 * 5);
    CHECK(fs::exists(dir / "sim1_domains_nd5.csv"));
    CHECK(fs::exists(dir / "sim1_domains_nd10.csv"));
}
