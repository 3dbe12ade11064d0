#include "orbitmix/cli.hpp"
#include "orbitmix/experiment.hpp"
#include "orbitmix/io.hpp"
#include "orbitmix/orbit_metric.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <sys/wait.h>

using namespace orbitmix;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

fs::path scratch() {
    const fs::path p = fs::temp_directory_path() / "orbitmix_cli_test";
    fs::create_directories(p);
    return p;
}

std::string path(const std::string& name) { return (scratch() / name).string(); }

int run_binary(const std::string& args) {
    const std::string cmd = std::string(ORBITMIX_CLI_PATH) + " " + args + " > " + path("stdout.txt") + " 2> " + path("stderr.txt");
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("molien subcommand") {
    const auto r = cli({"molien", "--group", "hyperoct:2", "--max-degree", "4", "--mstar", "4"});
    REQUIRE(r.code == 0);
    const Json j = Json::parse(r.out);
    CHECK(j["coeffs"] == Json::array({1, 0, 1, 0, 2}));
    CHECK(j["closed_form"] == j["coeffs"]);
    const auto t = cli({"molien", "--tiny-table"});
    CHECK(t.code == 0);
    CHECK(Json::parse(t.out).contains("tiny_table"));
    const auto f = cli({"molien", "--family", "platonic:I", "--max-degree", "12"});
    CHECK(f.code == 0);
}

TEST_CASE("dist subcommand") {
    write_text(path("a.csv"), "3,1\n1,4\n");
    write_text(path("b.csv"), "-1,4\n1,-3\n");
    auto r = cli({"dist", "--a", path("a.csv"), "--b", path("b.csv"), "--group", "hyperoct:2"});
    REQUIRE(r.code == 0);
    Json j = Json::parse(r.out);
    CHECK(j["d_H"].get<double>() == 0.0);
    CHECK(j["bottleneck"].get<double>() == 0.0);
    CHECK(j["exact_at_hausdorff"].get<bool>());

    write_text(path("c.csv"), "y\n0\n2\n10\n");
    write_text(path("d.csv"), "x\n1\n9\n11\n");
    r = cli({"dist", "--a", path("c.csv"), "--b", path("d.csv"), "--group", "sym:1", "--header"});
    REQUIRE(r.code == 0);
    j = Json::parse(r.out);
    CHECK(j["d_H"].get<double>() == 1.0);
    CHECK(j["bottleneck"].get<double>() == 7.0);
    CHECK(j["ratio"].get<double>() == 7.0);
}

TEST_CASE("simulate then fit round trip") {
    write_text(path("model.json"), R"({"group": "hyperoct:2", "K": 1, "thetas": [[2.0, 0.7]], "sigma2": 1.0, "m_star": 6})");
    auto r = cli({"simulate", "--model", path("model.json"), "--n", "20000", "--seed", "4", "--out", path("x.csv")});
    REQUIRE(r.code == 0);
    CHECK(read_csv(path("x.csv")).rows() == 20000);

    r = cli({"fit", "--data", path("x.csv"), "--group", "hyperoct:2", "--K", "1", "--mstar", "6", "--sigma", "1",
             "--restarts", "5", "--seed", "2", "--bias-correct"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const Json j = Json::parse(r.out);
    for (const char* key : {"params", "weights", "converged", "iterations", "objective", "sigma_min_IQ", "cond_IQ", "J",
                            "df", "p_value", "radius_95"}) {
        CHECK_MESSAGE(j.contains(key), key);
    }
    const Eigen::Vector2d est(j["params"][0][0].get<double>(), j["params"][0][1].get<double>());
    const auto G = FiniteGroup::parse("hyperoct:2");
    const double err = orbit_distance(G, est, Eigen::Vector2d(2.0, 0.7));
    MESSAGE("round-trip error " << err << " vs radius " << j["radius_95"].get<double>());
    CHECK(err <= j["radius_95"].get<double>());
    CHECK(j.contains("bias_corrected"));

    // identical inputs and seed reproduce the report
    const auto again = cli({"fit", "--data", path("x.csv"), "--group", "hyperoct:2", "--K", "1", "--mstar", "6", "--sigma",
                            "1", "--restarts", "5", "--seed", "2", "--bias-correct"});
    CHECK(again.out == r.out);

    const auto sel = cli({"select-k", "--data", path("x.csv"), "--group", "hyperoct:2", "--mstar", "4", "--Kmax", "2",
                          "--model", path("model.json"), "--restarts", "3"});
    REQUIRE_MESSAGE(sel.code == 0, sel.err);
    const Json s = Json::parse(sel.out);
    CHECK(s["K_hat"].get<int>() == 1);
    CHECK(s["residuals"].size() == 2);
}

TEST_CASE("experiment subcommand") {
    write_text(path("spec.json"), R"({"kind": "rate_check", "fit": false, "replicates": 1, "seed": 5,
        "n_values": [500, 2000],
        "model": {"group": "signflips:1", "thetas": [[2.0]], "m_star": 4}})");
    auto r = cli({"experiment", "--spec", path("spec.json"), "--out", path("exp1")});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const std::string csv1 = read_text(path("exp1.csv"));
    int lines = 0;
    for (char c : csv1) lines += c == '\n';
    CHECK(lines == 3);
    CHECK(Json::parse(read_text(path("exp1.json"))).is_object());
    r = cli({"experiment", "--spec", path("spec.json"), "--out", path("exp2")});
    CHECK(read_text(path("exp2.csv")) == csv1);

    write_text(path("jspec.json"), R"({"kind": "j_calibration", "replicates": 20, "seed": 6, "n_values": [3000],
        "model": {"group": "dihedral:3", "thetas": [[2.0, 1.0]], "m_star": 5}})");
    r = cli({"experiment", "--spec", path("jspec.json"), "--out", path("exp3")});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    // rejection rate recomputed from the rows
    ExperimentSpec spec = ExperimentSpec::from_json(Json::parse(read_text(path("jspec.json"))));
    const auto res = run_experiment(spec);
    double rejected = 0;
    for (const auto& row : res.rows) rejected += row.metric("p_value") < 0.05;
    const std::string summary = res.summary.dump();
    CHECK(summary.find("rejection_rate_5") != std::string::npos);
    const Json& per = res.summary["per_n"][0];
    CHECK(per["rejection_rate_5"].get<double>() == doctest::Approx(rejected / res.rows.size()));
}

TEST_CASE("usage and runtime errors") {
    CHECK(cli({}).code == 2);
    CHECK(cli({"frobnicate"}).code == 2);
    CHECK(cli({"molien", "--bogus"}).code == 2);
    CHECK(cli({"fit", "--group", "hyperoct:2"}).code == 2);
    CHECK(cli({"dist", "--a", path("missing.csv"), "--b", path("missing.csv"), "--group", "sym:1"}).code == 1);
    CHECK(cli({"molien", "--help"}).code == 0);
    write_text(path("self.json"), R"({"kind": "rate_check", "fit": false, "n_values": [100],
        "model": {"group": "signflips:1", "thetas": [[2.0]], "m_star": 2}})");
    CHECK(cli({"experiment", "--spec", path("self.json"), "--out", path("self")}).code == 1);
    CHECK(Json::parse(read_text(path("self.json"))).contains("model"));
}

TEST_CASE("binary exit codes") {
    CHECK(run_binary("molien --group signflips:3 --max-degree 4") == 0);
    CHECK(Json::parse(read_text(path("stdout.txt")))["coeffs"] == Json::array({1, 0, 3, 0, 6}));
    CHECK(run_binary("molien --no-such-flag") == 2);
    CHECK(run_binary("dist --a /nonexistent/a.csv --b /nonexistent/b.csv --group sym:1") == 1);
}
