#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include <json.hpp>

#include "mpp/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = mpp::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("mpp_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("validate reports and sets the exit code") {
  const auto ok = call({"validate", "--builtin", "barebones", "--a1", "1", "--a2", "3", "--gamma", "0.6"});
  CHECK(ok.code == 0);
  const auto j = nlohmann::json::parse(ok.out);
  CHECK(j["passed"].get<bool>());
  CHECK(j["beta0"].get<double>() == doctest::Approx(2.4));
  CHECK(call({"validate", "--builtin", "barebones", "--a1", "3", "--a2", "1"}).code == 1);
}

TEST_CASE("usage errors exit with 2") {
  CHECK(call({}).code == 2);
  CHECK(call({"bogus"}).code == 2);
  CHECK(call({"escape", "--replicas", "many"}).code == 2);
  CHECK(call({"reproduce"}).code == 2);
  CHECK(call({"reproduce", "--experiment", "nope"}).code == 2);
  CHECK(call({"validate", "--builtin", "nope"}).code == 2);
}

TEST_CASE("every subcommand has help") {
  for (const char* s : {"validate", "simulate", "branching", "flow", "couple", "tv", "escape", "extinction",
                        "three-phase", "closeness", "envelopes", "reproduce"}) {
    const auto r = call({s, "--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("Usage") != std::string::npos);
    CHECK(r.out.find("--") != std::string::npos);
  }
}

TEST_CASE("malformed model files give a diagnostic and exit 1") {
  const auto dir = scratch("models");
  fs::create_directories(dir);
  std::ofstream(dir / "syntax.json") << "{\n  \"name\": \"x\",\n  \"d\": 1,\n";
  auto r = call({"validate", "--model", (dir / "syntax.json").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("line") != std::string::npos);
  std::ofstream(dir / "field.json") << R"({"name": "x", "d": 1, "d1": 0, "N": 10, "x0": [0], "jumps": [], "bogus": 1})";
  r = call({"validate", "--model", (dir / "field.json").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("bogus") != std::string::npos);
}

TEST_CASE("reproduce preset is byte-stable") {
  const auto a = scratch("tv_a");
  const auto b = scratch("tv_b");
  const std::vector<std::string> base{"reproduce", "--experiment", "appendixF-tv", "--N", "10000", "--replicas", "300",
                                      "--seed", "5"};
  auto args = base;
  args.insert(args.end(), {"--out", a.string()});
  const auto ra = call(args);
  REQUIRE(ra.code == 0);
  args = base;
  args.insert(args.end(), {"--out", b.string(), "--threads", "2"});
  REQUIRE(call(args).code == 0);
  for (const char* f : {"appendixF_tv.csv", "appendixF_tv.json"}) {
    REQUIRE(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(slurp(a / "appendixF_tv.csv").rfind("m,a,tv,stderr,exponent_variance,predicted_variance\r\n10,", 0) == 0);
  CHECK(fs::exists(a / "run.log"));
}

TEST_CASE("ESCAPE_SEED overrides --seed") {
  const auto a = scratch("seed_a");
  const auto b = scratch("seed_b");
  REQUIRE(call({"escape", "--N", "1000", "--replicas", "50", "--seed", "9", "--out", a.string()}).code == 0);
  ::setenv("ESCAPE_SEED", "9", 1);
  const auto r = call({"escape", "--N", "1000", "--replicas", "50", "--seed", "1", "--out", b.string()});
  ::setenv("ESCAPE_SEED", "x9", 1);
  const auto bad = call({"escape", "--N", "1000", "--replicas", "50", "--out", b.string()});
  ::unsetenv("ESCAPE_SEED");
  REQUIRE(r.code == 0);
  CHECK(slurp(a / "escape.json") == slurp(b / "escape.json"));
  CHECK(slurp(a / "escape.csv") == slurp(b / "escape.csv"));
  CHECK(bad.code == 2);
}

TEST_CASE("subcommands write their outputs") {
  const auto d = scratch("all");
  const auto out = d.string();
  struct Case {
    std::vector<std::string> args;
    std::string stem;
  };
  const std::vector<Case> cases{
      {{"simulate", "--N", "200", "--horizon", "2", "--points", "11"}, "simulate"},
      {{"branching", "--replicas", "300", "--T", "2"}, "branching"},
      {{"flow", "--T", "5", "--points", "11"}, "flow"},
      {{"couple", "--N-list", "100,1000", "--replicas", "50", "--method", "stepwise"}, "divergence"},
      {{"tv", "--N", "1000", "--replicas", "200"}, "tv"},
      {{"extinction", "--builtin", "birth-death", "--lambda", "1", "--mu", "1.8", "--n0", "100", "--replicas", "50"},
       "extinction"},
      {{"extinction", "--builtin", "barebones", "--phase", "extinction", "--n0", "100", "--replicas", "50"},
       "extinction"},
      {{"three-phase", "--N", "500", "--replicas", "3"}, "three_phase"},
      {{"closeness", "--N-list", "300,1000", "--replicas", "20", "--points", "20"}, "closeness"},
      {{"envelopes", "--eps", "0.01,0.005", "--delta", "0.1"}, "envelopes"},
  };
  for (const auto& c : cases) {
    auto args = c.args;
    args.insert(args.end(), {"--out", out});
    const auto r = call(args);
    INFO(c.args.front(), " ", r.err);
    CHECK(r.code == 0);
    CHECK(fs::exists(d / (c.stem + ".json")));
    CHECK(nlohmann::json::parse(slurp(d / (c.stem + ".json"))).is_object());
    if (c.stem != "tv") CHECK(fs::exists(d / (c.stem + ".csv")));
  }
  CHECK(slurp(d / "divergence.csv").rfind("N,divergence_fraction,ci_low,ci_high\r\n", 0) == 0);
  const auto warn = call({"tv", "--N", "1000", "--replicas", "100", "--out", out, "--m", "10", "--seed", "3"});
  CHECK(warn.code == 0);
  CHECK(call({"escape", "--alpha", "0.2", "--N", "1000", "--replicas", "10", "--out", out}).err.find("warning") !=
        std::string::npos);
}
