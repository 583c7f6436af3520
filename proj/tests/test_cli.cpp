#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "carpet/error.hpp"
#include "carpet/pipeline.hpp"

using namespace carpet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("carpet_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json payload_of(const fs::path& p) { return json::parse(slurp(p))["payload"]; }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("strict config parsing") {
    const json ok = {{"carpet", "sc2"}, {"stages", {"validate", {{"op", "rho"}, {"params", {{"n_max", 3}}}}}}};
    const auto c = parse_config(ok);
    REQUIRE(c.stages.size() == 2);
    CHECK(c.stages[1].params["n_max"] == 3);
    CHECK(c.stages[1].params["solver"] == "auto");
    CHECK(c.cache == CachePolicy::Use);

    auto bad = ok;
    bad["extra"] = 1;
    CHECK_THROWS_AS(parse_config(bad), ConfigError);
    bad = ok;
    bad["stages"][1]["params"]["nmax"] = 3;
    CHECK_THROWS_AS(parse_config(bad), ConfigError);
    bad = ok;
    bad["stages"][1]["params"]["n_max"] = 1;
    CHECK_THROWS_AS(parse_config(bad), ConfigError);
    bad = ok;
    bad["stages"][1]["params"]["n_max"] = 2.5;
    CHECK_THROWS_AS(parse_config(bad), ConfigError);
    bad = ok;
    bad["stages"][1]["when"] = "now";
    CHECK_THROWS_AS(parse_config(bad), ConfigError);
    bad = ok;
    bad["stages"][0] = "teleport";
    CHECK_THROWS_AS(parse_config(bad), ConfigError);
    bad = ok;
    bad["cache"] = "sometimes";
    CHECK_THROWS_AS(parse_config(bad), ConfigError);
    bad = ok;
    bad["threads"] = 0;
    CHECK_THROWS_AS(parse_config(bad), ConfigError);
    bad = ok;
    bad["stages"][1]["assert"] = {{"beta0", {{"min", 2}}}};
    CHECK_THROWS_AS(parse_config(bad), ConfigError);
    bad = ok;
    bad["stages"][1]["assert"] = {{"/beta0", {{"atleast", 2}}}};
    CHECK_THROWS_AS(parse_config(bad), ConfigError);
    bad = ok;
    bad["carpet"] = {{"dimension", 2}, {"length_scale", 3}, {"retained", {{0, 9}}}};
    CHECK_THROWS_AS(parse_config(bad), ConfigError);
  }

  TEST_CASE("parameter normalisation") {
    for (const auto& op : stage_names()) {
      CAPTURE(op);
      const auto p = normalize_params(op, json::object());
      CHECK(p.is_object());
      CHECK(normalize_params(op, p) == p);
      CHECK_FALSE(stage_module(op).empty());
    }
    CHECK(normalize_params("walk-move", json::object(), 5)["seed"] == 5);
    CHECK(normalize_params("walk-move", json{{"seed", 9}}, 5)["seed"] == 9);
    CHECK_THROWS_AS(normalize_params("heatkernel", json{{"mode", "guess"}}), ConfigError);
    CHECK_THROWS_AS(stage_module("nope"), ConfigError);
  }

  TEST_CASE("cache keys") {
    const json p = normalize_params("rho", json::object());
    const auto k = cache_key("h", "rho", p, json::object());
    CHECK(k.size() == 64);
    CHECK(k == cache_key("h", "rho", json::parse(p.dump()), json::object()));
    auto q = p;
    q["n_max"] = 5;
    CHECK(k != cache_key("h", "rho", q, json::object()));
    CHECK(k != cache_key("g", "rho", p, json::object()));
    CHECK(k != cache_key("h", "rho", p, json{{"rho_hat", 1.25}}));
  }

  TEST_CASE("assertions over JSON pointers") {
    const json payload = {{"beta0", 2.09}, {"ok", true}, {"list", {1, 2, 3}}};
    CHECK(check_assertions(payload, json{{"/beta0", {{"min", 1.98}}}}).empty());
    CHECK(check_assertions(payload, json{{"/ok", {{"equals", true}}}, {"/list/2", {{"max", 3}}}}).empty());
    CHECK(check_assertions(payload, json{{"/beta0", {{"max", 2.0}}}}).size() == 1);
    CHECK(check_assertions(payload, json{{"/missing", {{"min", 0}}}}).size() == 1);
  }

  TEST_CASE("envelopes round trip and detect payload corruption") {
    ResultEnvelope e;
    e.spec_hash = "abc";
    e.module = "network";
    e.op = "rho";
    e.params = {{"n_max", 3}};
    e.payload = {{"beta0", 2.0}};
    const auto j = envelope_to_json(e);
    CHECK(j["version"] == kArtifactVersion);
    const auto back = envelope_from_json(j);
    CHECK(back.payload == e.payload);
    auto broken = j;
    broken["payload"]["beta0"] = 3.0;
    CHECK_THROWS_AS(envelope_from_json(broken), ConfigError);
    broken = j;
    broken.erase("op");
    CHECK_THROWS_AS(envelope_from_json(broken), ConfigError);
  }

  TEST_CASE("pipeline exit codes") {
    std::ostringstream log;
    auto cfg = parse_config(json{{"carpet", "sc2"}, {"stages", {"validate"}}});
    cfg.output_dir = scratch("ok").string();
    CHECK(run_pipeline(cfg, log).exit_code == kExitOk);

    const json corner = {{"dimension", 2}, {"length_scale", 3}, {"retained", {{0, 1}, {0, 2}, {1, 0}, {1, 2}, {2, 0}, {2, 1}, {2, 2}}}};
    cfg = parse_config(json{{"carpet", corner}, {"stages", {"validate"}}});
    cfg.output_dir = scratch("corner").string();
    log.str("");
    CHECK(run_pipeline(cfg, log).exit_code == kExitValidation);
    CHECK(log.str().find("H1") != std::string::npos);
    cfg = parse_config(json{{"carpet", corner}, {"stages", {"rho"}}});
    cfg.output_dir = scratch("corner_rho").string();
    CHECK(run_pipeline(cfg, log).exit_code == kExitValidation);

    cfg = parse_config(json{{"carpet", "sc2"},
                            {"cache", "off"},
                            {"stages", {{{"op", "resist"}, {"params", {{"solver", "cg"}, {"max_iteration_factor", 0.01}}}}}}});
    cfg.output_dir = scratch("solver").string();
    CHECK(run_pipeline(cfg, log).exit_code == kExitSolver);

    cfg = parse_config(json{{"carpet", "sc2"}, {"stages", {{{"op", "rho"}, {"params", {{"n_max", 3}}}, {"assert", {{"/beta0", {{"max", 1.0}}}}}}}}});
    cfg.output_dir = scratch("assert").string();
    const auto r = run_pipeline(cfg, log);
    CHECK(r.exit_code == kExitAssertion);
    CHECK_FALSE(r.stages.back().ok);

    // A stage whose upstream quantity is missing fails with a dependency error.
    cfg = parse_config(json{{"carpet", "sc2"}, {"stages", {"gamma"}}});
    cfg.output_dir = scratch("dep").string();
    log.str("");
    CHECK(run_pipeline(cfg, log).exit_code == kExitError);
    CHECK(log.str().find("rho") != std::string::npos);
  }

  TEST_CASE("warm cache does no work and reproduces payload bytes") {
    const auto dir = scratch("cache");
    const json stages = {"validate",
                         {{"op", "rho"}, {"params", {{"n_max", 3}}}},
                         {{"op", "gamma"}, {"params", {{"n_max", 3}}}},
                         "timescale",
                         {{"op", "walk-move"}, {"params", {{"samples", 2000}}}}};
    auto cfg = parse_config(json{{"carpet", "sc2"}, {"stages", stages}});
    cfg.output_dir = (dir / "out").string();
    std::ostringstream log;
    const auto cold = run_pipeline(cfg, log);
    REQUIRE(cold.exit_code == kExitOk);
    CHECK(cold.computed == 5);
    std::vector<std::string> first;
    for (const auto& s : cold.stages) first.push_back(payload_of(s.file).dump());

    const auto warm = run_pipeline(cfg, log);
    CHECK(warm.exit_code == kExitOk);
    CHECK(warm.computed == 0);
    CHECK(warm.cache_hits == 5);
    for (std::size_t i = 0; i < warm.stages.size(); ++i) {
      CHECK(warm.stages[i].cached);
      CHECK(payload_of(warm.stages[i].file).dump() == first[i]);
    }

    // Recomputation from scratch gives the same bytes as well.
    cfg.cache = CachePolicy::Off;
    cfg.output_dir = (dir / "fresh").string();
    const auto fresh = run_pipeline(cfg, log);
    CHECK(fresh.computed == 5);
    for (std::size_t i = 0; i < fresh.stages.size(); ++i) CHECK(payload_of(fresh.stages[i].file).dump() == first[i]);

    // Changing a parameter misses the cache for that stage and its dependents;
    // validate and walk-move do not read rho and still hit.
    auto changed = json{{"carpet", "sc2"}, {"stages", stages}};
    changed["stages"][1]["params"]["n_max"] = 4;
    auto cfg2 = parse_config(changed);
    cfg2.output_dir = cfg.output_dir = (dir / "out").string();
    const auto partial = run_pipeline(cfg2, log);
    CHECK(partial.cache_hits == 2);
    CHECK(partial.computed == 3);
  }

  TEST_CASE("atomic writes leave no temporary files") {
    const auto dir = scratch("atomic");
    write_atomic((dir / "a.json").string(), "{}\n");
    write_atomic((dir / "a.json").string(), "[]\n");
    CHECK(slurp(dir / "a.json") == "[]\n");
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
    CHECK(files == 1);
  }

  TEST_CASE("report: empty, corrupt and grouped by spec") {
    const auto empty = scratch("report_empty");
    const auto rep0 = build_report(empty.string());
    CHECK(rep0.text.find("no envelopes") != std::string::npos);
    CHECK(rep0.machine["groups"].empty());
    CHECK_THROWS_AS(build_report((empty / "missing").string()), ConfigError);

    const auto dir = scratch("report_mixed");
    std::ostringstream log;
    for (const auto* name : {"sc2", "square"}) {
      auto cfg = parse_config(json{{"carpet", name}, {"stages", {"validate", {{"op", "rho"}, {"params", {{"n_max", 3}}}}}}});
      cfg.output_dir = (dir / name).string();
      REQUIRE(run_pipeline(cfg, log).exit_code == kExitOk);
      for (const auto& e : fs::directory_iterator(dir / name))
        if (e.is_regular_file()) fs::copy_file(e.path(), dir / (std::string(name) + "-" + e.path().filename().string()));
    }
    std::ofstream(dir / "zz-broken.json") << "{\"payload\": ";
    std::ofstream(dir / "walk-summary.json") << "{\"spread\": 2.2}";
    const auto rep = build_report(dir.string());
    CHECK(rep.machine["groups"].size() == 2);
    REQUIRE(rep.corrupt.size() == 1);
    CHECK(rep.corrupt[0].find("zz-broken.json") != std::string::npos);
    CHECK(rep.text.find("beta0") != std::string::npos);
    CHECK(rep.text.find("corrupt") != std::string::npos);
    for (const auto& [hash, g] : rep.machine["groups"].items()) {
      CHECK(g["stages"].size() == 2);
      CHECK(g.contains("rho"));
    }
    // Stable output.
    CHECK(build_report(dir.string()).text == rep.text);
  }
}
