// carpetlab: command-line front end for the carpet library.
//
// Every computing subcommand runs as a small pipeline (prerequisite stages
// first, then the requested one) so results land as envelopes in --out and are
// reused through the cache.

#include <CLI11.hpp>

#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "carpet/error.hpp"
#include "carpet/pipeline.hpp"
#include "carpet/spec_io.hpp"

namespace fs = std::filesystem;
using carpet::json;

namespace {

struct Globals {
  std::string spec_file;
  std::string preset = "sc2";
  std::string out = "results";
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string cache = "use";
};

// Parameters collected from subcommand flags; only flags the user passed are
// forwarded so that stage defaults apply otherwise.
struct Request {
  std::string op;
  json params = json::object();
  std::vector<std::function<void(json&)>> setters;
};

template <typename T>
void forward(CLI::App* app, Request& req, const std::string& flag, const std::string& key, const std::string& help) {
  auto value = std::make_shared<T>();
  auto* opt = app->add_option(flag, *value, help);
  req.setters.push_back([opt, value, key](json& p) {
    if (opt->count() > 0) p[key] = *value;
  });
}

carpet::CarpetSpec load_carpet(const Globals& g) {
  if (!g.spec_file.empty()) return carpet::load_spec(g.spec_file);
  return carpet::preset(g.preset);
}

std::vector<std::string> prerequisites(const std::string& op) {
  if (op == "gamma" || op == "form-build" || op == "form-invariance" || op == "hilbert" || op == "combine" ||
      op == "besov" || op == "contract" || op == "heatkernel")
    return {"rho"};
  if (op == "timescale" || op == "res-annulus") return {"rho", "gamma"};
  return {};
}

std::string csv_number(const json& v) {
  if (v.is_null()) return "";
  std::ostringstream ss;
  ss.precision(17);
  ss << v.get<double>();
  return ss.str();
}

// One CSV row per measurement (seed, level, quantity, estimate, CI) and a
// two-column gnuplot data file.
void write_walk_outputs(const fs::path& dir, const std::string& op, const json& params, const json& payload) {
  std::ostringstream csv, dat;
  csv << "seed,level,quantity,estimate,ci_lower,ci_upper\n";
  const std::string seed = params.contains("seed") ? params["seed"].dump() : "";
  auto row = [&](const json& level, const std::string& q, const json& est, const json& lo, const json& hi) {
    csv << seed << "," << level.dump() << "," << q << "," << csv_number(est) << "," << csv_number(lo) << ","
        << csv_number(hi) << "\n";
  };
  if (op == "walk-exit") {
    dat << "# level mean_exit_steps\n";
    for (const auto& l : payload["levels"]) {
      row(l["level"], "mean_exit_steps", l["mean_steps"], nullptr, nullptr);
      dat << l["level"].dump() << " " << csv_number(l["mean_steps"]) << "\n";
    }
    if (payload.contains("monte_carlo")) {
      const auto& mc = payload["monte_carlo"];
      const double m = mc["mean"].get<double>(), se = mc["stderr"].get<double>();
      row(mc["level"], "mean_exit_steps_monte_carlo", m, m - 1.959963984540054 * se, m + 1.959963984540054 * se);
    }
  } else if (op == "walk-move") {
    dat << "# samples estimate\n" << payload["samples"].dump() << " " << csv_number(payload["estimate"]) << "\n";
    row(payload["level"], payload["kind"].get<std::string>() + "_move_probability", payload["estimate"],
        payload["ci95"][0], payload["ci95"][1]);
  } else if (op == "walk-couple") {
    dat << "# distance_over_radius coupling_probability\n";
    for (const auto& s : payload["sweep"]) {
      row(payload["level"], "coupling_probability_r=" + csv_number(s["radius"]), s["estimate"], s["ci95"][0],
          s["ci95"][1]);
      dat << csv_number(s["distance_over_radius"]) << " " << csv_number(s["estimate"]) << "\n";
    }
  } else if (op == "walk-harnack") {
    dat << "# center harnack_ratio\n";
    for (const auto& r : payload["results"]) {
      row(payload["level"], "harnack_ratio_center=" + r["center"].dump(), r["ratio"], nullptr, nullptr);
      dat << r["center"].dump() << " " << csv_number(r["ratio"]) << "\n";
    }
  } else if (op == "heatkernel") {
    dat << "# t p_t(x,x)/pi(x)\n";
    const auto& t = payload["times"];
    const auto& d = payload["diagonal"];
    const auto& se = payload["diagonal_stderr"];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double v = d[i].get<double>();
      if (se.size() > i) {
        const double s = se[i].get<double>();
        row(payload["level"], "return_density_t=" + t[i].dump(), v, v - 1.959963984540054 * s,
            v + 1.959963984540054 * s);
      } else {
        row(payload["level"], "return_density_t=" + t[i].dump(), v, nullptr, nullptr);
      }
      dat << t[i].dump() << " " << csv_number(d[i]) << "\n";
    }
  }
  carpet::write_atomic((dir / (op + ".csv")).string(), csv.str());
  carpet::write_atomic((dir / (op + ".dat")).string(), dat.str());
  carpet::write_atomic((dir / (op + "-summary.json")).string(), payload.dump(2) + "\n");
}

int run_request(const Globals& g, Request& req) {
  for (auto& s : req.setters) s(req.params);
  carpet::ExperimentConfig cfg;
  const auto spec = load_carpet(g);
  cfg.carpet = spec;
  cfg.carpet_name = g.spec_file.empty() ? g.preset : "custom";
  cfg.output_dir = g.out;
  cfg.cache = carpet::parse_cache_policy(g.cache);
  cfg.seed = g.seed;
  cfg.threads = g.threads;
  for (const auto& pre : prerequisites(req.op))
    cfg.stages.push_back({pre, carpet::normalize_params(pre, json::object(), g.seed), json::object()});
  const json params = carpet::normalize_params(req.op, req.params, g.seed);
  cfg.stages.push_back({req.op, params, json::object()});

  std::ostringstream log;
  const auto result = carpet::run_pipeline(cfg, log);
  std::cerr << log.str();
  if (result.stages.size() != cfg.stages.size() || !result.stages.back().ok) {
    if (result.exit_code == carpet::kExitOk) return carpet::kExitError;
    return result.exit_code;
  }
  std::ifstream in(result.stages.back().file);
  const auto env = carpet::envelope_from_json(json::parse(in));
  if (carpet::stage_module(req.op) == "walk") write_walk_outputs(g.out, req.op, params, env.payload);
  std::cout << env.payload.dump(2) << "\n";
  return result.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"carpetlab: experiments on generalized Sierpinski carpets"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--spec", g.spec_file, "carpet spec JSON file (overrides --preset)");
  app.add_option("--preset", g.preset, "preset carpet")
      ->check(CLI::IsMember(carpet::preset_names()));
  app.add_option("--out", g.out, "output directory for envelopes and data files");
  app.add_option("--seed", g.seed, "default seed for Monte Carlo stages");
  app.add_option("--threads", g.threads, "worker threads for Monte Carlo stages")->check(CLI::Range(1u, 256u));
  app.add_option("--cache", g.cache, "cache policy")->check(CLI::IsMember({"use", "refresh", "off"}));

  std::map<CLI::App*, std::unique_ptr<Request>> requests;
  auto stage = [&](CLI::App* parent, const std::string& name, const std::string& op, const std::string& help) {
    auto* sub = parent->add_subcommand(name, help);
    auto req = std::make_unique<Request>();
    req->op = op;
    auto* raw = req.get();
    requests[sub] = std::move(req);
    return std::make_pair(sub, raw);
  };

  stage(&app, "validate", "validate", "check the carpet axioms");
  {
    auto [s, r] = stage(&app, "cells", "cells", "enumerate level-n cells");
    forward<int>(s, *r, "--level", "level", "level n");
  }
  {
    auto [s, r] = stage(&app, "resist", "resist", "face-to-face effective resistance");
    forward<int>(s, *r, "--level", "level", "level n");
    forward<std::string>(s, *r, "--model", "model", "crosswire or cellgraph");
    forward<std::string>(s, *r, "--solver", "solver", "auto, cg, ldlt or lu");
    forward<double>(s, *r, "--max-iteration-factor", "max_iteration_factor", "CG iteration cap per sqrt(N)");
  }
  {
    auto [s, r] = stage(&app, "rho", "rho", "resistance scale factor estimate");
    forward<int>(s, *r, "--n-max", "n_max", "deepest level");
    forward<std::string>(s, *r, "--solver", "solver", "auto, cg, ldlt or lu");
  }
  {
    auto [s, r] = stage(&app, "gamma", "gamma", "conductance sequence");
    forward<int>(s, *r, "--n-max", "n_max", "deepest level");
    forward<std::string>(s, *r, "--model", "model", "crosswire or cellgraph");
    forward<double>(s, *r, "--rho", "rho_hat", "override the resistance scale factor");
  }
  {
    auto [s, r] = stage(&app, "timescale", "timescale", "time scale function and its power bounds");
    forward<std::size_t>(s, *r, "--samples", "samples", "sampled radius pairs");
  }
  {
    auto [s, r] = stage(&app, "res-annulus", "res-annulus", "annulus resistance against H(r)/r^alpha");
    forward<int>(s, *r, "--level", "level", "level n");
    forward<double>(s, *r, "--radius", "radius", "inner radius r");
    forward<std::size_t>(s, *r, "--stride", "stride", "centre stride");
  }

  auto* form = app.add_subcommand("form", "discrete Dirichlet forms");
  form->require_subcommand(1);
  {
    auto [s, r] = stage(form, "build", "form-build", "build a form and report its flags");
    forward<int>(s, *r, "--level", "level", "level n");
    forward<std::string>(s, *r, "--family", "family", "bb or kz");
  }
  {
    auto [s, r] = stage(form, "check-invariance", "form-invariance", "folding-projector invariance checks");
    forward<int>(s, *r, "--level", "level", "level n");
    forward<std::string>(s, *r, "--family", "family", "bb or kz");
    forward<std::size_t>(s, *r, "--samples", "samples", "Markov contraction samples");
  }
  {
    auto [s, r] = stage(form, "hilbert", "hilbert", "Hilbert projective distance between two forms");
    forward<int>(s, *r, "--level", "level", "level n");
    forward<std::string>(s, *r, "--a", "a", "first family");
    forward<std::string>(s, *r, "--b", "b", "second family");
  }
  {
    auto [s, r] = stage(form, "combine", "combine", "combine two forms");
    forward<int>(s, *r, "--level", "level", "level n");
    forward<std::string>(s, *r, "--a", "a", "first family");
    forward<std::string>(s, *r, "--b", "b", "second family");
    forward<double>(s, *r, "--delta", "delta", "delta > 0");
  }
  {
    auto [s, r] = stage(form, "besov", "besov", "Besov-type seminorm against the energy");
    forward<int>(s, *r, "--level", "level", "level n");
    forward<std::size_t>(s, *r, "--samples", "samples", "random functions");
  }
  {
    auto [s, r] = stage(form, "contract", "contract", "renormalisation contraction experiment");
    forward<int>(s, *r, "--level", "level", "starting level");
    forward<int>(s, *r, "--iterations", "iterations", "coarsening steps");
  }

  auto* walk = app.add_subcommand("walk", "random-walk experiments");
  walk->require_subcommand(1);
  {
    auto [s, r] = stage(walk, "exit", "walk-exit", "mean exit times across levels");
    forward<int>(s, *r, "--n-max", "n_max", "deepest level");
    forward<int>(s, *r, "--mc-level", "mc_level", "level for the Monte Carlo cross-check (0 skips)");
    forward<std::size_t>(s, *r, "--samples", "samples", "Monte Carlo samples");
  }
  {
    auto [s, r] = stage(walk, "move", "walk-move", "corner or slide move probability");
    forward<int>(s, *r, "--level", "level", "level n");
    forward<std::string>(s, *r, "--kind", "kind", "corner or slide");
    forward<std::size_t>(s, *r, "--samples", "samples", "Monte Carlo samples");
  }
  {
    auto [s, r] = stage(walk, "couple", "walk-couple", "mirror coupling experiment");
    forward<int>(s, *r, "--level", "level", "level n");
    forward<int>(s, *r, "--m", "m", "association level");
    forward<std::vector<std::int64_t>>(s, *r, "--x", "x", "first cell coordinates");
    forward<std::vector<std::int64_t>>(s, *r, "--y", "y", "second cell coordinates");
    forward<std::vector<double>>(s, *r, "--radii", "radii", "ball radii");
    forward<std::size_t>(s, *r, "--samples", "samples", "walk pairs per radius");
  }
  {
    auto [s, r] = stage(walk, "harnack", "walk-harnack", "elliptic Harnack ratios");
    forward<int>(s, *r, "--level", "level", "level n");
    forward<double>(s, *r, "--radius", "radius", "ball radius R");
    forward<std::size_t>(s, *r, "--stride", "stride", "centre stride");
  }
  {
    auto [s, r] = stage(walk, "heatkernel", "heatkernel", "on-diagonal heat kernel and spectral dimension");
    forward<int>(s, *r, "--level", "level", "level n");
    forward<std::string>(s, *r, "--mode", "mode", "matrix-power or monte-carlo");
    forward<std::size_t>(s, *r, "--max-starts", "max_starts", "starting cells");
    forward<std::size_t>(s, *r, "--samples", "samples", "Monte Carlo walks per start");
  }

  std::string config_file;
  auto* pipeline = app.add_subcommand("pipeline", "run an experiment config");
  pipeline->add_option("config", config_file, "config JSON file")->required();

  std::string report_dir;
  bool report_json = false;
  auto* report = app.add_subcommand("report", "summarise a result directory");
  report->add_option("dir", report_dir, "result directory")->required();
  report->add_flag("--json", report_json, "print the machine summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : carpet::kExitError;
  }

  try {
    if (pipeline->parsed()) {
      auto cfg = carpet::load_config(config_file);
      if (app.get_option("--out")->count()) cfg.output_dir = g.out;
      if (app.get_option("--cache")->count()) cfg.cache = carpet::parse_cache_policy(g.cache);
      if (app.get_option("--threads")->count()) cfg.threads = g.threads;
      const auto result = carpet::run_pipeline(cfg, std::cerr);
      std::cout << "stages " << result.stages.size() << "/" << cfg.stages.size() << ", computed " << result.computed
                << ", cache hits " << result.cache_hits << ", exit " << result.exit_code << "\n";
      return result.exit_code;
    }
    if (report->parsed()) {
      const auto rep = carpet::build_report(report_dir);
      std::cout << (report_json ? rep.machine.dump(2) + "\n" : rep.text);
      return carpet::kExitOk;
    }
    for (auto& [sub, req] : requests) {
      if (!sub->parsed()) continue;
      if (req->op == "validate") {
        const auto rep = carpet::validate(load_carpet(g));
        std::cout << carpet::report_to_json(rep).dump(2) << "\n";
        for (const auto& a : rep.axioms)
          if (!a.passed) std::cerr << a.axiom << " fails (" << a.name << "): " << a.witness << "\n";
        return rep.passed() ? carpet::kExitOk : carpet::kExitValidation;
      }
      return run_request(g, *req);
    }
  } catch (const carpet::SolverError& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return carpet::kExitSolver;
  } catch (const carpet::SpecError& e) {
    std::cerr << "spec error: " << e.what() << "\n";
    return carpet::kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return carpet::kExitError;
  }
  return carpet::kExitError;
}
