#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "carpet/error.hpp"
#include "carpet/pipeline.hpp"

namespace carpet {

namespace fs = std::filesystem;

namespace {

std::string fmt(const json& v) {
  if (v.is_number_float()) {
    std::ostringstream ss;
    ss << std::setprecision(6) << v.get<double>();
    return ss.str();
  }
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

std::string fmt_list(const json& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : " ") + fmt(x);
  return s;
}

json check(const std::string& quantity, const json& value, const std::string& rule, bool pass) {
  return {{"quantity", quantity}, {"value", value}, {"tolerance", rule}, {"pass", pass}};
}

double num(const json& v) { return v.is_number() ? v.get<double>() : NAN; }

// Tables and tolerance checks for one spec hash.
json summarize(const std::vector<std::pair<std::string, ResultEnvelope>>& envs) {
  json g = {{"stages", json::array()}, {"checks", json::array()}};
  json exponents = json::object();
  for (const auto& [file, e] : envs) {
    g["stages"].push_back({{"file", file}, {"op", e.op}, {"cache_hit", e.cache_hit}});
    const auto& p = e.payload;
    auto& checks = g["checks"];
    if (e.op == "rho") {
      g["rho"] = {{"ratios", p["ratios"]}, {"rho_hat", p["rho_hat"]}, {"beta0", p["beta0"]}};
      exponents["beta0"] = p["beta0"];
      exponents["alpha"] = p["alpha"];
      checks.push_back(check("beta0", p["beta0"], ">= 1.98", num(p["beta0"]) >= 1.98));
      checks.push_back(check("rho ratio spread (n >= 2)", p["ratio_spread_from_2"], "<= 0.05",
                             num(p["ratio_spread_from_2"]) <= 0.05));
    } else if (e.op == "gamma") {
      g["gamma"] = {{"model", p["model"]}, {"gamma", p["gamma"]}, {"lower_bound_fit", p["lower_bound_fit"]},
                    {"lower_bound_min", p["lower_bound_min"]}};
      checks.push_back(check("gamma lower bound min / fit", num(p["lower_bound_min"]) / num(p["lower_bound_fit"]),
                             ">= 0.5", num(p["lower_bound_min"]) >= 0.5 * num(p["lower_bound_fit"])));
    } else if (e.op == "timescale") {
      g["timescale"] = {{"k", p["k"]}, {"c3", p["c3"]}, {"c4", p["c4"]}, {"violations", p["violations"]}};
      checks.push_back(check("power-bound violations", p["violations"], "== 0", p["violations"] == 0));
    } else if (e.op == "hilbert") {
      if (!g.contains("hilbert")) g["hilbert"] = json::array();
      g["hilbert"].push_back({{"level", p["level"]}, {"a", p["a"]}, {"b", p["b"]}, {"h", p["h"]}});
      checks.push_back(check("h symmetry gap", p["symmetry_gap"], "<= 1e-10", num(p["symmetry_gap"]) <= 1e-10));
    } else if (e.op == "contract") {
      g["contract"] = {{"levels", p["levels"]}, {"h", p["h"]}, {"max_growth", p["max_growth"]}};
      checks.push_back(check("h growth per iteration", p["max_growth"], "<= 0.01", num(p["max_growth"]) <= 0.01));
    } else if (e.op == "heatkernel") {
      exponents["spectral_dimension"] = p["spectral_dimension"];
      exponents["spectral_dimension_target"] = p["spectral_dimension_target"];
      exponents["eta_hat"] = p["eta_hat"];
      exponents["eta_target"] = p["eta_target"];
      if (!p["spectral_dimension_relative_error"].is_null())
        checks.push_back(check("d_s relative error", p["spectral_dimension_relative_error"], "<= 0.10",
                               num(p["spectral_dimension_relative_error"]) <= 0.10));
    } else if (e.op == "walk-exit") {
      g["exit_ratios"] = p["ratios"];
    } else if (e.op == "walk-move") {
      checks.push_back(check(fmt(p["kind"]) + " move 99% lower bound", p["ci99"][0], "> q0 q1",
                             p["clears_floor"] == true));
    } else if (e.op == "validate") {
      checks.push_back(check("axioms", p["passed"], "all hold", p["passed"] == true));
    }
  }
  if (!exponents.empty()) g["exponents"] = exponents;
  return g;
}

void render(std::ostringstream& out, const std::string& hash, const json& g) {
  out << "spec " << hash << "\n";
  for (const auto& s : g["stages"]) out << "  stage  " << fmt(s["op"]) << (s["cache_hit"] == true ? " (cached)" : "") << "\n";
  if (g.contains("rho"))
    out << "  rho    ratios: " << fmt_list(g["rho"]["ratios"]) << "  rho_hat " << fmt(g["rho"]["rho_hat"])
        << "  beta0 " << fmt(g["rho"]["beta0"]) << "\n";
  if (g.contains("gamma")) out << "  gamma  " << fmt_list(g["gamma"]["gamma"]) << "\n";
  if (g.contains("timescale"))
    out << "  H      k " << fmt(g["timescale"]["k"]) << "  C3 " << fmt(g["timescale"]["c3"]) << "  C4 "
        << fmt(g["timescale"]["c4"]) << "\n";
  if (g.contains("hilbert"))
    for (const auto& h : g["hilbert"])
      out << "  h      level " << fmt(h["level"]) << " " << fmt(h["a"]) << "/" << fmt(h["b"]) << ": " << fmt(h["h"])
          << "\n";
  if (g.contains("exit_ratios")) out << "  exit   ratios: " << fmt_list(g["exit_ratios"]) << "\n";
  if (g.contains("exponents")) {
    out << "  exponents";
    for (const auto& [k, v] : g["exponents"].items()) out << "  " << k << " " << fmt(v);
    out << "\n";
  }
  for (const auto& c : g["checks"])
    out << "  " << (c["pass"] == true ? "PASS" : "FAIL") << "   " << fmt(c["quantity"]) << " = " << fmt(c["value"])
        << " (" << fmt(c["tolerance"]) << ")\n";
}

}  // namespace

ReportSummary build_report(const std::string& dir) {
  ReportSummary rep;
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) throw ConfigError("report: not a directory: " + dir);
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::map<std::string, std::vector<std::pair<std::string, ResultEnvelope>>> groups;
  for (const auto& f : files) {
    try {
      std::ifstream in(f);
      const json j = json::parse(in);
      // Side outputs such as walk summaries are not envelopes.
      if (j.is_object() && !j.contains("payload") && !j.contains("payload_sha256")) continue;
      auto env = envelope_from_json(j);
      groups[env.spec_hash].emplace_back(f.filename().string(), std::move(env));
    } catch (const std::exception& e) {
      rep.corrupt.push_back(f.filename().string() + ": " + e.what());
    }
  }

  std::ostringstream out;
  rep.machine = {{"groups", json::object()}, {"corrupt", rep.corrupt}};
  for (const auto& [hash, envs] : groups) {
    const json g = summarize(envs);
    rep.machine["groups"][hash] = g;
    render(out, hash, g);
  }
  if (groups.empty()) out << "no envelopes\n";
  for (const auto& c : rep.corrupt) out << "corrupt  " << c << "\n";
  rep.text = out.str();
  return rep;
}

}  // namespace carpet
